#include "atlab/runlog.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace atlab {

using nlohmann::json;

const char* const kRunLogCsvHeader =
    "epoch,clean_acc,robust_acc,grad_norm,loss_main,loss_reg,wall_clock_s,collapse";

std::string to_string(CollapseTrigger t) {
  switch (t) {
    case CollapseTrigger::robust_drop: return "robust_drop";
    case CollapseTrigger::gradnorm_spike: return "gradnorm_spike";
    case CollapseTrigger::both: return "both";
  }
  throw config_error("unknown collapse trigger");
}

CollapseTrigger collapse_trigger_from_string(const std::string& s) {
  if (s == "robust_drop") return CollapseTrigger::robust_drop;
  if (s == "gradnorm_spike") return CollapseTrigger::gradnorm_spike;
  if (s == "both") return CollapseTrigger::both;
  throw config_error("unknown collapse trigger '" + s + "'");
}

namespace {

// 17 significant digits round-trips any finite double through text.
std::string num17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& field, const std::string& what) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end == field.c_str() || *end != '\0' || errno == ERANGE)
    throw io_error("bad " + what + " value '" + field + "'");
  return v;
}

int64_t parse_int(const std::string& field, const std::string& what) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(field.c_str(), &end, 10);
  if (end == field.c_str() || *end != '\0' || errno == ERANGE)
    throw io_error("bad " + what + " value '" + field + "'");
  return static_cast<int64_t>(v);
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  return out;
}

json epoch_to_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch},
              {"clean_acc", r.clean_acc},
              {"robust_acc", r.robust_acc},
              {"grad_norm", r.grad_norm},
              {"loss_main", r.loss_main},
              {"loss_reg", r.loss_reg},
              {"wall_clock_s", r.wall_clock_s},
              {"collapse", r.collapse}};
}

EpochRecord epoch_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int64_t>();
  r.clean_acc = j.at("clean_acc").get<double>();
  r.robust_acc = j.at("robust_acc").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.loss_main = j.at("loss_main").get<double>();
  r.loss_reg = j.at("loss_reg").get<double>();
  r.wall_clock_s = j.at("wall_clock_s").get<double>();
  r.collapse = j.at("collapse").get<bool>();
  return r;
}

}  // namespace

void write_runlog_csv(const RunLog& log, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os << kRunLogCsvHeader << "\n";
  for (const auto& r : log.epochs) {
    os << r.epoch << ',' << num17(r.clean_acc) << ',' << num17(r.robust_acc) << ','
       << num17(r.grad_norm) << ',' << num17(r.loss_main) << ',' << num17(r.loss_reg) << ','
       << num17(r.wall_clock_s) << ',' << (r.collapse ? 1 : 0) << "\n";
  }
  if (!os) throw io_error("write failed on " + path);
}

std::vector<EpochRecord> read_runlog_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw io_error(path + ": empty file");
  if (line != kRunLogCsvHeader)
    throw io_error(path + ": unexpected header '" + line + "'");
  std::vector<EpochRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_row(line);
    if (f.size() != 8)
      throw io_error(path + ": expected 8 fields, got " + std::to_string(f.size()));
    EpochRecord r;
    r.epoch = parse_int(f[0], "epoch");
    r.clean_acc = parse_double(f[1], "clean_acc");
    r.robust_acc = parse_double(f[2], "robust_acc");
    r.grad_norm = parse_double(f[3], "grad_norm");
    r.loss_main = parse_double(f[4], "loss_main");
    r.loss_reg = parse_double(f[5], "loss_reg");
    r.wall_clock_s = parse_double(f[6], "wall_clock_s");
    const int64_t c = parse_int(f[7], "collapse");
    if (c != 0 && c != 1) throw io_error(path + ": collapse flag must be 0 or 1");
    r.collapse = c == 1;
    out.push_back(r);
  }
  return out;
}

std::string runlog_to_json(const RunLog& log) {
  json j;
  j["config"] = log.config_json.empty() ? json(nullptr) : json::parse(log.config_json);
  j["epochs"] = json::array();
  for (const auto& r : log.epochs) j["epochs"].push_back(epoch_to_json(r));
  j["events"] = json::array();
  for (const auto& e : log.events)
    j["events"].push_back(json{{"epoch", e.epoch},
                               {"trigger", to_string(e.trigger)},
                               {"pre_value", e.pre_value},
                               {"post_value", e.post_value}});
  j["diverged"] = log.diverged;
  j["divergence_epoch"] = log.divergence_epoch;
  j["divergence_note"] = log.divergence_note;
  j["final_eval"] = json{{"clean_acc", log.final_eval.clean_acc},
                         {"robust_acc_mean", log.final_eval.robust_acc_mean},
                         {"robust_acc_var", log.final_eval.robust_acc_var}};
  return j.dump(2);
}

RunLog runlog_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw io_error(std::string("bad run log: ") + e.what());
  }
  RunLog log;
  try {
    log.config_json = j.at("config").is_null() ? std::string() : j.at("config").dump();
    for (const auto& r : j.at("epochs")) log.epochs.push_back(epoch_from_json(r));
    for (const auto& e : j.at("events")) {
      CollapseEvent ev;
      ev.epoch = e.at("epoch").get<int64_t>();
      ev.trigger = collapse_trigger_from_string(e.at("trigger").get<std::string>());
      ev.pre_value = e.at("pre_value").get<double>();
      ev.post_value = e.at("post_value").get<double>();
      log.events.push_back(ev);
    }
    log.diverged = j.at("diverged").get<bool>();
    log.divergence_epoch = j.at("divergence_epoch").get<int64_t>();
    log.divergence_note = j.at("divergence_note").get<std::string>();
    const auto& f = j.at("final_eval");
    log.final_eval.clean_acc = f.at("clean_acc").get<double>();
    log.final_eval.robust_acc_mean = f.at("robust_acc_mean").get<double>();
    log.final_eval.robust_acc_var = f.at("robust_acc_var").get<double>();
  } catch (const json::exception& e) {
    throw io_error(std::string("bad run log: ") + e.what());
  }
  return log;
}

void write_runlog_json(const RunLog& log, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os << runlog_to_json(log) << "\n";
  if (!os) throw io_error("write failed on " + path);
}

RunLog read_runlog_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return runlog_from_json(ss.str());
}

}  // namespace atlab
