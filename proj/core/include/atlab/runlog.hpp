#pragma once

// Per-run training record and its two persisted forms: a CSV of the epoch
// table for plotting, and a JSON document carrying the full log plus the
// resolved config for provenance. Doubles are written with 17 significant
// digits (CSV) or shortest-round-trip text (JSON), so both forms reload
// bit-identically.

#include <cstdint>
#include <string>
#include <vector>

#include "atlab/common.hpp"

namespace atlab {

struct EpochRecord {
  int64_t epoch = 0;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  /// Mean over the epoch of per-example input-gradient L2 norms.
  double grad_norm = 0.0;
  double loss_main = 0.0;
  double loss_reg = 0.0;
  double wall_clock_s = 0.0;
  bool collapse = false;

  bool operator==(const EpochRecord&) const = default;
};

enum class CollapseTrigger { robust_drop, gradnorm_spike, both };

std::string to_string(CollapseTrigger t);
CollapseTrigger collapse_trigger_from_string(const std::string& s);

struct CollapseEvent {
  int64_t epoch = 0;
  CollapseTrigger trigger = CollapseTrigger::robust_drop;
  double pre_value = 0.0;
  double post_value = 0.0;

  bool operator==(const CollapseEvent&) const = default;
};

struct FinalEval {
  double clean_acc = 0.0;
  double robust_acc_mean = 0.0;
  double robust_acc_var = 0.0;

  bool operator==(const FinalEval&) const = default;
};

struct RunLog {
  /// Fully resolved TrainConfig as a JSON document.
  std::string config_json;
  std::vector<EpochRecord> epochs;
  std::vector<CollapseEvent> events;
  bool diverged = false;
  int64_t divergence_epoch = -1;
  std::string divergence_note;
  FinalEval final_eval;

  bool operator==(const RunLog&) const = default;
};

/// Fixed header: epoch,clean_acc,robust_acc,grad_norm,loss_main,loss_reg,
/// wall_clock_s,collapse. One row per epoch; collapse as 0/1.
extern const char* const kRunLogCsvHeader;

void write_runlog_csv(const RunLog& log, const std::string& path);

/// Reads back the epoch table; CSV carries no config or events.
std::vector<EpochRecord> read_runlog_csv(const std::string& path);

void write_runlog_json(const RunLog& log, const std::string& path);
RunLog read_runlog_json(const std::string& path);

std::string runlog_to_json(const RunLog& log);
RunLog runlog_from_json(const std::string& text);

}  // namespace atlab
