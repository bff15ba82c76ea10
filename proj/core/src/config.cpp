#include "atlab/config.hpp"

#include <json.hpp>

namespace atlab {

using nlohmann::json;

std::string to_json(const ModelConfig& cfg) {
  json j;
  j["arch"] = to_string(cfg.arch);
  j["first_conv_stride"] = cfg.first_conv_stride;
  j["compensation_stage"] = cfg.compensation_stage;
  j["activation"] = to_string(cfg.activation);
  j["softplus_alpha"] = cfg.softplus_alpha;
  j["num_classes"] = cfg.num_classes;
  j["in_channels"] = cfg.in_channels;
  j["in_h"] = cfg.in_h;
  j["in_w"] = cfg.in_w;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw config_error(std::string("bad model config: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.arch = arch_from_string(j.at("arch").get<std::string>());
    cfg.first_conv_stride = j.at("first_conv_stride").get<int64_t>();
    cfg.compensation_stage = j.at("compensation_stage").get<int64_t>();
    cfg.activation = activation_from_string(j.at("activation").get<std::string>());
    cfg.softplus_alpha = j.at("softplus_alpha").get<double>();
    cfg.num_classes = j.at("num_classes").get<int64_t>();
    cfg.in_channels = j.at("in_channels").get<int64_t>();
    cfg.in_h = j.at("in_h").get<int64_t>();
    cfg.in_w = j.at("in_w").get<int64_t>();
  } catch (const json::exception& e) {
    throw config_error(std::string("bad model config: ") + e.what());
  }
  return cfg;
}

namespace {

json model_to_tree(const ModelConfig& cfg) { return json::parse(to_json(cfg)); }

json attack_to_tree(const AttackConfig& a) {
  return json{{"family", to_string(a.family)},     {"epsilon", a.epsilon},
              {"step_size", a.step_size},          {"steps", a.steps},
              {"restarts", a.restarts},            {"init", to_string(a.init)},
              {"clamp_pixel_box", a.clamp_pixel_box}};
}

AttackConfig attack_from_tree(const json& j) {
  AttackConfig a;
  a.family = attack_family_from_string(j.at("family").get<std::string>());
  a.epsilon = j.at("epsilon").get<double>();
  a.step_size = j.at("step_size").get<double>();
  a.steps = j.at("steps").get<int64_t>();
  a.restarts = j.at("restarts").get<int64_t>();
  a.init = attack_init_from_string(j.at("init").get<std::string>());
  a.clamp_pixel_box = j.at("clamp_pixel_box").get<bool>();
  return a;
}

}  // namespace

std::string to_json(const TrainConfig& cfg) {
  json j;
  j["model"] = model_to_tree(cfg.model);
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["lr_decay_epochs"] = cfg.lr_decay_epochs;
  j["lr_decay_factor"] = cfg.lr_decay_factor;
  j["attack"] = attack_to_tree(cfg.attack);
  j["mask"] = json{{"ratio", cfg.mask.ratio},
                   {"mode", to_string(cfg.mask.mode)},
                   {"train_on_masked", cfg.mask.train_on_masked}};
  j["regularizers"] = json{{"gradnorm_beta", cfg.regularizers.gradnorm_beta},
                           {"weightnorm_lambda", cfg.regularizers.weightnorm_lambda},
                           {"gradalign_lambda", cfg.regularizers.gradalign_lambda}};
  j["augment"] = json{{"random_flip", cfg.augment.random_flip},
                      {"random_crop", cfg.augment.random_crop},
                      {"pad", cfg.augment.pad}};
  j["eval_attack"] = attack_to_tree(cfg.eval_attack);
  j["eval_repeats"] = cfg.eval_repeats;
  j["eval_size"] = cfg.eval_size;
  j["seed"] = cfg.seed;
  j["collapse"] = json{{"drop_from", cfg.collapse.drop_from},
                       {"drop_to", cfg.collapse.drop_to},
                       {"spike_ratio", cfg.collapse.spike_ratio}};
  j["probe_size"] = cfg.probe_size;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw config_error(std::string("bad train config: ") + e.what());
  }
  TrainConfig cfg;
  try {
    cfg.model = model_config_from_json(j.at("model").dump());
    cfg.epochs = j.at("epochs").get<int64_t>();
    cfg.batch_size = j.at("batch_size").get<int64_t>();
    cfg.lr = j.at("lr").get<double>();
    cfg.momentum = j.at("momentum").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.lr_decay_epochs = j.at("lr_decay_epochs").get<std::vector<int64_t>>();
    cfg.lr_decay_factor = j.at("lr_decay_factor").get<double>();
    cfg.attack = attack_from_tree(j.at("attack"));
    cfg.mask.ratio = j.at("mask").at("ratio").get<double>();
    cfg.mask.mode = mask_mode_from_string(j.at("mask").at("mode").get<std::string>());
    cfg.mask.train_on_masked = j.at("mask").at("train_on_masked").get<bool>();
    cfg.regularizers.gradnorm_beta = j.at("regularizers").at("gradnorm_beta").get<double>();
    cfg.regularizers.weightnorm_lambda =
        j.at("regularizers").at("weightnorm_lambda").get<double>();
    cfg.regularizers.gradalign_lambda =
        j.at("regularizers").at("gradalign_lambda").get<double>();
    cfg.augment.random_flip = j.at("augment").at("random_flip").get<bool>();
    cfg.augment.random_crop = j.at("augment").at("random_crop").get<bool>();
    cfg.augment.pad = j.at("augment").at("pad").get<int64_t>();
    cfg.eval_attack = attack_from_tree(j.at("eval_attack"));
    cfg.eval_repeats = j.at("eval_repeats").get<int64_t>();
    cfg.eval_size = j.at("eval_size").get<int64_t>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.collapse.drop_from = j.at("collapse").at("drop_from").get<double>();
    cfg.collapse.drop_to = j.at("collapse").at("drop_to").get<double>();
    cfg.collapse.spike_ratio = j.at("collapse").at("spike_ratio").get<double>();
    cfg.probe_size = j.at("probe_size").get<int64_t>();
  } catch (const json::exception& e) {
    throw config_error(std::string("bad train config: ") + e.what());
  }
  return cfg;
}

}  // namespace atlab
