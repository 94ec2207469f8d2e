#include "rest/config.hpp"

#include <fstream>

#include "rest/error.hpp"

namespace rest {

double TrainConfig::lr_at(int epoch) const {
  double rate = lr;
  for (int m : lr_milestones) {
    if (epoch >= m) rate *= lr_decay;
  }
  return rate;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(epochs >= 0, "epochs must be >= 0");
  require(retrain_epochs >= 0, "retrain_epochs must be >= 0");
  require(lr >= 0.0, "lr must be >= 0");
  require(lr_decay >= 0.0, "lr_decay must be >= 0");
  for (int m : lr_milestones) {
    require(m >= 0 && (m < epochs || epochs == 0), "lr_milestones must lie inside [0, epochs)");
  }
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(batch_size >= 2, "batch_size must be >= 2 (batchnorm needs two samples)");
  require(epsilon >= 0.0, "epsilon must be >= 0");
  require(n_iter >= 1, "n_iter must be >= 1");
  require(lambda_o >= 0.0, "lambda_o must be >= 0");
  require(lambda_g >= 0.0, "lambda_g must be >= 0");
  require(gaussian_cg >= 0.0, "gaussian_cg must be >= 0");
  require(sparsity >= 0.0 && sparsity < 1.0, "sparsity must be in [0, 1)");
  require(eval_n_iter >= 1, "eval_n_iter must be >= 1");
  require(eval_batch_size >= 1, "eval_batch_size must be >= 1");
}

TrainConfig TrainConfig::benign() const {
  TrainConfig c = *this;
  c.epsilon = 0.0;
  c.lambda_o = 0.0;
  c.lambda_g = 0.0;
  c.sparsity_term = false;
  c.gaussian_cg = 0.0;
  return c;
}

TrainConfig TrainConfig::retrain_phase() const {
  TrainConfig c = *this;
  c.sparsity_term = false;
  c.epochs = retrain_epochs;
  c.lr_milestones.clear();
  // Milestones scale with the retraining budget.
  for (int m : lr_milestones) {
    if (epochs > 0) {
      const int scaled = static_cast<int>(static_cast<long long>(m) * retrain_epochs / epochs);
      if (scaled < retrain_epochs) c.lr_milestones.push_back(scaled);
    }
  }
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"epochs", c.epochs},
      {"lr", c.lr},
      {"lr_milestones", c.lr_milestones},
      {"lr_decay", c.lr_decay},
      {"weight_decay", c.weight_decay},
      {"momentum", c.momentum},
      {"batch_size", c.batch_size},
      {"epsilon", c.epsilon},
      {"tau", c.tau},
      {"n_iter", c.n_iter},
      {"lambda_o", c.lambda_o},
      {"lambda_g", c.lambda_g},
      {"sparsity_term", c.sparsity_term},
      {"gaussian_cg", c.gaussian_cg},
      {"sparsity", c.sparsity},
      {"retrain_epochs", c.retrain_epochs},
      {"context_k", c.context_k},
      {"preset", c.preset},
      {"eval_n_iter", c.eval_n_iter},
      {"eval_batch_size", c.eval_batch_size},
      {"seed", c.seed},
  };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json defaults = TrainConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  nlohmann::json merged = defaults;
  merged.update(j);
  try {
    c.epochs = merged.at("epochs");
    c.lr = merged.at("lr");
    c.lr_milestones = merged.at("lr_milestones").get<std::vector<int>>();
    c.lr_decay = merged.at("lr_decay");
    c.weight_decay = merged.at("weight_decay");
    c.momentum = merged.at("momentum");
    c.batch_size = merged.at("batch_size");
    c.epsilon = merged.at("epsilon");
    c.tau = merged.at("tau");
    c.n_iter = merged.at("n_iter");
    c.lambda_o = merged.at("lambda_o");
    c.lambda_g = merged.at("lambda_g");
    c.sparsity_term = merged.at("sparsity_term");
    c.gaussian_cg = merged.at("gaussian_cg");
    c.sparsity = merged.at("sparsity");
    c.retrain_epochs = merged.at("retrain_epochs");
    c.context_k = merged.at("context_k");
    c.preset = merged.at("preset");
    c.eval_n_iter = merged.at("eval_n_iter");
    c.eval_batch_size = merged.at("eval_batch_size");
    c.seed = merged.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
}

TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  TrainConfig cfg = j.get<TrainConfig>();
  cfg.validate();
  return cfg;
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json j = cfg;
  if (!j.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  j[key] = value;
  cfg = j.get<TrainConfig>();
}

}  // namespace rest
