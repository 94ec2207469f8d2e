#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rest/perturb.hpp"

namespace rest {

// Every hyperparameter of the three-phase training procedure. The JSON form
// uses the field names below verbatim.
struct TrainConfig {
  // optimisation
  int epochs = 30;
  double lr = 0.1;
  std::vector<int> lr_milestones{10, 20};
  double lr_decay = 0.1;
  double weight_decay = 2e-4;
  double momentum = 0.0;
  std::size_t batch_size = 32;

  // adversarial term
  double epsilon = 10.0;
  double tau = -1.0;  // negative: tau = epsilon
  int n_iter = 5;

  // regularisers
  double lambda_o = 3e-3;
  double lambda_g = 1e-5;
  bool sparsity_term = true;

  // Gaussian data augmentation strength during training (0 = off).
  double gaussian_cg = 0.0;

  // pruning and retraining
  double sparsity = 0.8;
  int retrain_epochs = 30;

  // data handling
  std::size_t context_k = 3;
  std::string preset = "tiny";

  // evaluation
  int eval_n_iter = kEvalPgdIterations;
  std::size_t eval_batch_size = 128;

  std::uint64_t seed = 0;

  double effective_tau() const { return tau < 0.0 ? epsilon : tau; }
  PgdParams pgd() const { return {epsilon, effective_tau(), n_iter}; }
  // Learning rate in effect during (0-based) epoch `epoch`.
  double lr_at(int epoch) const;

  // Throws ConfigError on the first invalid field.
  void validate() const;

  // Benign training: no attack, no regularisers, no augmentation.
  TrainConfig benign() const;
  // Phase-3 configuration: same settings without the sparsity term and with
  // the retraining epoch budget.
  TrainConfig retrain_phase() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
// Missing fields keep their defaults; unknown fields are rejected.
void from_json(const nlohmann::json& j, TrainConfig& cfg);

TrainConfig load_config(const std::string& path);

// Applies a dotted "key=value" override (value parsed as JSON, falling back
// to a string). Unknown keys are rejected.
void apply_override(TrainConfig& cfg, const std::string& assignment);

}  // namespace rest
