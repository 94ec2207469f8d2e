#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "rest/network.hpp"
#include "rest/tensor.hpp"

namespace rest {

enum class NoiseKind { kNone, kAdversarial, kGaussian, kShot };
enum class Strength { kLow, kMed, kHigh };

std::string to_string(NoiseKind kind);
std::string to_string(Strength strength);

struct PgdParams {
  double epsilon = 0.0;  // step size, signal units
  double tau = 0.0;      // L-infinity radius around the clean input
  int n_iter = 1;
};

// Default number of attack steps used when evaluating robustness.
inline constexpr int kEvalPgdIterations = 10;

struct PerturbationSpec {
  NoiseKind kind = NoiseKind::kNone;
  PgdParams pgd;
  double c_g = 0.0;
  double c_s = 1.0;
  std::uint64_t seed = 0;

  static PerturbationSpec none();
  static PerturbationSpec adversarial(double epsilon, int n_iter = kEvalPgdIterations);
  static PerturbationSpec gaussian(double c_g);
  static PerturbationSpec shot(double c_s);

  // Adversarial eps = 2/6/12, gaussian c_g = 0.1/0.2/0.3,
  // shot c_s = 5000/2500/1000 for low/med/high.
  static PerturbationSpec preset(NoiseKind kind, Strength strength);

  // "none", "<kind>:<low|med|high>" or "<kind>:<param>=<value>" where kind is
  // adversarial (alias pgd), gaussian or shot and param is eps/tau/iters,
  // cg or cs respectively.
  static PerturbationSpec parse(const std::string& text);

  void validate() const;
  std::string label() const;
};

struct DataStats {
  double sigma = 0.0;  // population std over every training element
  double x_min = 0.0;
  double x_max = 0.0;
  bool degenerate() const { return x_max == x_min; }
};

// Throws ConfigError on an empty range.
DataStats compute_stats(std::span<const double> training_values);

// Iterated signed-gradient ascent on the cross-entropy of `net`, each step
// followed by projection of the cumulative perturbation onto the L-infinity
// ball of radius tau around x. Model parameters, their gradients and the
// batchnorm running statistics are left untouched. The result is detached.
Tensor pgd_attack(Network& net, const Tensor& x, std::span<const int> labels,
                  const PgdParams& params, Mode loss_mode);

// x + N(0, (c_g * sigma)^2) per element.
Tensor gaussian_corrupt(const Tensor& x, double c_g, const DataStats& stats, std::uint64_t seed);

// Poisson shot noise in the [x_min, x_max]-normalised domain, c_s counts per
// unit; the result stays inside [x_min, x_max].
Tensor shot_corrupt(const Tensor& x, double c_s, const DataStats& stats, std::uint64_t seed);

// Applies a non-adversarial or adversarial perturbation to one batch.
// Adversarial noise uses eval-mode batchnorm (white-box on the deployed model).
Tensor apply_perturbation(Network& net, const Tensor& x, std::span<const int> labels,
                          const PerturbationSpec& spec, const DataStats& stats,
                          std::uint64_t batch_index);

}  // namespace rest
