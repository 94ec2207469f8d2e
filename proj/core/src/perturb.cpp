#include "rest/perturb.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "rest/error.hpp"
#include "rest/random.hpp"
#include "rest/tape.hpp"

namespace rest {

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kNone: return "none";
    case NoiseKind::kAdversarial: return "adversarial";
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kShot: return "shot";
  }
  return "unknown";
}

std::string to_string(Strength strength) {
  switch (strength) {
    case Strength::kLow: return "low";
    case Strength::kMed: return "med";
    case Strength::kHigh: return "high";
  }
  return "unknown";
}

PerturbationSpec PerturbationSpec::none() { return {}; }

PerturbationSpec PerturbationSpec::adversarial(double epsilon, int n_iter) {
  PerturbationSpec s;
  s.kind = NoiseKind::kAdversarial;
  s.pgd = {epsilon, epsilon, n_iter};
  return s;
}

PerturbationSpec PerturbationSpec::gaussian(double c_g) {
  PerturbationSpec s;
  s.kind = NoiseKind::kGaussian;
  s.c_g = c_g;
  return s;
}

PerturbationSpec PerturbationSpec::shot(double c_s) {
  PerturbationSpec s;
  s.kind = NoiseKind::kShot;
  s.c_s = c_s;
  return s;
}

PerturbationSpec PerturbationSpec::preset(NoiseKind kind, Strength strength) {
  const int level = static_cast<int>(strength);
  switch (kind) {
    case NoiseKind::kNone: return none();
    case NoiseKind::kAdversarial: return adversarial(std::array{2.0, 6.0, 12.0}[level]);
    case NoiseKind::kGaussian: return gaussian(std::array{0.1, 0.2, 0.3}[level]);
    case NoiseKind::kShot: return shot(std::array{5000.0, 2500.0, 1000.0}[level]);
  }
  return none();
}

namespace {

NoiseKind parse_kind(const std::string& name) {
  if (name == "none" || name == "clean") return NoiseKind::kNone;
  if (name == "adversarial" || name == "pgd" || name == "adv") return NoiseKind::kAdversarial;
  if (name == "gaussian" || name == "gauss") return NoiseKind::kGaussian;
  if (name == "shot") return NoiseKind::kShot;
  throw ConfigError("unknown noise kind '" + name + "'");
}

double parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid numeric value '" + text + "' for " + what);
  }
}

}  // namespace

PerturbationSpec PerturbationSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  const NoiseKind kind = parse_kind(text.substr(0, colon));
  if (kind == NoiseKind::kNone) {
    if (colon != std::string::npos) throw ConfigError("noise 'none' takes no parameters");
    return none();
  }
  if (colon == std::string::npos) {
    throw ConfigError("noise '" + text + "' needs a level, e.g. " + to_string(kind) + ":med");
  }
  PerturbationSpec spec = preset(kind, Strength::kMed);
  std::stringstream rest(text.substr(colon + 1));
  std::string item;
  bool first = true;
  while (std::getline(rest, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      if (!first) throw ConfigError("strength level must come first in '" + text + "'");
      if (item == "low") spec = preset(kind, Strength::kLow);
      else if (item == "med" || item == "medium") spec = preset(kind, Strength::kMed);
      else if (item == "high") spec = preset(kind, Strength::kHigh);
      else throw ConfigError("unknown strength level '" + item + "' (expected low, med or high)");
    } else {
      const std::string key = item.substr(0, eq);
      const double value = parse_number(item.substr(eq + 1), key);
      if (kind == NoiseKind::kAdversarial && (key == "eps" || key == "epsilon")) {
        const bool tau_tracks = spec.pgd.tau == spec.pgd.epsilon;
        spec.pgd.epsilon = value;
        if (tau_tracks) spec.pgd.tau = value;
      } else if (kind == NoiseKind::kAdversarial && key == "tau") {
        spec.pgd.tau = value;
      } else if (kind == NoiseKind::kAdversarial && (key == "iters" || key == "n_iter")) {
        spec.pgd.n_iter = static_cast<int>(value);
      } else if (kind == NoiseKind::kGaussian && (key == "cg" || key == "c_g")) {
        spec.c_g = value;
      } else if (kind == NoiseKind::kShot && (key == "cs" || key == "c_s")) {
        spec.c_s = value;
      } else {
        throw ConfigError("parameter '" + key + "' does not apply to " + to_string(kind) + " noise");
      }
    }
    first = false;
  }
  spec.validate();
  return spec;
}

void PerturbationSpec::validate() const {
  switch (kind) {
    case NoiseKind::kAdversarial:
      if (pgd.epsilon < 0.0 || pgd.tau < 0.0) throw ConfigError("PGD epsilon and tau must be >= 0");
      if (pgd.n_iter < 1) throw ConfigError("PGD n_iter must be >= 1");
      break;
    case NoiseKind::kGaussian:
      if (c_g < 0.0) throw ConfigError("gaussian c_g must be >= 0");
      break;
    case NoiseKind::kShot:
      if (c_s < 1.0) throw ConfigError("shot c_s must be >= 1");
      break;
    case NoiseKind::kNone:
      break;
  }
}

std::string PerturbationSpec::label() const {
  std::ostringstream out;
  out << to_string(kind);
  switch (kind) {
    case NoiseKind::kAdversarial:
      out << ":eps=" << pgd.epsilon << ",tau=" << pgd.tau << ",iters=" << pgd.n_iter;
      break;
    case NoiseKind::kGaussian:
      out << ":cg=" << c_g;
      break;
    case NoiseKind::kShot:
      out << ":cs=" << c_s;
      break;
    case NoiseKind::kNone:
      break;
  }
  return out.str();
}

DataStats compute_stats(std::span<const double> values) {
  if (values.empty()) throw ConfigError("cannot compute statistics of an empty training set");
  double total = 0.0;
  DataStats s;
  s.x_min = values[0];
  s.x_max = values[0];
  for (double v : values) {
    total += v;
    s.x_min = std::min(s.x_min, v);
    s.x_max = std::max(s.x_max, v);
  }
  const double mu = total / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mu) * (v - mu);
  s.sigma = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

Tensor pgd_attack(Network& net, const Tensor& x, std::span<const int> labels,
                  const PgdParams& params, Mode loss_mode) {
  if (params.epsilon < 0.0 || params.tau < 0.0) throw ConfigError("PGD epsilon and tau must be >= 0");
  if (params.n_iter < 1) throw ConfigError("PGD n_iter must be >= 1");
  Tensor adv = x.detach();
  if (params.epsilon == 0.0) return adv;
  std::vector<double> delta(x.numel(), 0.0);
  const auto clean = x.data();
  for (int step = 0; step < params.n_iter; ++step) {
    Tensor input = adv.detach().set_requires_grad(true);
    std::vector<double> grad;
    {
      Tape tape;
      Tensor logits = net.forward(input, loss_mode, StatsUpdate::kFrozen);
      Tensor loss = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(loss.item())) {
        throw NumericalError("pgd_attack: non-finite loss " + std::to_string(loss.item()) +
                             " at step " + std::to_string(step));
      }
      grad = tape.gradient(loss, input);
    }
    auto out = adv.data();
    for (std::size_t i = 0; i < delta.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g)) {
        throw NumericalError("pgd_attack: non-finite input gradient at element " + std::to_string(i) +
                             ", step " + std::to_string(step));
      }
      const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      delta[i] = std::clamp(delta[i] + params.epsilon * s, -params.tau, params.tau);
      double v = clean[i] + delta[i];
      // Rounding in the addition must not push the sample outside the ball.
      while (v - clean[i] > params.tau) v = std::nextafter(v, clean[i]);
      while (clean[i] - v > params.tau) v = std::nextafter(v, clean[i]);
      out[i] = v;
    }
  }
  return adv;
}

Tensor gaussian_corrupt(const Tensor& x, double c_g, const DataStats& stats, std::uint64_t seed) {
  if (c_g < 0.0) throw ConfigError("gaussian c_g must be >= 0");
  Tensor out = x.detach();
  const double stddev = c_g * stats.sigma;
  if (stddev == 0.0) return out;
  Rng rng(seed);
  for (double& v : out.data()) v += rng.normal(0.0, stddev);
  return out;
}

Tensor shot_corrupt(const Tensor& x, double c_s, const DataStats& stats, std::uint64_t seed) {
  if (c_s < 1.0) throw ConfigError("shot c_s must be >= 1");
  if (stats.degenerate()) {
    throw ConfigError("shot noise: degenerate data range x_min == x_max == " +
                      std::to_string(stats.x_min));
  }
  Tensor out = x.detach();
  const double range = stats.x_max - stats.x_min;
  Rng rng(seed);
  for (double& v : out.data()) {
    const double normalized = (v - stats.x_min) / range;
    const double counts = rng.poisson(std::max(normalized, 0.0) * c_s);
    const double clipped = std::clamp(counts / c_s, 0.0, 1.0);
    v = clipped * range + stats.x_min;
  }
  return out;
}

Tensor apply_perturbation(Network& net, const Tensor& x, std::span<const int> labels,
                          const PerturbationSpec& spec, const DataStats& stats,
                          std::uint64_t batch_index) {
  const std::uint64_t seed = derive_seed(spec.seed, batch_index);
  switch (spec.kind) {
    case NoiseKind::kNone: return x.detach();
    case NoiseKind::kAdversarial: return pgd_attack(net, x, labels, spec.pgd, Mode::kEval);
    case NoiseKind::kGaussian: return gaussian_corrupt(x, spec.c_g, stats, seed);
    case NoiseKind::kShot: return shot_corrupt(x, spec.c_s, stats, seed);
  }
  return x.detach();
}

}  // namespace rest
