// Acceptance suite. Prints one PASS/FAIL line per criterion; `--criterion N`
// runs a single one (that is how ctest registers them).

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cli.hpp"
#include "rest/loss.hpp"
#include "rest/perturb.hpp"
#include "rest/pipeline.hpp"
#include "rest/pruner.hpp"
#include "rest/tape.hpp"
#include "support.hpp"

using namespace rest;
using rest::fixtures::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

std::vector<int> random_labels(std::size_t n, Rng& rng, int classes = 5) {
  std::vector<int> out(n);
  for (int& l : out) l = static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
  return out;
}

// ---- 1: gradients of the full loss vs central differences -------------------

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kNets = 20;
  constexpr double kStep = 1e-6;
  constexpr double kTol = 1e-4;
  double worst = 0.0, worst_abs = 0.0;
  std::size_t checked = 0, absolute = 0;
  bool abs_fail = false;
  std::string where;

  for (int n = 0; n < kNets; ++n) {
    Rng rng(derive_seed(0xc1, static_cast<std::uint64_t>(n)));
    const std::size_t c1 = 2 + rng.index(3), c2 = 2 + rng.index(3);
    const std::size_t length = 20 + 4 * rng.index(3);
    Network net = Network::build(fixtures::small_spec(c1, c2, length), rng.next());
    fixtures::scramble_norms(net, rng);

    TrainConfig cfg;
    cfg.epsilon = 0.25;
    cfg.tau = 0.5;
    cfg.n_iter = 2;
    cfg.lambda_o = 0.05;
    cfg.lambda_g = 0.02;
    cfg.sparsity_term = true;

    const std::size_t batch = 4;
    const Tensor x = fixtures::random_tensor({batch, 1, length}, rng, -2.0, 2.0);
    const std::vector<int> labels = random_labels(batch, rng);

    // The attack is a maximiser over the input; at fixed x_p the loss gradient
    // w.r.t. the weights is the gradient of the full objective.
    const Tensor x_p = pgd_attack(net, x, labels, cfg.pgd(), Mode::kTrain);

    net.zero_grad();
    {
      Tape tape;
      LossBreakdown full = rest_loss(net, x, labels, cfg);
      LossBreakdown fixed_point = rest_objective(net, x_p, labels, cfg);
      if (full.total_value != fixed_point.total_value) {
        return {false, "net " + std::to_string(n) + ": rest_loss does not evaluate the objective at its own attack"};
      }
      net.zero_grad();
      tape.backward(fixed_point.total);
    }

    auto objective = [&]() {
      Network probe = net;
      return rest_objective(probe, x_p, labels, cfg).total_value;
    };
    // Central differences resolve a derivative only to about eps * |f| / h;
    // below ten times that (e.g. conv biases feeding a train-mode batchnorm,
    // whose true gradient is 0) the comparison is absolute.
    const double floor = 10.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(objective())) / kStep;

    const auto named = net.named_tensors();
    for (const NamedTensor& nt : named) {
      if (!nt.learnable) continue;
      Tensor t = nt.tensor;
      const std::vector<double> analytic(t.grad().begin(), t.grad().end());
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const double saved = t[i];
        t[i] = saved + kStep;
        const double up = objective();
        t[i] = saved - kStep;
        const double down = objective();
        t[i] = saved;
        const double numeric = (up - down) / (2.0 * kStep);
        const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
        const double err = std::abs(numeric - analytic[i]);
        ++checked;
        if (scale <= floor / kTol) {
          ++absolute;
          if (err > floor) abs_fail = true;
          worst_abs = std::max(worst_abs, err);
          continue;
        }
        if (err / scale > worst) {
          worst = err / scale;
          where = "net " + std::to_string(n) + " " + nt.name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst <= kTol && !abs_fail && secs < 60.0;
  return {pass, std::to_string(kNets) + " nets, " + std::to_string(checked) + " parameters, max rel err " +
                    sci(worst) + " at " + where + "; " + std::to_string(absolute) +
                    " near-zero gradients within the difference-quotient floor (max abs err " + sci(worst_abs) +
                    "), " + fixed(secs, 1) + " s"};
}

// ---- 2: PGD contract --------------------------------------------------------

Outcome pgd_contract() {
  const auto t0 = std::chrono::steady_clock::now();
  SynthParams sp;
  sp.n_records = 10;
  sp.epochs_per_record = 40;
  sp.seed = 21;
  const Dataset data = synth_generate(sp);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr_milestones = {1};
  cfg.seed = 2;
  cfg = cfg.benign();
  const DataBundle bundle = prepare_data(data, cfg);
  Network net = train_phase(initial_network(cfg, bundle.train.sample_length), bundle, cfg, "trained").net;

  Rng rng(0x2222);
  const PgdParams attack{2.0, 6.0, 5};
  double worst_excess = -1e300;
  double clean_loss = 0.0, adv_loss = 0.0;
  double fgsm_err = 0.0;
  constexpr int kBatches = 32;
  for (int b = 0; b < kBatches; ++b) {
    std::vector<std::size_t> rows(16);
    for (auto& r : rows) r = rng.index(bundle.train.size());
    const Tensor x = bundle.train.gather(rows);
    std::vector<int> labels;
    for (auto r : rows) labels.push_back(bundle.train.labels[r]);

    const Tensor xp = pgd_attack(net, x, labels, attack, Mode::kEval);
    for (std::size_t i = 0; i < x.numel(); ++i) worst_excess = std::max(worst_excess, std::abs(xp[i] - x[i]) - attack.tau);
    clean_loss += softmax_cross_entropy(net.forward(x, Mode::kEval), labels).item();
    adv_loss += softmax_cross_entropy(net.forward(xp, Mode::kEval), labels).item();

    // One step with tau >= eps is x + eps * sign(grad_x CE).
    const PgdParams one{3.0, 5.0, 1};
    const Tensor step = pgd_attack(net, x, labels, one, Mode::kEval);
    Tensor input = x.detach().set_requires_grad(true);
    std::vector<double> g;
    {
      Tape tape;
      Tensor loss = softmax_cross_entropy(net.forward(input, Mode::kEval, StatsUpdate::kFrozen), labels);
      g = tape.gradient(loss, input);
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      fgsm_err = std::max(fgsm_err, std::abs(step[i] - (x[i] + one.epsilon * s)));
    }
  }
  clean_loss /= kBatches;
  adv_loss /= kBatches;
  const double secs = seconds_since(t0);
  const bool pass = worst_excess <= 0.0 && adv_loss >= clean_loss && fgsm_err <= 1e-12 && secs < 30.0;
  return {pass, "max(|x_p-x|)-tau " + sci(worst_excess) + ", mean loss clean " + fixed(clean_loss) +
                    " adversarial " + fixed(adv_loss) + ", FGSM max err " + sci(fgsm_err) + ", " +
                    fixed(secs, 1) + " s"};
}

// ---- 3: spectral penalty drives singular values to 1 ------------------------

Outcome spectral_effect() {
  const auto t0 = std::chrono::steady_clock::now();
  NetworkSpec spec;
  spec.name = "square";
  spec.input_channels = 8;
  spec.input_length = 1;
  spec.layers = {LayerSpec::flatten(), LayerSpec::linear(8, 8, false)};
  spec.prunable = spec.derive_prunable_units();

  constexpr int kMatrices = 5;
  constexpr int kMaxSteps = 2000;
  constexpr double kRate = 0.01;
  int worst_steps = 0;
  double oracle_err = 0.0;
  std::string detail;
  for (int m = 0; m < kMatrices; ++m) {
    Network net = Network::build(spec, derive_seed(0x33, static_cast<std::uint64_t>(m)));
    Tensor w = net.layer(1).weight;
    auto deviation = [&]() {
      Eigen::Map<const Eigen::Matrix<double, 8, 8, Eigen::RowMajor>> W(w.data().data());
      const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(W).singularValues();
      return (s.array() - 1.0).abs().maxCoeff();
    };
    {
      Eigen::Map<const Eigen::Matrix<double, 8, 8, Eigen::RowMajor>> W(w.data().data());
      const double expect = (W.transpose() * W - Eigen::MatrixXd::Identity(8, 8)).norm();
      oracle_err = std::max(oracle_err, std::abs(spectral_penalty(net).item() - expect));
    }
    const double start = deviation();
    int steps = 0;
    double dev = start;
    while (dev >= 0.01 && steps < kMaxSteps) {
      net.zero_grad();
      {
        Tape tape;
        tape.backward(spectral_penalty(net));
      }
      auto g = w.grad();
      auto v = w.data();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= kRate * g[i];
      ++steps;
      dev = deviation();
    }
    if (dev >= 0.01) {
      return {false, "matrix " + std::to_string(m) + ": max|sigma-1| " + fixed(dev) + " after " +
                         std::to_string(kMaxSteps) + " steps"};
    }
    worst_steps = std::max(worst_steps, steps);
    detail += (m ? ", " : "") + fixed(start, 3) + "->" + fixed(dev, 4);
  }
  const double secs = seconds_since(t0);
  const bool pass = oracle_err < 1e-10 && secs < 10.0;
  return {pass, std::to_string(kMatrices) + " matrices below 0.01 within " + std::to_string(worst_steps) +
                    " steps (" + detail + "), penalty vs SVD oracle " + sci(oracle_err) + ", " + fixed(secs, 2) + " s"};
}

// ---- 4: compaction is equivalent to zeroing gamma/beta ----------------------

PruneMask random_mask(const Network& net, Rng& rng) {
  PruneMask mask = keep_all(net);
  for (std::size_t u = 0; u < mask.keep.size(); ++u) {
    auto& k = mask.keep[u];
    const std::size_t floor = min_kept_filters(k.size());
    const std::size_t kept = floor + rng.index(k.size() - floor + 1);
    std::vector<std::size_t> order(k.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::fill(k.begin(), k.end(), false);
    for (std::size_t i = 0; i < kept; ++i) k[order[i]] = true;
    mask.pruned += k.size() - kept;
  }
  return mask;
}

// Exhaustive optimum: among floor-respecting subsets of the target size, the
// one with the smallest total |gamma|.
std::vector<bool> brute_force_pruned(const std::vector<double>& abs_gamma, const std::vector<std::size_t>& unit_of,
                                     const std::vector<std::size_t>& cap, std::size_t target) {
  const std::size_t n = abs_gamma.size();
  double best = 1e300;
  std::uint32_t best_set = 0;
  for (std::uint32_t s = 0; s < (1u << n); ++s) {
    if (static_cast<std::size_t>(std::popcount(s)) != target) continue;
    std::vector<std::size_t> per(cap.size(), 0);
    double total = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (!(s >> i & 1u)) continue;
      total += abs_gamma[i];
      ok = ++per[unit_of[i]] <= cap[unit_of[i]];
    }
    if (ok && total < best) {
      best = total;
      best_set = s;
    }
  }
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = best_set >> i & 1u;
  return out;
}

Outcome pruning_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(0x44);
  Network net = Network::build(tiny_preset(256), 404);
  fixtures::scramble_norms(net, rng);
  const Tensor inputs = fixtures::random_tensor({100, 1, 256}, rng, -40.0, 40.0);

  double worst = 0.0;
  for (int m = 0; m < 50; ++m) {
    const PruneMask mask = random_mask(net, rng);
    check_mask(net, mask);
    Network zeroed = net;
    for (std::size_t u = 0; u < mask.keep.size(); ++u) {
      LayerParams& bn = zeroed.layer(net.spec().prunable[u].norm);
      for (std::size_t i = 0; i < mask.keep[u].size(); ++i) {
        if (!mask.keep[u][i]) bn.gamma[i] = bn.beta[i] = 0.0;
      }
    }
    Network small = compact(net, mask);
    const Tensor a = zeroed.forward(inputs, Mode::kEval);
    const Tensor b = small.forward(inputs, Mode::kEval);
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }

  int instances = 0, agree = 0;
  for (int t = 0; t < 40; ++t) {
    const std::size_t c1 = 1 + rng.index(10), c2 = 1 + rng.index(20 - c1);
    Network small = Network::build(fixtures::small_spec(c1, c2, 16), rng.next());
    fixtures::scramble_norms(small, rng);
    std::vector<double> abs_gamma;
    std::vector<std::size_t> unit_of, cap;
    for (std::size_t u = 0; u < small.spec().prunable.size(); ++u) {
      const Tensor& g = small.layer(small.spec().prunable[u].norm).gamma;
      for (double v : g.data()) {
        abs_gamma.push_back(std::abs(v));
        unit_of.push_back(u);
      }
      cap.push_back(g.numel() - min_kept_filters(g.numel()));
    }
    const double s = rng.uniform(0.0, 0.95);
    const std::size_t n = abs_gamma.size();
    std::size_t target = 0;
    while (static_cast<double>(target) / static_cast<double>(n) < s) ++target;
    target = std::min(target, std::accumulate(cap.begin(), cap.end(), std::size_t{0}));

    const std::vector<bool> expect = brute_force_pruned(abs_gamma, unit_of, cap, target);
    const PruneMask mask = rank_and_mask(small, s);
    std::vector<bool> got;
    for (const auto& unit : mask.keep) {
      for (bool k : unit) got.push_back(!k);
    }
    ++instances;
    agree += got == expect;
  }
  const double secs = seconds_since(t0);
  const bool pass = worst <= 1e-8 && agree == instances && secs < 60.0;
  return {pass, "100 inputs x 50 masks max |logit diff| " + sci(worst) + ", ranking " + std::to_string(agree) +
                    "/" + std::to_string(instances) + " brute-force matches, " + fixed(secs, 1) + " s"};
}

// ---- 5: noise statistics ----------------------------------------------------

Outcome noise_statistics() {
  const auto t0 = std::chrono::steady_clock::now();
  SynthParams sp;
  sp.n_records = 20;
  sp.epochs_per_record = 60;
  sp.seed = 5;
  const Dataset data = synth_generate(sp);
  TrainConfig cfg;
  const DataBundle bundle = prepare_data(data, cfg);
  const DataStats& stats = bundle.stats;

  constexpr std::size_t kElements = 1000000;
  Tensor x({kElements});
  for (std::size_t i = 0; i < kElements; ++i) x[i] = bundle.train.values[i % bundle.train.values.size()];

  std::string detail;
  bool pass = true;
  for (double c_g : {0.1, 0.2, 0.3}) {
    const Tensor y = gaussian_corrupt(x, c_g, stats, 77);
    double m = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < kElements; ++i) {
      const double d = y[i] - x[i];
      m += d;
      m2 += d * d;
    }
    m /= kElements;
    const double sd = std::sqrt(m2 / kElements - m * m);
    const double rel = std::abs(sd / (c_g * stats.sigma) - 1.0);
    pass = pass && rel < 0.01;
    detail += "c_g " + fixed(c_g, 1) + " rel " + sci(rel) + "; ";
  }
  double previous = 1e300;
  bool bounded = true, monotone = true;
  for (double c_s : {1e3, 1e4, 1e5, 1e6}) {
    const Tensor y = shot_corrupt(x, c_s, stats, 78);
    double mad = 0.0;
    for (std::size_t i = 0; i < kElements; ++i) {
      bounded = bounded && y[i] >= stats.x_min && y[i] <= stats.x_max;
      mad += std::abs(y[i] - x[i]);
    }
    mad /= kElements;
    monotone = monotone && mad < previous;
    previous = mad;
    detail += "c_s " + sci(c_s) + " mean|d| " + fixed(mad) + "; ";
  }
  const double secs = seconds_since(t0);
  pass = pass && bounded && monotone && secs < 30.0;
  return {pass, detail + (bounded ? "bounded" : "OUT OF RANGE") + ", " + (monotone ? "monotone" : "NOT MONOTONE") +
                    ", " + fixed(secs, 1) + " s"};
}

// ---- 6: REST vs benign baseline under noise ---------------------------------

TrainConfig directional_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.lr_milestones = {7, 10};
  cfg.retrain_epochs = 12;
  cfg.epsilon = 4.0;
  cfg.seed = seed;
  return cfg;
}

Dataset directional_data() {
  SynthParams sp;
  sp.seed = 1;
  return synth_generate(sp);
}

Outcome directional() {
  const double cpu0 = cpu_seconds();
  const Dataset data = directional_data();
  const std::vector<std::string> cells{"gaussian:med", "gaussian:high", "adversarial:med"};
  const std::vector<std::string> columns = sweep_columns();
  auto column = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(columns.begin(), columns.end(), name) - columns.begin());
  };

  std::vector<int> wins(cells.size(), 0);
  bool clean_ok = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TrainConfig cfg = directional_config(seed);
    const DataBundle bundle = prepare_data(data, cfg);
    const Network init = initial_network(cfg, bundle.train.sample_length);
    const Network baseline = train_phase(init, bundle, cfg.benign(), "trained").net;
    const Network robust = rest_full(init, bundle, cfg).retrained.net;
    const SweepRow b = robustness_sweep(baseline, bundle.test, bundle.stats, cfg, cfg.seed);
    const SweepRow r = robustness_sweep(robust, bundle.test, bundle.stats, cfg, cfg.seed);

    const double clean_b = b.macro_f1[column("none")], clean_r = r.macro_f1[column("none")];
    clean_ok = clean_ok && clean_r >= clean_b - 0.10;
    detail += "\n    seed " + std::to_string(seed) + ": none " + fixed(clean_b, 3) + "/" + fixed(clean_r, 3);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const double vb = b.macro_f1[column(cells[c])], vr = r.macro_f1[column(cells[c])];
      wins[c] += vr > vb;
      detail += ", " + cells[c] + " " + fixed(vb, 3) + "/" + fixed(vr, 3);
    }
  }
  const double cpu = cpu_seconds() - cpu0;
  bool pass = clean_ok && cpu < 900.0;
  std::string summary = "baseline/REST macro-F1; wins";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    pass = pass && wins[c] >= 2;
    summary += " " + cells[c] + " " + std::to_string(wins[c]) + "/3";
  }
  return {pass, summary + ", clean within 0.10: " + (clean_ok ? "yes" : "no") + ", " + fixed(cpu, 0) + " s CPU" +
                    detail};
}

// ---- 7: compression accounting ----------------------------------------------

// Hand count of the tiny preset at input length 256 with k0..k3 filters kept
// per conv: conv K_in*K_l*K_out + K_out, batchnorm 2*K_out, head 12*k3*5 + 5.
std::size_t tiny_params(std::size_t k0, std::size_t k1, std::size_t k2, std::size_t k3) {
  return (8 * k0 + k0 + 2 * k0) + (5 * k0 * k1 + k1 + 2 * k1) + (3 * k1 * k2 + k2 + 2 * k2) +
         (3 * k2 * k3 + k3 + 2 * k3) + (12 * k3 * 5 + 5);
}

// Output lengths 63, 30, 14, 12; per conv 2*K_in*K_l*K_out*L + K_out*L,
// batchnorm 2*C*L, relu C*L, head 2*12*k3*5 + 5.
std::uint64_t tiny_flops(std::uint64_t k0, std::uint64_t k1, std::uint64_t k2, std::uint64_t k3) {
  return (2 * 8 * k0 * 63 + k0 * 63 + 3 * k0 * 63) + (2 * k0 * 5 * k1 * 30 + k1 * 30 + 3 * k1 * 30) +
         (2 * k1 * 3 * k2 * 14 + k2 * 14 + 3 * k2 * 14) + (2 * k2 * 3 * k3 * 12 + k3 * 12 + 3 * k3 * 12) +
         (2 * 12 * k3 * 5 + 5);
}

Outcome compression_accounting() {
  SynthParams sp;
  sp.n_records = 20;
  sp.epochs_per_record = 60;
  sp.seed = 7;
  const Dataset data = synth_generate(sp);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr_milestones = {2};
  cfg.retrain_epochs = 2;
  cfg.epsilon = 4.0;
  cfg.seed = 7;
  const DataBundle bundle = prepare_data(data, cfg);
  const RestResult run = rest_full(initial_network(cfg, bundle.train.sample_length), bundle, cfg);

  const auto t0 = std::chrono::steady_clock::now();
  const SparsityReport rep = sparsity_report(run.trained.net, run.retrained.net);
  std::vector<std::size_t> kept;
  bool floors = true;
  for (const UnitReport& u : rep.units) {
    kept.push_back(u.filters_after);
    floors = floors && u.filters_after * 10 >= u.filters_before;
  }
  const double secs = seconds_since(t0);

  // Golden values: the uncompressed preset by hand, and the kept filters of
  // this fixed run.
  const std::vector<std::size_t> golden_kept{5, 4, 6, 4};
  const bool hand_full = count_params(run.trained.net).total == 8229 && tiny_params(16, 16, 32, 32) == 8229 &&
                         count_flops(run.trained.net).total == 222789 && tiny_flops(16, 16, 32, 32) == 222789;
  const bool hand_pruned = kept.size() == 4 &&
                           rep.params_after == tiny_params(kept[0], kept[1], kept[2], kept[3]) &&
                           count_flops(run.retrained.net).total == tiny_flops(kept[0], kept[1], kept[2], kept[3]);

  std::string ks;
  for (std::size_t k : kept) ks += (ks.empty() ? "" : ",") + std::to_string(k);
  const bool pass = rep.pruned_fraction() >= 0.8 && floors && rep.param_ratio() > 3.0 && rep.flop_ratio() > 3.0 &&
                    hand_full && hand_pruned && kept == golden_kept && secs < 1.0;
  return {pass, "pruned fraction " + fixed(rep.pruned_fraction()) + ", kept {" + ks + "} of {16,16,32,32}, params " +
                    std::to_string(rep.params_before) + "->" + std::to_string(rep.params_after) + " (" +
                    fixed(rep.param_ratio(), 2) + "x), FLOPs " + std::to_string(rep.flops_before) + "->" +
                    std::to_string(rep.flops_after) + " (" + fixed(rep.flop_ratio(), 2) + "x), hand counts " +
                    (hand_full && hand_pruned ? "match" : "DIFFER") + ", golden kept " +
                    (kept == golden_kept ? "match" : "DIFFER") + ", " + fixed(secs * 1e3, 2) + " ms"};
}

// ---- 8: metric fixtures and sweep/eval agreement ----------------------------

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = rest::cli::run(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::cerr << "  rest " << args.front() << " failed: " << e.str();
  return code;
}

// Splits one CSV record, honouring double-quoted fields.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted && c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
      out.back() += '"';
      ++i;
    } else if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

ConfusionMatrix from_pairs(const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t classes) {
  ConfusionMatrix cm(classes);
  cm.add(truth, predicted);
  return cm;
}

Outcome metric_correctness() {
  std::vector<std::string> failures;
  auto expect = [&](const std::string& name, double got, double want) {
    if (std::abs(got - want) > 1e-12) failures.push_back(name + " " + std::to_string(got) + " != " + std::to_string(want));
  };

  const ConfusionMatrix two = from_pairs({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
  if (!(two == ConfusionMatrix::from_counts(2, {1, 1, 0, 2}))) failures.push_back("2x2 counts");
  expect("2x2 macro-F1", two.macro_f1(), 11.0 / 15.0);
  expect("2x2 accuracy", two.accuracy(), 3.0 / 4.0);

  // W W W N1 N2 N2 N2 N3 REM REM predicted as W W N1 N1 N2 N2 N3 N3 REM W.
  const ConfusionMatrix five = from_pairs({0, 0, 0, 1, 2, 2, 2, 3, 4, 4}, {0, 0, 1, 1, 2, 2, 3, 3, 4, 0}, 5);
  const ConfusionMatrix five_counts =
      ConfusionMatrix::from_counts(5, {2, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 2, 1, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 1});
  if (!(five == five_counts)) failures.push_back("5x5 counts");
  expect("5x5 macro-F1", five.macro_f1(), 52.0 / 75.0);
  expect("5x5 accuracy", five.accuracy(), 0.7);
  expect("5x5 F1(N2)", five.f1(2), 0.8);
  expect("5x5 precision(N1)", five.precision(1), 0.5);
  expect("5x5 recall(REM)", five.recall(4), 0.5);
  // Classes that never occur are excluded; a predicted-only class scores 0.
  expect("absent classes", from_pairs({0, 2, 2}, {0, 2, 0}, 5).macro_f1(), 2.0 / 3.0);
  expect("predicted-only class", from_pairs({0, 0}, {0, 3}, 5).macro_f1(), 1.0 / 3.0);

  // Sweep cells vs single evaluations through the command line.
  TempDir tmp;
  const std::string data = tmp.str("d.bin"), run = tmp.str("run");
  std::string sweep_out;
  bool cli_ok = cli({"synth", "--out", data, "--seed", "8", "--records", "12", "--epochs", "30"}) == 0 &&
                cli({"train", "--data", data, "--out", run, "--seed", "8", "--set", "epochs=1", "--set",
                     "lr_milestones=[]", "--set", "epsilon=2", "--set", "n_iter=1", "--set", "eval_n_iter=3"}) == 0 &&
                cli({"sweep", "--model", run + "/trained", "--data", data}, &sweep_out) == 0;
  std::size_t cells = 0, equal = 0;
  if (cli_ok) {
    std::istringstream lines(sweep_out);
    std::string header, row;
    std::getline(lines, header);
    std::getline(lines, row);
    const auto names = split_csv_line(header);
    const auto values = split_csv_line(row);
    for (std::size_t c = 1; c < names.size() && c < values.size(); ++c) {
      std::string eval_out;
      if (cli({"eval", "--model", run + "/trained", "--data", data, "--noise", names[c]}, &eval_out) != 0) {
        cli_ok = false;
        break;
      }
      std::istringstream el(eval_out);
      std::string eh, er;
      std::getline(el, eh);
      std::getline(el, er);
      const auto ev = split_csv_line(er);
      ++cells;
      if (ev.size() > 1 && std::bit_cast<std::uint64_t>(std::stod(ev[1])) ==
                               std::bit_cast<std::uint64_t>(std::stod(values[c])) && ev[1] == values[c]) {
        ++equal;
      } else {
        failures.push_back(names[c] + ": sweep " + values[c] + " eval " + (ev.size() > 1 ? ev[1] : "?"));
      }
    }
  }
  if (!cli_ok) failures.push_back("command line run failed");
  if (cells != 10) failures.push_back("expected 10 sweep cells, got " + std::to_string(cells));

  std::string detail = "fixtures (11/15, 52/75, absent/predicted-only classes), sweep==eval " +
                       std::to_string(equal) + "/" + std::to_string(cells) + " cells bit-identical";
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

// ---- 9: determinism of the full procedure -----------------------------------

Outcome determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  TempDir tmp;
  const std::string data = tmp.str("d.bin");
  if (cli({"synth", "--out", data, "--seed", "9", "--records", "12", "--epochs", "40"}) != 0) {
    return {false, "synth failed"};
  }
  const std::vector<std::string> sets{"--set", "epochs=2", "--set", "lr_milestones=[1]", "--set", "retrain_epochs=2", "--set", "epsilon=4",
                                      "--set", "n_iter=2"};
  for (const char* leaf : {"a", "b"}) {
    std::vector<std::string> args{"rest", "--data", data, "--out", tmp.str(leaf), "--seed", "9"};
    args.insert(args.end(), sets.begin(), sets.end());
    if (cli(args) != 0) return {false, "rest run failed"};
  }
  std::size_t compared = 0;
  std::string differing;
  for (const auto& entry : std::filesystem::directory_iterator(tmp.path() / "a")) {
    const std::string leaf = entry.path().filename().string();
    if (leaf == "run_manifest.json") continue;  // records the output path
    ++compared;
    if (fixtures::slurp(entry.path()) != fixtures::slurp(tmp.path() / "b" / leaf)) differing += " " + leaf;
  }
  const bool have_all = std::filesystem::exists(tmp.path() / "a" / "retrained.weights.bin") &&
                        std::filesystem::exists(tmp.path() / "a" / "metrics.csv");
  const bool pass = differing.empty() && have_all && compared >= 10;
  return {pass, std::to_string(compared) + " files compared" + (differing.empty() ? ", all identical" : ", differ:" + differing) +
                    ", " + fixed(seconds_since(t0), 1) + " s"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient fidelity", gradient_fidelity},
      {2, "PGD contract", pgd_contract},
      {3, "spectral regularizer effect", spectral_effect},
      {4, "pruning equivalence", pruning_equivalence},
      {5, "noise-model statistics", noise_statistics},
      {6, "directional robustness vs benign baseline", directional},
      {7, "compression accounting", compression_accounting},
      {8, "metric correctness", metric_correctness},
      {9, "determinism", determinism},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) {
      selected.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: rest_acceptance [--criterion N]...\n";
      return 2;
    }
  }
  int failed = 0;
  for (const Criterion& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << c.id << " (" << c.name << "): " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
