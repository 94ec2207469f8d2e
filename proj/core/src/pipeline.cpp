#include "rest/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include "rest/error.hpp"
#include "rest/random.hpp"
#include "rest/tape.hpp"

namespace rest {
namespace {

std::uint64_t phase_stream(const std::string& phase) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : phase) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct CleanScore {
  double loss = 0.0;
  ConfusionMatrix cm{kNumStages};
};

CleanScore score_clean(Network& net, const SampleSet& samples, std::size_t batch_size) {
  CleanScore s;
  double total = 0.0;
  for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
    const std::size_t end = std::min(samples.size(), begin + batch_size);
    const Tensor logits = net.forward(samples.batch(begin, end), Mode::kEval);
    std::span<const int> labels(samples.labels.data() + begin, end - begin);
    total += softmax_cross_entropy(logits, labels).item() * static_cast<double>(end - begin);
    s.cm.add(labels, argmax_rows(logits));
  }
  s.loss = samples.size() ? total / static_cast<double>(samples.size()) : 0.0;
  return s;
}

// RFC 4180 quoting for free-text fields.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::size_t worker_threads() {
  if (const char* env = std::getenv("REST_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && n >= 1) return static_cast<std::size_t>(n);
  }
  return 1;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i, w);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

DataBundle prepare_data(const Dataset& data, const TrainConfig& cfg) {
  data.validate();
  DataBundle b;
  b.assignment = split(data, derive_seed(cfg.seed, streams::kSplit));
  b.train = samples_for(data, b.assignment, Split::kTrain, cfg.context_k);
  b.val = samples_for(data, b.assignment, Split::kVal, cfg.context_k);
  b.test = samples_for(data, b.assignment, Split::kTest, cfg.context_k);
  if (b.train.size() == 0) throw ConfigError("training split has no samples (records shorter than context_k + 1?)");
  b.stats = compute_stats(b.train);
  return b;
}

NetworkSpec spec_for(const TrainConfig& cfg, std::size_t sample_length) {
  return preset_by_name(cfg.preset, sample_length);
}

Network initial_network(const TrainConfig& cfg, std::size_t sample_length) {
  return Network::build(spec_for(cfg, sample_length), derive_seed(cfg.seed, streams::kInit));
}

void Sgd::step(Network& net, double lr) {
  const auto named = net.named_tensors();
  std::size_t slot = 0;
  for (const NamedTensor& nt : named) {
    if (!nt.learnable) continue;
    Tensor t = nt.tensor;
    const double wd = ends_with(nt.name, ".weight") ? weight_decay_ : 0.0;
    auto w = t.data();
    const bool has_grad = t.has_grad();
    std::span<const double> g = has_grad ? t.grad() : std::span<const double>{};
    if (momentum_ > 0.0) {
      if (velocity_.size() <= slot) velocity_.resize(slot + 1);
      auto& v = velocity_[slot];
      if (v.size() != w.size()) v.assign(w.size(), 0.0);
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = momentum_ * v[i] + (has_grad ? g[i] : 0.0) + wd * w[i];
        w[i] -= lr * v[i];
      }
    } else {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * ((has_grad ? g[i] : 0.0) + wd * w[i]);
    }
    ++slot;
  }
}

void write_metrics_csv(const std::vector<EpochMetrics>& history, std::ostream& out) {
  out << "phase,epoch,lr,train_loss,train_adversarial,train_spectral,train_sparsity,lambda_o,lambda_g,"
         "val_loss,val_macro_f1\n";
  for (const auto& m : history) {
    out << m.phase << ',' << m.epoch << ',' << fmt(m.lr) << ',' << fmt(m.train_loss) << ','
        << fmt(m.train_adversarial) << ',' << fmt(m.train_spectral) << ',' << fmt(m.train_sparsity) << ','
        << fmt(m.lambda_o) << ',' << fmt(m.lambda_g) << ',' << fmt(m.val_loss) << ',' << fmt(m.val_macro_f1)
        << '\n';
  }
}

TrainResult train_phase(Network net, const DataBundle& data, const TrainConfig& cfg, const std::string& phase,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  const std::size_t n = data.train.size();
  if (n < 2) throw ConfigError("training needs at least 2 samples");
  const std::uint64_t ph = phase_stream(phase);
  Sgd opt(cfg.weight_decay, cfg.momentum);

  TrainResult result;
  result.best = net;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Network last_good = net;
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(derive_seed(cfg.seed, streams::kShuffle ^ ph), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);

    const double lr = cfg.lr_at(epoch);
    EpochMetrics m;
    m.phase = phase;
    m.epoch = epoch;
    m.lr = lr;
    std::size_t seen = 0;
    std::uint64_t batch_index = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      if (end - begin < 2) continue;  // batchnorm needs two samples
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> labels;
      labels.reserve(rows.size());
      for (std::size_t r : rows) labels.push_back(data.train.labels[r]);
      Tensor x = data.train.gather(rows);
      if (cfg.gaussian_cg > 0.0) {
        const std::uint64_t s = derive_seed(derive_seed(cfg.seed, streams::kAugment ^ ph),
                                            (static_cast<std::uint64_t>(epoch) << 32) | batch_index);
        x = gaussian_corrupt(x, cfg.gaussian_cg, data.stats, s);
      }

      Tape tape;
      net.zero_grad();
      const LossBreakdown lb = rest_loss(net, x, labels, cfg);
      if (!std::isfinite(lb.total_value)) {
        throw TrainingAborted("non-finite loss in phase " + phase + " epoch " + std::to_string(epoch) +
                                  " batch " + std::to_string(batch_index),
                              last_good, epoch);
      }
      tape.backward(lb.total);
      opt.step(net, lr);

      const double w = static_cast<double>(end - begin);
      m.train_loss += lb.total_value * w;
      m.train_adversarial += lb.adversarial * w;
      m.train_spectral += lb.spectral * w;
      m.train_sparsity += lb.sparsity * w;
      m.lambda_o = lb.lambda_o;
      m.lambda_g = lb.lambda_g;
      seen += end - begin;
    }
    if (seen > 0) {
      const double s = static_cast<double>(seen);
      m.train_loss /= s;
      m.train_adversarial /= s;
      m.train_spectral /= s;
      m.train_sparsity /= s;
    }
    for (const Tensor& p : net.parameters()) {
      for (double v : p.data()) {
        if (!std::isfinite(v)) {
          throw TrainingAborted("non-finite weights after phase " + phase + " epoch " + std::to_string(epoch),
                                last_good, epoch);
        }
      }
    }

    const CleanScore val = score_clean(net, data.val, cfg.eval_batch_size);
    m.val_loss = val.loss;
    m.val_macro_f1 = val.cm.macro_f1();
    if (m.val_macro_f1 > result.best_val_macro_f1) {
      result.best_val_macro_f1 = m.val_macro_f1;
      result.best_epoch = epoch;
      result.best = net;
    }
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  result.net = std::move(net);
  if (result.best_epoch < 0) result.best = result.net;
  return result;
}

PruneResult prune_network(const Network& trained, double sparsity) {
  PruneResult r;
  r.mask = rank_and_mask(trained, sparsity);
  r.net = compact(trained, r.mask);
  r.report = sparsity_report(trained, r.net);
  return r;
}

RestResult rest_full(const Network& initial, const DataBundle& data, const TrainConfig& cfg,
                     const EpochCallback& on_epoch) {
  RestResult r;
  r.trained = train_phase(initial, data, cfg, "trained", on_epoch);
  r.pruned = prune_network(r.trained.net, cfg.sparsity);
  r.retrained = train_phase(r.pruned.net, data, cfg.retrain_phase(), "retrained", on_epoch);
  return r;
}

EvalReport evaluate(const Network& net, const SampleSet& samples, const PerturbationSpec& spec,
                    const DataStats& stats, std::size_t batch_size, bool keep_predictions) {
  spec.validate();
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  const std::size_t n_batches = (samples.size() + batch_size - 1) / batch_size;
  const std::size_t threads = std::min(worker_threads(), std::max<std::size_t>(1, n_batches));
  std::vector<Network> workers(threads, net);
  std::vector<std::vector<int>> predictions(n_batches);
  parallel_for(n_batches, threads, [&](std::size_t b, std::size_t w) {
    const std::size_t begin = b * batch_size;
    const std::size_t end = std::min(samples.size(), begin + batch_size);
    std::span<const int> labels(samples.labels.data() + begin, end - begin);
    const Tensor x = apply_perturbation(workers[w], samples.batch(begin, end), labels, spec, stats, b);
    predictions[b] = argmax_rows(workers[w].forward(x, Mode::kEval));
  });

  EvalReport report;
  report.perturbation = spec.label();
  for (std::size_t b = 0; b < n_batches; ++b) {
    const std::size_t begin = b * batch_size;
    report.confusion.add(std::span<const int>(samples.labels.data() + begin, predictions[b].size()),
                         predictions[b]);
    if (keep_predictions) report.predictions.insert(report.predictions.end(), predictions[b].begin(), predictions[b].end());
  }
  report.macro_f1 = report.confusion.macro_f1();
  const ParamCount pc = count_params(net);
  report.params = pc.total;
  report.kilobytes = pc.kilobytes();
  report.flops = count_flops(net).total;
  return report;
}

std::uint64_t noise_seed(std::uint64_t seed) { return derive_seed(seed, streams::kNoise); }

std::vector<PerturbationSpec> sweep_cells(int eval_n_iter, std::uint64_t seed) {
  std::vector<PerturbationSpec> cells{PerturbationSpec::none()};
  for (NoiseKind kind : {NoiseKind::kAdversarial, NoiseKind::kGaussian, NoiseKind::kShot}) {
    for (Strength s : {Strength::kLow, Strength::kMed, Strength::kHigh}) {
      PerturbationSpec p = PerturbationSpec::preset(kind, s);
      if (kind == NoiseKind::kAdversarial) p.pgd.n_iter = eval_n_iter;
      cells.push_back(p);
    }
  }
  for (auto& c : cells) c.seed = noise_seed(seed);
  return cells;
}

std::vector<std::string> sweep_columns() {
  std::vector<std::string> names{"none"};
  for (NoiseKind kind : {NoiseKind::kAdversarial, NoiseKind::kGaussian, NoiseKind::kShot}) {
    for (Strength s : {Strength::kLow, Strength::kMed, Strength::kHigh}) {
      names.push_back(to_string(kind) + ":" + to_string(s));
    }
  }
  return names;
}

SweepRow robustness_sweep(const Network& net, const SampleSet& samples, const DataStats& stats,
                          const TrainConfig& cfg, std::uint64_t seed, const std::string& run) {
  SweepRow row;
  row.run = run;
  row.columns = sweep_columns();
  for (const PerturbationSpec& cell : sweep_cells(cfg.eval_n_iter, seed)) {
    row.macro_f1.push_back(evaluate(net, samples, cell, stats, cfg.eval_batch_size).macro_f1);
  }
  return row;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  if (rows.empty()) return;
  out << "run";
  for (const auto& c : rows.front().columns) out << ',' << c;
  out << '\n';
  for (const auto& r : rows) {
    out << csv_field(r.run);
    for (double v : r.macro_f1) out << ',' << fmt(v);
    out << '\n';
  }
  if (rows.size() < 2) return;
  const std::size_t k = rows.front().macro_f1.size();
  std::vector<double> mean(k, 0.0), var(k, 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < k; ++i) mean[i] += r.macro_f1.at(i);
  }
  for (double& m : mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < k; ++i) var[i] += (r.macro_f1[i] - mean[i]) * (r.macro_f1[i] - mean[i]);
  }
  out << "mean";
  for (double m : mean) out << ',' << fmt(m);
  out << "\nstd";
  for (double v : var) out << ',' << fmt(std::sqrt(v / static_cast<double>(rows.size())));
  out << '\n';
}

void write_eval_csv(const EvalReport& r, std::ostream& out) {
  out << "perturbation,macro_f1,accuracy,params,kilobytes,flops\n";
  out << csv_field(r.perturbation) << ',' << fmt(r.macro_f1) << ',' << fmt(r.confusion.accuracy()) << ',' << r.params << ','
      << fmt(r.kilobytes) << ',' << r.flops << '\n';
}

Hypnogram hypnogram(const Network& net, const EpochRecord& record, std::size_t epoch_length,
                    std::size_t context_k) {
  Hypnogram h;
  h.record_id = record.id;
  const std::size_t n = record.num_epochs();
  if (n == 0) return h;
  // Prepend k copies of epoch 0 so every epoch gets a full window.
  EpochRecord padded;
  padded.id = record.id;
  for (std::size_t i = 0; i < context_k; ++i) {
    padded.samples.insert(padded.samples.end(), record.samples.begin(),
                          record.samples.begin() + static_cast<std::ptrdiff_t>(epoch_length));
    padded.labels.push_back(record.labels.front());
  }
  padded.samples.insert(padded.samples.end(), record.samples.begin(), record.samples.end());
  padded.labels.insert(padded.labels.end(), record.labels.begin(), record.labels.end());
  const SampleSet samples = contextualize(padded, epoch_length, context_k);

  Network copy = net;
  std::size_t agree = 0;
  constexpr std::size_t kBatch = 256;
  for (std::size_t begin = 0; begin < samples.size(); begin += kBatch) {
    const std::size_t end = std::min(samples.size(), begin + kBatch);
    for (int p : argmax_rows(copy.forward(samples.batch(begin, end), Mode::kEval))) h.predicted.push_back(p);
  }
  for (std::size_t i = 0; i < n; ++i) {
    h.truth.push_back(record.labels[i]);
    if (h.predicted[i] == h.truth[i]) ++agree;
  }
  h.agreement = static_cast<double>(agree) / static_cast<double>(n);
  return h;
}

void write_hypnogram_csv(const Hypnogram& h, std::ostream& out) {
  out << "epoch,truth,predicted\n";
  for (std::size_t i = 0; i < h.predicted.size(); ++i) {
    out << i << ',' << stage_name(h.truth[i]) << ',' << stage_name(h.predicted[i]) << '\n';
  }
}

int hypnogram_row(int stage) {
  switch (stage) {
    case kW: return 0;
    case kREM: return 1;
    case kN1: return 2;
    case kN2: return 3;
    case kN3: return 4;
    default: throw ConfigError("stage label out of range: " + std::to_string(stage));
  }
}

void write_hypnogram_svg(const Hypnogram& h, std::ostream& out) {
  constexpr double kLeft = 50, kTop = 20, kRowH = 30, kWidth = 800;
  const double height = kTop * 2 + kRowH * 4 + 20;
  const std::size_t n = std::max<std::size_t>(1, h.predicted.size());
  const double dx = (kWidth - kLeft - 10) / static_cast<double>(n);
  auto path = [&](const std::vector<int>& seq) {
    std::ostringstream d;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const double y = kTop + kRowH * hypnogram_row(seq[i]);
      const double x0 = kLeft + dx * static_cast<double>(i);
      d << (i == 0 ? "M" : " L") << x0 << ' ' << y << " L" << x0 + dx << ' ' << y;
    }
    return d.str();
  };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << height << "\">\n";
  out << "<title>record " << h.record_id << " agreement " << h.agreement << "</title>\n";
  for (int stage : {kW, kREM, kN1, kN2, kN3}) {
    const double y = kTop + kRowH * hypnogram_row(stage);
    out << "<text x=\"5\" y=\"" << y + 4 << "\" font-size=\"12\">" << stage_name(stage) << "</text>\n";
    out << "<line x1=\"" << kLeft << "\" y1=\"" << y << "\" x2=\"" << kWidth - 10 << "\" y2=\"" << y
        << "\" stroke=\"#eee\"/>\n";
  }
  if (!h.truth.empty()) {
    out << "<path class=\"truth\" d=\"" << path(h.truth) << "\" fill=\"none\" stroke=\"#bbb\" stroke-width=\"3\"/>\n";
    out << "<path class=\"predicted\" d=\"" << path(h.predicted)
        << "\" fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1.5\"/>\n";
  }
  out << "</svg>\n";
}

std::size_t select_best(const std::vector<SearchRow>& rows) {
  if (rows.empty()) throw ConfigError("search grid is empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = rows[best];
    if (a.average > b.average || (a.average == b.average && a.params < b.params)) best = i;
  }
  return best;
}

namespace {

SearchRow score_row(const Network& net, const SampleSet& val, const DataStats& stats, const TrainConfig& cfg,
                    NoiseKind kind, std::vector<double> params) {
  SearchRow row;
  row.params = std::move(params);
  PerturbationSpec clean = PerturbationSpec::none();
  row.benign = evaluate(net, val, clean, stats, cfg.eval_batch_size).macro_f1;
  double* slots[] = {&row.low, &row.med, &row.high};
  int i = 0;
  for (Strength s : {Strength::kLow, Strength::kMed, Strength::kHigh}) {
    PerturbationSpec p = PerturbationSpec::preset(kind, s);
    if (kind == NoiseKind::kAdversarial) p.pgd.n_iter = cfg.eval_n_iter;
    p.seed = noise_seed(cfg.seed);
    *slots[i++] = evaluate(net, val, p, stats, cfg.eval_batch_size).macro_f1;
  }
  row.average = (row.benign + row.low + row.med + row.high) / 4.0;
  return row;
}

void require_grid(const std::vector<double>& grid, const std::string& what) {
  if (grid.empty()) throw ConfigError(what + " grid is empty");
}

}  // namespace

SearchTable search_epsilon(const Network& initial, const DataBundle& data, const TrainConfig& base,
                           const std::vector<double>& grid) {
  require_grid(grid, "epsilon");
  SearchTable t;
  t.param_names = {"epsilon"};
  t.noise = NoiseKind::kAdversarial;
  for (double eps : grid) {
    TrainConfig cfg = base.benign();
    cfg.epsilon = eps;
    const TrainResult r = train_phase(initial, data, cfg, "search-epsilon");
    t.rows.push_back(score_row(r.net, data.val, data.stats, cfg, t.noise, {eps}));
  }
  t.selected = select_best(t.rows);
  return t;
}

SearchTable search_cg(const Network& initial, const DataBundle& data, const TrainConfig& base,
                      const std::vector<double>& grid) {
  require_grid(grid, "c_g");
  SearchTable t;
  t.param_names = {"c_g"};
  t.noise = NoiseKind::kGaussian;
  for (double cg : grid) {
    TrainConfig cfg = base.benign();
    cfg.gaussian_cg = cg;
    const TrainResult r = train_phase(initial, data, cfg, "search-cg");
    t.rows.push_back(score_row(r.net, data.val, data.stats, cfg, t.noise, {cg}));
  }
  t.selected = select_best(t.rows);
  return t;
}

SearchTable search_lambdas(const Network& initial, const DataBundle& data, const TrainConfig& base,
                           const std::vector<double>& lambda_o_grid, const std::vector<double>& lambda_g_grid) {
  require_grid(lambda_o_grid, "lambda_o");
  require_grid(lambda_g_grid, "lambda_g");
  SearchTable t;
  t.param_names = {"lambda_o", "lambda_g"};
  t.noise = NoiseKind::kAdversarial;
  for (double lo : lambda_o_grid) {
    for (double lg : lambda_g_grid) {
      TrainConfig cfg = base;
      cfg.lambda_o = lo;
      cfg.lambda_g = lg;
      const RestResult r = rest_full(initial, data, cfg);
      t.rows.push_back(score_row(r.retrained.net, data.val, data.stats, cfg, t.noise, {lo, lg}));
    }
  }
  t.selected = select_best(t.rows);
  return t;
}

void write_search_csv(const SearchTable& t, std::ostream& out) {
  for (const auto& name : t.param_names) out << name << ',';
  out << "benign,low,med,high,average,selected\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const SearchRow& r = t.rows[i];
    for (double p : r.params) out << fmt(p) << ',';
    out << fmt(r.benign) << ',' << fmt(r.low) << ',' << fmt(r.med) << ',' << fmt(r.high) << ',' << fmt(r.average)
        << ',' << (i == t.selected ? 1 : 0) << '\n';
  }
}

}  // namespace rest
