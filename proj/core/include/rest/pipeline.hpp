#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "rest/config.hpp"
#include "rest/data.hpp"
#include "rest/error.hpp"
#include "rest/loss.hpp"
#include "rest/metrics.hpp"
#include "rest/network.hpp"
#include "rest/perturb.hpp"
#include "rest/pruner.hpp"

namespace rest {

// Worker count for evaluation: REST_THREADS if set (>= 1), else 1.
std::size_t worker_threads();

// Runs fn(i) for i in [0, n) on up to `threads` workers. fn must write only to
// per-index state.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t)>& fn);

// Sub-stream ids fed to derive_seed(cfg.seed, ...).
namespace streams {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kAugment = 4;
inline constexpr std::uint64_t kNoise = 5;
}  // namespace streams

struct DataBundle {
  SplitAssignment assignment;
  SampleSet train, val, test;
  DataStats stats;  // from the training split
};

// Record-level split with derive_seed(cfg.seed, kSplit), contextualised with
// cfg.context_k. Throws ConfigError if the training split is empty.
DataBundle prepare_data(const Dataset& data, const TrainConfig& cfg);

// Network spec for cfg.preset sized to the dataset's sample length.
NetworkSpec spec_for(const TrainConfig& cfg, std::size_t sample_length);
Network initial_network(const TrainConfig& cfg, std::size_t sample_length);

// Plain SGD step: w -= lr * (g + wd * w) for conv/linear weights, w -= lr * g
// for everything else; with momentum m the step uses v = m v + g'.
class Sgd {
 public:
  Sgd(double weight_decay, double momentum) : weight_decay_(weight_decay), momentum_(momentum) {}
  void step(Network& net, double lr);

 private:
  double weight_decay_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

struct EpochMetrics {
  std::string phase;
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_adversarial = 0.0;
  double train_spectral = 0.0;
  double train_sparsity = 0.0;
  double lambda_o = 0.0;
  double lambda_g = 0.0;
  double val_loss = 0.0;
  double val_macro_f1 = 0.0;
};

// Header of metrics.csv, one line per EpochMetrics.
void write_metrics_csv(const std::vector<EpochMetrics>& history, std::ostream& out);

struct TrainResult {
  Network net;        // after the last epoch
  Network best;       // highest validation macro-F1 (earliest on ties)
  int best_epoch = -1;
  double best_val_macro_f1 = -1.0;
  std::vector<EpochMetrics> history;
};

// Raised on a non-finite loss; carries the weights at the start of the
// failing epoch.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, Network last_good, int epoch)
      : NumericalError(what), last_good_(std::make_shared<Network>(std::move(last_good))), epoch_(epoch) {}
  const Network& last_good() const { return *last_good_; }
  int epoch() const { return epoch_; }

 private:
  std::shared_ptr<Network> last_good_;
  int epoch_;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// SGD over shuffled minibatches of rest_loss for cfg.epochs epochs. Shuffling
// and augmentation seeds derive from cfg.seed and `phase`, so a run is fully
// determined by (data, cfg, phase, initial weights).
TrainResult train_phase(Network net, const DataBundle& data, const TrainConfig& cfg, const std::string& phase,
                        const EpochCallback& on_epoch = {});

struct PruneResult {
  Network net;
  PruneMask mask;
  SparsityReport report;
};

PruneResult prune_network(const Network& trained, double sparsity);

struct RestResult {
  TrainResult trained;
  PruneResult pruned;
  TrainResult retrained;
};

// Train with the full loss, prune the last-epoch weights at cfg.sparsity,
// retrain without the sparsity term.
RestResult rest_full(const Network& initial, const DataBundle& data, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = {});

struct EvalReport {
  std::string perturbation;
  ConfusionMatrix confusion{5};
  double macro_f1 = 0.0;
  std::size_t params = 0;
  double kilobytes = 0.0;
  std::uint64_t flops = 0;
  std::vector<int> predictions;
};

// Corrupts every batch of `samples` per `spec` (batch index b uses
// derive_seed(spec.seed, b)) and scores an eval-mode forward pass. Batches run
// on worker_threads() copies of the network; the result does not depend on the
// thread count.
EvalReport evaluate(const Network& net, const SampleSet& samples, const PerturbationSpec& spec,
                    const DataStats& stats, std::size_t batch_size, bool keep_predictions = false);

// Noise seed used by both single evaluations and sweeps.
std::uint64_t noise_seed(std::uint64_t seed);

// One row of the robustness matrix: clean, then adversarial, gaussian, shot
// at low/med/high.
struct SweepRow {
  std::string run;
  std::vector<std::string> columns;
  std::vector<double> macro_f1;
};

std::vector<PerturbationSpec> sweep_cells(int eval_n_iter, std::uint64_t seed);
// "none", "adversarial:low", ..., "shot:high"; parallel to sweep_cells.
std::vector<std::string> sweep_columns();
SweepRow robustness_sweep(const Network& net, const SampleSet& samples, const DataStats& stats,
                          const TrainConfig& cfg, std::uint64_t seed, const std::string& run = "0");

// Header "run,none,adversarial:low,...,shot:high"; with more than one row a
// "mean" and a "std" (population) row follow.
void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);

// Report CSV of a single evaluation: "perturbation,macro_f1,accuracy,params,
// kilobytes,flops". The perturbation label is quoted when it holds commas.
void write_eval_csv(const EvalReport& report, std::ostream& out);

struct Hypnogram {
  std::uint32_t record_id = 0;
  std::vector<int> truth;
  std::vector<int> predicted;
  double agreement = 0.0;
};

// One prediction per epoch. The first context_k epochs have no full history;
// their missing predecessors are filled by repeating epoch 0.
Hypnogram hypnogram(const Network& net, const EpochRecord& record, std::size_t epoch_length,
                    std::size_t context_k);

// "epoch,truth,predicted" with stage names.
void write_hypnogram_csv(const Hypnogram& h, std::ostream& out);
// Step plot, y axis top to bottom W, REM, N1, N2, N3; ground truth in grey.
void write_hypnogram_svg(const Hypnogram& h, std::ostream& out);
// Row index of a stage on the hypnogram y axis (0 = top).
int hypnogram_row(int stage);

struct SearchRow {
  std::vector<double> params;
  double benign = 0.0;
  double low = 0.0;
  double med = 0.0;
  double high = 0.0;
  double average = 0.0;  // mean of the four columns above
};

struct SearchTable {
  std::vector<std::string> param_names;
  NoiseKind noise = NoiseKind::kAdversarial;
  std::vector<SearchRow> rows;
  std::size_t selected = 0;
};

// Index of the largest average; ties go to the lexicographically smaller
// parameter vector.
std::size_t select_best(const std::vector<SearchRow>& rows);

// Line search over epsilon: adversarial-only training (no regularisers),
// scored on the validation split under adversarial low/med/high.
SearchTable search_epsilon(const Network& initial, const DataBundle& data, const TrainConfig& base,
                           const std::vector<double>& grid);
// Line search over c_g: Gaussian-augmented benign training, scored under
// gaussian low/med/high.
SearchTable search_cg(const Network& initial, const DataBundle& data, const TrainConfig& base,
                      const std::vector<double>& grid);
// Grid search over (lambda_o, lambda_g) with the full three-phase procedure,
// scored under adversarial low/med/high.
SearchTable search_lambdas(const Network& initial, const DataBundle& data, const TrainConfig& base,
                           const std::vector<double>& lambda_o_grid, const std::vector<double>& lambda_g_grid);

// Header "<param names...>,benign,low,med,high,average,selected".
void write_search_csv(const SearchTable& table, std::ostream& out);

}  // namespace rest
