#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rest/perturb.hpp"

namespace rest {

// Label encoding used everywhere (files, confusion matrices, CSVs).
enum Stage : int { kW = 0, kN1 = 1, kN2 = 2, kN3 = 3, kREM = 4 };
inline constexpr int kNumStages = 5;
std::string stage_name(int label);

struct EpochRecord {
  std::uint32_t id = 0;
  std::vector<float> samples;  // n_epochs * epoch_length, epoch-major
  std::vector<std::uint8_t> labels;

  std::size_t num_epochs() const { return labels.size(); }
  bool operator==(const EpochRecord&) const = default;
};

struct Dataset {
  std::size_t epoch_length = 0;
  std::vector<EpochRecord> records;

  std::size_t num_epochs() const;
  // Throws FormatError on ragged records or labels outside [0, 5).
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

// Flat minibatch-ready samples: row i is values[i * sample_length, ...).
struct SampleSet {
  std::size_t sample_length = 0;
  std::vector<double> values;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  // Rows [begin, end) as a [n, 1, sample_length] tensor.
  Tensor batch(std::size_t begin, std::size_t end) const;
  // Rows picked by index, in the given order.
  Tensor gather(const std::vector<std::size_t>& rows) const;
  void append(const SampleSet& other);
};

// Samples i = k .. n-1, each the concatenation of epochs i-k .. i labelled
// with epoch i. Records with fewer than k+1 epochs give no samples.
SampleSet contextualize(const EpochRecord& record, std::size_t epoch_length, std::size_t context_k);

enum class Split : std::uint8_t { kTrain, kVal, kTest };
std::string to_string(Split split);

struct SplitAssignment {
  std::vector<Split> of_record;  // parallel to Dataset::records
  std::size_t count(Split s) const;
};

// Record-level shuffle, then val = max(1, floor(n * val_fraction)),
// test = max(1, floor(n * test_fraction)), the rest train.
SplitAssignment split(const Dataset& data, std::uint64_t seed, double val_fraction = 0.1,
                      double test_fraction = 0.1);

// Contextualised samples of every record in the split, in record order.
SampleSet samples_for(const Dataset& data, const SplitAssignment& assignment, Split which,
                      std::size_t context_k);

DataStats compute_stats(const SampleSet& samples);

struct SynthParams {
  std::size_t n_records = 60;
  std::size_t epochs_per_record = 120;
  std::size_t epoch_length = 64;
  std::array<double, kNumStages> priors{0.2, 0.1, 0.4, 0.15, 0.15};
  double stay_probability = 0.85;
  double noise_floor = 0.5;  // std of the additive Gaussian floor
  double amplitude = 2.0;    // multiplies every class amplitude below
  std::uint64_t seed = 0;
};

// Sum-of-sinusoid stage signals (normalised frequency, cycles per sample):
//   W    two components in [0.28, 0.42], amplitude ~8
//   N1   [0.09, 0.14], amplitude ~15
//   N2   [0.07, 0.11] background plus a Gaussian-windowed spindle in [0.20, 0.24]
//   N3   [0.02, 0.05], amplitude ~85 (dominates the variance, as delta does)
//   REM  [0.13, 0.18] plus [0.28, 0.36], amplitudes ~12 and ~10
// Labels follow a sticky Markov chain: stay with stay_probability, otherwise
// redraw from priors.
Dataset synth_generate(const SynthParams& params);

// Binary format: "RESTDS1\0", u16 version (1), u32 n_records, u32 L0, then per
// record u32 id, u32 n_epochs and n_epochs x (L0 f32, u8 label), little endian.
void write_dataset(const Dataset& data, std::ostream& out);
void write_dataset(const Dataset& data, const std::string& path);
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const std::string& path);

// CSV with header record_id,epoch_index,label,s0..s{L0-1}; rows of a record
// must be contiguous with epoch_index 0, 1, ...
Dataset import_csv(std::istream& in);
Dataset import_csv(const std::string& path);

}  // namespace rest
