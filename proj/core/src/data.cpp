#include "rest/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rest/error.hpp"
#include "rest/random.hpp"

namespace rest {
namespace {

constexpr char kMagic[8] = {'R', 'E', 'S', 'T', 'D', 'S', '1', '\0'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw FormatError(std::string("dataset truncated while reading ") + what);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

std::string stage_name(int label) {
  static const char* names[] = {"W", "N1", "N2", "N3", "REM"};
  if (label < 0 || label >= kNumStages) throw ConfigError("stage label out of range: " + std::to_string(label));
  return names[label];
}

std::size_t Dataset::num_epochs() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.num_epochs();
  return n;
}

void Dataset::validate() const {
  if (epoch_length == 0) throw FormatError("dataset epoch length must be positive");
  for (const auto& r : records) {
    if (r.samples.size() != r.labels.size() * epoch_length) {
      throw FormatError("record " + std::to_string(r.id) + " has " + std::to_string(r.samples.size()) +
                        " samples for " + std::to_string(r.labels.size()) + " epochs of length " +
                        std::to_string(epoch_length));
    }
    for (auto l : r.labels) {
      if (l >= kNumStages) {
        throw FormatError("record " + std::to_string(r.id) + " has label " + std::to_string(l) +
                          " outside [0, 5)");
      }
    }
  }
}

Tensor SampleSet::batch(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw ShapeError("sample batch range out of bounds");
  std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(begin * sample_length),
                        values.begin() + static_cast<std::ptrdiff_t>(end * sample_length));
  return Tensor({end - begin, 1, sample_length}, std::move(v));
}

Tensor SampleSet::gather(const std::vector<std::size_t>& rows) const {
  std::vector<double> v;
  v.reserve(rows.size() * sample_length);
  for (std::size_t r : rows) {
    if (r >= size()) throw ShapeError("sample index out of bounds");
    const auto first = values.begin() + static_cast<std::ptrdiff_t>(r * sample_length);
    v.insert(v.end(), first, first + static_cast<std::ptrdiff_t>(sample_length));
  }
  return Tensor({rows.size(), 1, sample_length}, std::move(v));
}

void SampleSet::append(const SampleSet& other) {
  if (other.size() == 0) return;
  if (size() == 0) sample_length = other.sample_length;
  if (other.sample_length != sample_length) throw ShapeError("cannot append samples of another length");
  values.insert(values.end(), other.values.begin(), other.values.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

SampleSet contextualize(const EpochRecord& record, std::size_t epoch_length, std::size_t context_k) {
  SampleSet s;
  s.sample_length = (context_k + 1) * epoch_length;
  const std::size_t n = record.num_epochs();
  if (n <= context_k) return s;
  s.values.reserve((n - context_k) * s.sample_length);
  for (std::size_t i = context_k; i < n; ++i) {
    const auto first = record.samples.begin() + static_cast<std::ptrdiff_t>((i - context_k) * epoch_length);
    s.values.insert(s.values.end(), first, first + static_cast<std::ptrdiff_t>(s.sample_length));
    s.labels.push_back(record.labels[i]);
  }
  return s;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::size_t SplitAssignment::count(Split s) const {
  return static_cast<std::size_t>(std::count(of_record.begin(), of_record.end(), s));
}

SplitAssignment split(const Dataset& data, std::uint64_t seed, double val_fraction, double test_fraction) {
  const std::size_t n = data.records.size();
  if (n < 3) throw ConfigError("splitting needs at least 3 records, got " + std::to_string(n));
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1) {
    throw ConfigError("split fractions must be non-negative and leave room for training");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);

  const auto share = [n](double f) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)));
  };
  const std::size_t n_val = share(val_fraction);
  const std::size_t n_test = share(test_fraction);
  SplitAssignment a;
  a.of_record.assign(n, Split::kTrain);
  for (std::size_t i = 0; i < n_val; ++i) a.of_record[order[i]] = Split::kVal;
  for (std::size_t i = n_val; i < n_val + n_test; ++i) a.of_record[order[i]] = Split::kTest;
  return a;
}

SampleSet samples_for(const Dataset& data, const SplitAssignment& assignment, Split which,
                      std::size_t context_k) {
  if (assignment.of_record.size() != data.records.size()) {
    throw ConfigError("split assignment does not match the dataset");
  }
  SampleSet out;
  out.sample_length = (context_k + 1) * data.epoch_length;
  for (std::size_t r = 0; r < data.records.size(); ++r) {
    if (assignment.of_record[r] == which) out.append(contextualize(data.records[r], data.epoch_length, context_k));
  }
  return out;
}

DataStats compute_stats(const SampleSet& samples) { return compute_stats(std::span<const double>(samples.values)); }

Dataset synth_generate(const SynthParams& p) {
  double prior_sum = 0.0;
  for (double q : p.priors) {
    if (!(q >= 0.0)) throw ConfigError("class priors must be non-negative");
    prior_sum += q;
  }
  if (std::abs(prior_sum - 1.0) > 1e-9) throw ConfigError("class priors must sum to 1");
  if (p.epoch_length == 0 || p.epochs_per_record == 0) throw ConfigError("synthetic shape must be positive");
  if (!(p.amplitude > 0.0)) throw ConfigError("amplitude must be positive");
  if (p.noise_floor < 0.0) throw ConfigError("noise floor must be >= 0");
  if (p.stay_probability < 0.0 || p.stay_probability > 1.0) throw ConfigError("stay probability must be in [0, 1]");

  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  Dataset data;
  data.epoch_length = p.epoch_length;
  const std::size_t len = p.epoch_length;

  for (std::size_t r = 0; r < p.n_records; ++r) {
    Rng rng(derive_seed(p.seed, r));
    EpochRecord rec;
    rec.id = static_cast<std::uint32_t>(r);
    rec.samples.reserve(p.epochs_per_record * len);
    int label = kW;
    std::vector<double> sig(len);
    for (std::size_t e = 0; e < p.epochs_per_record; ++e) {
      if (e > 0 && rng.uniform() >= p.stay_probability) {
        double u = rng.uniform();
        label = kNumStages - 1;
        for (int c = 0; c < kNumStages; ++c) {
          if (u < p.priors[c]) {
            label = c;
            break;
          }
          u -= p.priors[c];
        }
      }
      std::fill(sig.begin(), sig.end(), 0.0);
      auto tone = [&](double f_lo, double f_hi, double amp) {
        const double f = rng.uniform(f_lo, f_hi);
        const double a = p.amplitude * amp * rng.uniform(0.8, 1.2);
        const double phase = rng.uniform(0.0, kTwoPi);
        for (std::size_t t = 0; t < len; ++t) sig[t] += a * std::sin(kTwoPi * f * static_cast<double>(t) + phase);
      };
      switch (label) {
        case kW:
          tone(0.28, 0.42, 8.0);
          tone(0.28, 0.42, 8.0);
          break;
        case kN1:
          tone(0.09, 0.14, 15.0);
          break;
        case kN2: {
          tone(0.07, 0.11, 10.0);
          const double f = rng.uniform(0.20, 0.24);
          const double a = p.amplitude * 25.0 * rng.uniform(0.8, 1.2);
          const double centre = rng.uniform(0.25, 0.75) * static_cast<double>(len);
          const double width = 0.12 * static_cast<double>(len);
          for (std::size_t t = 0; t < len; ++t) {
            const double d = (static_cast<double>(t) - centre) / width;
            sig[t] += a * std::exp(-0.5 * d * d) * std::sin(kTwoPi * f * static_cast<double>(t));
          }
          break;
        }
        case kN3:
          tone(0.02, 0.05, 85.0);
          break;
        default:
          tone(0.13, 0.18, 12.0);
          tone(0.28, 0.36, 10.0);
          break;
      }
      for (std::size_t t = 0; t < len; ++t) {
        const double noise = p.noise_floor > 0.0 ? rng.normal(0.0, p.noise_floor) : 0.0;
        rec.samples.push_back(static_cast<float>(sig[t] + noise));
      }
      rec.labels.push_back(static_cast<std::uint8_t>(label));
    }
    data.records.push_back(std::move(rec));
  }
  return data;
}

void write_dataset(const Dataset& data, std::ostream& out) {
  data.validate();
  out.write(kMagic, sizeof(kMagic));
  put<std::uint16_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.records.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.epoch_length));
  for (const auto& r : data.records) {
    put<std::uint32_t>(out, r.id);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.num_epochs()));
    for (std::size_t e = 0; e < r.num_epochs(); ++e) {
      for (std::size_t t = 0; t < data.epoch_length; ++t) put<float>(out, r.samples[e * data.epoch_length + t]);
      put<std::uint8_t>(out, r.labels[e]);
    }
  }
  if (!out) throw FormatError("failed writing dataset");
}

void write_dataset(const Dataset& data, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + tmp + " for writing");
    write_dataset(data, f);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw FormatError("cannot move dataset into " + path);
}

Dataset read_dataset(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a dataset file: expected magic \"RESTDS1\\0\"");
  }
  const auto version = get<std::uint16_t>(in, "version");
  if (version != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version) + " (supported: 1)");
  }
  const auto n_records = get<std::uint32_t>(in, "record count");
  Dataset data;
  data.epoch_length = get<std::uint32_t>(in, "epoch length");
  if (data.epoch_length == 0) throw FormatError("dataset epoch length must be positive");
  for (std::uint32_t r = 0; r < n_records; ++r) {
    EpochRecord rec;
    rec.id = get<std::uint32_t>(in, "record id");
    const auto n_epochs = get<std::uint32_t>(in, "epoch count");
    for (std::uint32_t e = 0; e < n_epochs; ++e) {
      for (std::size_t t = 0; t < data.epoch_length; ++t) rec.samples.push_back(get<float>(in, "samples"));
      const auto label = get<std::uint8_t>(in, "label");
      if (label >= kNumStages) {
        throw FormatError("record " + std::to_string(rec.id) + " epoch " + std::to_string(e) + " has label " +
                          std::to_string(label) + " outside [0, 5)");
      }
      rec.labels.push_back(label);
    }
    data.records.push_back(std::move(rec));
  }
  return data;
}

Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open dataset " + path);
  return read_dataset(f);
}

Dataset import_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("CSV dataset is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 4 || header[0] != "record_id" || header[1] != "epoch_index" || header[2] != "label") {
    throw FormatError("CSV header must be record_id,epoch_index,label,s0,...");
  }
  for (std::size_t i = 3; i < header.size(); ++i) {
    if (header[i] != "s" + std::to_string(i - 3)) throw FormatError("CSV sample column " + header[i] + " out of order");
  }
  Dataset data;
  data.epoch_length = header.size() - 3;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    const std::string where = "CSV line " + std::to_string(line_no) + ": ";
    if (cells.size() != header.size()) throw FormatError(where + "expected " + std::to_string(header.size()) + " columns");
    try {
      const auto id = static_cast<std::uint32_t>(std::stoul(cells[0]));
      const auto index = std::stoul(cells[1]);
      const int label = std::stoi(cells[2]);
      if (label < 0 || label >= kNumStages) throw FormatError(where + "label out of range");
      if (data.records.empty() || data.records.back().id != id) {
        data.records.push_back(EpochRecord{id, {}, {}});
      }
      EpochRecord& rec = data.records.back();
      if (index != rec.num_epochs()) throw FormatError(where + "epoch_index not consecutive within record");
      for (std::size_t i = 3; i < cells.size(); ++i) rec.samples.push_back(std::stof(cells[i]));
      rec.labels.push_back(static_cast<std::uint8_t>(label));
    } catch (const std::logic_error&) {
      throw FormatError(where + "non-numeric field");
    }
  }
  return data;
}

Dataset import_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open CSV " + path);
  return import_csv(f);
}

}  // namespace rest
