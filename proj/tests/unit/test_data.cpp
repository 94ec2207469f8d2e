#include <cmath>
#include <complex>
#include <sstream>

#include <gtest/gtest.h>

#include "rest/data.hpp"
#include "rest/error.hpp"
#include "support.hpp"

using namespace rest;
using rest::fixtures::TempDir;

namespace {

EpochRecord counting_record(std::uint32_t id, std::size_t epochs, std::size_t length) {
  EpochRecord r;
  r.id = id;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t i = 0; i < length; ++i) r.samples.push_back(static_cast<float>(100 * e + i));
    r.labels.push_back(static_cast<std::uint8_t>(e % kNumStages));
  }
  return r;
}

Dataset small_dataset(std::size_t records, std::size_t epochs = 5, std::size_t length = 4) {
  Dataset d;
  d.epoch_length = length;
  for (std::size_t r = 0; r < records; ++r) d.records.push_back(counting_record(static_cast<std::uint32_t>(r), epochs, length));
  return d;
}

std::string serialize(const Dataset& d) {
  std::ostringstream os;
  write_dataset(d, os);
  return os.str();
}

}  // namespace

TEST(Data, ContextualizeFiveEpochsKThree) {
  const SampleSet s = contextualize(counting_record(0, 5, 4), 4, 3);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.sample_length, 16u);
  // sample 0 covers epochs 0..3 and carries the label of epoch 3
  EXPECT_EQ(s.labels[0], 3);
  EXPECT_EQ(s.labels[1], 4);
  EXPECT_EQ(s.values[0], 0.0);
  EXPECT_EQ(s.values[15], 303.0);
  EXPECT_EQ(s.values[16], 100.0);
  EXPECT_EQ(contextualize(counting_record(0, 3, 4), 4, 3).size(), 0u);
  EXPECT_EQ(contextualize(counting_record(0, 3, 4), 4, 0).size(), 3u);
}

TEST(Data, SampleSetBatchAndGather) {
  const SampleSet s = contextualize(counting_record(0, 6, 2), 2, 1);
  const Tensor b = s.batch(1, 3);
  EXPECT_EQ(b.shape(), (Shape{2, 1, 4}));
  EXPECT_EQ(b[0], 100.0);
  const Tensor g = s.gather({2, 0});
  EXPECT_EQ(g[0], 200.0);
  EXPECT_EQ(g[4], 0.0);
  EXPECT_THROW(s.batch(2, 9), ShapeError);
}

TEST(Data, SplitTenRecords) {
  const Dataset d = small_dataset(10);
  const SplitAssignment a = split(d, 3);
  EXPECT_EQ(a.count(Split::kTrain), 8u);
  EXPECT_EQ(a.count(Split::kVal), 1u);
  EXPECT_EQ(a.count(Split::kTest), 1u);
  EXPECT_EQ(split(d, 3).of_record, a.of_record);
  EXPECT_THROW(split(small_dataset(2), 0), ConfigError);
}

TEST(Data, SplitSmallAndLarge) {
  const SplitAssignment three = split(small_dataset(3), 1);
  EXPECT_EQ(three.count(Split::kTrain), 1u);
  EXPECT_EQ(three.count(Split::kVal), 1u);
  const SplitAssignment many = split(small_dataset(57), 1);
  EXPECT_EQ(many.count(Split::kVal), 5u);
  EXPECT_EQ(many.count(Split::kTest), 5u);
  EXPECT_EQ(many.count(Split::kTrain), 47u);
}

TEST(Data, SamplesForKeepsRecordsTogether) {
  const Dataset d = small_dataset(10, 6, 4);
  const SplitAssignment a = split(d, 5);
  std::size_t total = 0;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) total += samples_for(d, a, s, 2).size();
  EXPECT_EQ(total, 10u * 4u);
  EXPECT_EQ(samples_for(d, a, Split::kTest, 2).size(), 4u);
}

TEST(Data, BinaryRoundTrip) {
  const Dataset d = small_dataset(4, 3, 5);
  std::istringstream in(serialize(d));
  EXPECT_EQ(read_dataset(in), d);

  TempDir tmp;
  write_dataset(d, tmp.str("x.bin"));
  EXPECT_EQ(read_dataset(tmp.str("x.bin")), d);
  EXPECT_THROW(read_dataset(tmp.str("missing.bin")), FormatError);
}

TEST(Data, BadMagicVersionAndTruncation) {
  std::string bytes = serialize(small_dataset(3, 2, 4));
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream a(bad);
  try {
    read_dataset(a);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }

  std::string v2 = bytes;
  v2[8] = 2;
  std::istringstream b(v2);
  try {
    read_dataset(b);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported dataset version 2"), std::string::npos);
  }

  for (std::size_t cut : {std::size_t{5}, std::size_t{12}, bytes.size() - 1}) {
    std::istringstream c(bytes.substr(0, cut));
    EXPECT_THROW(read_dataset(c), FormatError) << cut;
  }

  std::string label = bytes;
  label.back() = 9;
  std::istringstream d(label);
  EXPECT_THROW(read_dataset(d), FormatError);
}

TEST(Data, CsvImport) {
  std::istringstream ok(
      "record_id,epoch_index,label,s0,s1\n"
      "7,0,0,1.5,2\n"
      "7,1,4,3,4\n"
      "9,0,2,-1,0\n");
  const Dataset d = import_csv(ok);
  ASSERT_EQ(d.records.size(), 2u);
  EXPECT_EQ(d.epoch_length, 2u);
  EXPECT_EQ(d.records[0].id, 7u);
  EXPECT_EQ(d.records[0].labels, (std::vector<std::uint8_t>{0, 4}));
  EXPECT_EQ(d.records[1].samples, (std::vector<float>{-1.0f, 0.0f}));

  for (const char* bad : {"id,epoch,label,s0\n1,0,0,1\n", "record_id,epoch_index,label,s0\n1,1,0,1\n",
                          "record_id,epoch_index,label,s0\n1,0,7,1\n", "record_id,epoch_index,label,s0\n1,0,0,x\n",
                          "record_id,epoch_index,label,s0,s1\n1,0,0,1\n", ""}) {
    std::istringstream in(bad);
    EXPECT_THROW(import_csv(in), FormatError) << bad;
  }
}

TEST(Data, SynthIsDeterministicAndShaped) {
  SynthParams p;
  p.n_records = 4;
  p.epochs_per_record = 30;
  p.seed = 11;
  const Dataset a = synth_generate(p), b = synth_generate(p);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.records.size(), 4u);
  EXPECT_EQ(a.num_epochs(), 120u);
  EXPECT_EQ(a.epoch_length, 64u);
  p.seed = 12;
  EXPECT_NE(synth_generate(p), a);
  p.amplitude = 0.0;
  EXPECT_THROW(synth_generate(p), ConfigError);
}

// Each stage's energy should sit mostly inside its defining bands.
TEST(Data, SynthStageSpectraOracle) {
  SynthParams p;
  p.n_records = 6;
  p.epochs_per_record = 60;
  p.noise_floor = 0.0;
  p.seed = 3;
  const Dataset d = synth_generate(p);
  const std::size_t n = d.epoch_length;
  const std::vector<std::vector<std::pair<double, double>>> bands{
      {{0.27, 0.43}}, {{0.08, 0.15}}, {{0.06, 0.12}, {0.19, 0.25}}, {{0.01, 0.06}}, {{0.12, 0.19}, {0.27, 0.37}}};
  std::vector<double> inside(kNumStages, 0.0), total(kNumStages, 0.0);
  for (const auto& r : d.records) {
    for (std::size_t e = 0; e < r.num_epochs(); ++e) {
      const int label = r.labels[e];
      for (std::size_t k = 1; k <= n / 2; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
          acc += static_cast<double>(r.samples[e * n + t]) * std::polar(1.0, -2.0 * M_PI * double(k * t) / double(n));
        }
        const double f = double(k) / double(n), power = std::norm(acc);
        total[label] += power;
        for (auto [lo, hi] : bands[label]) {
          if (f >= lo && f <= hi) inside[label] += power;
        }
      }
    }
  }
  for (int c = 0; c < kNumStages; ++c) {
    ASSERT_GT(total[c], 0.0) << stage_name(c);
    EXPECT_GT(inside[c] / total[c], 0.9) << stage_name(c);
  }
}

TEST(Data, StageNames) {
  EXPECT_EQ(stage_name(kW), "W");
  EXPECT_EQ(stage_name(kREM), "REM");
}
