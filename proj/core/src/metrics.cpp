#include "rest/metrics.hpp"

#include <ostream>
#include <string>

#include "rest/data.hpp"
#include "rest/error.hpp"

namespace rest {
namespace {

std::string class_label(std::size_t classes, std::size_t c) {
  return classes == static_cast<std::size_t>(kNumStages) ? stage_name(static_cast<int>(c)) : std::to_string(c);
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_counts(std::size_t classes, std::vector<std::uint64_t> counts) {
  ConfusionMatrix cm(classes);
  if (counts.size() != classes * classes) throw ShapeError("confusion counts must be classes x classes");
  cm.counts_ = std::move(counts);
  return cm;
}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= classes_ ||
      static_cast<std::size_t>(predicted) >= classes_) {
    throw ConfigError("confusion matrix label out of range");
  }
  ++counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(predicted)];
}

void ConfusionMatrix::add(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("truth and prediction counts differ");
  for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  return counts_.at(truth * classes_ + predicted);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

std::uint64_t ConfusionMatrix::support(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t p = 0; p < classes_; ++p) n += at(c, p);
  return n;
}

std::uint64_t ConfusionMatrix::predicted(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t t = 0; t < classes_; ++t) n += at(t, c);
  return n;
}

double ConfusionMatrix::precision(std::size_t c) const {
  const auto p = predicted(c);
  return p ? static_cast<double>(at(c, c)) / static_cast<double>(p) : 0.0;
}

double ConfusionMatrix::recall(std::size_t c) const {
  const auto s = support(c);
  return s ? static_cast<double>(at(c, c)) / static_cast<double>(s) : 0.0;
}

double ConfusionMatrix::f1(std::size_t c) const {
  const auto tp = at(c, c);
  const auto denom = support(c) + predicted(c);  // 2TP + FP + FN
  return denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
}

double ConfusionMatrix::macro_f1() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < classes_; ++c) {
    if (!f1_defined(c)) continue;
    sum += f1(c);
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  if (!n) return 0.0;
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < classes_; ++c) diag += at(c, c);
  return static_cast<double>(diag) / static_cast<double>(n);
}

std::vector<double> ConfusionMatrix::row_normalized() const {
  std::vector<double> out(counts_.size(), 0.0);
  for (std::size_t t = 0; t < classes_; ++t) {
    const auto s = support(t);
    if (!s) continue;
    for (std::size_t p = 0; p < classes_; ++p) {
      out[t * classes_ + p] = static_cast<double>(at(t, p)) / static_cast<double>(s);
    }
  }
  return out;
}

void write_confusion_csv(const ConfusionMatrix& cm, std::ostream& out, bool normalized) {
  const std::size_t k = cm.classes();
  const auto norm = cm.row_normalized();
  out << "truth";
  for (std::size_t p = 0; p < k; ++p) out << ',' << class_label(k, p);
  out << '\n';
  for (std::size_t t = 0; t < k; ++t) {
    out << class_label(k, t);
    for (std::size_t p = 0; p < k; ++p) {
      out << ',';
      if (normalized) {
        out << norm[t * k + p];
      } else {
        out << cm.at(t, p);
      }
    }
    out << '\n';
  }
}

void write_per_class_csv(const ConfusionMatrix& cm, std::ostream& out) {
  out << "class,support,precision,recall,f1\n";
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    out << class_label(cm.classes(), c) << ',' << cm.support(c) << ',' << cm.precision(c) << ','
        << cm.recall(c) << ',' << cm.f1(c) << '\n';
  }
}

}  // namespace rest
