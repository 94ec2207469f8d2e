#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace rest {

// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 5);
  static ConfusionMatrix from_counts(std::size_t classes, std::vector<std::uint64_t> counts);

  void add(int truth, int predicted);
  void add(std::span<const int> truth, std::span<const int> predicted);
  void merge(const ConfusionMatrix& other);

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const;
  std::uint64_t total() const;
  std::uint64_t support(std::size_t c) const;    // row sum
  std::uint64_t predicted(std::size_t c) const;  // column sum

  // 0 when the denominator is 0.
  double precision(std::size_t c) const;
  double recall(std::size_t c) const;
  // 2 TP / (2 TP + FP + FN); 0 for a class with support or predictions but no
  // true positives.
  double f1(std::size_t c) const;
  // A class that never occurs and is never predicted has no defined F1 and is
  // left out of the mean.
  bool f1_defined(std::size_t c) const { return support(c) + predicted(c) > 0; }
  double macro_f1() const;
  double accuracy() const;

  // Row-normalised copy (rows with no support stay 0).
  std::vector<double> row_normalized() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

// Header "truth,<class 0>,...": one row per ground-truth class using stage
// names when classes == 5.
void write_confusion_csv(const ConfusionMatrix& cm, std::ostream& out, bool normalized = false);

// Header "class,support,precision,recall,f1".
void write_per_class_csv(const ConfusionMatrix& cm, std::ostream& out);

}  // namespace rest
