#include <algorithm>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "rest/metrics.hpp"
#include "rest/random.hpp"

using namespace rest;

TEST(Metrics, TwoByTwoFixture) {
  const auto cm = ConfusionMatrix::from_counts(2, {1, 1, 0, 2});
  EXPECT_NEAR(cm.f1(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(cm.f1(1), 0.8, 1e-15);
  EXPECT_NEAR(cm.macro_f1(), 11.0 / 15.0, 1e-12);
  EXPECT_EQ(cm.support(0), 2u);
  EXPECT_EQ(cm.predicted(1), 3u);
  EXPECT_DOUBLE_EQ(cm.precision(1), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(cm.recall(0), 0.5);
}

TEST(Metrics, AddMatchesCounts) {
  ConfusionMatrix cm(3);
  cm.add(0, 0);
  cm.add(std::vector<int>{1, 2, 2}, std::vector<int>{2, 2, 0});
  EXPECT_EQ(cm, ConfusionMatrix::from_counts(3, {1, 0, 0, 0, 0, 1, 1, 0, 1}));
  EXPECT_EQ(cm.total(), 4u);
  EXPECT_THROW(cm.add(3, 0), std::exception);
  EXPECT_THROW(cm.add(std::vector<int>{1}, std::vector<int>{1, 2}), std::exception);
}

TEST(Metrics, AbsentClassesAreExcluded) {
  ConfusionMatrix cm(5);
  cm.add(std::vector<int>{0, 2, 2}, std::vector<int>{0, 2, 0});
  EXPECT_FALSE(cm.f1_defined(1));
  EXPECT_NEAR(cm.macro_f1(), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(ConfusionMatrix(5).macro_f1(), 0.0);
}

TEST(Metrics, MergeEqualsConcatenation) {
  ConfusionMatrix a(5), b(5), both(5);
  const std::vector<int> t1{0, 1, 2}, p1{0, 2, 2}, t2{4, 4, 3}, p2{4, 0, 3};
  a.add(t1, p1);
  b.add(t2, p2);
  both.add(t1, p1);
  both.add(t2, p2);
  a.merge(b);
  EXPECT_EQ(a, both);
}

TEST(Metrics, MacroF1InvariantToSampleOrderAndClassRelabelling) {
  Rng rng(3);
  std::vector<int> truth(200), pred(200);
  for (auto& v : truth) v = static_cast<int>(rng.index(5));
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = rng.uniform() < 0.6 ? truth[i] : static_cast<int>(rng.index(5));
  ConfusionMatrix base(5);
  base.add(truth, pred);

  std::vector<std::size_t> order(truth.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::vector<int> perm{3, 0, 4, 1, 2};
  ConfusionMatrix shuffled(5), relabelled(5);
  for (std::size_t i : order) {
    shuffled.add(truth[i], pred[i]);
    relabelled.add(perm[truth[i]], perm[pred[i]]);
  }
  EXPECT_EQ(shuffled, base);
  EXPECT_NEAR(relabelled.macro_f1(), base.macro_f1(), 1e-12);
}

TEST(Metrics, RowNormalisedAndCsv) {
  const auto cm = ConfusionMatrix::from_counts(5, {3, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0,
                                                   0, 0, 0, 0, 0});
  const auto n = cm.row_normalized();
  EXPECT_DOUBLE_EQ(n[0], 0.75);
  EXPECT_DOUBLE_EQ(n[5], 0.0);
  std::ostringstream os;
  write_confusion_csv(cm, os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "truth,W,N1,N2,N3,REM");
  EXPECT_NE(os.str().find("\nW,3,1,0,0,0\n"), std::string::npos);
  std::ostringstream pc;
  write_per_class_csv(cm, pc);
  EXPECT_EQ(pc.str().substr(0, pc.str().find('\n')), "class,support,precision,recall,f1");
}
