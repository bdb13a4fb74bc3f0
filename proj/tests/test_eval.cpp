#include "unigraph/eval.hpp"

#include <gtest/gtest.h>

using namespace unigraph;

namespace {

// Gaussian-ish blobs: class c centered at distinct corners.
EmbDataset blob_dataset(int classes, int per_class, double spread, std::uint64_t seed,
                        bool shuffle_labels = false) {
  Rng rng(seed);
  const int d = 4;
  const int n = classes * per_class;
  Matrix x(n, d);
  std::vector<std::string> labels(n);
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      const int r = c * per_class + i;
      for (int j = 0; j < d; ++j) {
        const double center = (j == c % d) ? 4.0 * (1 + c / d) : 0.0;
        x(r, j) = center + rng.uniform(-spread, spread);
      }
      labels[r] = "c" + std::to_string(c);
    }
  }
  if (shuffle_labels) {
    std::vector<std::string> shuffled = labels;
    rng.shuffle(shuffled);
    labels = shuffled;
  }
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<int> train(order.begin(), order.begin() + n * 6 / 10);
  std::vector<int> valid(order.begin() + n * 6 / 10, order.begin() + n * 8 / 10);
  std::vector<int> test(order.begin() + n * 8 / 10, order.end());
  return make_emb_dataset(x, labels, train, valid, test);
}

}  // namespace

TEST(SampleFewshot, DefaultProtocolConstants) {
  FewShotDefaults d;
  EXPECT_EQ(d.num_tasks, 500);
  EXPECT_EQ(d.shots, 3);
}

TEST(SampleFewshot, TaskShapeContract) {
  EmbDataset ds = blob_dataset(4, 30, 0.5, 3);
  auto tasks = sample_fewshot_tasks(ds, 3, 2, 10, 42);
  ASSERT_EQ(tasks.size(), 10u);
  for (const auto& t : tasks) {
    EXPECT_EQ(t.ways, 3);
    EXPECT_EQ(t.shots, 2);
    EXPECT_EQ(t.support.size(), 6u);
    std::vector<int> per_way(3, 0);
    for (const auto& [h, y] : t.support) ++per_way[y];
    for (int c = 0; c < 3; ++c) EXPECT_EQ(per_way[c], 2);
    for (const auto& [h, y] : t.query) {
      EXPECT_GE(y, 0);
      EXPECT_LT(y, 3);
    }
    EXPECT_FALSE(t.query.empty());
  }
}

TEST(SampleFewshot, TooManyWaysThrows) {
  EmbDataset ds = blob_dataset(3, 20, 0.5, 5);
  EXPECT_THROW(sample_fewshot_tasks(ds, 4, 2, 5, 1), std::invalid_argument);
}

TEST(SampleFewshot, InsufficientShotsThrows) {
  EmbDataset ds = blob_dataset(3, 4, 0.5, 7);  // ~2 train rows per class
  EXPECT_THROW(sample_fewshot_tasks(ds, 3, 10, 5, 1), std::invalid_argument);
}

TEST(SampleFewshot, SameSeedSameTasks) {
  EmbDataset ds = blob_dataset(4, 25, 0.5, 9);
  auto a = sample_fewshot_tasks(ds, 3, 3, 20, 77);
  auto b = sample_fewshot_tasks(ds, 3, 3, 20, 77);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].class_ids, b[i].class_ids);
    ASSERT_EQ(a[i].support.size(), b[i].support.size());
    for (std::size_t k = 0; k < a[i].support.size(); ++k)
      EXPECT_EQ(a[i].support[k].first, b[i].support[k].first);
  }
}

TEST(SampleFewshot, QueryCapRespected) {
  EmbDataset ds = blob_dataset(3, 100, 0.5, 11);
  auto tasks = sample_fewshot_tasks(ds, 3, 2, 5, 3, /*query_cap=*/7);
  for (const auto& t : tasks) EXPECT_LE(t.query.size(), 7u);
}

TEST(PrototypeClassify, SingleShotIdentityQuery) {
  FewShotTask t;
  t.ways = 2;
  t.shots = 1;
  t.support = {{{1.0, 0.0}, 0}, {{0.0, 1.0}, 1}};
  t.query = {{{1.0, 0.0}, 0}};
  auto res = prototype_classify(t);
  EXPECT_EQ(res.predicted, (std::vector<int>{0}));
  EXPECT_DOUBLE_EQ(res.accuracy, 1.0);
}

TEST(PrototypeClassify, ScaleInvariantPredictions) {
  Rng rng(13);
  FewShotTask t;
  t.ways = 3;
  t.shots = 2;
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 2; ++k) {
      std::vector<double> h(4);
      for (auto& v : h) v = rng.uniform(-1, 1);
      h[c] += 2.0;
      t.support.emplace_back(h, c);
    }
  for (int q = 0; q < 10; ++q) {
    std::vector<double> h(4);
    for (auto& v : h) v = rng.uniform(-1, 1);
    t.query.emplace_back(h, static_cast<int>(rng.below(3)));
  }
  auto base = prototype_classify(t);
  FewShotTask scaled = t;
  for (auto& [h, y] : scaled.query)
    for (auto& v : h) v *= 10.0;
  auto res = prototype_classify(scaled);
  EXPECT_EQ(res.predicted, base.predicted);
}

TEST(PrototypeClassify, MatchesBruteForceOracle) {
  Rng rng(17);
  for (int instance = 0; instance < 100; ++instance) {
    FewShotTask t;
    t.ways = 3;
    t.shots = 2;
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 2; ++k) {
        std::vector<double> h(4);
        for (auto& v : h) v = rng.uniform(-2, 2);
        t.support.emplace_back(h, c);
      }
    for (int q = 0; q < 8; ++q) {
      std::vector<double> h(4);
      for (auto& v : h) v = rng.uniform(-2, 2);
      t.query.emplace_back(h, static_cast<int>(rng.below(3)));
    }

    // independent long double enumeration
    std::vector<int> oracle;
    for (const auto& [hq, yq] : t.query) {
      long double best_score = -1e30L;
      int best = 0;
      for (int c = 0; c < 3; ++c) {
        long double proto[4] = {0, 0, 0, 0};
        int cnt = 0;
        for (const auto& [hs, ys] : t.support)
          if (ys == c) {
            for (int j = 0; j < 4; ++j) proto[j] += hs[j];
            ++cnt;
          }
        long double dot = 0, nq = 0, np = 0;
        for (int j = 0; j < 4; ++j) {
          const long double p = proto[j] / cnt;
          dot += p * hq[j];
          np += p * p;
          nq += static_cast<long double>(hq[j]) * hq[j];
        }
        const long double cosv = dot / (sqrtl(np) * sqrtl(nq));
        if (cosv > best_score) {
          best_score = cosv;
          best = c;
        }
      }
      oracle.push_back(best);
    }
    EXPECT_EQ(prototype_classify(t).predicted, oracle);
  }
}

TEST(PrototypeClassify, OneWayIsAlwaysCorrect) {
  Rng rng(19);
  FewShotTask t;
  t.ways = 1;
  t.shots = 3;
  for (int k = 0; k < 3; ++k) t.support.emplace_back(std::vector<double>{rng.uniform(), rng.uniform()}, 0);
  for (int q = 0; q < 5; ++q) t.query.emplace_back(std::vector<double>{rng.uniform(), rng.uniform()}, 0);
  EXPECT_DOUBLE_EQ(prototype_classify(t).accuracy, 1.0);
}

TEST(PrototypeClassify, TieBreaksTowardLowestClass) {
  FewShotTask t;
  t.ways = 2;
  t.shots = 1;
  t.support = {{{1.0, 0.0}, 0}, {{1.0, 0.0}, 1}};  // identical prototypes
  t.query = {{{2.0, 0.0}, 1}};
  EXPECT_EQ(prototype_classify(t).predicted, (std::vector<int>{0}));
}

TEST(PrototypeClassify, ZeroNormQueryWarns) {
  FewShotTask t;
  t.ways = 2;
  t.shots = 1;
  t.support = {{{1.0, 0.0}, 0}, {{0.0, 1.0}, 1}};
  t.query = {{{0.0, 0.0}, 0}};
  auto res = prototype_classify(t);
  EXPECT_GT(res.zero_norm_warnings, 0);
  EXPECT_EQ(res.predicted, (std::vector<int>{0}));  // all -inf ties to class 0
}

TEST(LinearProbe, SeparableBlobsReachPerfectAccuracy) {
  EmbDataset ds = blob_dataset(2, 60, 0.4, 23);
  ProbeConfig cfg;
  cfg.epochs = 2000;
  ProbeResult res = linear_probe(ds, cfg);
  EXPECT_DOUBLE_EQ(res.test_accuracy, 1.0);
}

TEST(LinearProbe, ShuffledLabelsStayNearChance) {
  EmbDataset ds = blob_dataset(2, 500, 0.4, 29, /*shuffle_labels=*/true);
  ProbeConfig cfg;
  cfg.epochs = 600;
  ProbeResult res = linear_probe(ds, cfg);
  EXPECT_GE(res.test_accuracy, 0.4);
  EXPECT_LE(res.test_accuracy, 0.6);
}

TEST(LinearProbe, TrainLossDecreases) {
  EmbDataset ds = blob_dataset(3, 40, 0.8, 31);
  ProbeConfig cfg;
  cfg.epochs = 300;
  ProbeResult res = linear_probe(ds, cfg);
  ASSERT_GE(res.train_loss_curve.size(), 2u);
  EXPECT_LT(res.train_loss_curve.back(), res.train_loss_curve.front());
}

TEST(LinearProbe, DefaultsMatchProtocol) {
  ProbeConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.lr, 0.01);
  EXPECT_EQ(cfg.epochs, 5000);
}

TEST(LinearProbe, SingleClassRejected) {
  Matrix x(4, 2);
  std::vector<std::string> labels = {"a", "a", "a", "a"};
  EmbDataset ds = make_emb_dataset(x, labels, {0, 1}, {2}, {3});
  EXPECT_THROW(linear_probe(ds, ProbeConfig{}), std::invalid_argument);
}

TEST(LinearProbe, MismatchedLabelCountRejected) {
  Matrix x(4, 2);
  std::vector<std::string> labels = {"a", "b"};
  EXPECT_THROW(make_emb_dataset(x, labels, {0}, {1}, {2}), std::invalid_argument);
}

TEST(FewshotReport, PerfectTasks) {
  FewShotTask t;
  t.ways = 2;
  t.shots = 1;
  t.support = {{{1.0, 0.0}, 0}, {{0.0, 1.0}, 1}};
  t.query = {{{1.0, 0.1}, 0}};
  FewShotReport r = fewshot_report({t, t, t});
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
  EXPECT_DOUBLE_EQ(r.stddev, 0.0);
}

TEST(FewshotReport, MeanAndSampleStd) {
  FewShotTask right, wrong;
  right.ways = wrong.ways = 2;
  right.shots = wrong.shots = 1;
  right.support = wrong.support = {{{1.0, 0.0}, 0}, {{0.0, 1.0}, 1}};
  right.query = {{{1.0, 0.0}, 0}};
  wrong.query = {{{1.0, 0.0}, 1}};
  FewShotReport r = fewshot_report({right, wrong});
  EXPECT_NEAR(r.mean, 0.5, 1e-12);
  EXPECT_NEAR(r.stddev, 0.7071067811865476, 1e-9);
}

TEST(FewshotReport, JsonFields) {
  FewShotTask t;
  t.ways = 3;
  t.shots = 2;
  t.support = {{{1.0}, 0}, {{2.0}, 0}, {{1.0}, 1}, {{2.0}, 1}, {{1.0}, 2}, {{2.0}, 2}};
  t.query = {{{1.0}, 0}};
  nlohmann::json j = fewshot_report({t}).to_json();
  EXPECT_TRUE(j.contains("mean"));
  EXPECT_TRUE(j.contains("std"));
  EXPECT_EQ(j["N"], 3);
  EXPECT_EQ(j["K"], 2);
  EXPECT_EQ(j["num_tasks"], 1);
}

TEST(FewshotReport, EmptyRejected) { EXPECT_THROW(fewshot_report({}), std::invalid_argument); }
