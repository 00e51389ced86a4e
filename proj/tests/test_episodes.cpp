#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <vector>

#include "oracles.hpp"

using namespace a2m;

namespace {

DatasetTable synthetic_table(std::size_t classes, std::size_t per_class, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> feats;
  std::vector<std::size_t> labels;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) names.push_back("c" + std::to_string(c));
  // Interleave classes so row ids are not class-contiguous.
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t t = 0; t < dim; ++t) feats.push_back(static_cast<double>(c) + n(rng));
      labels.push_back(c);
    }
  const auto rows = labels.size();
  return make_table(Tensor::matrix(rows, dim, feats), labels, names);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("a2m_test_" + name);
}

}  // namespace

TEST(SampleEpisode, GaussianSizesAndLabels) {
  const auto dist = make_gaussian_dist(6, 3.0, 1.0, 10, 1);
  const auto ep = sample_episode(dist, 5, 2, 4, 7);
  EXPECT_EQ(ep.support_x.shape(), (Shape{10, 6}));
  EXPECT_EQ(ep.query_x.shape(), (Shape{20, 6}));
  EXPECT_EQ(ep.support_y.size(), 10u);
  EXPECT_EQ(ep.query_y.size(), 20u);
  for (auto y : ep.support_y) EXPECT_LT(y, 5u);
  for (auto y : ep.query_y) EXPECT_LT(y, 5u);
  EXPECT_EQ(std::set<std::size_t>(ep.classes.begin(), ep.classes.end()).size(), 5u);
}

TEST(SampleEpisode, SameSeedIsIdentical) {
  const auto dist = make_gaussian_dist(6, 3.0, 1.0, 10, 1);
  const auto a = sample_episode(dist, 5, 1, 3, 42);
  const auto b = sample_episode(dist, 5, 1, 3, 42);
  EXPECT_EQ(oracle::flatten(std::vector{a.support_x, a.query_x}), oracle::flatten(std::vector{b.support_x, b.query_x}));
  EXPECT_EQ(a.classes, b.classes);
  const auto table = synthetic_table(8, 6, 3, 2);
  const auto c = sample_episode(table, 4, 2, 3, 9);
  const auto d = sample_episode(table, 4, 2, 3, 9);
  EXPECT_EQ(c.support_rows, d.support_rows);
  EXPECT_EQ(c.query_rows, d.query_rows);
}

TEST(SampleEpisode, DatasetDisjointnessOver1000Draws) {
  const auto table = synthetic_table(10, 8, 3, 3);
  std::size_t violations = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto ep = sample_episode(table, 5, 2, 4, s);
    std::set<std::size_t> support(ep.support_rows.begin(), ep.support_rows.end());
    for (auto r : ep.query_rows) violations += support.count(r);
    violations += support.size() != ep.support_rows.size();
  }
  EXPECT_EQ(violations, 0u);
}

TEST(SampleEpisode, DatasetRowsCarryTheirFeaturesAndClasses) {
  const auto table = synthetic_table(6, 5, 2, 4);
  const auto ep = sample_episode(table, 3, 2, 2, 5);
  for (std::size_t i = 0; i < ep.support_rows.size(); ++i) {
    const auto r = ep.support_rows[i];
    EXPECT_EQ(table.labels[r], ep.classes[ep.support_y[i]]);
    for (std::size_t t = 0; t < 2; ++t) EXPECT_EQ(ep.support_x.at(i, t), table.features.at(r, t));
  }
}

TEST(SampleEpisode, InsufficientClassesOrInstances) {
  const auto table = synthetic_table(3, 4, 2, 5);
  try {
    sample_episode(table, 4, 1, 1, 0);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("3 classes, need 4"), std::string::npos) << e.what();
  }
  try {
    sample_episode(table, 3, 2, 3, 0);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("4 instances, need 5"), std::string::npos) << e.what();
  }
  EXPECT_THROW(sample_episode(make_gaussian_dist(2, 1.0, 1.0, 3, 0), 4, 1, 1, 0), ValidationError);
}

TEST(SampleEpisode, LabelPermutationCoverage) {
  const std::size_t pool = 10, draws = 5000;
  const auto dist = make_gaussian_dist(2, 1.0, 1.0, pool, 1);
  std::vector<double> count(pool, 0.0);
  for (std::uint64_t s = 0; s < draws; ++s) count[sample_episode(dist, 5, 1, 1, s).classes[0]] += 1.0;
  const double p = 1.0 / pool, mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
  for (double c : count) EXPECT_LE(std::abs(c - mean), 3 * sd);
}

TEST(GaussianDist, ZeroNoiseSamplesEqualMeans) {
  const auto dist = make_gaussian_dist(4, 3.0, 0.0, 5, 2);
  const auto ep = sample_episode(dist, 3, 2, 2, 1);
  for (std::size_t i = 0; i < ep.support_y.size(); ++i)
    for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(ep.support_x.at(i, t), dist.means[ep.classes[ep.support_y[i]]][t]);
}

TEST(GaussianDist, SameSeedSameMeans) {
  EXPECT_EQ(make_gaussian_dist(8, 2.0, 1.0, 12, 5).means, make_gaussian_dist(8, 2.0, 1.0, 12, 5).means);
  EXPECT_NE(make_gaussian_dist(8, 2.0, 1.0, 12, 5).means, make_gaussian_dist(8, 2.0, 1.0, 12, 6).means);
}

TEST(GaussianDist, PairwiseMeanDistanceIsSeparationTimesSigma) {
  const auto dist = make_gaussian_dist(16, 4.0, 1.5, 10, 3);
  for (std::size_t a = 0; a < 10; ++a)
    for (std::size_t b = a + 1; b < 10; ++b) {
      double d2 = 0.0;
      for (std::size_t t = 0; t < 16; ++t) d2 += std::pow(dist.means[a][t] - dist.means[b][t], 2);
      EXPECT_NEAR(std::sqrt(d2), 6.0, 1e-9);
    }
}

TEST(GaussianDist, ZeroSeparationIsChanceLevel) {
  const auto dist = make_gaussian_dist(8, 0.0, 1.0, 20, 4);
  for (const auto& m : dist.means)
    for (double v : m) EXPECT_EQ(v, 0.0);
  double total = 0.0;
  for (std::uint64_t s = 0; s < 600; ++s) {
    const auto ep = sample_episode(dist, 5, 1, 15, s);
    const auto protos = mean_centroid(ep.support_x, ep.support_y, 5);
    const auto logits = predict_logits(protos, ep.query_x);
    const auto pred = argmax_rows(logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ep.query_y[i];
    total += static_cast<double>(correct) / static_cast<double>(pred.size());
  }
  EXPECT_NEAR(total / 600.0, 0.2, 0.015);
}

TEST(GaussianDist, RejectsInvalidExtents) {
  EXPECT_THROW(make_gaussian_dist(0, 1.0, 1.0, 5, 0), ValidationError);
  EXPECT_THROW(make_gaussian_dist(4, -1.0, 1.0, 5, 0), ValidationError);
}

TEST(DatasetCsv, ParsesSmallFile) {
  const auto t = parse_dataset_csv("label,f0,f1,f2\ncat,1,2,3\ndog,4.5,-5,6e-1\n");
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.in_dim(), 3u);
  EXPECT_EQ(t.features.shape(), (Shape{2, 3}));
  EXPECT_EQ(t.features.at(1, 2), 0.6);
  EXPECT_EQ(t.class_names, (std::vector<std::string>{"cat", "dog"}));
  EXPECT_EQ(t.class_index[1], (std::vector<std::size_t>{1}));
}

TEST(DatasetCsv, EmptyFileIsValidationError) {
  EXPECT_THROW(parse_dataset_csv(""), ValidationError);
  EXPECT_THROW(parse_dataset_csv("\n\n"), ValidationError);
}

TEST(DatasetCsv, ParseErrorsCarryLineNumbers) {
  const auto message = [](std::string_view text) {
    try {
      parse_dataset_csv(text, "data.csv");
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("label,f0\n1,2\n3,4,5\n").find("data.csv:3"), std::string::npos);
  EXPECT_NE(message("label,f0,f1\n1,2,x\n").find("data.csv:2"), std::string::npos);
  EXPECT_NE(message("label,f0,f1\n1,2,\n").find("data.csv:2"), std::string::npos);
  EXPECT_NE(message("name,f0\n1,2\n").find("data.csv:1"), std::string::npos);
  EXPECT_NE(message("label,f0,g1\n1,2,3\n").find("data.csv:1"), std::string::npos);
}

TEST(DatasetCsv, RoundTripIsExact) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  std::vector<double> feats(40);
  for (auto& v : feats) v = u(rng) * std::pow(10.0, static_cast<int>(u(rng)) % 7);
  std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2, 0, 1};
  const auto table = make_table(Tensor::matrix(8, 5, feats), labels, {"a", "b", "7"});
  const auto path = temp_path("roundtrip.csv");
  write_dataset_csv(table, path.string());
  const auto back = load_dataset_csv(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(oracle::flatten(std::vector{back.features}), feats);
  EXPECT_EQ(back.labels, labels);
  EXPECT_EQ(back.class_names, table.class_names);
}

TEST(DatasetCsv, MissingFileIsIoError) { EXPECT_THROW(load_dataset_csv("/nonexistent/a2m.csv"), IoError); }

TEST(SplitClasses, LargestRemainderTenClasses) {
  EXPECT_EQ(largest_remainder(10, {0.64, 0.16, 0.20}), (std::array<std::size_t, 3>{6, 2, 2}));
  EXPECT_EQ(largest_remainder(100, {0.64, 0.16, 0.20}), (std::array<std::size_t, 3>{64, 16, 20}));
}

TEST(SplitClasses, RejectsZeroClassSplitsAndBadFractions) {
  const auto table = synthetic_table(10, 2, 2, 7);
  EXPECT_THROW(split_classes(table, {1.0, 0.0, 0.0}, 1), ValidationError);
  EXPECT_THROW(split_classes(table, {0.5, 0.2, 0.2}, 1), ValidationError);
  EXPECT_THROW(split_classes(synthetic_table(2, 2, 2, 1), {0.64, 0.16, 0.20}, 1), ValidationError);
}

TEST(SplitClasses, PartitionLaw) {
  const auto table = synthetic_table(10, 3, 2, 8);
  const auto parts = split_classes(table, {0.64, 0.16, 0.20}, 11);
  EXPECT_EQ(parts[0].num_classes(), 6u);
  EXPECT_EQ(parts[1].num_classes(), 2u);
  EXPECT_EQ(parts[2].num_classes(), 2u);
  std::multiset<std::string> all;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    all.insert(p.class_names.begin(), p.class_names.end());
    rows += p.rows();
  }
  EXPECT_EQ(all, std::multiset<std::string>(table.class_names.begin(), table.class_names.end()));
  EXPECT_EQ(rows, table.rows());
}

TEST(SplitClasses, SeedDeterminesPartition) {
  const auto table = synthetic_table(20, 2, 2, 9);
  EXPECT_EQ(split_classes(table, {0.6, 0.2, 0.2}, 3)[2].class_names,
            split_classes(table, {0.6, 0.2, 0.2}, 3)[2].class_names);
}

TEST(SplitClasses, TrainEpisodesNeverContainTestClasses) {
  const auto table = synthetic_table(20, 6, 2, 10);
  const auto parts = split_classes(table, {0.6, 0.2, 0.2}, 5);
  const std::set<std::string> test(parts[2].class_names.begin(), parts[2].class_names.end());
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto ep = sample_episode(parts[0], 5, 1, 2, s);
    for (auto c : ep.classes) EXPECT_EQ(test.count(parts[0].class_names[c]), 0u);
  }
}
