#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "ltgcd/classifier.hpp"
#include "ltgcd/evaluation.hpp"

using namespace ltgcd;

namespace {

double brute_min_cost(const Matrix& c) {
  std::vector<std::size_t> perm(c.rows);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double s = 0.0;
    for (std::size_t r = 0; r < c.rows; ++r) s += c(r, perm[r]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double brute_acc(const std::vector<int>& pred, const std::vector<int>& truth, int classes) {
  std::vector<int> perm(static_cast<std::size_t>(classes));
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (perm[static_cast<std::size_t>(pred[i])] == truth[i]) ++hit;
    best = std::max(best, hit);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

}  // namespace

TEST_CASE("hungarian basics") {
  Matrix id(4, 4, 1.0);
  for (std::size_t i = 0; i < 4; ++i) id(i, i) = 0.0;
  Assignment a = hungarian(id);
  CHECK(a.row_to_col == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(a.total_cost == 0.0);

  Matrix one(1, 1, 3.5);
  CHECK(hungarian(one).row_to_col == std::vector<std::size_t>{0});
  CHECK(hungarian(one).total_cost == 3.5);

  Matrix bad(2, 2, 0.0);
  bad(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hungarian(bad), Error);
}

TEST_CASE("hungarian matches brute force on 6x6 integer costs") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    Matrix c(6, 6);
    for (double& v : c.values) v = static_cast<double>(rng() % 20);
    Assignment a = hungarian(c);
    double s = 0.0;
    for (std::size_t r = 0; r < 6; ++r) s += c(r, a.row_to_col[r]);
    CHECK(s == a.total_cost);
    CHECK(a.total_cost == brute_min_cost(c));
  }
}

TEST_CASE("rectangular costs are padded") {
  Matrix c(2, 3);
  c.values = {5, 1, 9, 2, 8, 7};
  Assignment a = hungarian(c);
  CHECK(a.total_cost == 3.0);
  CHECK(a.row_to_col[0] == 1);
  CHECK(a.row_to_col[1] == 0);
}

TEST_CASE("clustering accuracy") {
  std::vector<int> truth{0, 0, 1, 1, 2, 2, 2};
  CHECK(clustering_acc(truth, truth).acc == 1.0);
  std::vector<int> relabel{5, 5, 3, 3, 9, 9, 9};
  ClusterMatch m = clustering_acc(relabel, truth);
  CHECK(m.acc == 1.0);
  CHECK(m.matching.at(5) == 0);
  CHECK(m.matching.at(9) == 2);
  CHECK_THROWS_AS(clustering_acc(std::vector<int>{0}, truth), Error);

  std::mt19937_64 rng(17);
  for (int t = 0; t < 30; ++t) {
    std::vector<int> p(40), y(40);
    for (std::size_t i = 0; i < 40; ++i) {
      y[i] = static_cast<int>(rng() % 6);
      p[i] = static_cast<int>(rng() % 6);
    }
    CHECK(clustering_acc(p, y).acc == brute_acc(p, y, 6));
  }
}

TEST_CASE("gcd report on perfect predictions") {
  std::vector<int> truth{0, 0, 1, 2, 2, 3};
  std::vector<int> old{0, 1};
  EvalReport r = gcd_report(truth, truth, old);
  CHECK(r.acc_all == 1.0);
  CHECK(*r.acc_old == 1.0);
  CHECK(*r.acc_new == 1.0);
  CHECK(r.balanced_acc == 1.0);
  CHECK(*r.balanced_old == 1.0);
  CHECK(*r.balanced_new == 1.0);
}

TEST_CASE("one big cluster on a long tail") {
  auto counts = long_tail_counts(10, 10.0, 100);
  std::vector<int> truth;
  for (std::size_t c = 0; c < counts.size(); ++c) truth.insert(truth.end(), counts[c], static_cast<int>(c));
  std::vector<int> pred(truth.size(), 0);
  EvalReport r = gcd_report(pred, truth, std::vector<int>{0, 1, 2, 3, 4});
  CHECK(r.balanced_acc == doctest::Approx(0.1));
  CHECK(r.acc_all == doctest::Approx(100.0 / static_cast<double>(truth.size())));
  CHECK(*r.acc_new == 0.0);
}

TEST_CASE("single global matching for old and new") {
  // Cluster 7 holds all of class 0 and most of class 2: it can only be matched once.
  std::vector<int> truth{0, 0, 0, 2, 2, 2, 2, 1};
  std::vector<int> pred{7, 7, 7, 7, 7, 7, 8, 9};
  EvalReport r = gcd_report(pred, truth, std::vector<int>{0, 1});
  CHECK(r.acc_all == doctest::Approx(5.0 / 8.0));
  CHECK(*r.acc_old == doctest::Approx(1.0));
  CHECK(*r.acc_new == doctest::Approx(0.25));
  CHECK(r.per_class_acc.at(2) == doctest::Approx(0.25));
  CHECK(r.balanced_acc == doctest::Approx((1.0 + 1.0 + 0.25) / 3.0));
}

TEST_CASE("empty partitions are absent") {
  std::vector<int> truth{0, 1, 1};
  EvalReport all_old = gcd_report(truth, truth, std::vector<int>{0, 1});
  CHECK_FALSE(all_old.acc_new.has_value());
  CHECK_FALSE(all_old.balanced_new.has_value());
  EvalReport all_new = gcd_report(truth, truth, std::vector<int>{});
  CHECK_FALSE(all_new.acc_old.has_value());
  CHECK(*all_new.acc_new == 1.0);
}

TEST_CASE("subset imbalance") {
  std::vector<int> truth{0, 0, 0, 0, 1, 1, 2};
  CHECK(subset_imbalance(truth, IdList{0, 1, 2, 3, 4, 5, 6}) == 4.0);
  CHECK(subset_imbalance(truth, IdList{0, 4, 6}) == 1.0);
  EvalReport r = gcd_report(truth, truth, std::vector<int>{0}, IdList{0, 1, 4});
  CHECK(*r.lambda_selected == 2.0);
}

TEST_CASE("S_dens of a trained run is less imbalanced than the data") {
  SyntheticSpec spec;
  spec.classes = 20;
  spec.dim = 32;
  spec.imbalance = 10.0;
  spec.head_count = 200;
  spec.seed = 1;
  Dataset ds = generate_synthetic(spec);
  const auto& truth = *ds.labels.true_labels;
  LabelInfo info = split_labelled(truth, 0.5, 0.5, 1);
  TrainConfig config;
  config.classes = 20;
  config.epochs = 10;
  TrainResult run = train(ds.embeddings, info, config, 1);
  const IdList unl = info.unlabelled_ids();
  auto pred = predict_labels(ds.embeddings, run.prototypes);
  std::vector<int> p, y;
  for (auto i : unl) {
    p.push_back(pred[i]);
    y.push_back(truth[i]);
  }
  // Selected ids index the full set; map them to positions in the unlabelled list.
  IdList pos;
  for (auto id : run.selection.dens_ids)
    pos.push_back(static_cast<SampleId>(std::lower_bound(unl.begin(), unl.end(), id) - unl.begin()));
  EvalReport r = gcd_report(p, y, info.old_classes, pos);
  IdList every(y.size());
  std::iota(every.begin(), every.end(), 0);
  CHECK(*r.lambda_selected < subset_imbalance(y, every));
}
