#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "ltgcd/estimation.hpp"
#include "ltgcd/evaluation.hpp"

using namespace ltgcd;

namespace {

PeakSet peaks_of(std::size_t n) {
  PeakSet p;
  for (std::size_t i = 0; i < n; ++i) {
    p.peak_ids.push_back(i);
    p.densities.push_back(1.0);
  }
  return p;
}

Dataset separated(std::size_t classes, std::size_t head, double imbalance, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.dim = 32;
  spec.head_count = head;
  spec.imbalance = imbalance;
  spec.seed = seed;
  return generate_synthetic(spec);
}

double brute_acc(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::vector<int> perm(6);
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

TEST_CASE("class bounds") {
  CHECK(class_bounds(peaks_of(40), 5) == std::pair<std::size_t, std::size_t>{5, 40});
  CHECK(class_bounds(peaks_of(8), 10) == std::pair<std::size_t, std::size_t>{10, 10});
  CHECK(class_bounds(peaks_of(0), 0) == std::pair<std::size_t, std::size_t>{1, 1});
}

TEST_CASE("nearest-peak assignment") {
  Dataset ds = separated(4, 30, 1.0, 3);
  const auto& truth = *ds.labels.true_labels;
  // First sample of every class as its prototype.
  IdList peaks;
  for (int c = 0; c < 4; ++c)
    peaks.push_back(static_cast<SampleId>(std::find(truth.begin(), truth.end(), c) - truth.begin()));

  auto one = assign_to_peaks(ds.embeddings, peaks, 1);
  CHECK(std::all_of(one.begin(), one.end(), [](int c) { return c == 0; }));

  auto four = assign_to_peaks(ds.embeddings, peaks, 4);
  for (std::size_t r = 0; r < peaks.size(); ++r) CHECK(four[peaks[r]] == static_cast<int>(r));
  CHECK(clustering_acc(four, truth).acc == 1.0);

  CHECK_THROWS_AS(assign_to_peaks(ds.embeddings, peaks, 0), Error);
  CHECK_THROWS_AS(assign_to_peaks(ds.embeddings, peaks, 5), Error);
}

TEST_CASE("labelled objective") {
  std::vector<int> labels{0, 0, 1, 1, 2, 2, kUnlabelled};
  LabelInfo info{labels, {0, 1, 2}, std::nullopt};
  std::vector<int> same{0, 0, 1, 1, 2, 2, 0};
  CHECK(labelled_objective(same, info) == 1.0);
  std::vector<int> one(7, 0);
  CHECK(labelled_objective(one, info) == doctest::Approx(1.0 / 3.0));

  LabelInfo none{std::vector<int>(7, kUnlabelled), {}, std::nullopt};
  CHECK_THROWS_AS(labelled_objective(same, none), Error);

  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<int> lab(30), pred(30), lab_pred, lab_truth;
    for (std::size_t i = 0; i < 30; ++i) {
      lab[i] = (rng() % 4 == 0) ? kUnlabelled : static_cast<int>(rng() % 6);
      pred[i] = static_cast<int>(rng() % 6);
      if (lab[i] != kUnlabelled) {
        lab_pred.push_back(pred[i]);
        lab_truth.push_back(lab[i]);
      }
    }
    std::set<int> cls(lab_truth.begin(), lab_truth.end());
    LabelInfo r{lab, std::vector<int>(cls.begin(), cls.end()), std::nullopt};
    CHECK(labelled_objective(pred, r) == brute_acc(lab_pred, lab_truth));
  }
}

TEST_CASE("peak hierarchy merges the closest peaks first") {
  auto e = ltgcd::testing::from_rows({{1, 0, 0}, {0.99, 0.141, 0}, {0, 1, 0}, {0, 0, 1}});
  IdList peaks{0, 1, 2, 3};
  PeakHierarchy h(e, peaks);
  CHECK(h.size() == 4);
  CHECK(h.groups(4) == std::vector<int>{0, 1, 2, 3});
  auto three = h.groups(3);
  CHECK(three[0] == three[1]);
  CHECK(three[2] != three[0]);
  CHECK(h.groups(1) == std::vector<int>{0, 0, 0, 0});
  CHECK(h.gap(3) > 0.5);
  auto sims = h.merge_similarities();
  CHECK(std::is_sorted(sims.begin(), sims.end(), std::greater<>()));
}

TEST_CASE("brent and exhaustive agree on a unimodal profile") {
  for (std::size_t peak : {3, 17, 40, 61, 99}) {
    std::map<std::size_t, int> calls;
    auto probe = [&](std::size_t k) {
      ++calls[k];
      const double x = static_cast<double>(k) - static_cast<double>(peak);
      return ProbePoint{k, 1.0 / (1.0 + 0.01 * x * x), 0.0};
    };
    auto history = brent_integer_search(2, 100, probe, 1.0);
    for (const auto& [k, n] : calls) CHECK(n == 1);
    CHECK(history.size() == calls.size());
    CHECK(history.size() < 40);

    std::vector<ProbePoint> scan;
    for (std::size_t k = 2; k <= 100; ++k) scan.push_back(probe(k));
    CHECK(best_probe(history) == best_probe(scan));
    CHECK(best_probe(scan) == peak);
  }
  auto flat = [](std::size_t k) { return ProbePoint{k, 0.5, 0.0}; };
  auto degenerate = brent_integer_search(7, 7, flat, 1.0);
  CHECK(degenerate.size() == 1);
  CHECK(degenerate[0].k == 7);
}

TEST_CASE("best probe tie rules") {
  std::vector<ProbePoint> p{{5, 0.9, 0.0}, {4, 0.9, 0.0}, {6, 0.8, 1.0}};
  CHECK(best_probe(p) == 4);
  p.push_back({7, 0.9, 0.2});
  CHECK(best_probe(p) == 7);
}

TEST_CASE("degenerate interval probes once") {
  // Five tight clusters but ten labelled class ids.
  SyntheticSpec spec;
  spec.classes = 5;
  spec.dim = 16;
  spec.head_count = 60;
  spec.spread = 0.03;
  spec.seed = 12;
  Dataset ds = generate_synthetic(spec);
  std::vector<int> labels(ds.embeddings.size(), kUnlabelled);
  for (std::size_t i = 0; i < 20; ++i) labels[i * 7] = static_cast<int>(i % 10);
  LabelInfo info{labels, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, std::nullopt};
  EstimationReport r = estimate_k(ds.embeddings, info, nullptr, EstimationConfig{});
  CHECK(r.lower == 10);
  CHECK(r.upper == 10);
  CHECK(r.k_hat == 10);
  CHECK(r.probes.size() == 1);
}

TEST_CASE("estimate on a long-tailed mixture") {
  Dataset ds = separated(20, 200, 10.0, 0);
  const auto& truth = *ds.labels.true_labels;
  LabelInfo info = split_labelled(truth, 0.5, 0.5, 0);
  EstimationReport r = estimate_k(ds.embeddings, info, nullptr, EstimationConfig{});
  CHECK(r.upper >= 20);
  CHECK(r.lower == 10);
  CHECK(r.k_hat >= 18);
  CHECK(r.k_hat <= 22);
  CHECK(r.k_hat >= r.lower);
  CHECK(r.k_hat <= r.upper);
  CHECK(r.assignments.size() == truth.size());

  std::set<std::size_t> probed;
  double best = 0.0;
  bool found = false;
  for (const auto& p : r.probes) {
    CHECK(probed.insert(p.k).second);
    CHECK((p.acc >= 0.0 && p.acc <= 1.0));
    best = std::max(best, p.acc);
    if (p.k == r.k_hat) found = true;
  }
  CHECK(found);
  for (const auto& p : r.probes)
    if (p.k == r.k_hat) CHECK(p.acc == best);

  // Renaming the labelled class ids changes nothing.
  LabelInfo renamed = info;
  for (int& l : renamed.labels)
    if (l != kUnlabelled) l = 9 - l;
  std::sort(renamed.old_classes.begin(), renamed.old_classes.end());
  renamed.old_classes.clear();
  for (int c = 0; c < 10; ++c) renamed.old_classes.push_back(c);
  EstimationReport again = estimate_k(ds.embeddings, renamed, nullptr, EstimationConfig{});
  CHECK(again.k_hat == r.k_hat);
  CHECK(again.peaks.peak_ids == r.peaks.peak_ids);
  REQUIRE(again.probes.size() == r.probes.size());
  for (std::size_t i = 0; i < r.probes.size(); ++i) {
    CHECK(again.probes[i].k == r.probes[i].k);
    CHECK(again.probes[i].acc == r.probes[i].acc);
  }
}

TEST_CASE("estimate on a uniform mixture") {
  Dataset ds = separated(10, 100, 1.0, 4);
  LabelInfo info = split_labelled(*ds.labels.true_labels, 0.5, 0.5, 4);
  EstimationReport r = estimate_k(ds.embeddings, info, nullptr, EstimationConfig{});
  CHECK(r.k_hat >= 9);
  CHECK(r.k_hat <= 11);
}

TEST_CASE("estimation config validation") {
  EstimationConfig c;
  c.exhaustive_cutoff = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.lambda_nmds = 1.2;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.brent_tolerance = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
}
