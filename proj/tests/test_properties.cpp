#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "grad_fixture.hpp"
#include "ltgcd/classifier.hpp"
#include "ltgcd/estimation.hpp"
#include "ltgcd/evaluation.hpp"
#include "ltgcd/selection.hpp"

using namespace ltgcd;
using ltgcd::testing::random_embeddings;
using ltgcd::testing::random_probs;

TEST_SUITE_BEGIN("properties");

namespace {

std::size_t generated_cases = 0;

std::mt19937_64 rng_for(std::uint64_t suite, std::uint64_t i) {
  ++generated_cases;
  return std::mt19937_64(suite * 1000003ULL + i);
}

std::vector<double> random_simplex(std::size_t k, std::mt19937_64& rng, bool allow_zero = false) {
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> p(k);
  double s = 0.0;
  for (double& v : p) s += (v = ex(rng));
  for (double& v : p) v /= s;
  if (allow_zero && k > 2 && rng() % 3 == 0) {
    const double moved = p[0];
    p[0] = 0.0;
    p[1] += moved;
  }
  return p;
}

IdList iota_ids(std::size_t n) {
  IdList ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

Dataset small_mixture(std::mt19937_64& rng) {
  SyntheticSpec spec;
  spec.classes = 3 + rng() % 4;
  spec.dim = 8 + rng() % 9;
  spec.imbalance = 1.0 + static_cast<double>(rng() % 5);
  spec.head_count = 40 + rng() % 30;
  spec.spread = 0.05 + 0.1 * static_cast<double>(rng() % 3);
  spec.seed = rng();
  return generate_synthetic(spec);
}

}  // namespace

TEST_CASE("softmax rows sum to one and never produce NaN") {
  for (std::uint64_t i = 0; i < 200; ++i) {
    auto rng = rng_for(1, i);
    const std::size_t k = 1 + rng() % 20;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double scale = std::pow(10.0, static_cast<double>(rng() % 300));
    std::vector<double> l(k), p(k);
    for (double& v : l) v = scale * u(rng);
    softmax(l, p);
    double s = 0.0;
    for (double v : p) {
      CHECK_FALSE(std::isnan(v));
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("predict rows sum to one") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto f = ltgcd::testing::make_grad_fixture(5000 + i);
    ++generated_cases;
    for (double tau : {1.0, 0.1, 1e-4}) {
      auto p = predict(f.batch.student.row(0), f.prototypes, tau);
      CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("Gibbs inequality for the prior loss") {
  for (std::uint64_t i = 0; i < 200; ++i) {
    auto rng = rng_for(2, i);
    const std::size_t k = 2 + rng() % 10;
    auto prior = random_simplex(k, rng);
    auto bar = random_simplex(k, rng, true);
    const double h = entropy(prior);
    CHECK(loss_prior(bar, prior).value >= h - 1e-12);
    CHECK(std::abs(loss_prior(prior, prior).value - h) < 1e-12);
  }
}

TEST_CASE("entropy of the batch mean is bounded") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto f = ltgcd::testing::make_grad_fixture(7000 + i);
    ++generated_cases;
    auto bar = mean_prediction(f.batch, f.prototypes, f.targets);
    const double h = entropy(bar);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(f.prototypes.classes())) + 1e-12);
  }
}

TEST_CASE("argmax is invariant to a common prototype scale") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto rng = rng_for(3, i);
    auto f = ltgcd::testing::make_grad_fixture(rng());
    auto e = random_embeddings(20, f.prototypes.dim(), rng());
    PrototypeSet scaled = f.prototypes;
    const double s = std::pow(10.0, static_cast<double>(rng() % 9) - 4.0);
    for (double& v : scaled.prototypes.values) v *= s;
    CHECK(predict_labels(e, scaled) == predict_labels(e, f.prototypes));
  }
}

TEST_CASE("connectivity stays in [-1, 1]") {
  for (std::uint64_t i = 0; i < 200; ++i) {
    auto rng = rng_for(4, i);
    const std::size_t k = 2 + rng() % 10;
    auto a = random_simplex(k, rng);
    auto b = random_simplex(k, rng);
    const double e = connectivity(a, b);
    CHECK(e >= -1.0);
    CHECK(e <= 1.0);
    CHECK(e < 1.0 - 1e-9);
    std::vector<double> hot(k, 0.0);
    hot[rng() % k] = 1.0;
    CHECK(connectivity(hot, hot) == 1.0);
  }
}

TEST_CASE("density ignores neighbor order") {
  for (std::uint64_t i = 0; i < 50; ++i) {
    auto rng = rng_for(5, i);
    auto e = random_embeddings(40, 6, rng());
    const std::size_t k = 1 + rng() % 10;
    KnnGraph g = build_knn(e, k);
    auto probs = random_probs(40, 4, rng());
    KnnGraph shuffled = g;
    for (std::size_t s = 0; s < 40; ++s) {
      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t r = 0; r < k; ++r) {
        shuffled.neighbors(s)[r] = g.neighbors(s)[perm[r]];
        shuffled.affinities(s)[r] = g.affinities(s)[perm[r]];
      }
    }
    auto a = compute_density(g, &probs, DensityMode::kConnectivityAffinity).densities;
    auto b = compute_density(shuffled, &probs, DensityMode::kConnectivityAffinity).densities;
    for (std::size_t s = 0; s < 40; ++s) CHECK(std::abs(a[s] - b[s]) < 1e-12);
  }
}

TEST_CASE("NMDS output is an idempotent subset with no dominated overlaps") {
  for (std::uint64_t i = 0; i < 60; ++i) {
    auto rng = rng_for(6, i);
    Dataset ds = small_mixture(rng);
    const std::size_t k_s = 5 + rng() % 20;
    KnnGraph g = build_knn(ds.embeddings, std::max<std::size_t>(k_s, 10));
    NeighborSets sets(g, k_s);
    DensityMap d = compute_density(g.truncated(10), nullptr, DensityMode::kAffinityOnly);
    auto candidates = as_candidates(find_peaks(d, g.truncated(10)), d);
    const double lambda = 0.1 + 0.8 * static_cast<double>(rng() % 100) / 100.0;

    PeakSet once = nmds(candidates, sets, lambda);
    IdList input;
    for (const auto& c : candidates) input.push_back(c.id);
    for (auto id : once.peak_ids) CHECK(std::find(input.begin(), input.end(), id) != input.end());

    PeakSet twice = nmds(as_candidates(once.peak_ids, d), sets, lambda);
    CHECK(twice.peak_ids == once.peak_ids);

    for (std::size_t a = 0; a < once.peak_ids.size(); ++a)
      for (std::size_t b = a + 1; b < once.peak_ids.size(); ++b) {
        const auto x = once.peak_ids[a], y = once.peak_ids[b];
        CHECK_FALSE((iouk(x, y, sets) > lambda && d.densities[x] != d.densities[y]));
      }
    CHECK(nmds_serial(candidates, sets, lambda).peak_ids == once.peak_ids);
  }
}

TEST_CASE("parallel kernels equal their serial references") {
  for (std::uint64_t i = 0; i < 30; ++i) {
    auto rng = rng_for(7, i);
    const std::size_t n = 20 + rng() % 200, d = 2 + rng() % 40, k = 1 + rng() % 15;
    auto e = random_embeddings(n, d, rng());
    KnnGraph g = build_knn(e, k);
    CHECK(g == build_knn_serial(e, k));
    auto probs = random_probs(n, 5, rng());
    CHECK(compute_density(g, &probs, DensityMode::kConnectivityAffinity).densities ==
          compute_density_serial(g, &probs, DensityMode::kConnectivityAffinity).densities);
  }
}

TEST_CASE("confidence selection is monotone in epsilon") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto rng = rng_for(8, i);
    auto probs = random_probs(60, 2 + rng() % 8, rng(), 0.5 + static_cast<double>(rng() % 5));
    auto ids = iota_ids(60);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    double lo = u(rng), hi = u(rng);
    if (lo > hi) std::swap(lo, hi);
    IdList wide = select_confident(probs, ids, lo);
    IdList narrow = select_confident(probs, ids, hi);
    CHECK(std::includes(wide.begin(), wide.end(), narrow.begin(), narrow.end()));
  }
}

TEST_CASE("prior distribution is permutation-equivariant") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto rng = rng_for(9, i);
    const std::size_t k = 2 + rng() % 8;
    auto probs = random_probs(50, k, rng(), 3.0);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ProbMatrix permuted{Matrix(50, k), probs.temperature};
    for (std::size_t s = 0; s < 50; ++s)
      for (std::size_t c = 0; c < k; ++c) permuted.rows(s, perm[c]) = probs.rows(s, c);
    IdList sel;
    for (std::size_t s = 0; s < 50; ++s)
      if (rng() % 2) sel.push_back(s);
    if (sel.empty()) sel.push_back(0);
    const bool normalize = rng() % 2;
    auto a = prior_distribution(probs, sel, k, normalize);
    auto b = prior_distribution(permuted, sel, k, normalize);
    for (std::size_t c = 0; c < k; ++c) CHECK(std::abs(a[c] - b[perm[c]]) < 1e-12);
  }
}

TEST_CASE("combine has set semantics") {
  auto random_set = [](std::mt19937_64& rng) {
    IdList s;
    const std::size_t n = rng() % 15;
    for (std::size_t i = 0; i < n; ++i) s.push_back(rng() % 30);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  };
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto rng = rng_for(10, i);
    IdList a = random_set(rng), b = random_set(rng), c = random_set(rng);
    CHECK(combine(a, b) == combine(b, a));
    CHECK(combine(combine(a, b), c) == combine(a, combine(b, c)));
    CHECK(combine(a, a) == a);
  }
}

TEST_CASE("density selection only keeps raw peaks") {
  for (std::uint64_t i = 0; i < 30; ++i) {
    auto rng = rng_for(11, i);
    Dataset ds = small_mixture(rng);
    const std::size_t n = ds.embeddings.size();
    auto probs = random_probs(n, 4, rng(), 2.0);
    SelectionConfig config;
    config.k_s = 10 + rng() % 20;
    SelectionContext context(ds.embeddings, config.k, config.k_s);
    IdList unl;
    for (std::size_t s = 0; s < n; ++s)
      if (rng() % 4) unl.push_back(s);
    IdList dens = select_density(context, &probs, unl, config);
    IdList raw = find_peaks(compute_density(context.density_graph, &probs, config.density_mode),
                            context.density_graph);
    for (auto id : dens) {
      CHECK(std::binary_search(raw.begin(), raw.end(), id));
      CHECK(std::binary_search(unl.begin(), unl.end(), id));
    }
  }
}

TEST_CASE("clustering accuracy is invariant to cluster relabelling") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto rng = rng_for(12, i);
    const int k = 2 + static_cast<int>(rng() % 8);
    std::vector<int> pred(80), truth(80);
    for (std::size_t s = 0; s < 80; ++s) {
      truth[s] = static_cast<int>(rng() % k);
      pred[s] = rng() % 3 ? truth[s] : static_cast<int>(rng() % k);
    }
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 100);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> renamed(80);
    for (std::size_t s = 0; s < 80; ++s) renamed[s] = perm[static_cast<std::size_t>(pred[s])];
    CHECK(clustering_acc(renamed, truth).acc == clustering_acc(pred, truth).acc);

    EvalReport r = gcd_report(pred, truth, std::vector<int>{0});
    double lo = 1.0, hi = 0.0, mean = 0.0;
    for (const auto& [c, a] : r.per_class_acc) {
      lo = std::min(lo, a);
      hi = std::max(hi, a);
      mean += a;
      CHECK((a >= 0.0 && a <= 1.0));
    }
    mean /= static_cast<double>(r.per_class_acc.size());
    CHECK(r.balanced_acc >= lo - 1e-12);
    CHECK(r.balanced_acc <= hi + 1e-12);
    CHECK(std::abs(r.balanced_acc - mean) < 1e-12);
    std::set<int> targets;
    for (const auto& [from, to] : r.matching) CHECK(targets.insert(to).second);
  }
}

TEST_CASE("hungarian is optimal for small matrices") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto rng = rng_for(13, i);
    const std::size_t m = 1 + rng() % 7;
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    Matrix c(m, m);
    for (double& v : c.values) v = u(rng);
    Assignment a = hungarian(c);
    double identity = 0.0;
    for (std::size_t r = 0; r < m; ++r) identity += c(r, r);
    CHECK(a.total_cost <= identity + 1e-9);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (std::size_t r = 0; r < m; ++r) s += c(r, perm[r]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(std::abs(a.total_cost - best) < 1e-9);
  }
}

TEST_CASE("embedding normalization is idempotent") {
  for (std::uint64_t i = 0; i < 50; ++i) {
    auto rng = rng_for(14, i);
    auto e = random_embeddings(30, 2 + rng() % 30, rng());
    EmbeddingSet again(e.matrix());
    for (std::size_t v = 0; v < e.matrix().values.size(); ++v)
      CHECK(std::abs(again.matrix().values[v] - e.matrix().values[v]) <= 1e-12);
  }
}

TEST_CASE("long-tail counts are monotone and hit the imbalance") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto rng = rng_for(15, i);
    const std::size_t k = 2 + rng() % 60;
    const std::size_t head = 100 + rng() % 900;
    const double lambda = 1.0 + static_cast<double>(rng() % 1000) / 100.0;
    auto counts = long_tail_counts(k, lambda, head);
    CHECK(std::is_sorted(counts.begin(), counts.end(), std::greater<>()));
    const double ideal_tail = static_cast<double>(head) / lambda;
    CHECK(std::abs(static_cast<double>(counts.back()) - ideal_tail) <= 1.0);
    const double got = imbalance_factor(ClassCounts{counts});
    CHECK(got >= static_cast<double>(head) / (ideal_tail + 1.0) - 1e-12);
    CHECK(got <= static_cast<double>(head) / std::max(ideal_tail - 1.0, 1.0) + 1e-12);
  }
}

TEST_CASE("integer Brent search never repeats a probe and reports its maximum") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto rng = rng_for(16, i);
    const std::size_t lower = 1 + rng() % 20;
    const std::size_t upper = lower + rng() % 150;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> profile(upper + 1);
    for (double& v : profile) v = u(rng);
    std::map<std::size_t, int> calls;
    auto probe = [&](std::size_t k) {
      ++calls[k];
      return ProbePoint{k, profile[k], 0.0};
    };
    auto history = brent_integer_search(lower, upper, probe, 1.0);
    for (const auto& [k, n] : calls) {
      CHECK(n == 1);
      CHECK((k >= lower && k <= upper));
    }
    const std::size_t best = best_probe(history);
    CHECK((best >= lower && best <= upper));
    double top = 0.0;
    for (const auto& p : history) top = std::max(top, p.acc);
    CHECK(profile[best] == top);
  }
}

TEST_CASE("property case count") {
  // The gradient oracle in test_classifier.cpp adds 100 more fixtures.
  MESSAGE("generated property cases: " << generated_cases);
  CHECK(generated_cases + 100 >= 1000);
}

TEST_SUITE_END();
