// Times the OpenMP kernels against their serial references.
// Usage: bench_kernels [n] [dim] [k] [repeats]

#include <omp.h>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <nlohmann/json.hpp>
#include <random>

#include "ltgcd/density.hpp"
#include "ltgcd/embedding.hpp"
#include "ltgcd/knn.hpp"

namespace {

template <typename F>
double best_seconds(int repeats, F&& f) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

ltgcd::ProbMatrix random_probs(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  ltgcd::ProbMatrix p{ltgcd::Matrix(n, k), 1.0};
  std::vector<double> l(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : l) v = 3.0 * gauss(rng);
    ltgcd::softmax(l, p.rows.row(i));
  }
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t n = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 5000;
  const std::size_t dim = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 64;
  const std::size_t k = argc > 3 ? std::strtoul(argv[3], nullptr, 10) : 10;
  const int repeats = argc > 4 ? std::atoi(argv[4]) : 3;
  const std::size_t k_s = 5;

  ltgcd::SyntheticSpec spec;
  spec.classes = 50;
  spec.dim = dim;
  spec.imbalance = 10.0;
  spec.head_count = spec.classes;
  auto total = [&] {
    std::size_t t = 0;
    for (auto c : ltgcd::long_tail_counts(spec.classes, spec.imbalance, spec.head_count)) t += c;
    return t;
  };
  while (total() < n) ++spec.head_count;
  spec.seed = 7;
  const auto data = ltgcd::generate_synthetic(spec);
  const auto& emb = data.embeddings;
  const auto probs = random_probs(emb.size(), spec.classes, 11);

  nlohmann::json out;
  out["n"] = emb.size();
  out["dim"] = dim;
  out["k"] = k;
  out["threads"] = omp_get_max_threads();
  out["repeats"] = repeats;

  auto row = [&](const char* name, double serial, double parallel, bool same) {
    out["kernels"][name] = {{"serial_s", serial},
                            {"parallel_s", parallel},
                            {"speedup", parallel > 0 ? serial / parallel : 0.0},
                            {"identical", same}};
  };

  ltgcd::KnnGraph gs, gp;
  const double knn_s = best_seconds(repeats, [&] { gs = ltgcd::build_knn_serial(emb, k); });
  const double knn_p = best_seconds(repeats, [&] { gp = ltgcd::build_knn(emb, k); });
  row("knn", knn_s, knn_p, gs == gp);

  const auto mode = ltgcd::DensityMode::kConnectivityAffinity;
  ltgcd::DensityMap ds, dp;
  const double den_s =
      best_seconds(repeats, [&] { ds = ltgcd::compute_density_serial(gp, &probs, mode); });
  const double den_p = best_seconds(repeats, [&] { dp = ltgcd::compute_density(gp, &probs, mode); });
  row("density", den_s, den_p, ds.densities == dp.densities);

  const ltgcd::NeighborSets sets(ltgcd::build_knn(emb, k_s), k_s);
  const auto peaks = ltgcd::find_peaks(dp, gp);
  const auto candidates = ltgcd::as_candidates(peaks, dp);
  ltgcd::PeakSet ns, np;
  const double nmds_s = best_seconds(repeats, [&] { ns = ltgcd::nmds_serial(candidates, sets, 0.6); });
  const double nmds_p = best_seconds(repeats, [&] { np = ltgcd::nmds(candidates, sets, 0.6); });
  row("nmds", nmds_s, nmds_p, ns.peak_ids == np.peak_ids);
  out["nmds_candidates"] = candidates.size();

  std::cout << out.dump(2) << "\n";
  return 0;
}
