#include "ltgcd/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace ltgcd {

namespace fs = std::filesystem;

EmbeddingSet::EmbeddingSet(Matrix data) : data_(std::move(data)) {
  if (data_.rows < 1) throw Error("embedding set must contain at least one sample");
  if (data_.cols < 2) throw Error("embedding dimension must be at least 2");
  for (std::size_t i = 0; i < data_.rows; ++i) {
    auto r = data_.row(i);
    for (double v : r)
      if (!std::isfinite(v)) throw Error("non-finite value in row " + std::to_string(i));
    if (!normalize_in_place(r))
      throw Error("zero-norm row " + std::to_string(i) + " cannot be normalized");
  }
}

EmbeddingSet EmbeddingSet::subset(std::span<const SampleId> ids) const {
  Matrix m(ids.size(), dim());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= size()) throw Error("subset id out of range");
    std::copy_n(row(ids[r]).begin(), dim(), m.row(r).begin());
  }
  return EmbeddingSet(std::move(m));
}

bool LabelInfo::is_old_class(int c) const {
  return std::binary_search(old_classes.begin(), old_classes.end(), c);
}

IdList LabelInfo::labelled_ids() const {
  IdList ids;
  for (SampleId i = 0; i < labels.size(); ++i)
    if (labels[i] != kUnlabelled) ids.push_back(i);
  return ids;
}

IdList LabelInfo::unlabelled_ids() const {
  IdList ids;
  for (SampleId i = 0; i < labels.size(); ++i)
    if (labels[i] == kUnlabelled) ids.push_back(i);
  return ids;
}

void LabelInfo::validate(std::size_t n) const {
  if (labels.size() != n)
    throw Error("label count mismatch: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(n) + " samples");
  if (!std::is_sorted(old_classes.begin(), old_classes.end()) ||
      std::adjacent_find(old_classes.begin(), old_classes.end()) != old_classes.end())
    throw Error("old class set must be sorted and distinct");
  for (int l : labels) {
    if (l == kUnlabelled) continue;
    if (l < 0) throw Error("negative label id " + std::to_string(l));
    if (!is_old_class(l)) throw Error("labelled sample outside the old class set");
  }
  if (true_labels && true_labels->size() != n)
    throw Error("true label count mismatch");
}

std::size_t ClassCounts::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

ClassCounts count_classes(std::span<const int> labels) {
  std::map<int, std::size_t> tally;
  for (int l : labels) {
    if (l < 0) throw Error("count_classes: negative label");
    ++tally[l];
  }
  ClassCounts out;
  for (const auto& [_, c] : tally) out.counts.push_back(c);
  std::sort(out.counts.begin(), out.counts.end(), std::greater<>());
  return out;
}

double imbalance_factor(const ClassCounts& counts) {
  if (counts.counts.empty()) throw Error("imbalance_factor: empty counts");
  const auto [lo, hi] = std::minmax_element(counts.counts.begin(), counts.counts.end());
  if (*lo == 0) throw Error("imbalance_factor: zero class count");
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

std::vector<std::size_t> long_tail_counts(std::size_t classes, double imbalance,
                                          std::size_t head_count) {
  if (classes < 2) throw Error("synthetic data needs at least 2 classes");
  if (!(imbalance >= 1.0)) throw Error("imbalance factor must be >= 1");
  if (head_count < classes) throw Error("head count must be at least the class count");
  std::vector<std::size_t> counts(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    const double exponent = -static_cast<double>(k) / static_cast<double>(classes - 1);
    counts[k] = static_cast<std::size_t>(
        std::llround(static_cast<double>(head_count) * std::pow(imbalance, exponent)));
  }
  if (counts.back() == 0) throw Error("imbalance too large: tail class rounds to zero samples");
  return counts;
}

namespace {

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  do {
    for (double& x : v) x = gauss(rng);
  } while (!normalize_in_place(v));
  return v;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (!(spec.spread > 0.0)) throw Error("intra-class spread must be positive");
  if (spec.dim < 2) throw Error("dimension must be at least 2");
  const auto counts = long_tail_counts(spec.classes, spec.imbalance, spec.head_count);

  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<double>> means;
  constexpr int kMaxAttempts = 100000;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    int attempts = 0;
    while (true) {
      auto candidate = random_unit(rng, spec.dim);
      const bool separated = std::all_of(means.begin(), means.end(), [&](const auto& m) {
        return dot(candidate, m) < spec.max_mean_cosine;
      });
      if (separated) {
        means.push_back(std::move(candidate));
        break;
      }
      if (++attempts > kMaxAttempts) throw Error("could not place separated class means");
    }
  }

  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  Matrix data(n, spec.dim);
  std::vector<int> truth(n);
  std::normal_distribution<double> gauss(0.0, spec.spread);
  std::size_t r = 0;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (std::size_t s = 0; s < counts[k]; ++s, ++r) {
      auto row = data.row(r);
      for (std::size_t j = 0; j < spec.dim; ++j) row[j] = means[k][j] + gauss(rng);
      truth[r] = static_cast<int>(k);
    }
  }

  Dataset out;
  out.embeddings = EmbeddingSet(std::move(data));
  out.labels.labels.assign(n, kUnlabelled);
  out.labels.true_labels = std::move(truth);
  out.num_classes = spec.classes;
  return out;
}

LabelInfo split_labelled(std::span<const int> true_labels, double frac_old_classes,
                         double frac_labelled, std::uint64_t seed) {
  if (!(frac_old_classes > 0.0 && frac_old_classes <= 1.0) ||
      !(frac_labelled > 0.0 && frac_labelled <= 1.0))
    throw Error("split fractions must lie in (0, 1]");

  // Re-index classes by descending size (ties: lower original id first).
  std::map<int, std::size_t> tally;
  for (int l : true_labels) {
    if (l < 0) throw Error("ground-truth labels must be non-negative");
    ++tally[l];
  }
  std::vector<std::pair<int, std::size_t>> order(tally.begin(), tally.end());
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::map<int, int> remap;
  for (std::size_t k = 0; k < order.size(); ++k) remap[order[k].first] = static_cast<int>(k);

  const std::size_t num_classes = order.size();
  const auto num_old = static_cast<std::size_t>(
      std::ceil(frac_old_classes * static_cast<double>(num_classes) - 1e-9));

  LabelInfo info;
  std::vector<int> truth(true_labels.size());
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = remap[true_labels[i]];
  info.labels.assign(truth.size(), kUnlabelled);

  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < num_old; ++c) {
    IdList members;
    for (SampleId i = 0; i < truth.size(); ++i)
      if (truth[i] == static_cast<int>(c)) members.push_back(i);
    const auto take = static_cast<std::size_t>(
        std::llround(frac_labelled * static_cast<double>(members.size())));
    if (take == 0)
      throw Error("old class " + std::to_string(c) + " would receive no labelled samples");
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t s = 0; s < take; ++s) info.labels[members[s]] = static_cast<int>(c);
    info.old_classes.push_back(static_cast<int>(c));
  }
  info.true_labels = std::move(truth);
  return info;
}

std::vector<int> read_label_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open label file " + path.string());
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    long long v = 0;
    if (!(ss >> v)) throw Error("malformed label line '" + line + "' in " + path.string());
    labels.push_back(static_cast<int>(v));
  }
  return labels;
}

void write_label_file(const fs::path& path, std::span<const int> labels) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (int l : labels) out << l << '\n';
}

namespace {

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path candidate(p);
  return candidate.is_absolute() ? candidate : base / candidate;
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest: " + std::string(e.what()));
  }
  for (const char* key : {"n", "d", "data", "labels"})
    if (!manifest.contains(key)) throw Error(std::string("manifest missing field '") + key + "'");
  if (manifest.value("dtype", std::string("f32")) != "f32")
    throw Error("unsupported dtype; only f32 is accepted");

  const auto n = manifest.at("n").get<std::size_t>();
  const auto d = manifest.at("d").get<std::size_t>();
  const fs::path base = manifest_path.parent_path();
  const fs::path data_path = resolve(base, manifest.at("data").get<std::string>());

  std::ifstream data_in(data_path, std::ios::binary);
  if (!data_in) throw Error("cannot open data file " + data_path.string());
  const auto bytes = fs::file_size(data_path);
  if (bytes != n * d * sizeof(float))
    throw Error("shape mismatch: declared " + std::to_string(n) + "x" + std::to_string(d) +
                " but data file holds " + std::to_string(bytes) + " bytes");
  std::vector<std::uint32_t> raw(n * d);
  data_in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  Matrix m(n, d);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::uint32_t bits = to_little_endian(raw[i]);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    m.values[i] = f;
  }

  Dataset out;
  out.embeddings = EmbeddingSet(std::move(m));
  out.num_classes = manifest.value("classes", std::size_t{0});

  auto labels = read_label_file(resolve(base, manifest.at("labels").get<std::string>()));
  if (labels.size() != n)
    throw Error("label count mismatch: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(n) + " samples");
  std::vector<int> old;
  for (int l : labels) {
    if (l < kUnlabelled) throw Error("invalid label id " + std::to_string(l));
    if (out.num_classes > 0 && l >= static_cast<int>(out.num_classes))
      throw Error("label id " + std::to_string(l) + " exceeds declared class count");
    if (l != kUnlabelled) old.push_back(l);
  }
  std::sort(old.begin(), old.end());
  old.erase(std::unique(old.begin(), old.end()), old.end());
  out.labels.labels = std::move(labels);
  out.labels.old_classes = std::move(old);

  if (manifest.contains("true_labels") && !manifest.at("true_labels").is_null()) {
    auto truth = read_label_file(resolve(base, manifest.at("true_labels").get<std::string>()));
    if (truth.size() != n) throw Error("true label count mismatch");
    for (int l : truth) {
      if (l < 0) throw Error("ground-truth labels must be non-negative");
      if (out.num_classes > 0 && l >= static_cast<int>(out.num_classes))
        throw Error("true label id " + std::to_string(l) + " exceeds declared class count");
    }
    out.labels.true_labels = std::move(truth);
  }
  out.labels.validate(n);
  return out;
}

fs::path save_dataset(const Dataset& dataset, const fs::path& dir, const std::string& stem) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const std::size_t n = dataset.embeddings.size();
  const std::size_t d = dataset.embeddings.dim();

  const fs::path data_path = dir / (stem + ".f32");
  {
    std::ofstream out(data_path, std::ios::binary);
    if (!out) throw Error("cannot write " + data_path.string());
    std::vector<std::uint32_t> raw(n * d);
    const auto& values = dataset.embeddings.matrix().values;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const auto f = static_cast<float>(values[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof f);
      raw[i] = to_little_endian(bits);
    }
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));
    if (!out) throw Error("failed writing " + data_path.string());
  }
  write_label_file(dir / (stem + ".labels"), dataset.labels.labels);

  nlohmann::json manifest = {{"n", n},
                             {"d", d},
                             {"dtype", "f32"},
                             {"data", stem + ".f32"},
                             {"labels", stem + ".labels"}};
  if (dataset.num_classes > 0) manifest["classes"] = dataset.num_classes;
  if (dataset.labels.true_labels) {
    write_label_file(dir / (stem + ".truth"), *dataset.labels.true_labels);
    manifest["true_labels"] = stem + ".truth";
  }
  const fs::path manifest_path = dir / (stem + ".json");
  std::ofstream out(manifest_path);
  if (!out) throw Error("cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
  return manifest_path;
}

}  // namespace ltgcd
