// ltgcd command-line front end.
//
// Every subcommand writes JSON into --out and prints a one-line JSON summary
// on stdout. Failures print {"error": ...} on stderr and exit non-zero.

#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "ltgcd/classifier.hpp"
#include "ltgcd/estimation.hpp"
#include "ltgcd/evaluation.hpp"
#include "ltgcd/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ltgcd;

namespace {

/// Reads JSON config files: top-level keys are global flags, objects named
/// after a subcommand hold that subcommand's flags (long names, no dashes).
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    throw CLI::ConfigError("writing JSON configs is not supported");
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("malformed JSON config: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("JSON config must be an object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const json& j, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto next = parents;
        next.push_back(key);
        flatten(value, next, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array())
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(value));
      out.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out = ".";
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

fs::path out_dir(const Globals& g) {
  fs::path dir(g.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

// Class count from the manifest, else from the largest known label.
std::size_t class_count(const Dataset& ds) {
  if (ds.num_classes > 0) return ds.num_classes;
  int top = -1;
  for (int l : ds.labels.labels) top = std::max(top, l);
  if (ds.labels.true_labels)
    for (int l : *ds.labels.true_labels) top = std::max(top, l);
  if (top < 1) throw Error("cannot infer the class count; pass --classes");
  return static_cast<std::size_t>(top) + 1;
}

ProbMatrix checkpoint_probs(const Dataset& ds, const std::string& checkpoint) {
  const PrototypeSet p = load_checkpoint(checkpoint);
  return predict_all(ds.embeddings, p, p.tau_t);
}

DensityMode parse_mode(const std::string& s) {
  return s == "affinity" ? DensityMode::kAffinityOnly : DensityMode::kConnectivityAffinity;
}

NmdsRule parse_rule(const std::string& s) {
  return s == "literal" ? NmdsRule::kLiteral : NmdsRule::kKeepMaximum;
}

// Selection flags shared by select and train.
struct SelectionFlags {
  SelectionConfig config;
  bool no_conf = false;
  bool no_dens = false;
  bool no_nmds = false;
  bool raw_counts = false;
  std::optional<double> crest_power;
  std::string rule = "keep-max";

  void add(CLI::App* cmd) {
    cmd->add_option("--eps-conf", config.eps_conf, "confidence threshold")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    cmd->add_option("--k", config.k, "density neighbors")->capture_default_str();
    cmd->add_option("--ks", config.k_s, "IoUK neighbors")->capture_default_str();
    cmd->add_option("--lambda-nmds", config.lambda_nmds, "NMDS overlap threshold")
        ->capture_default_str();
    cmd->add_option("--crest-power", crest_power, "per-class thresholds scaled by frequency^power");
    cmd->add_option("--nmds-rule", rule, "keep-max or literal")
        ->check(CLI::IsMember({"keep-max", "literal"}))
        ->capture_default_str();
    cmd->add_flag("--no-conf", no_conf, "drop the confidence subset");
    cmd->add_flag("--no-dens", no_dens, "drop the density subset");
    cmd->add_flag("--no-nmds", no_nmds, "keep every unlabelled peak");
    cmd->add_flag("--raw-prior-counts", raw_counts, "softmax over raw pseudo-label counts");
  }

  SelectionConfig resolve() const {
    SelectionConfig c = config;
    c.use_confidence = !no_conf;
    c.use_density = !no_dens;
    c.use_nmds = !no_nmds;
    c.normalize_prior_counts = !raw_counts;
    c.crest_power = crest_power;
    c.nmds_rule = parse_rule(rule);
    c.validate();
    return c;
  }
};

json synth(const Globals& g, const SyntheticSpec& spec_in, double frac_old, double frac_lab,
           const std::string& stem) {
  SyntheticSpec spec = spec_in;
  spec.seed = g.seed;
  Dataset ds = generate_synthetic(spec);
  LabelInfo split = split_labelled(*ds.labels.true_labels, frac_old, frac_lab, g.seed);
  ds.labels = split;
  const auto manifest = save_dataset(ds, out_dir(g), stem);
  const ClassCounts counts = count_classes(*ds.labels.true_labels);
  return {{"manifest", manifest.string()},
          {"n", ds.embeddings.size()},
          {"d", ds.embeddings.dim()},
          {"counts", counts.counts},
          {"imbalance", imbalance_factor(counts)},
          {"old_classes", ds.labels.old_classes},
          {"labelled", ds.labels.labelled_ids().size()}};
}

json knn(const Globals& g, const std::string& manifest, std::size_t k) {
  const Dataset ds = load_dataset(manifest);
  const KnnGraph graph = build_knn(ds.embeddings, k);
  const fs::path path = out_dir(g) / "knn.bin";
  write_graph_cache(graph, path);
  return {{"n", graph.size()}, {"k", graph.k()}, {"graph", path.string()}};
}

json density(const Globals& g, const std::string& manifest, std::size_t k, const std::string& mode_name,
             const std::string& checkpoint, bool strict) {
  const Dataset ds = load_dataset(manifest);
  const DensityMode mode = parse_mode(mode_name);
  std::optional<ProbMatrix> probs;
  if (mode == DensityMode::kConnectivityAffinity) {
    if (checkpoint.empty()) throw Error("connectivity density needs --checkpoint");
    probs = checkpoint_probs(ds, checkpoint);
  }
  const KnnGraph graph = build_knn(ds.embeddings, k);
  const DensityMap map = compute_density(graph, probs ? &*probs : nullptr, mode);
  const IdList peaks = find_peaks(map, graph, strict);
  json out = to_json(map);
  out["peaks"] = peaks;
  out["strict"] = strict;
  const fs::path path = out_dir(g) / "density.json";
  write_json(path, out);
  return {{"n", map.densities.size()}, {"peaks", peaks.size()}, {"output", path.string()}};
}

json select(const Globals& g, const std::string& manifest, const std::string& checkpoint,
            const SelectionConfig& config, std::size_t epoch) {
  const Dataset ds = load_dataset(manifest);
  const ProbMatrix probs = checkpoint_probs(ds, checkpoint);
  const SelectionContext context(ds.embeddings, config.k, config.k_s);
  const IdList unlabelled = ds.labels.unlabelled_ids();
  const SelectionResult r = resample_epoch(context, probs, unlabelled, config, epoch);
  const fs::path path = out_dir(g) / "selection.json";
  write_json(path, to_json(r));
  json summary = {{"S_conf", r.conf_ids.size()},
                  {"S_dens", r.dens_ids.size()},
                  {"S", r.union_ids.size()},
                  {"fallback", r.fallback},
                  {"output", path.string()}};
  if (ds.labels.true_labels) {
    const auto& truth = *ds.labels.true_labels;
    if (!r.dens_ids.empty()) summary["lambda_S_dens"] = subset_imbalance(truth, r.dens_ids);
    if (!r.conf_ids.empty()) summary["lambda_S_conf"] = subset_imbalance(truth, r.conf_ids);
    if (!r.union_ids.empty()) summary["lambda_S"] = subset_imbalance(truth, r.union_ids);
  }
  return summary;
}

// Evaluation over the unlabelled samples (all samples when none are unlabelled).
EvalReport evaluate(std::span<const int> pred, const Dataset& ds, const SelectionResult* selection,
                    const std::string& subset) {
  if (!ds.labels.true_labels) throw Error("evaluation needs ground-truth labels in the manifest");
  const auto& truth = *ds.labels.true_labels;
  if (pred.size() != truth.size())
    throw Error("prediction count " + std::to_string(pred.size()) + " does not match " +
                std::to_string(truth.size()) + " samples");
  IdList ids = ds.labels.unlabelled_ids();
  if (ids.empty()) {
    ids.resize(truth.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  }
  std::vector<int> p, y;
  for (SampleId i : ids) {
    p.push_back(pred[i]);
    y.push_back(truth[i]);
  }
  std::optional<IdList> positions;
  if (selection) {
    const IdList& chosen = subset == "conf"   ? selection->conf_ids
                           : subset == "dens" ? selection->dens_ids
                                              : selection->union_ids;
    positions.emplace();
    for (SampleId id : chosen) {
      auto it = std::lower_bound(ids.begin(), ids.end(), id);
      if (it == ids.end() || *it != id) throw Error("selected id " + std::to_string(id) + " is not evaluated");
      positions->push_back(static_cast<SampleId>(it - ids.begin()));
    }
  }
  if (positions && positions->empty()) positions.reset();
  return gcd_report(p, y, ds.labels.old_classes,
                    positions ? std::optional<std::span<const SampleId>>(*positions) : std::nullopt);
}

struct TrainFlags {
  TrainConfig config;
  std::size_t classes = 0;
  bool no_selection = false;
  bool no_prior = false;
};

json train_cmd(const Globals& g, const std::string& manifest, TrainFlags flags,
               const SelectionConfig& selection) {
  const Dataset ds = load_dataset(manifest);
  TrainConfig config = flags.config;
  config.classes = flags.classes > 0 ? flags.classes : class_count(ds);
  config.use_selection = !flags.no_selection;
  config.weights.use_prior = !flags.no_prior;
  config.selection = selection;
  config.validate();

  const TrainResult r = train(ds.embeddings, ds.labels, config, g.seed);
  const fs::path dir = out_dir(g);
  {
    std::string lines;
    for (const auto& s : r.stats) lines += to_json(s).dump() + '\n';
    write_text(dir / "stats.jsonl", lines);
  }
  save_checkpoint(r.prototypes, config.epochs, dir / "checkpoint.bin");
  write_json(dir / "selection.json", to_json(r.selection));
  const std::vector<int> pred = predict_labels(ds.embeddings, r.prototypes);
  write_label_file(dir / "predictions.txt", pred);

  json summary = {{"epochs", r.stats.size()},
                  {"classes", config.classes},
                  {"checkpoint", (dir / "checkpoint.bin").string()},
                  {"stats", (dir / "stats.jsonl").string()},
                  {"predictions", (dir / "predictions.txt").string()}};
  if (!r.stats.empty()) summary["final"] = to_json(r.stats.back());
  if (ds.labels.true_labels) {
    const EvalReport report = evaluate(pred, ds, &r.selection, "union");
    write_json(dir / "report.json", to_json(report));
    summary["acc_all"] = report.acc_all;
    summary["balanced_acc"] = report.balanced_acc;
    summary["report"] = (dir / "report.json").string();
  }
  return summary;
}

json estimate_cmd(const Globals& g, const std::string& manifest, const EstimationConfig& config,
                  const std::string& checkpoint, bool with_assignments) {
  const Dataset ds = load_dataset(manifest);
  std::optional<ProbMatrix> probs;
  if (!checkpoint.empty()) probs = checkpoint_probs(ds, checkpoint);
  const EstimationReport r = estimate_k(ds.embeddings, ds.labels, probs ? &*probs : nullptr, config);
  const fs::path dir = out_dir(g);
  json report = to_json(r, with_assignments);
  // Wall-clock timings would break byte-identical reruns; they go to a sidecar.
  const json timings = report["timings"];
  report.erase("timings");
  write_json(dir / "estimate.json", report);
  write_json(dir / "estimate.timings.json", timings);
  write_text(dir / "probes.csv", probes_csv(r.probes));
  return {{"k_hat", r.k_hat},
          {"lower", r.lower},
          {"upper", r.upper},
          {"exhaustive", r.exhaustive},
          {"probes", r.probes.size()},
          {"timings", timings},
          {"output", (dir / "estimate.json").string()},
          {"csv", (dir / "probes.csv").string()}};
}

json eval_cmd(const Globals& g, const std::string& pred_path, const std::string& manifest,
              const std::string& selection_path, const std::string& subset) {
  const Dataset ds = load_dataset(manifest);
  const std::vector<int> pred = read_label_file(pred_path);
  std::optional<SelectionResult> selection;
  if (!selection_path.empty()) {
    std::ifstream in(selection_path);
    if (!in) throw Error("cannot open " + selection_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw Error("malformed selection file: " + std::string(e.what()));
    }
    selection = selection_from_json(j);
  }
  const EvalReport report = evaluate(pred, ds, selection ? &*selection : nullptr, subset);
  const fs::path path = out_dir(g) / "eval.json";
  const json j = to_json(report);
  write_json(path, j);
  json summary = {{"acc_all", report.acc_all}, {"balanced_acc", report.balanced_acc}, {"output", path.string()}};
  if (report.acc_old) summary["acc_old"] = *report.acc_old;
  if (report.acc_new) summary["acc_new"] = *report.acc_new;
  if (report.lambda_selected) summary["lambda_selected"] = *report.lambda_selected;
  return summary;
}

void print_error(const std::string& command, const std::string& message) {
  std::cerr << json{{"error", message}, {"command", command}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed generalized category discovery toolkit", "ltgcd"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file (flags override it)");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Globals g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "OpenMP threads (0 = runtime default)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--out", g.out, "output directory")->capture_default_str();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a long-tailed Gaussian mixture");
  SyntheticSpec spec;
  double frac_old = 0.5, frac_lab = 0.5;
  std::string stem = "synth";
  synth_cmd->add_option("--classes", spec.classes)->check(CLI::Range(2, 100000))->capture_default_str();
  synth_cmd->add_option("--dim", spec.dim)->check(CLI::Range(2, 100000))->capture_default_str();
  synth_cmd->add_option("--imbalance", spec.imbalance, "head/tail ratio (>= 1)")
      ->check(CLI::Range(1.0, 1e9))
      ->capture_default_str();
  synth_cmd->add_option("--head", spec.head_count, "samples in the largest class")->capture_default_str();
  synth_cmd->add_option("--spread", spec.spread, "intra-class Gaussian std-dev")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth_cmd->add_option("--frac-old", frac_old, "share of classes that are labelled")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth_cmd->add_option("--frac-labelled", frac_lab, "labelled share of each old class")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth_cmd->add_option("--stem", stem, "output file stem")->capture_default_str();

  // knn
  auto* knn_cmd = app.add_subcommand("knn", "build and cache the k-NN graph");
  std::string manifest;
  std::size_t knn_k = 10;
  knn_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  knn_cmd->add_option("--k", knn_k)->capture_default_str();

  // density
  auto* dens_cmd = app.add_subcommand("density", "per-sample density and raw peaks");
  std::size_t dens_k = 10;
  std::string mode = "connectivity", checkpoint;
  bool strict = false;
  dens_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  dens_cmd->add_option("--k", dens_k)->capture_default_str();
  dens_cmd->add_option("--mode", mode)->check(CLI::IsMember({"connectivity", "affinity"}))->capture_default_str();
  dens_cmd->add_option("--checkpoint", checkpoint, "prototypes supplying the probabilities")
      ->check(CLI::ExistingFile);
  dens_cmd->add_flag("--strict", strict, "strict peak inequality");

  // select
  auto* sel_cmd = app.add_subcommand("select", "one reliable-sample selection round");
  SelectionFlags sel_flags;
  std::size_t sel_epoch = 0;
  sel_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  sel_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  sel_cmd->add_option("--epoch", sel_epoch)->capture_default_str();
  sel_flags.add(sel_cmd);

  // train
  auto* train_sub = app.add_subcommand("train", "train the prototype classifier");
  TrainFlags tf;
  SelectionFlags train_sel;
  train_sub->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  train_sub->add_option("--classes", tf.classes, "total classes (default: from the manifest)");
  train_sub->add_option("--epochs", tf.config.epochs)->capture_default_str();
  train_sub->add_option("--lr", tf.config.learning_rate)->check(CLI::PositiveNumber)->capture_default_str();
  train_sub->add_option("--batch-size", tf.config.batch_size)->capture_default_str();
  train_sub->add_option("--tau-s", tf.config.tau_s)->check(CLI::PositiveNumber)->capture_default_str();
  train_sub->add_option("--tau-t", tf.config.tau_t)->check(CLI::PositiveNumber)->capture_default_str();
  train_sub->add_option("--lambda-cls", tf.config.weights.lambda_cls)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  train_sub->add_option("--eps-entropy", tf.config.weights.eps_entropy)->check(CLI::NonNegativeNumber)->capture_default_str();
  train_sub->add_option("--lambda-rep", tf.config.lambda_rep)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  train_sub->add_option("--rep-temperature", tf.config.rep_temperature)->check(CLI::PositiveNumber)->capture_default_str();
  train_sub->add_option("--view-noise", tf.config.view_noise)->check(CLI::NonNegativeNumber)->capture_default_str();
  train_sub->add_option("--claim-cosine", tf.config.claim_cosine)->capture_default_str();
  train_sub->add_flag("--no-selection", tf.no_selection, "draw unlabelled batches from all of D^u");
  train_sub->add_flag("--no-prior", tf.no_prior, "disable the prior loss");
  train_sel.add(train_sub);

  // estimate-k
  auto* est_cmd = app.add_subcommand("estimate-k", "estimate the total number of classes");
  EstimationConfig est;
  std::string clustering = "merged", est_rule = "keep-max";
  bool with_assignments = false;
  est_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  est_cmd->add_option("--k", est.k)->capture_default_str();
  est_cmd->add_option("--ks", est.k_s)->capture_default_str();
  est_cmd->add_option("--lambda-nmds", est.lambda_nmds)->capture_default_str();
  est_cmd->add_option("--tolerance", est.brent_tolerance)->capture_default_str();
  est_cmd->add_option("--exhaustive-cutoff", est.exhaustive_cutoff)->capture_default_str();
  est_cmd->add_option("--clustering", clustering, "merged or top-density")
      ->check(CLI::IsMember({"merged", "top-density"}))
      ->capture_default_str();
  est_cmd->add_option("--nmds-rule", est_rule)->check(CLI::IsMember({"keep-max", "literal"}))->capture_default_str();
  est_cmd->add_option("--checkpoint", checkpoint, "prototypes for connectivity density")
      ->check(CLI::ExistingFile);
  est_cmd->add_flag("--strict", est.strict_peaks, "strict peak inequality");
  est_cmd->add_flag("--assignments", with_assignments, "include per-sample assignments");

  // eval
  auto* eval_sub = app.add_subcommand("eval", "score predictions against the ground truth");
  std::string pred_path, selection_path, subset = "union";
  eval_sub->add_option("--pred", pred_path, "newline-delimited predicted cluster ids")
      ->required()
      ->check(CLI::ExistingFile);
  eval_sub->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  eval_sub->add_option("--selection", selection_path, "selection.json for the subset imbalance")
      ->check(CLI::ExistingFile);
  eval_sub->add_option("--subset", subset)->check(CLI::IsMember({"conf", "dens", "union"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("", e.what());
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  const CLI::App* active = app.get_subcommands().front();
  const std::string name = active->get_name();
  try {
    if (g.threads > 0) omp_set_num_threads(g.threads);
    json summary;
    if (active == synth_cmd) {
      summary = synth(g, spec, frac_old, frac_lab, stem);
    } else if (active == knn_cmd) {
      summary = knn(g, manifest, knn_k);
    } else if (active == dens_cmd) {
      summary = density(g, manifest, dens_k, mode, checkpoint, strict);
    } else if (active == sel_cmd) {
      summary = select(g, manifest, checkpoint, sel_flags.resolve(), sel_epoch);
    } else if (active == train_sub) {
      summary = train_cmd(g, manifest, tf, train_sel.resolve());
    } else if (active == est_cmd) {
      est.clustering = clustering == "top-density" ? PeakClustering::kTopDensity : PeakClustering::kMergedPeaks;
      est.nmds_rule = parse_rule(est_rule);
      summary = estimate_cmd(g, manifest, est, checkpoint, with_assignments);
    } else {
      summary = eval_cmd(g, pred_path, manifest, selection_path, subset);
    }
    std::cout << summary.dump() << std::endl;
  } catch (const std::exception& e) {
    print_error(name, e.what());
    return 1;
  }
  return 0;
}
