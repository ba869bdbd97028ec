#include "ltgcd/serialize.hpp"

#include <sstream>

namespace ltgcd {

using nlohmann::json;

namespace {

template <typename T>
json optional_field(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

json int_map(const std::map<int, double>& m) {
  json out = json::object();
  for (const auto& [k, v] : m) out[std::to_string(k)] = v;
  return out;
}

}  // namespace

json to_json(const SelectionResult& s) {
  return {{"epoch", s.epoch},       {"conf_ids", s.conf_ids}, {"dens_ids", s.dens_ids},
          {"union_ids", s.union_ids}, {"prior", s.prior},     {"fallback", s.fallback}};
}

SelectionResult selection_from_json(const json& j) {
  SelectionResult s;
  s.epoch = j.at("epoch").get<std::size_t>();
  s.conf_ids = j.at("conf_ids").get<IdList>();
  s.dens_ids = j.at("dens_ids").get<IdList>();
  s.union_ids = j.at("union_ids").get<IdList>();
  s.prior = j.at("prior").get<std::vector<double>>();
  s.fallback = j.at("fallback").get<bool>();
  return s;
}

json to_json(const EpochStats& s) {
  return {{"epoch", s.epoch},
          {"lr", s.learning_rate},
          {"loss_sup", s.loss_sup},
          {"loss_unsup", s.loss_unsup},
          {"loss_prior", s.loss_prior},
          {"loss_rep", s.loss_rep},
          {"S_conf", s.conf_size},
          {"S_dens", s.dens_size},
          {"S", s.union_size},
          {"clamp_events", s.clamp_events},
          {"fallback", s.fallback}};
}

json to_json(const EvalReport& r) {
  json matching = json::object();
  for (const auto& [cluster, cls] : r.matching) matching[std::to_string(cluster)] = cls;
  return {{"acc_all", r.acc_all},
          {"acc_old", optional_field(r.acc_old)},
          {"acc_new", optional_field(r.acc_new)},
          {"balanced_acc", r.balanced_acc},
          {"balanced_old", optional_field(r.balanced_old)},
          {"balanced_new", optional_field(r.balanced_new)},
          {"per_class_acc", int_map(r.per_class_acc)},
          {"matching", matching},
          {"lambda_selected", optional_field(r.lambda_selected)}};
}

json to_json(const EstimationReport& r, bool with_assignments) {
  json probes = json::array();
  for (const auto& p : r.probes) probes.push_back({{"k", p.k}, {"acc", p.acc}, {"gap", p.gap}});
  json out = {{"k_hat", r.k_hat},
              {"lower", r.lower},
              {"upper", r.upper},
              {"exhaustive", r.exhaustive},
              {"probes", probes},
              {"peaks", to_json(r.peaks)},
              {"timings",
               {{"graph_seconds", r.timings.graph_seconds},
                {"peaks_seconds", r.timings.peaks_seconds},
                {"probe_seconds", r.timings.probe_seconds}}}};
  if (with_assignments) out["assignments"] = r.assignments;
  return out;
}

json to_json(const DensityMap& d) {
  return {{"k", d.k},
          {"mode", d.mode == DensityMode::kAffinityOnly ? "affinity" : "connectivity"},
          {"densities", d.densities}};
}

json to_json(const PeakSet& p) {
  return {{"peak_ids", p.peak_ids},
          {"densities", p.densities},
          {"k_s", p.k_s},
          {"lambda_nmds", p.lambda_nmds}};
}

json to_json(const KnnGraph& g) {
  json neighbors = json::array(), affinities = json::array();
  for (SampleId i = 0; i < g.size(); ++i) {
    neighbors.push_back(std::vector<std::uint32_t>(g.neighbors(i).begin(), g.neighbors(i).end()));
    affinities.push_back(std::vector<double>(g.affinities(i).begin(), g.affinities(i).end()));
  }
  return {{"k", g.k()}, {"neighbors", neighbors}, {"affinities", affinities}};
}

std::string probes_csv(std::span<const ProbePoint> probes) {
  std::ostringstream out;
  out << "K,ACC\n";
  for (const auto& p : probes) out << p.k << ',' << p.acc << '\n';
  return out.str();
}

}  // namespace ltgcd
