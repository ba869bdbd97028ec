#pragma once

#include "json.hpp"

#include "ltgcd/classifier.hpp"
#include "ltgcd/estimation.hpp"
#include "ltgcd/evaluation.hpp"

namespace ltgcd {

nlohmann::json to_json(const SelectionResult& selection);
SelectionResult selection_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EpochStats& stats);
nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const EstimationReport& report, bool with_assignments = false);
nlohmann::json to_json(const DensityMap& density);
nlohmann::json to_json(const PeakSet& peaks);
nlohmann::json to_json(const KnnGraph& graph);

/// "K,ACC" lines with a header row.
std::string probes_csv(std::span<const ProbePoint> probes);

}  // namespace ltgcd
