#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "feddap/federation.hpp"

namespace feddap {

/// Shortest round-trip decimal rendering; the one formatter used for every
/// real that lands in a CSV, so reruns are byte-comparable.
std::string render_real(double v);

nlohmann::json mat_to_json(const Mat& m);
Mat mat_from_json(const nlohmann::json& j);

nlohmann::json model_to_json(const ModelParams& params);
ModelParams model_from_json(const nlohmann::json& j);

/// Header: round,strategy,domain,accuracy,ce,dpa,cpcl,total. Empty cells
/// mean "not measured at this round".
std::string render_metrics_csv(const std::vector<MetricsRow>& rows);

nlohmann::json summary_json(const ExperimentResult& result);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

/// Everything about a run except its results: effective config, hash,
/// version, outputs, wall time, timestamp. Timestamps live only here so the
/// data artifacts stay byte-stable.
nlohmann::json manifest_json(const ExperimentResult& result,
                             const std::vector<std::string>& outputs,
                             double wall_seconds);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace feddap
