#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace routelab {

// Aligned plain-text table. The first column is left-aligned, the rest are
// right-aligned.
std::string format_table(const std::vector<std::string>& headers,
                         const std::vector<std::vector<std::string>>& rows, const std::string& title = {});

std::string format_percent(double fraction, int decimals = 1);
std::string format_fixed(double value, int decimals = 2);

// The builders below consume the JSON documents emitted by the analyses.

// Per-layer probe rows from a probe report.
std::string probe_table(const nlohmann::json& probe_report);
// Layer-band summary.
std::string band_table(const nlohmann::json& band_summary);
// Depth-band rows x models from {"model": cosine series, ...}; cells average
// the point cosines of the layers falling in each band.
std::string depth_cosine_table(const nlohmann::json& series_by_model, int n_bands = 5);
// Rows {"model_id", "n", "baseline_refusal_rate", "max_control_delta_pp"}.
std::string control_delta_table(const nlohmann::json& rows);
// Rows {"model_id", "steering": steering summary}.
std::string steering_table(const nlohmann::json& rows);
// Rows {"model_id", "refusal": rate, "steering": steering summary}.
std::string refusal_steering_table(const nlohmann::json& rows);
// Agreement report: fine/coarse agreement and per-judge category rates.
std::string agreement_table(const nlohmann::json& agreement);
// Alpha sweep grid: layers x alphas of refusal rates.
std::string sweep_table(const nlohmann::json& grid);
// Clean alpha selection: per-layer selected alpha and held-out refusals.
std::string alpha_select_table(const nlohmann::json& report);

}  // namespace routelab
