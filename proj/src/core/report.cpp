#include "routelab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "routelab/error.hpp"

namespace routelab {

namespace {

const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    fail(ErrorCode::kInvalidArgument, std::string("report input lacks field '") + key + "'");
  }
  return j.at(key);
}

double number(const nlohmann::json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number()) fail(ErrorCode::kInvalidArgument, std::string("report field '") + key + "' is not a number");
  return v.get<double>();
}

double mean_of(const nlohmann::json& arr) {
  if (!arr.is_array() || arr.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& v : arr) s += v.get<double>();
  return s / static_cast<double>(arr.size());
}

std::string percent_or_dash(double v) { return std::isnan(v) ? "---" : format_percent(v); }

std::string steering_cell(const nlohmann::json& s) {
  const auto& m = field(s, "mean");
  return m.is_null() ? "---" : format_fixed(m.get<double>(), 2);
}

}  // namespace

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

std::string format_percent(double fraction, int decimals) { return format_fixed(fraction * 100.0, decimals) + "%"; }

std::string format_table(const std::vector<std::string>& headers, const std::vector<std::vector<std::string>>& rows,
                         const std::string& title) {
  std::vector<std::size_t> width(headers.size(), 0);
  for (std::size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
  for (const auto& row : rows) {
    if (row.size() != headers.size()) fail(ErrorCode::kInternal, "table row width differs from header");
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) out << "  ";
      const std::string pad(width[c] - cells[c].size(), ' ');
      out << (c == 0 ? cells[c] + pad : pad + cells[c]);
    }
    out << '\n';
  };
  if (!title.empty()) out << title << '\n';
  emit(headers);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : rows) emit(row);
  return out.str();
}

std::string probe_table(const nlohmann::json& report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& l : field(report, "layers")) {
    rows.push_back({std::to_string(field(l, "layer").get<int>()), format_percent(number(l, "train_accuracy")),
                    format_percent(number(l, "cv_mean")), percent_or_dash(mean_of(field(l, "permutation_train_accuracies"))),
                    percent_or_dash(mean_of(field(l, "permutation_cv_means")))});
  }
  const std::string title = "Probe (" + field(report, "fold_scheme").get<std::string>() +
                            ", lambda=" + format_fixed(number(report, "lambda"), 3) + ", n=" +
                            std::to_string(field(report, "n").get<std::size_t>()) + ")";
  return format_table({"Layer", "Train", "CV mean", "Perm train", "Perm CV"}, rows, title);
}

std::string band_table(const nlohmann::json& s) {
  std::string layers;
  for (const auto& l : field(s, "band_layers")) layers += (layers.empty() ? "" : ",") + std::to_string(l.get<int>());
  const std::vector<std::vector<std::string>> rows = {
      {"Band", format_percent(field(s, "band").at(0).get<double>(), 0) + "-" +
                   format_percent(field(s, "band").at(1).get<double>(), 0)},
      {"Band layers", layers},
      {"Band mean CV", format_percent(number(s, "band_mean_cv"))},
      {"Best layer", std::to_string(field(s, "best_layer").get<int>())},
      {"Best CV", format_percent(number(s, "best_cv"))},
      {"Gap", format_fixed(number(s, "gap_pp"), 1) + "pp"}};
  return format_table({"Summary", "Value"}, rows);
}

std::string depth_cosine_table(const nlohmann::json& series_by_model, int n_bands) {
  if (!series_by_model.is_object() || series_by_model.empty()) {
    fail(ErrorCode::kInvalidArgument, "depth table needs an object of model -> cosine series");
  }
  if (n_bands < 1) fail(ErrorCode::kInvalidArgument, "n_bands must be positive");
  std::vector<std::string> headers{"Depth"};
  std::vector<std::vector<std::vector<double>>> cells(static_cast<std::size_t>(n_bands));
  std::vector<std::map<int, bool>> band_layers(static_cast<std::size_t>(n_bands));
  for (auto& c : cells) c.resize(series_by_model.size());
  std::size_t m = 0;
  for (const auto& [model, series] : series_by_model.items()) {
    headers.push_back(model);
    for (const auto& e : field(series, "entries")) {
      const double depth = number(e, "normalized_depth");
      auto band = static_cast<std::size_t>(std::min(n_bands - 1, static_cast<int>(depth * n_bands)));
      cells[band][m].push_back(number(e, "point"));
      band_layers[band][field(e, "layer").get<int>()] = true;
    }
    ++m;
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t b = 0; b < cells.size(); ++b) {
    const int lo = static_cast<int>(std::lround(100.0 * static_cast<double>(b) / n_bands));
    const int hi = static_cast<int>(std::lround(100.0 * static_cast<double>(b + 1) / n_bands));
    std::string label = std::to_string(lo) + "-" + std::to_string(hi) + "%";
    if (!band_layers[b].empty()) {
      label += " (L" + std::to_string(band_layers[b].begin()->first) + "-" +
               std::to_string(band_layers[b].rbegin()->first) + ")";
    }
    std::vector<std::string> row{label};
    for (const auto& values : cells[b]) {
      if (values.empty()) {
        row.emplace_back("---");
      } else {
        double s = 0.0;
        for (double v : values) s += v;
        row.push_back(format_fixed(s / static_cast<double>(values.size()), 2));
      }
    }
    rows.push_back(std::move(row));
  }
  return format_table(headers, rows, "Cosine by depth");
}

std::string control_delta_table(const nlohmann::json& rows_in) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : rows_in) {
    rows.push_back({field(r, "model_id").get<std::string>(), std::to_string(field(r, "n").get<std::size_t>()),
                    format_percent(number(r, "baseline_refusal_rate")),
                    format_fixed(number(r, "max_control_delta_pp"), 1) + "pp"});
  }
  return format_table({"Model", "n", "Baseline Refusal", "Max Control Delta"}, rows, "Negative control deltas");
}

std::string steering_table(const nlohmann::json& rows_in) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : rows_in) {
    const auto& s = field(r, "steering");
    rows.push_back({field(r, "model_id").get<std::string>(), steering_cell(s),
                    std::to_string(field(s, "refusals").get<std::size_t>()) + "/" +
                        std::to_string(field(s, "total").get<std::size_t>())});
  }
  return format_table({"Model", "Steering", "Ref."}, rows, "Steering (non-refusal mean)");
}

std::string refusal_steering_table(const nlohmann::json& rows_in) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : rows_in) {
    rows.push_back({field(r, "model_id").get<std::string>(), format_percent(number(field(r, "refusal"), "fraction")),
                    steering_cell(field(r, "steering"))});
  }
  return format_table({"Model", "Refusal", "Steering"}, rows, "Refusal and steering");
}

std::string agreement_table(const nlohmann::json& a) {
  const std::string reference = field(a, "reference").get<std::string>();
  std::vector<std::string> judges{reference};
  std::map<std::string, const nlohmann::json*> by_judge;
  for (const auto& c : field(a, "comparisons")) {
    judges.push_back(field(c, "judge").get<std::string>());
    by_judge[judges.back()] = &c;
  }
  std::vector<std::string> headers{"Metric"};
  headers.insert(headers.end(), judges.begin(), judges.end());
  auto comparison_row = [&](const std::string& label, const char* key) {
    std::vector<std::string> row{label, "---"};
    for (std::size_t i = 1; i < judges.size(); ++i) {
      row.push_back(format_percent(number(field(*by_judge.at(judges[i]), key), "fraction")));
    }
    return row;
  };
  std::vector<std::vector<std::string>> rows{comparison_row("Fine agreement (8-way)", "fine_agreement"),
                                             comparison_row("Coarse agreement", "coarse_agreement")};
  std::vector<std::string> kappa{"Kappa (8-way)", "---"};
  for (std::size_t i = 1; i < judges.size(); ++i) {
    kappa.push_back(format_fixed(number(*by_judge.at(judges[i]), "kappa"), 2));
  }
  rows.push_back(std::move(kappa));
  const auto& rates = field(a, "judge_rates");
  std::map<std::string, bool> categories;
  for (const auto& [judge, cats] : rates.items()) {
    for (const auto& [cat, rate] : cats.items()) {
      if (rate.at("count").get<std::size_t>() > 0) categories[cat] = true;
    }
  }
  for (const auto& [cat, unused] : categories) {
    std::vector<std::string> row{cat + " rate"};
    for (const auto& j : judges) row.push_back(format_percent(rates.at(j).at(cat).at("fraction").get<double>()));
    rows.push_back(std::move(row));
  }
  return format_table(headers, rows, "Judge agreement");
}

std::string sweep_table(const nlohmann::json& grid) {
  std::vector<std::string> headers{"Layer", "Baseline"};
  for (const auto& a : field(grid, "alphas")) headers.push_back("a=" + format_fixed(a.get<double>(), 1));
  std::map<int, std::vector<std::string>> by_layer;
  for (const auto& l : field(grid, "layers")) {
    const int layer = l.get<int>();
    by_layer[layer] = {std::to_string(layer),
                       format_percent(field(field(grid, "baseline"), std::to_string(layer).c_str()).at("refusal_rate"))};
  }
  for (const auto& c : field(grid, "cells")) {
    by_layer.at(field(c, "layer").get<int>()).push_back(format_percent(number(c, "refusal_rate")));
  }
  std::vector<std::vector<std::string>> rows;
  for (auto& [layer, row] : by_layer) rows.push_back(std::move(row));
  return format_table(headers, rows,
                      std::string("Refusal rate under ") + field(grid, "kind").get<std::string>() + " ablation");
}

std::string alpha_select_table(const nlohmann::json& report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& l : field(report, "layers")) {
    const auto& sel = field(l, "selected_alpha");
    auto count = [&](const char* key) {
      if (!l.contains(key)) return std::string("---");
      return std::to_string(l.at(key).at("refused").get<std::size_t>()) + "/" +
             std::to_string(l.at(key).at("total").get<std::size_t>());
    };
    rows.push_back({std::to_string(field(l, "layer").get<int>()),
                    sel.is_null() ? "none" : format_fixed(sel.get<double>(), 1), count("evaluation"),
                    count("adversarial")});
  }
  return format_table({"Layer", "Selected alpha", "Eval refusals", "Adversarial refusals"}, rows,
                      "Clean alpha selection");
}

}  // namespace routelab
