#include "routelab/oracle.hpp"

#include <cmath>
#include <fstream>

#include "routelab/error.hpp"

namespace routelab {

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::kRefuse: return "refuse";
    case Outcome::kAnswerAccurate: return "answer_accurate";
    case Outcome::kAnswerConfabulated: return "answer_confabulated";
  }
  return "refuse";
}

Outcome parse_outcome(const std::string& s) {
  if (s == "refuse") return Outcome::kRefuse;
  if (s == "answer_accurate") return Outcome::kAnswerAccurate;
  if (s == "answer_confabulated") return Outcome::kAnswerConfabulated;
  fail(ErrorCode::kFormat, "unknown outcome '" + s + "'");
}

const LayerReadout& LinearOracle::readout(int layer) const {
  auto it = layers_.find(layer);
  if (it == layers_.end()) {
    fail(ErrorCode::kMissingLayer, "oracle has no read-out for layer " + std::to_string(layer));
  }
  return it->second;
}

Outcome LinearOracle::label(const OracleQuery& query) const {
  return label(query.layer, query.activation);
}

Outcome LinearOracle::label(int layer, std::span<const float> activation) const {
  const LayerReadout& r = readout(layer);
  if (static_cast<Eigen::Index>(activation.size()) != r.routing.size()) {
    fail(ErrorCode::kDimensionMismatch, "oracle expects dimension " + std::to_string(r.routing.size()) +
                                            ", got " + std::to_string(activation.size()));
  }
  const Eigen::VectorXd h =
      Eigen::Map<const Eigen::VectorXf>(activation.data(), static_cast<Eigen::Index>(activation.size()))
          .cast<double>();
  if (h.dot(r.routing) > r.routing_threshold) return Outcome::kRefuse;
  for (const auto& [dir, threshold] : r.extra_refusals) {
    if (h.dot(dir) > threshold) return Outcome::kRefuse;
  }
  if (h.dot(r.knowledge) < r.knowledge_threshold) return Outcome::kAnswerConfabulated;
  return Outcome::kAnswerAccurate;
}

long long LabelTableOracle::alpha_key(double alpha) {
  return std::llround(alpha * 1e6);
}

void LabelTableOracle::add(const std::string& prompt_id, std::optional<int> layer, double alpha,
                           Outcome outcome) {
  if (!layer && alpha != 0.0) {
    fail(ErrorCode::kFormat, "ablated label for '" + prompt_id + "' must name its layer");
  }
  table_[{prompt_id, layer.value_or(kAnyLayer), alpha_key(alpha)}] = outcome;
}

Outcome LabelTableOracle::label(const OracleQuery& query) const {
  const auto key = alpha_key(query.alpha);
  auto it = table_.find({query.prompt.prompt_id, query.layer, key});
  if (it == table_.end() && key == 0) it = table_.find({query.prompt.prompt_id, kAnyLayer, key});
  if (it == table_.end()) {
    fail(ErrorCode::kInvalidArgument, "no ingested outcome for prompt '" + query.prompt.prompt_id +
                                          "' at layer " + std::to_string(query.layer) + ", alpha " +
                                          std::to_string(query.alpha));
  }
  return it->second;
}

LabelTableOracle LabelTableOracle::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  LabelTableOracle oracle;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      std::optional<int> layer;
      if (j.contains("layer") && !j["layer"].is_null()) layer = j["layer"].get<int>();
      const double alpha = j.value("alpha", 0.0);
      Outcome outcome;
      if (j.contains("outcome")) {
        outcome = parse_outcome(j["outcome"].get<std::string>());
      } else {
        outcome = j.at("refused").get<bool>() ? Outcome::kRefuse : Outcome::kAnswerAccurate;
      }
      oracle.add(j.at("prompt_id").get<std::string>(), layer, alpha, outcome);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kFormat, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return oracle;
}

}  // namespace routelab
