#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "routelab/prompt.hpp"

namespace routelab {

enum class Outcome { kRefuse, kAnswerAccurate, kAnswerConfabulated };
const char* to_string(Outcome o);
Outcome parse_outcome(const std::string& s);

struct OracleQuery {
  const PromptRecord& prompt;
  int layer;     // layer the intervention (if any) was applied at
  double alpha;  // 0 for the unablated baseline
  std::span<const float> activation;  // the prompt's row at `layer`
};

// Maps a prompt's (possibly ablated) state to a behavioral outcome. Oracles
// are pure: the same query always yields the same outcome.
class BehaviorOracle {
 public:
  virtual ~BehaviorOracle() = default;
  virtual Outcome label(const OracleQuery& query) const = 0;
};

// Linear read-out oracle used with synthetic data:
//   refuse               iff h.r > tau (or any extra refusal read-out fires)
//   answer_confabulated  iff h.k < knowledge_threshold
//   answer_accurate      otherwise
struct LayerReadout {
  Eigen::VectorXd routing;
  double routing_threshold = 0.0;
  Eigen::VectorXd knowledge;
  double knowledge_threshold = 0.0;
  // Additional refusal triggers (e.g. a safety read-out).
  std::vector<std::pair<Eigen::VectorXd, double>> extra_refusals;
};

class LinearOracle : public BehaviorOracle {
 public:
  LinearOracle() = default;
  explicit LinearOracle(std::map<int, LayerReadout> layers) : layers_(std::move(layers)) {}

  Outcome label(const OracleQuery& query) const override;
  Outcome label(int layer, std::span<const float> activation) const;

  const LayerReadout& readout(int layer) const;
  const std::map<int, LayerReadout>& readouts() const { return layers_; }

 private:
  std::map<int, LayerReadout> layers_;
};

// Ingested per-prompt outcomes keyed by (prompt_id, layer, alpha). Baseline
// rows (alpha 0) may omit the layer and then apply at every layer.
class LabelTableOracle : public BehaviorOracle {
 public:
  void add(const std::string& prompt_id, std::optional<int> layer, double alpha, Outcome outcome);
  Outcome label(const OracleQuery& query) const override;
  std::size_t size() const { return table_.size(); }

  // JSON-lines: {"prompt_id", "layer"?, "alpha", "outcome"} where outcome is
  // refuse | answer_accurate | answer_confabulated; {"refused": bool} is also
  // accepted (false maps to answer_accurate).
  static LabelTableOracle read_jsonl(const std::filesystem::path& path);

 private:
  static constexpr int kAnyLayer = -1;
  std::map<std::tuple<std::string, int, long long>, Outcome> table_;
  static long long alpha_key(double alpha);
};

}  // namespace routelab
