#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "routelab/geometry.hpp"
#include "routelab/oracle.hpp"
#include "routelab/probelab.hpp"
#include "routelab/tensorstore.hpp"

namespace routelab {

// h' = h - alpha (h.v) v, v unit norm.
Eigen::VectorXd ablate_vector(const Eigen::VectorXd& h, const Eigen::VectorXd& v, double alpha);

// Applies the projection to every row in place (computed in double).
void ablate_rows(Matrix& rows, const Eigen::VectorXd& v, double alpha);

struct AblationConfig {
  Direction direction;
  std::vector<int> layers;
  double alpha = 1.0;
};

void validate_config(const AblationConfig& config, const ActivationSet& set);

// Ablates the configured layers; every other layer is shared unchanged.
ActivationSet ablate_set(const ActivationSet& set, const AblationConfig& config);

struct OutcomeTally {
  std::size_t refused = 0;
  std::size_t accurate = 0;
  std::size_t confabulated = 0;
  std::size_t total = 0;

  double refusal_rate() const;
  double confabulation_rate() const;
};

nlohmann::json to_json(const OutcomeTally& t);

OutcomeTally evaluate(const ActivationSet& set, int layer, double alpha, const BehaviorOracle& oracle,
                      std::span<const std::size_t> rows, std::vector<Outcome>* per_row = nullptr);

struct AblationRun {
  AblationConfig config;
  int eval_layer = 0;
  std::vector<std::string> prompt_ids;
  std::vector<Outcome> baseline_outcomes;
  std::vector<Outcome> ablated_outcomes;
  OutcomeTally baseline;
  OutcomeTally ablated;
  double delta_pp = 0.0;  // (baseline rate - ablated rate) * 100
};

nlohmann::json to_json(const AblationRun& run);

// Outcomes are read at `eval_layer` (default: deepest configured layer) for
// the rows selected by `eval_rows`.
AblationRun run_ablation(const ActivationSet& set, const AblationConfig& config,
                         const BehaviorOracle& oracle, const PromptPredicate& eval_rows,
                         std::optional<int> eval_layer = {});

// Per-layer directions of one kind. A bank holding a single direction is used
// at every layer.
class DirectionBank {
 public:
  DirectionBank() = default;
  explicit DirectionBank(Direction single);
  explicit DirectionBank(std::vector<Direction> per_layer);

  const Direction& at(int layer) const;
  DirectionKind kind() const;
  bool empty() const { return by_layer_.empty(); }

 private:
  std::map<int, Direction> by_layer_;
};

inline const std::vector<double> kDefaultAlphas{2, 5, 8, 12, 20};

struct SweepCell {
  int layer = 0;
  double alpha = 0.0;
  OutcomeTally tally;
  double delta_pp = 0.0;
};

struct SweepGrid {
  DirectionKind kind = DirectionKind::kCustom;
  std::vector<int> layers;
  std::vector<double> alphas;
  std::map<int, OutcomeTally> baseline;  // alpha = 0, per layer
  std::vector<SweepCell> cells;          // layer-major

  double max_abs_delta_pp() const;
};

nlohmann::json to_json(const SweepGrid& g);

SweepGrid alpha_sweep(const ActivationSet& set, const DirectionBank& bank, std::span<const int> layers,
                      std::span<const double> alphas, const BehaviorOracle& oracle,
                      const PromptPredicate& eval_rows, unsigned jobs = 1);

struct CleanAlphaLayer {
  int layer = 0;
  std::optional<double> selected_alpha;
  std::vector<std::pair<double, OutcomeTally>> selection_sweep;
  OutcomeTally selection_at_selected;
  OutcomeTally evaluation_baseline;
  OutcomeTally adversarial_baseline;
  std::optional<OutcomeTally> evaluation;
  std::optional<OutcomeTally> adversarial;
};

struct CleanAlphaReport {
  std::vector<CleanAlphaLayer> layers;
};

nlohmann::json to_json(const CleanAlphaReport& r);

// Throws kLeakage when the selection set shares a prompt id with the
// evaluation or adversarial set.
void check_disjoint(const ActivationSet& selection, const ActivationSet& evaluation,
                    const ActivationSet& adversarial);

// Per layer: the smallest alpha that leaves no refusals on the selection set,
// then outcomes on the held-out sets at that alpha. Only the selection set is
// consulted while choosing.
CleanAlphaReport select_alpha_clean(const ActivationSet& selection, const ActivationSet& evaluation,
                                    const ActivationSet& adversarial, const DirectionBank& bank,
                                    std::span<const int> layers, std::span<const double> alphas,
                                    const BehaviorOracle& oracle);

// Protected concept atoms: centroid and first principal component per concept.
struct AtomMatrix {
  Eigen::MatrixXd atoms;  // d x 2k
  std::vector<std::string> concepts;
  std::vector<bool> pc_degenerate;
  double lambda_r = 0.01;
  int layer = 0;
};

nlohmann::json atom_info(const AtomMatrix& a);

struct ConceptSelection {
  std::string name;
  PromptPredicate rows;
};

struct PowerIterationResult {
  Eigen::VectorXd vector;  // unit norm, first nonzero coordinate positive
  double eigenvalue = 0.0;
  std::size_t iterations = 0;
  bool degenerate = false;  // zero covariance; vector is zero
};

// Dominant eigenvector of the centred covariance of `rows` without forming
// the d x d matrix.
PowerIterationResult principal_component(const Eigen::MatrixXd& rows, std::uint64_t seed,
                                         double tolerance = 1e-8, std::size_t max_iterations = 1000);

AtomMatrix build_atoms(const ActivationSet& set, int layer, const std::vector<ConceptSelection>& concepts,
                       std::uint64_t seed = 0, double lambda_r = 0.01);

struct ResidualizeResult {
  Direction clean;
  double overlap_before = 0.0;  // ||Q' v|| with Q an orthonormal basis of span(A)
  double overlap_after = 0.0;
  double raw_overlap_before = 0.0;  // ||A' v||
  double raw_overlap_after = 0.0;
  std::size_t basis_rank = 0;
};

nlohmann::json to_json(const ResidualizeResult& r);

// Ridge step w = (A'A + lambda_r I)^-1 A'v, v1 = v - Aw, then projection of v1
// off an orthonormal basis of span(A), then normalization. Throws kConsumed
// when nothing is left of v.
ResidualizeResult residualize(const Direction& dirty, const AtomMatrix& atoms);

struct ControlEntry {
  DirectionKind kind = DirectionKind::kCustom;
  double max_abs_delta_pp = 0.0;
  SweepGrid grid;
};

struct ControlBattery {
  ControlEntry political;
  std::vector<ControlEntry> controls;

  double max_control_delta_pp() const;
};

nlohmann::json to_json(const ControlBattery& b);

ControlBattery negative_control_battery(const ActivationSet& set, const DirectionBank& political,
                                        const std::vector<DirectionBank>& controls,
                                        std::span<const int> layers, std::span<const double> alphas,
                                        const BehaviorOracle& oracle, const PromptPredicate& eval_rows,
                                        unsigned jobs = 1);

}  // namespace routelab
