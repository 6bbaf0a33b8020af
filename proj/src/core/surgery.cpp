#include "routelab/surgery.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "routelab/error.hpp"
#include "routelab/parallel.hpp"
#include "routelab/rng.hpp"

namespace routelab {

// ---------------------------------------------------------------------------
// Projection ablation

Eigen::VectorXd ablate_vector(const Eigen::VectorXd& h, const Eigen::VectorXd& v, double alpha) {
  if (h.size() != v.size()) {
    fail(ErrorCode::kDimensionMismatch, "ablation direction has dimension " + std::to_string(v.size()) +
                                            ", state has " + std::to_string(h.size()));
  }
  require_unit(v, "ablation direction");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    fail(ErrorCode::kInvalidArgument, "alpha must be finite and non-negative");
  }
  if (alpha == 0.0) return h;
  return h - (alpha * h.dot(v)) * v;
}

void ablate_rows(Matrix& rows, const Eigen::VectorXd& v, double alpha) {
  if (rows.cols() != v.size()) {
    fail(ErrorCode::kDimensionMismatch, "ablation direction has dimension " + std::to_string(v.size()) +
                                            ", states have " + std::to_string(rows.cols()));
  }
  require_unit(v, "ablation direction");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    fail(ErrorCode::kInvalidArgument, "alpha must be finite and non-negative");
  }
  if (alpha == 0.0) return;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Eigen::VectorXd h = rows.row(i).transpose().cast<double>();
    rows.row(i) = (h - (alpha * h.dot(v)) * v).transpose().cast<float>();
  }
}

void validate_config(const AblationConfig& config, const ActivationSet& set) {
  if (config.layers.empty()) fail(ErrorCode::kInvalidArgument, "ablation config names no layers");
  if (!(config.alpha >= 0.0)) fail(ErrorCode::kInvalidArgument, "alpha must be non-negative");
  for (int layer : config.layers) {
    if (!set.has_layer(layer)) {
      fail(ErrorCode::kMissingLayer, "ablation layer " + std::to_string(layer) + " not in set");
    }
  }
  if (config.direction.dim() != set.dim()) {
    fail(ErrorCode::kDimensionMismatch, "direction dimension differs from the activation set");
  }
  require_unit(config.direction.vector, "ablation direction");
}

ActivationSet ablate_set(const ActivationSet& set, const AblationConfig& config) {
  validate_config(config, set);
  ActivationSet out = set;
  for (int layer : std::set<int>(config.layers.begin(), config.layers.end())) {
    Matrix m = set.layer(layer);
    ablate_rows(m, config.direction.vector, config.alpha);
    out = out.with_layer(layer, std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Outcome evaluation

double OutcomeTally::refusal_rate() const {
  return total == 0 ? 0.0 : static_cast<double>(refused) / static_cast<double>(total);
}

double OutcomeTally::confabulation_rate() const {
  return total == 0 ? 0.0 : static_cast<double>(confabulated) / static_cast<double>(total);
}

nlohmann::json to_json(const OutcomeTally& t) {
  return {{"refused", t.refused},           {"accurate", t.accurate},
          {"confabulated", t.confabulated}, {"total", t.total},
          {"refusal_rate", t.refusal_rate()}, {"confabulation_rate", t.confabulation_rate()}};
}

namespace {

void count(OutcomeTally& t, Outcome o) {
  ++t.total;
  switch (o) {
    case Outcome::kRefuse: ++t.refused; break;
    case Outcome::kAnswerAccurate: ++t.accurate; break;
    case Outcome::kAnswerConfabulated: ++t.confabulated; break;
  }
}

OutcomeTally evaluate_matrix(const Manifest& manifest, const Matrix& m, int layer, double alpha,
                             const BehaviorOracle& oracle, std::span<const std::size_t> rows,
                             std::vector<Outcome>* per_row) {
  OutcomeTally t;
  if (per_row) per_row->clear();
  for (std::size_t r : rows) {
    const auto row = static_cast<Eigen::Index>(r);
    const OracleQuery q{manifest[r], layer, alpha,
                        std::span<const float>(m.data() + row * m.cols(), static_cast<std::size_t>(m.cols()))};
    const Outcome o = oracle.label(q);
    count(t, o);
    if (per_row) per_row->push_back(o);
  }
  return t;
}

std::vector<std::size_t> eval_rows_or_fail(const Manifest& manifest, const PromptPredicate& pred) {
  auto rows = matching_rows(manifest, pred);
  if (rows.empty()) fail(ErrorCode::kEmptySelection, "evaluation selection matched no prompts");
  return rows;
}

std::vector<std::size_t> all_rows(const ActivationSet& set) {
  std::vector<std::size_t> rows(set.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

}  // namespace

OutcomeTally evaluate(const ActivationSet& set, int layer, double alpha, const BehaviorOracle& oracle,
                      std::span<const std::size_t> rows, std::vector<Outcome>* per_row) {
  return evaluate_matrix(set.manifest(), set.layer(layer), layer, alpha, oracle, rows, per_row);
}

nlohmann::json to_json(const AblationRun& run) {
  nlohmann::json prompts = nlohmann::json::array();
  for (std::size_t i = 0; i < run.prompt_ids.size(); ++i) {
    prompts.push_back({{"prompt_id", run.prompt_ids[i]},
                       {"baseline", to_string(run.baseline_outcomes[i])},
                       {"ablated", to_string(run.ablated_outcomes[i])}});
  }
  return {{"direction", direction_info(run.config.direction)},
          {"layers", run.config.layers},
          {"alpha", run.config.alpha},
          {"eval_layer", run.eval_layer},
          {"baseline", to_json(run.baseline)},
          {"ablated", to_json(run.ablated)},
          {"refusal_rate_baseline", run.baseline.refusal_rate()},
          {"refusal_rate_ablated", run.ablated.refusal_rate()},
          {"delta_pp", run.delta_pp},
          {"prompts", prompts}};
}

AblationRun run_ablation(const ActivationSet& set, const AblationConfig& config,
                         const BehaviorOracle& oracle, const PromptPredicate& eval_rows,
                         std::optional<int> eval_layer) {
  validate_config(config, set);
  AblationRun run;
  run.config = config;
  run.eval_layer = eval_layer.value_or(*std::max_element(config.layers.begin(), config.layers.end()));
  const auto rows = eval_rows_or_fail(set.manifest(), eval_rows);
  for (std::size_t r : rows) run.prompt_ids.push_back(set.manifest()[r].prompt_id);
  run.baseline = evaluate(set, run.eval_layer, 0.0, oracle, rows, &run.baseline_outcomes);
  const ActivationSet ablated = ablate_set(set, config);
  run.ablated = evaluate(ablated, run.eval_layer, config.alpha, oracle, rows, &run.ablated_outcomes);
  run.delta_pp = (run.baseline.refusal_rate() - run.ablated.refusal_rate()) * 100.0;
  return run;
}

// ---------------------------------------------------------------------------
// Sweeps

DirectionBank::DirectionBank(Direction single) { by_layer_.emplace(single.layer, std::move(single)); }

DirectionBank::DirectionBank(std::vector<Direction> per_layer) {
  for (auto& d : per_layer) {
    const int layer = d.layer;
    if (!by_layer_.emplace(layer, std::move(d)).second) {
      fail(ErrorCode::kInvalidArgument, "two directions given for layer " + std::to_string(layer));
    }
  }
  if (by_layer_.size() > 1) {
    const auto kind = by_layer_.begin()->second.kind;
    for (const auto& [layer, d] : by_layer_) {
      if (d.kind != kind) fail(ErrorCode::kInvalidArgument, "direction bank mixes direction kinds");
    }
  }
}

const Direction& DirectionBank::at(int layer) const {
  if (by_layer_.empty()) fail(ErrorCode::kInvalidArgument, "empty direction bank");
  if (by_layer_.size() == 1) return by_layer_.begin()->second;
  auto it = by_layer_.find(layer);
  if (it == by_layer_.end()) {
    fail(ErrorCode::kMissingLayer, "no direction available for layer " + std::to_string(layer));
  }
  return it->second;
}

DirectionKind DirectionBank::kind() const {
  if (by_layer_.empty()) fail(ErrorCode::kInvalidArgument, "empty direction bank");
  return by_layer_.begin()->second.kind;
}

double SweepGrid::max_abs_delta_pp() const {
  double m = 0.0;
  for (const auto& c : cells) m = std::max(m, std::abs(c.delta_pp));
  return m;
}

nlohmann::json to_json(const SweepGrid& g) {
  nlohmann::json baseline = nlohmann::json::object();
  for (const auto& [layer, t] : g.baseline) baseline[std::to_string(layer)] = to_json(t);
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : g.cells) {
    cells.push_back({{"layer", c.layer},
                     {"alpha", c.alpha},
                     {"refused", c.tally.refused},
                     {"confabulated", c.tally.confabulated},
                     {"accurate", c.tally.accurate},
                     {"total", c.tally.total},
                     {"refusal_rate", c.tally.refusal_rate()},
                     {"delta_pp", c.delta_pp}});
  }
  return {{"kind", to_string(g.kind)},
          {"layers", g.layers},
          {"alphas", g.alphas},
          {"conditions", g.cells.size()},
          {"baseline", baseline},
          {"cells", cells},
          {"max_abs_delta_pp", g.max_abs_delta_pp()}};
}

SweepGrid alpha_sweep(const ActivationSet& set, const DirectionBank& bank, std::span<const int> layers,
                      std::span<const double> alphas, const BehaviorOracle& oracle,
                      const PromptPredicate& eval_rows, unsigned jobs) {
  if (layers.empty() || alphas.empty()) fail(ErrorCode::kInvalidArgument, "sweep needs layers and alphas");
  for (double a : alphas) {
    if (!(a >= 0.0) || !std::isfinite(a)) fail(ErrorCode::kInvalidArgument, "alphas must be non-negative");
  }
  const auto rows = eval_rows_or_fail(set.manifest(), eval_rows);
  SweepGrid grid;
  grid.kind = bank.kind();
  grid.layers.assign(layers.begin(), layers.end());
  grid.alphas.assign(alphas.begin(), alphas.end());
  for (int layer : layers) {
    const Direction& d = bank.at(layer);
    if (d.dim() != set.dim()) fail(ErrorCode::kDimensionMismatch, "direction dimension differs from set");
    grid.baseline[layer] = evaluate(set, layer, 0.0, oracle, rows);
  }
  grid.cells.resize(layers.size() * alphas.size());
  parallel_for(grid.cells.size(), jobs, [&](std::size_t i) {
    const int layer = layers[i / alphas.size()];
    const double alpha = alphas[i % alphas.size()];
    Matrix m = set.layer(layer);
    ablate_rows(m, bank.at(layer).vector, alpha);
    SweepCell& cell = grid.cells[i];
    cell.layer = layer;
    cell.alpha = alpha;
    cell.tally = evaluate_matrix(set.manifest(), m, layer, alpha, oracle, rows, nullptr);
    cell.delta_pp = (grid.baseline.at(layer).refusal_rate() - cell.tally.refusal_rate()) * 100.0;
  });
  return grid;
}

// ---------------------------------------------------------------------------
// Clean alpha selection

void check_disjoint(const ActivationSet& selection, const ActivationSet& evaluation,
                    const ActivationSet& adversarial) {
  std::set<std::string> ids;
  for (const auto& r : selection.manifest()) ids.insert(r.prompt_id);
  for (const auto* other : {&evaluation, &adversarial}) {
    for (const auto& r : other->manifest()) {
      if (ids.contains(r.prompt_id)) {
        fail(ErrorCode::kLeakage, "leakage: prompt '" + r.prompt_id +
                                      "' is in the selection set and a held-out set");
      }
    }
  }
}

nlohmann::json to_json(const CleanAlphaReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers) {
    nlohmann::json sweep = nlohmann::json::array();
    for (const auto& [alpha, t] : l.selection_sweep) {
      sweep.push_back({{"alpha", alpha}, {"refused", t.refused}, {"total", t.total}});
    }
    nlohmann::json j = {{"layer", l.layer},
                        {"selection_sweep", sweep},
                        {"evaluation_baseline", to_json(l.evaluation_baseline)},
                        {"adversarial_baseline", to_json(l.adversarial_baseline)}};
    j["selected_alpha"] = l.selected_alpha ? nlohmann::json(*l.selected_alpha) : nlohmann::json(nullptr);
    if (l.selected_alpha) {
      j["selection"] = to_json(l.selection_at_selected);
      j["evaluation"] = to_json(*l.evaluation);
      j["adversarial"] = to_json(*l.adversarial);
    } else {
      j["note"] = "no alpha eliminated refusal on the selection set";
    }
    layers.push_back(std::move(j));
  }
  return {{"layers", layers}};
}

CleanAlphaReport select_alpha_clean(const ActivationSet& selection, const ActivationSet& evaluation,
                                    const ActivationSet& adversarial, const DirectionBank& bank,
                                    std::span<const int> layers, std::span<const double> alphas,
                                    const BehaviorOracle& oracle) {
  check_disjoint(selection, evaluation, adversarial);
  if (alphas.empty()) fail(ErrorCode::kInvalidArgument, "no alphas to select from");
  std::vector<double> sorted(alphas.begin(), alphas.end());
  std::sort(sorted.begin(), sorted.end());

  CleanAlphaReport report;
  const auto sel_rows = all_rows(selection);
  const auto eval_rows = all_rows(evaluation);
  const auto adv_rows = all_rows(adversarial);
  for (int layer : layers) {
    const Direction& d = bank.at(layer);
    CleanAlphaLayer out;
    out.layer = layer;
    // Selection phase: only the selection set is touched here.
    for (double alpha : sorted) {
      Matrix m = selection.layer(layer);
      ablate_rows(m, d.vector, alpha);
      const OutcomeTally t = evaluate_matrix(selection.manifest(), m, layer, alpha, oracle, sel_rows, nullptr);
      out.selection_sweep.emplace_back(alpha, t);
      if (!out.selected_alpha && t.refused == 0) {
        out.selected_alpha = alpha;
        out.selection_at_selected = t;
      }
    }
    // Evaluation phase on held-out sets.
    out.evaluation_baseline = evaluate(evaluation, layer, 0.0, oracle, eval_rows);
    out.adversarial_baseline = evaluate(adversarial, layer, 0.0, oracle, adv_rows);
    if (out.selected_alpha) {
      Matrix e = evaluation.layer(layer);
      ablate_rows(e, d.vector, *out.selected_alpha);
      out.evaluation = evaluate_matrix(evaluation.manifest(), e, layer, *out.selected_alpha, oracle,
                                       eval_rows, nullptr);
      Matrix a = adversarial.layer(layer);
      ablate_rows(a, d.vector, *out.selected_alpha);
      out.adversarial = evaluate_matrix(adversarial.manifest(), a, layer, *out.selected_alpha, oracle,
                                        adv_rows, nullptr);
    }
    report.layers.push_back(std::move(out));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Concept atoms and residualization

PowerIterationResult principal_component(const Eigen::MatrixXd& rows, std::uint64_t seed,
                                         double tolerance, std::size_t max_iterations) {
  PowerIterationResult out;
  const auto d = rows.cols();
  out.vector = Eigen::VectorXd::Zero(d);
  if (rows.rows() < 2) {
    out.degenerate = true;
    return out;
  }
  const Eigen::MatrixXd xc = rows.rowwise() - rows.colwise().mean();
  if (xc.squaredNorm() == 0.0) {
    out.degenerate = true;
    return out;
  }
  Rng rng(derive_seed(seed, streams::kPowerIter, 0));
  Eigen::VectorXd v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
  v.normalize();
  const double denom = static_cast<double>(rows.rows() - 1);
  for (out.iterations = 1; out.iterations <= max_iterations; ++out.iterations) {
    Eigen::VectorXd w = xc.transpose() * (xc * v);
    const double norm = w.norm();
    if (norm == 0.0) {
      out.degenerate = true;
      return out;
    }
    w /= norm;
    out.eigenvalue = norm / denom;
    const double change = (w - v).norm();
    v = std::move(w);
    if (change < tolerance) break;
  }
  out.iterations = std::min(out.iterations, max_iterations);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (std::abs(v(i)) > 1e-12) {
      if (v(i) < 0.0) v = -v;
      break;
    }
  }
  out.vector = v;
  return out;
}

nlohmann::json atom_info(const AtomMatrix& a) {
  std::vector<bool> degenerate = a.pc_degenerate;
  return {{"layer", a.layer},
          {"concepts", a.concepts},
          {"columns", a.atoms.cols()},
          {"d", a.atoms.rows()},
          {"lambda_r", a.lambda_r},
          {"pc_degenerate", degenerate}};
}

AtomMatrix build_atoms(const ActivationSet& set, int layer, const std::vector<ConceptSelection>& concepts,
                       std::uint64_t seed, double lambda_r) {
  if (concepts.empty()) fail(ErrorCode::kInvalidArgument, "no protected concepts given");
  if (!(lambda_r > 0.0)) fail(ErrorCode::kInvalidArgument, "lambda_r must be positive");
  const Matrix& m = set.layer(layer);
  AtomMatrix out;
  out.layer = layer;
  out.lambda_r = lambda_r;
  out.atoms = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(set.dim()),
                                    static_cast<Eigen::Index>(2 * concepts.size()));
  for (std::size_t c = 0; c < concepts.size(); ++c) {
    const auto rows = matching_rows(set.manifest(), concepts[c].rows);
    if (rows.empty()) {
      fail(ErrorCode::kEmptySelection, "concept '" + concepts[c].name + "' matched no prompts");
    }
    if (rows.size() < 2) {
      fail(ErrorCode::kInvalidArgument, "concept '" + concepts[c].name + "' needs at least two prompts");
    }
    const Eigen::MatrixXd x = gather_rows(m, rows);
    const auto col = static_cast<Eigen::Index>(2 * c);
    out.atoms.col(col) = x.colwise().mean().transpose();
    const auto pc = principal_component(x, derive_seed(seed, streams::kPowerIter, c));
    out.atoms.col(col + 1) = pc.vector;
    out.concepts.push_back(concepts[c].name);
    out.pc_degenerate.push_back(pc.degenerate);
  }
  return out;
}

nlohmann::json to_json(const ResidualizeResult& r) {
  return {{"direction", direction_info(r.clean)},
          {"overlap_before", r.overlap_before},
          {"overlap_after", r.overlap_after},
          {"raw_overlap_before", r.raw_overlap_before},
          {"raw_overlap_after", r.raw_overlap_after},
          {"basis_rank", r.basis_rank}};
}

ResidualizeResult residualize(const Direction& dirty, const AtomMatrix& atoms) {
  const Eigen::MatrixXd& a = atoms.atoms;
  if (static_cast<std::size_t>(a.rows()) != dirty.dim()) {
    fail(ErrorCode::kDimensionMismatch, "atom dimension differs from the direction");
  }
  if (!a.allFinite()) fail(ErrorCode::kNonFinite, "atom matrix has non-finite entries");
  require_unit(dirty.vector, "dirty direction");
  const Eigen::VectorXd& v = dirty.vector;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  const auto rank = qr.rank();
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), rank);

  ResidualizeResult out;
  out.basis_rank = static_cast<std::size_t>(rank);
  out.overlap_before = (q.transpose() * v).norm();
  out.raw_overlap_before = (a.transpose() * v).norm();

  Eigen::MatrixXd gram = a.transpose() * a;
  gram.diagonal().array() += atoms.lambda_r;
  const Eigen::VectorXd w = gram.llt().solve(a.transpose() * v);
  Eigen::VectorXd clean = v - a * w;
  // Two projection passes keep the residual overlap at rounding level.
  for (int pass = 0; pass < 2; ++pass) clean -= q * (q.transpose() * clean);
  if (clean.norm() <= 1e-8) {
    fail(ErrorCode::kConsumed, "direction consumed by protected concepts");
  }
  out.clean = dirty;
  out.clean.vector = clean / clean.norm();
  out.overlap_after = (q.transpose() * out.clean.vector).norm();
  out.raw_overlap_after = (a.transpose() * out.clean.vector).norm();
  return out;
}

// ---------------------------------------------------------------------------
// Negative controls

double ControlBattery::max_control_delta_pp() const {
  double m = 0.0;
  for (const auto& c : controls) m = std::max(m, c.max_abs_delta_pp);
  return m;
}

nlohmann::json to_json(const ControlBattery& b) {
  auto entry = [](const ControlEntry& e) {
    return nlohmann::json{{"kind", to_string(e.kind)},
                          {"max_abs_delta_pp", e.max_abs_delta_pp},
                          {"grid", to_json(e.grid)}};
  };
  nlohmann::json controls = nlohmann::json::array();
  for (const auto& c : b.controls) controls.push_back(entry(c));
  return {{"political", entry(b.political)},
          {"controls", controls},
          {"max_control_delta_pp", b.max_control_delta_pp()}};
}

ControlBattery negative_control_battery(const ActivationSet& set, const DirectionBank& political,
                                        const std::vector<DirectionBank>& controls,
                                        std::span<const int> layers, std::span<const double> alphas,
                                        const BehaviorOracle& oracle, const PromptPredicate& eval_rows,
                                        unsigned jobs) {
  ControlBattery battery;
  battery.political.grid = alpha_sweep(set, political, layers, alphas, oracle, eval_rows, jobs);
  battery.political.kind = battery.political.grid.kind;
  battery.political.max_abs_delta_pp = battery.political.grid.max_abs_delta_pp();
  for (const auto& bank : controls) {
    ControlEntry e;
    e.grid = alpha_sweep(set, bank, layers, alphas, oracle, eval_rows, jobs);
    e.kind = e.grid.kind;
    e.max_abs_delta_pp = e.grid.max_abs_delta_pp();
    battery.controls.push_back(std::move(e));
  }
  return battery;
}

}  // namespace routelab
