// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "routelab/behaviorstats.hpp"
#include "routelab/error.hpp"
#include "routelab/geometry.hpp"
#include "routelab/probelab.hpp"
#include "routelab/rng.hpp"
#include "routelab/surgery.hpp"
#include "routelab/synthlab.hpp"
#include "routelab/tensorstore.hpp"
#include "support.hpp"

using namespace routelab;
using testsupport::category;
using testsupport::category_contrast;
using testsupport::in_category;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  // Records a sub-check; the criterion fails if any sub-check fails.
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[FAILED] ";
    }
    detail << what << "; ";
  }
};

std::string fmt(double v, int decimals = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

SyntheticSpec base_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.d = 256;
  s.n_layers = 8;
  s.emergence_layer = 3;
  s.noise_sigma = 0.5;
  s.seed = seed;
  return s;
}

std::vector<Direction> per_layer_caa(const ActivationSet& set, const Contrast& c, DirectionKind kind) {
  std::vector<Direction> out;
  for (int layer : set.layers()) out.push_back(extract_direction(set, layer, c, kind, "fixture"));
  return out;
}

// 1. Free separability of a null two-category set.
void free_separability(Verdict& v) {
  SyntheticSpec spec;
  spec.d = 4096;
  spec.n_layers = 1;
  spec.emergence_layer = 0;
  spec.noise_sigma = 1.0;
  spec.seed = 101;
  spec.categories = {category("food", CategoryKind::kNeutral, 24, 0),
                     category("technology", CategoryKind::kNeutral, 24, 0)};
  const auto data = generate(spec);
  ProbeOptions o;
  o.lambda = 1.0;
  o.k = 6;
  o.n_permutations = 200;
  o.seed = 7;
  o.jobs = 1;
  o.positive = PromptFilter::of_category("food");
  const std::vector<int> layers{0};
  const auto t0 = std::chrono::steady_clock::now();
  const ProbeReport r = run_probe(data.set, layers, o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const LayerProbe& lp = r.layers.at(0);
  const auto perfect = std::count(lp.permutation_train_accuracies.begin(), lp.permutation_train_accuracies.end(), 1.0);
  const double perm_cv = mean(lp.permutation_cv_means);
  v.expect(data.set.rows() == 48 && data.set.dim() == 4096, "n=48 d=4096");
  v.expect(lp.train_accuracy == 1.0, "train acc " + fmt(lp.train_accuracy));
  v.expect(lp.permutation_train_accuracies.size() == 200, "200 shuffled refits");
  v.expect(perfect >= 198, std::to_string(perfect) + "/200 shuffled refits at 100% train");
  v.expect(perm_cv >= 0.40 && perm_cv <= 0.60, "shuffled 6-fold CV mean " + fmt(perm_cv));
  v.expect(secs < 60.0, "runtime " + fmt(secs, 1) + "s single-threaded");
}

// 2. LOCO-CV tracks the planted concept; shuffled labels stay near chance.
void cv_informativeness(Verdict& v) {
  SyntheticSpec spec = base_spec(202);
  for (int c = 0; c < 6; ++c) {
    spec.categories.push_back(category("topic" + std::to_string(c), CategoryKind::kPolitical, 16, 16));
  }
  const auto data = generate(spec);
  ProbeOptions o;
  o.scheme = FoldScheme::kLeaveOneCategoryOut;
  o.n_permutations = 50;
  o.seed = 9;
  const auto layers = data.set.layers();
  const ProbeReport r = run_probe(data.set, layers, o);
  double min_above = 1.0, max_below = 0.0, max_shuffled = 0.0;
  for (const auto& lp : r.layers) {
    if (lp.layer >= spec.emergence_layer) {
      min_above = std::min(min_above, lp.cv_mean);
    } else {
      max_below = std::max(max_below, lp.cv_mean);
    }
    max_shuffled = std::max(max_shuffled, mean(lp.permutation_cv_means));
  }
  v.expect(r.layers.front().fold_categories.size() == 6, "6 LOCO folds");
  v.expect(min_above >= 0.95, "min LOCO CV at layers >= emergence " + fmt(min_above));
  v.expect(max_below <= 0.65, "max LOCO CV below emergence " + fmt(max_below));
  v.expect(max_shuffled <= 0.65, "max shuffled LOCO CV " + fmt(max_shuffled));
}

// 3. Projection ablation algebra on random pairs.
void ablation_algebra(Verdict& v) {
  Rng rng(303);
  double worst_residual = 0.0, worst_idem = 0.0, worst_growth = -1.0;
  bool identity_exact = true;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t d = 2 + rng.uniform_index(255);
    const Eigen::VectorXd h = testsupport::random_normal(d, rng) * (0.1 + 10.0 * rng.uniform01());
    Eigen::VectorXd u = testsupport::random_normal(d, rng);
    const Eigen::VectorXd dir = u / u.norm();
    const Eigen::VectorXd once = ablate_vector(h, dir, 1.0);
    worst_residual = std::max(worst_residual, std::abs(once.dot(dir)) / h.norm());
    const Eigen::VectorXd twice = ablate_vector(once, dir, 1.0);
    worst_idem = std::max(worst_idem, (twice - once).norm() / h.norm());
    const double alpha = 2.0 * rng.uniform01();
    worst_growth = std::max(worst_growth, (ablate_vector(h, dir, alpha).norm() - h.norm()) / h.norm());
    const Eigen::VectorXd same = ablate_vector(h, dir, 0.0);
    identity_exact = identity_exact && std::memcmp(same.data(), h.data(), sizeof(double) * d) == 0;
    if (i % 100 == 0) {
      Matrix rows = Matrix::Random(3, static_cast<Eigen::Index>(d));
      const Matrix before = rows;
      ablate_rows(rows, dir, 0.0);
      identity_exact = identity_exact && std::memcmp(rows.data(), before.data(), sizeof(float) * rows.size()) == 0;
    }
  }
  v.expect(worst_residual <= 1e-5, "max relative residual projection " + std::to_string(worst_residual));
  v.expect(worst_idem <= 1e-12, "max idempotence error " + std::to_string(worst_idem));
  v.expect(worst_growth <= 1e-12, "max relative norm growth for alpha in [0,2] " + std::to_string(worst_growth));
  v.expect(identity_exact, "alpha=0 bit-exact identity");
}

SyntheticSpec surgery_spec(std::uint64_t seed) {
  SyntheticSpec spec = base_spec(seed);
  spec.categories = {category("tiananmen", CategoryKind::kPolitical, 20, 20),
                     category("weapons", CategoryKind::kSafety, 20, 20),
                     category("mood", CategoryKind::kSentiment, 20, 20),
                     category("register", CategoryKind::kFormality, 20, 20)};
  return spec;
}

// 4. Modular dissociation: routing removed, concept still decodable, controls inert.
void routing_surgery(Verdict& v) {
  const auto data = generate(surgery_spec(404));
  const LinearOracle oracle = data.truth.oracle();
  const int layer = 6;
  // The routing direction r. A CAA direction from these same rows would also
  // remove the concept's mean shift, leaving the ridge probe with zero weights.
  const Direction pol = data.truth.planted(layer, DirectionKind::kPolitical);
  const AblationConfig cfg{pol, {layer}, 1.0};
  const AblationRun run = run_ablation(data.set, cfg, oracle, in_category("tiananmen", Group::kPositive));
  std::size_t refused = 0, flipped = 0;
  for (std::size_t i = 0; i < run.baseline_outcomes.size(); ++i) {
    if (run.baseline_outcomes[i] != Outcome::kRefuse) continue;
    ++refused;
    if (run.ablated_outcomes[i] != Outcome::kRefuse) ++flipped;
  }
  const double flip_rate = refused == 0 ? 0.0 : static_cast<double>(flipped) / static_cast<double>(refused);
  v.expect(refused > 0, std::to_string(refused) + " baseline refusals");
  v.expect(flip_rate >= 0.95, "flipped " + fmt(100.0 * flip_rate, 1) + "% of refusals");

  const ActivationSet ablated = ablate_set(data.set, cfg);
  const ActivationSet political = select_subset(ablated, in_category("tiananmen"));
  ProbeOptions o;
  o.n_permutations = 0;
  const std::vector<int> probe_layers{layer};
  const ProbeReport probe = run_probe(political, probe_layers, o);
  v.expect(probe.layers[0].train_accuracy == 1.0,
           "concept probe train acc after ablation " + fmt(probe.layers[0].train_accuracy) + " (CV " +
               fmt(probe.layers[0].cv_mean) + ")");

  std::vector<Direction> routing;
  for (int l : data.set.layers()) routing.push_back(data.truth.planted(l, DirectionKind::kPolitical));
  const DirectionBank political_bank(routing);
  std::vector<DirectionBank> controls;
  controls.emplace_back(per_layer_caa(data.set, category_contrast("mood"), DirectionKind::kSentiment));
  controls.emplace_back(per_layer_caa(data.set, category_contrast("register"), DirectionKind::kFormality));
  controls.emplace_back(random_direction(data.set.dim(), 4040));
  std::vector<int> layers;
  for (int l = data.truth.spec.emergence_layer; l < data.truth.spec.n_layers; ++l) layers.push_back(l);
  const ControlBattery battery = negative_control_battery(data.set, political_bank, controls, layers, kDefaultAlphas,
                                                          oracle, in_category("tiananmen"));
  v.expect(battery.max_control_delta_pp() <= 2.0, "max control delta " + fmt(battery.max_control_delta_pp(), 2) +
                                                       "pp (political " +
                                                       fmt(battery.political.max_abs_delta_pp, 1) + "pp)");
}

struct ConfabRates {
  double political = 0.0;
  double safety = 0.0;
};

ConfabRates confabulation(Geometry geometry, double eta) {
  SyntheticSpec spec = base_spec(505);
  spec.geometry = geometry;
  spec.eta = eta;
  spec.categories = {category("tiananmen", CategoryKind::kPolitical, 40, 40),
                     category("weapons", CategoryKind::kSafety, 40, 40)};
  const auto data = generate(spec);
  const LinearOracle oracle = data.truth.oracle();
  const int layer = 6;
  const auto positives = [](const PromptRecord& r) { return r.group == Group::kPositive; };
  const Direction pol = extract_direction(data.set, layer, category_contrast("tiananmen"), DirectionKind::kPolitical);
  const Direction saf = extract_direction(data.set, layer, category_contrast("weapons"), DirectionKind::kSafety);
  ConfabRates out;
  out.political =
      run_ablation(data.set, {pol, {layer}, 1.0}, oracle, in_category("tiananmen", Group::kPositive)).ablated
          .confabulation_rate();
  out.safety = run_ablation(data.set, {saf, {layer}, 1.0}, oracle, positives).ablated.confabulation_rate();
  return out;
}

// 5. Entangled knowledge confabulates under political ablation only.
void entanglement(Verdict& v) {
  const ConfabRates entangled = confabulation(Geometry::kEntangled, 0.9);
  const ConfabRates modular = confabulation(Geometry::kModular, 0.0);
  v.expect(entangled.political >= 0.5, "entangled political confabulated " + fmt(100 * entangled.political, 1) + "%");
  v.expect(modular.political <= 0.05, "modular political confabulated " + fmt(100 * modular.political, 1) + "%");
  v.expect(entangled.safety == 0.0, "entangled safety confabulated " + fmt(100 * entangled.safety, 1) + "%");
  v.expect(modular.safety == 0.0, "modular safety confabulated " + fmt(100 * modular.safety, 1) + "%");
}

// 6. Residualization removes a known atom overlap and nothing else.
void residualization(Verdict& v) {
  SyntheticSpec spec = base_spec(606);
  spec.categories = {category("mood", CategoryKind::kSentiment, 30, 30),
                     category("register", CategoryKind::kFormality, 30, 30)};
  const auto data = generate(spec);
  const int layer = 6;
  const AtomMatrix atoms = build_atoms(
      data.set, layer, {{"mood", in_category("mood", Group::kPositive)}, {"register", in_category("register", Group::kPositive)}},
      17, 0.01);
  const Eigen::Index d = atoms.atoms.rows();
  const Eigen::Index k = atoms.atoms.cols();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(atoms.atoms);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);

  Rng rng(6060);
  Eigen::VectorXd clean_ref = testsupport::random_normal(static_cast<std::size_t>(d), rng);
  clean_ref -= q * (q.transpose() * clean_ref);
  clean_ref.normalize();
  Eigen::VectorXd u = q * testsupport::random_normal(static_cast<std::size_t>(k), rng);
  u.normalize();
  const double overlap = 0.07;
  Direction dirty;
  dirty.vector = std::sqrt(1.0 - overlap * overlap) * clean_ref + overlap * u;
  dirty.layer = layer;
  dirty.kind = DirectionKind::kPolitical;

  const ResidualizeResult res = residualize(dirty, atoms);
  const double independent_after = (q.transpose() * res.clean.vector).norm();
  v.expect(std::abs(res.overlap_before - overlap) <= 1e-9, "overlap before " + fmt(res.overlap_before, 6));
  v.expect(res.overlap_after <= 1e-6 && independent_after <= 1e-6,
           "overlap after " + std::to_string(std::max(res.overlap_after, independent_after)));
  const double cos_clean = cosine(res.clean.vector, clean_ref);
  v.expect(cos_clean >= 0.997, "cosine to planted clean " + fmt(cos_clean, 6));
  const ResidualizeResult again = residualize(res.clean, atoms);
  const double idem = (again.clean.vector - res.clean.vector).norm();
  v.expect(idem <= 1e-6, "idempotence error " + std::to_string(idem));
  Direction already_clean = dirty;
  already_clean.vector = clean_ref;
  const double pass_through = (residualize(already_clean, atoms).clean.vector - clean_ref).norm();
  v.expect(pass_through <= 1e-6, "zero-overlap change " + std::to_string(pass_through));
}

// 7. Bootstrap CI behaviour and convergence in the number of pairs.
void bootstrap_statistics(Verdict& v) {
  auto make = [](Geometry g, double rho) {
    SyntheticSpec spec = base_spec(707);
    spec.geometry = g;
    spec.rho = rho;
    spec.categories = {category("pol", CategoryKind::kPolitical, 24, 24),
                       category("saf", CategoryKind::kSafety, 112, 112)};
    return generate(spec);
  };
  const int layer = 6;
  BootstrapOptions o;
  o.n_iter = 1000;
  o.seed = 77;
  const auto orth = make(Geometry::kModular, 0.0);
  const CosineInterval ci0 =
      bootstrap_cosine_ci(orth.set, layer, category_contrast("pol"), category_contrast("saf"), o);
  v.expect(ci0.ci_low <= 0.0 && ci0.ci_high >= 0.0,
           "orthogonal CI [" + fmt(ci0.ci_low) + ", " + fmt(ci0.ci_high) + "] spans 0");
  v.expect(ci0.width() <= 0.2, "orthogonal CI width " + fmt(ci0.width()));
  const auto coupled = make(Geometry::kCoupled, 0.9);
  const CosineInterval ci9 =
      bootstrap_cosine_ci(coupled.set, layer, category_contrast("pol"), category_contrast("saf"), o);
  v.expect(ci9.ci_low > 0.0 || ci9.ci_high < 0.0,
           "rho=0.9 CI [" + fmt(ci9.ci_low) + ", " + fmt(ci9.ci_high) + "] excludes 0");

  ConvergenceOptions co;
  co.sizes = {8, 16, 32, 60, 90};
  co.n_iter = 500;
  co.seed = 78;
  const ConvergenceCurve curve =
      convergence_analysis(coupled.set, layer, category_contrast("pol"), category_contrast("saf"), co);
  bool monotone = true;
  std::string widths;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    widths += (i ? "," : "") + fmt(curve.points[i].mean_width, 3);
    if (i > 0 && curve.points[i].mean_width > 1.1 * curve.points[i - 1].mean_width) monotone = false;
  }
  v.expect(curve.points.size() == 5, "5 sizes");
  v.expect(monotone, "widths " + widths + " non-increasing within 10%");
  v.expect(curve.points.front().mean_width > curve.points.back().mean_width, "width(8) > width(90)");
}

// 8. Clean alpha selection on disjoint synthetic splits.
void clean_alpha(Verdict& v) {
  SyntheticSpec spec = base_spec(808);
  spec.categories = {category("sel", CategoryKind::kPolitical, 24, 24),
                     category("eval", CategoryKind::kPolitical, 24, 24),
                     category("adv", CategoryKind::kPolitical, 24, 24, 1.5)};
  const auto data = generate(spec);
  const ActivationSet selection = select_subset(data.set, in_category("sel"));
  const ActivationSet evaluation = select_subset(data.set, in_category("eval"));
  const ActivationSet adversarial = select_subset(data.set, in_category("adv"));
  std::set<std::string> sel_ids;
  for (const auto& r : selection.manifest()) sel_ids.insert(r.prompt_id);
  bool disjoint = true;
  for (const auto* s : {&evaluation, &adversarial}) {
    for (const auto& r : s->manifest()) disjoint = disjoint && !sel_ids.contains(r.prompt_id);
  }
  v.expect(disjoint, "selection disjoint from held-out sets");

  const DirectionBank bank(per_layer_caa(selection, category_contrast("sel"), DirectionKind::kPolitical));
  const LinearOracle oracle = data.truth.oracle();
  const auto layers = data.set.layers();
  const CleanAlphaReport report = select_alpha_clean(selection, evaluation, adversarial, bank, layers, kDefaultAlphas, oracle);
  bool eliminates = true, held_out_clean = true, meaningful = true;
  std::string mid;
  for (const auto& l : report.layers) {
    eliminates = eliminates && l.selected_alpha && l.selection_at_selected.refused == 0;
    const double depth = normalized_depth(l.layer, spec.n_layers);
    if (depth < 0.40 || depth > 0.75) continue;
    mid += (mid.empty() ? "" : ",") + std::to_string(l.layer);
    meaningful = meaningful && l.evaluation_baseline.refused > 0 && l.adversarial_baseline.refused > 0;
    held_out_clean = held_out_clean && l.evaluation && l.adversarial && l.evaluation->refused == 0 &&
                     l.adversarial->refused == 0;
  }
  v.expect(eliminates, "selected alpha leaves no selection refusals at every layer");
  v.expect(meaningful, "held-out baselines refuse at mid layers " + mid);
  v.expect(held_out_clean, "held-out refusals 0 at mid layers " + mid);

  const ActivationSet leaky = select_subset(data.set, [](const PromptRecord& r) {
    return r.category == "eval" || (r.category == "sel" && r.prompt_id.ends_with("-3"));
  });
  bool leak_detected = false;
  try {
    select_alpha_clean(selection, leaky, adversarial, bank, layers, kDefaultAlphas, oracle);
  } catch (const Error& e) {
    leak_detected = e.code() == ErrorCode::kLeakage && std::string(e.what()).find("leakage") != std::string::npos;
  }
  v.expect(leak_detected, "overlapping sets raise the leakage error");
}

// 9. Behavioral arithmetic fixtures.
void behavioral_fixtures(Verdict& v) {
  auto round1 = [](double x) { return std::round(x * 10.0) / 10.0; };
  std::vector<BehaviorRecord> refusals;
  for (int i = 0; i < 72; ++i) refusals.push_back(testsupport::record("p" + std::to_string(i), "m", i < 17, i < 17 ? 0 : 3));
  const double pct = refusal_rate(refusals).percent();
  v.expect(round1(pct) == 23.6, "17/72 -> " + fmt(pct, 3) + "%");

  std::vector<BehaviorRecord> glm;
  for (int i = 0; i < 4; ++i) glm.push_back(testsupport::record("r" + std::to_string(i), "m", true, 0));
  const int scores[12] = {5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 4, 4};  // sum 58
  for (int i = 0; i < 12; ++i) glm.push_back(testsupport::record("s" + std::to_string(i), "m", false, scores[i]));
  const SteeringSummary s1 = steering_mean(glm);
  std::vector<BehaviorRecord> full;
  for (int i = 0; i < 16; ++i) full.push_back(testsupport::record("f" + std::to_string(i), "m", false, 5));
  const SteeringSummary s2 = steering_mean(full);
  v.expect(s1.mean && std::round(*s1.mean * 100) / 100 == 4.83 && s1.refusals == 4,
           "steering with 4/16 refusals " + fmt(s1.mean.value_or(-1), 3));
  v.expect(s2.mean && *s2.mean == 5.0 && s2.refusals == 0, "steering with 0/16 refusals " + fmt(s2.mean.value_or(-1), 2));

  const auto strong = classify_discrimination(74);
  const auto neutral = classify_discrimination(9);
  const auto edge = classify_discrimination(-10);
  v.expect(strong.cls == DiscriminationClass::kStrong, "+74 strong");
  v.expect(neutral.cls == DiscriminationClass::kNeutral && !neutral.on_boundary, "+9 neutral");
  v.expect(edge.cls == DiscriminationClass::kNeutral && edge.on_boundary, "-10 neutral with boundary flag");

  const std::vector<std::string> labels{"a", "b", "c", "a", "b", "c", "a"};
  v.expect(cohen_kappa(labels, labels) == 1.0, "identity kappa 1.0");
  std::vector<std::string> ra, rb;
  auto cell = [&](int n, const char* x, const char* y) {
    for (int i = 0; i < n; ++i) {
      ra.emplace_back(x);
      rb.emplace_back(y);
    }
  };
  cell(20, "yes", "yes");
  cell(5, "yes", "no");
  cell(10, "no", "yes");
  cell(15, "no", "no");
  const double k = cohen_kappa(ra, rb);
  v.expect(std::abs(k - 0.4) <= 1e-12, "[[20,5],[10,15]] kappa " + fmt(k, 6));

  const AgreementReport ag = agreement_report(testsupport::judge_fixture(), default_coarse_map(), "human");
  const double fine = 100.0 * ag.fine_agreement();
  const double coarse = 100.0 * ag.coarse_agreement();
  v.expect(std::round(fine) == 54.0, "fine agreement " + fmt(fine, 2) + "%");
  v.expect(round1(coarse) == 87.5, "coarse agreement " + fmt(coarse, 2) + "%");
  const double ev_h = ag.judge_rates.at("human").at("ccp_evasion").percent();
  const double ev_j = ag.judge_rates.at("judge").at("ccp_evasion").percent();
  v.expect(std::round(ev_h) == 16.0 && std::round(ev_j) == 45.0,
           "evasion rate human " + fmt(ev_h, 1) + "% vs judge " + fmt(ev_j, 1) + "%");
}

// 10. Evidence levels and gap warnings.
void evidence_grading(Verdict& v) {
  const EvidenceFlags cases[] = {{true, false, false, false},
                                 {true, true, false, false},
                                 {true, true, true, false},
                                 {true, true, true, true}};
  for (int i = 0; i < 4; ++i) {
    const EvidenceGrade g = evidence_level(cases[i]);
    v.expect(g.level == i + 1 && g.gaps.empty(), "contiguous case " + std::to_string(i + 1) + " -> " + g.level_name());
  }
  const EvidenceFlags gapped[] = {{true, false, true, false}, {false, true, false, false}, {true, true, false, true}};
  for (const auto& f : gapped) {
    const EvidenceGrade g = evidence_level(f);
    v.expect(!g.gaps.empty(), "non-contiguous -> level " + g.level_name() + " with " + std::to_string(g.gaps.size()) +
                                  " gap warning(s)");
  }
}

ActivationSet random_set(Rng& rng, std::size_t idx) {
  const std::size_t n = 1 + rng.uniform_index(6);
  const std::size_t d = 1 + rng.uniform_index(12);
  Manifest m;
  for (std::size_t i = 0; i < n; ++i) {
    PromptRecord r;
    r.prompt_id = "case" + std::to_string(idx) + "-" + std::to_string(i);
    r.topic = rng.uniform01() < 0.5 ? "history" : "cooking";
    r.category = "c" + std::to_string(rng.uniform_index(3));
    r.group = rng.uniform01() < 0.5 ? Group::kPositive : Group::kControl;
    r.language = rng.uniform01() < 0.5 ? Language::kEn : Language::kZh;
    if (rng.uniform01() < 0.3) r.intensity = 1 + static_cast<int>(rng.uniform_index(4));
    if (rng.uniform01() < 0.3) r.text = "天安门 \"quoted\"\n";
    m.push_back(std::move(r));
  }
  std::map<int, Matrix> layers;
  const std::size_t n_layers = 1 + rng.uniform_index(4);
  for (std::size_t l = 0; l < n_layers; ++l) {
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      std::uint32_t bits = static_cast<std::uint32_t>(rng.next_u64());
      float f;
      std::memcpy(&f, &bits, sizeof f);
      if (!std::isfinite(f)) f = -0.0f;
      x.data()[i] = f;
    }
    layers.emplace(static_cast<int>(3 * l + rng.uniform_index(3)), std::move(x));
  }
  return ActivationSet("model-" + std::to_string(idx % 7), std::move(m), std::move(layers),
                       {{"source", "fixture"}, {"case", idx}});
}

// 11. Container round trip and single-byte corruption detection.
void container_format(Verdict& v) {
  testsupport::TempDir tmp;
  Rng rng(1111);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const ActivationSet set = random_set(rng, i);
    const auto path = tmp / ("set" + std::to_string(i) + ".rlb");
    write_activation_set(set, path);
    if (bit_equal(set, read_activation_set(path))) ++exact;
    std::filesystem::remove(path);
  }
  v.expect(exact == 1000, std::to_string(exact) + "/1000 bit-exact round trips");

  std::size_t flips = 0, detected = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const ActivationSet set = random_set(rng, 5000 + c);
    const auto path = tmp / "victim.rlb";
    write_activation_set(set, path);
    std::vector<char> bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    for (std::size_t pos = 0; pos < bytes.size(); ++pos) {
      std::vector<char> bad = bytes;
      bad[pos] = static_cast<char>(bad[pos] ^ static_cast<char>(1 + rng.uniform_index(255)));
      const auto bad_path = tmp / "flipped.rlb";
      {
        std::ofstream out(bad_path, std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
      }
      ++flips;
      try {
        read_activation_set(bad_path);
      } catch (const Error&) {
        ++detected;
      }
    }
  }
  v.expect(flips > 0 && detected == flips, std::to_string(detected) + "/" + std::to_string(flips) + " byte flips detected");
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Verdict&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "free-separability", free_separability},   {2, "cv-informativeness", cv_informativeness},
      {3, "ablation-algebra", ablation_algebra},     {4, "routing-surgery", routing_surgery},
      {5, "entanglement-confabulation", entanglement}, {6, "residualization", residualization},
      {7, "bootstrap-statistics", bootstrap_statistics}, {8, "clean-alpha-selection", clean_alpha},
      {9, "behavioral-fixtures", behavioral_fixtures}, {10, "evidence-grading", evidence_grading},
      {11, "container-format", container_format},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.contains(c.id)) continue;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "[EXCEPTION] " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << " (" << fmt(secs, 1)
              << "s): " << v.detail.str() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
