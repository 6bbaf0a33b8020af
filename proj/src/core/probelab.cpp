#include "routelab/probelab.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <Eigen/Cholesky>

#include "routelab/error.hpp"
#include "routelab/parallel.hpp"
#include "routelab/rng.hpp"

namespace routelab {

double ProbeModel::score(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  if (x.size() != weights.size()) {
    fail(ErrorCode::kDimensionMismatch, "probe expects " + std::to_string(weights.size()) +
                                            " features, got " + std::to_string(x.size()));
  }
  return x.dot(weights.transpose()) + bias;
}

Eigen::MatrixXd to_double(const Matrix& m) { return m.cast<double>(); }

Eigen::MatrixXd gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i])).cast<double>();
  }
  return out;
}

namespace {

Eigen::VectorXd signed_labels(std::span<const int> labels) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    y(static_cast<Eigen::Index>(i)) = labels[i] != 0 ? 1.0 : -1.0;
  }
  return y;
}

void check_labels(std::size_t rows, std::span<const int> labels) {
  if (labels.size() != rows) {
    fail(ErrorCode::kDimensionMismatch, "have " + std::to_string(labels.size()) + " labels for " +
                                            std::to_string(rows) + " rows");
  }
}

}  // namespace

ProbeModel fit_ridge(const Eigen::MatrixXd& features, std::span<const int> labels, double lambda,
                     int layer) {
  const auto n = features.rows();
  const auto d = features.cols();
  check_labels(static_cast<std::size_t>(n), labels);
  if (n < 2) fail(ErrorCode::kInvalidArgument, "ridge fit needs at least two rows");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    fail(ErrorCode::kInvalidArgument, "ridge lambda must be positive");
  }
  const auto positives = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  if (positives == 0 || positives == n) {
    fail(ErrorCode::kSingleClass, "ridge fit needs both classes present");
  }

  const Eigen::RowVectorXd mu = features.colwise().mean();
  const Eigen::MatrixXd xc = features.rowwise() - mu;
  const Eigen::VectorXd y = signed_labels(labels);
  const double y_mean = y.mean();
  const Eigen::VectorXd yc = y.array() - y_mean;

  ProbeModel model;
  model.lambda = lambda;
  model.layer = layer;
  if (d <= n) {
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += lambda;
    model.weights = gram.llt().solve(xc.transpose() * yc);
    model.solver = "primal";
  } else {
    // (Xc Xc' + lambda I) a = yc, w = Xc' a. Same solution as the primal system.
    Eigen::MatrixXd kernel = xc * xc.transpose();
    kernel.diagonal().array() += lambda;
    const Eigen::VectorXd a = kernel.llt().solve(yc);
    model.weights = xc.transpose() * a;
    model.solver = "dual";
  }
  model.bias = y_mean - mu.dot(model.weights.transpose());

  const Eigen::VectorXd rhs = xc.transpose() * yc;
  const Eigen::VectorXd residual = xc.transpose() * (xc * model.weights) + lambda * model.weights - rhs;
  const double scale = rhs.norm();
  model.relative_residual = scale > 0.0 ? residual.norm() / scale : residual.norm();
  if (!model.weights.allFinite() || !std::isfinite(model.bias)) {
    fail(ErrorCode::kNonFinite, "ridge solve produced non-finite weights");
  }
  return model;
}

std::vector<int> predict(const ProbeModel& model, const Eigen::MatrixXd& features) {
  if (features.cols() != model.weights.size()) {
    fail(ErrorCode::kDimensionMismatch, "probe expects " + std::to_string(model.weights.size()) +
                                            " features, got " + std::to_string(features.cols()));
  }
  const Eigen::VectorXd scores = (features * model.weights).array() + model.bias;
  std::vector<int> out(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) out[static_cast<std::size_t>(i)] = scores(i) > 0.0;
  return out;
}

double train_accuracy(const ProbeModel& model, const Eigen::MatrixXd& features,
                      std::span<const int> labels) {
  check_labels(static_cast<std::size_t>(features.rows()), labels);
  if (labels.empty()) fail(ErrorCode::kInvalidArgument, "no rows to score");
  const auto predicted = predict(model, features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == (labels[i] != 0);
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double normal_equation_residual(const ProbeModel& model, const Eigen::MatrixXd& features,
                                std::span<const int> labels) {
  check_labels(static_cast<std::size_t>(features.rows()), labels);
  const Eigen::RowVectorXd mu = features.colwise().mean();
  const Eigen::MatrixXd xc = features.rowwise() - mu;
  const Eigen::VectorXd y = signed_labels(labels);
  const Eigen::VectorXd yc = y.array() - y.mean();
  const Eigen::VectorXd rhs = xc.transpose() * yc;
  const Eigen::VectorXd r = xc.transpose() * (xc * model.weights) + model.lambda * model.weights - rhs;
  return rhs.norm() > 0.0 ? r.norm() / rhs.norm() : r.norm();
}

std::vector<int> labels_from(const Manifest& manifest, const PromptFilter& positive) {
  std::vector<int> labels(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) labels[i] = positive.matches(manifest[i]) ? 1 : 0;
  return labels;
}

// ---------------------------------------------------------------------------
// Fold plans

const char* to_string(FoldScheme s) {
  return s == FoldScheme::kLeaveOneCategoryOut ? "leave_one_category_out" : "stratified_k_fold";
}

void validate_plan(const FoldPlan& plan, std::size_t n_rows) {
  if (plan.folds.size() < 2) fail(ErrorCode::kInvalidArgument, "fold plan needs at least two folds");
  std::vector<int> seen(n_rows, 0);
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const Fold& fold = plan.folds[f];
    if (fold.test.empty() || fold.train.empty()) {
      fail(ErrorCode::kInvalidArgument, "fold " + std::to_string(f) + " has an empty train or test set");
    }
    std::set<std::size_t> train(fold.train.begin(), fold.train.end());
    for (std::size_t r : fold.test) {
      if (r >= n_rows) fail(ErrorCode::kInvalidArgument, "fold row index out of range");
      if (train.contains(r)) {
        fail(ErrorCode::kInvalidArgument,
             "fold " + std::to_string(f) + " uses row " + std::to_string(r) + " for train and test");
      }
      ++seen[r];
    }
    for (std::size_t r : fold.train) {
      if (r >= n_rows) fail(ErrorCode::kInvalidArgument, "fold row index out of range");
    }
  }
  for (std::size_t r = 0; r < n_rows; ++r) {
    if (seen[r] != 1) {
      fail(ErrorCode::kInvalidArgument, "row " + std::to_string(r) + " appears in " +
                                            std::to_string(seen[r]) + " test sets (expected 1)");
    }
  }
}

FoldPlan build_loco_folds(const Manifest& manifest) {
  return build_loco_folds(manifest, labels_from(manifest, PromptFilter::of_group(Group::kPositive)));
}

FoldPlan build_loco_folds(const Manifest& manifest, std::span<const int> labels) {
  check_labels(manifest.size(), labels);
  std::map<std::string, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < manifest.size(); ++i) by_category[manifest[i].category].push_back(i);
  if (by_category.size() < 2) {
    fail(ErrorCode::kInvalidArgument, "leave-one-category-out needs at least two categories");
  }
  FoldPlan plan;
  plan.scheme = FoldScheme::kLeaveOneCategoryOut;
  for (const auto& [category, rows] : by_category) {
    bool has_pos = false, has_neg = false;
    for (std::size_t r : rows) (labels[r] ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) {
      fail(ErrorCode::kInvalidArgument,
           "category '" + category + "' contains a single group and cannot be scored");
    }
    Fold fold;
    fold.category = category;
    fold.test = rows;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      if (manifest[i].category != category) fold.train.push_back(i);
    }
    plan.folds.push_back(std::move(fold));
  }
  validate_plan(plan, manifest.size());
  return plan;
}

FoldPlan build_stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) fail(ErrorCode::kInvalidArgument, "stratified k-fold needs k >= 2");
  if (labels.size() < k) fail(ErrorCode::kInvalidArgument, "fewer rows than folds");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  Rng rng(derive_seed(seed, streams::kFolds, 0));
  rng.shuffle(std::span(pos));
  rng.shuffle(std::span(neg));

  std::vector<std::vector<std::size_t>> test(k);
  std::size_t slot = 0;
  for (const auto* cls : {&pos, &neg}) {
    for (std::size_t r : *cls) test[slot++ % k].push_back(r);
  }
  FoldPlan plan;
  plan.scheme = FoldScheme::kStratifiedKFold;
  for (std::size_t f = 0; f < k; ++f) {
    Fold fold;
    std::sort(test[f].begin(), test[f].end());
    std::vector<char> in_test(labels.size(), 0);
    for (std::size_t r : test[f]) in_test[r] = 1;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!in_test[i]) fold.train.push_back(i);
    }
    fold.test = std::move(test[f]);
    plan.folds.push_back(std::move(fold));
  }
  validate_plan(plan, labels.size());
  return plan;
}

// ---------------------------------------------------------------------------
// Cross-validation

namespace {

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

std::vector<int> take_labels(std::span<const int> labels, std::span<const std::size_t> rows) {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
  return out;
}

}  // namespace

CvResult cross_validate(const Eigen::MatrixXd& features, std::span<const int> labels,
                        const FoldPlan& plan, double lambda) {
  check_labels(static_cast<std::size_t>(features.rows()), labels);
  validate_plan(plan, labels.size());
  CvResult result;
  for (const Fold& fold : plan.folds) {
    const auto train_labels = take_labels(labels, fold.train);
    const ProbeModel model = fit_ridge(take_rows(features, fold.train), train_labels, lambda);
    const auto test_labels = take_labels(labels, fold.test);
    result.fold_accuracies.push_back(
        train_accuracy(model, take_rows(features, fold.test), test_labels));
  }
  result.mean = std::accumulate(result.fold_accuracies.begin(), result.fold_accuracies.end(), 0.0) /
                static_cast<double>(result.fold_accuracies.size());
  return result;
}

CvResult cross_validate(const ActivationSet& set, int layer, const FoldPlan& plan, double lambda,
                        const PromptFilter& positive) {
  return cross_validate(to_double(set.layer(layer)), labels_from(set.manifest(), positive), plan,
                        lambda);
}

PermutationResult permutation_baseline(const Eigen::MatrixXd& features, std::span<const int> labels,
                                       const Manifest& manifest, const PermutationOptions& options) {
  if (options.n_permutations < 1) fail(ErrorCode::kInvalidArgument, "need at least one permutation");
  check_labels(static_cast<std::size_t>(features.rows()), labels);
  std::optional<FoldPlan> loco;
  if (options.scheme == FoldScheme::kLeaveOneCategoryOut) loco = build_loco_folds(manifest, labels);

  PermutationResult result;
  result.train_accuracies.assign(options.n_permutations, 0.0);
  result.cv_means.assign(options.n_permutations, 0.0);
  const std::vector<int> base(labels.begin(), labels.end());
  parallel_for(options.n_permutations, options.jobs, [&](std::size_t i) {
    const std::uint64_t sub_seed = derive_seed(options.seed, streams::kPermutation, i);
    Rng rng(sub_seed);
    std::vector<int> shuffled = base;
    rng.shuffle(std::span(shuffled));
    const ProbeModel model = fit_ridge(features, shuffled, options.lambda);
    result.train_accuracies[i] = train_accuracy(model, features, shuffled);
    const FoldPlan plan = loco ? *loco : build_stratified_folds(shuffled, options.k, sub_seed);
    result.cv_means[i] = cross_validate(features, shuffled, plan, options.lambda).mean;
  });
  return result;
}

PermutationResult permutation_baseline(const ActivationSet& set, int layer,
                                       const PermutationOptions& options,
                                       const PromptFilter& positive) {
  return permutation_baseline(to_double(set.layer(layer)), labels_from(set.manifest(), positive),
                              set.manifest(), options);
}

// ---------------------------------------------------------------------------
// Report

ProbeReport run_probe(const ActivationSet& set, std::span<const int> layers,
                      const ProbeOptions& options) {
  ProbeReport report;
  report.n = set.rows();
  report.d = set.dim();
  report.lambda = options.lambda;
  report.scheme = options.scheme;
  report.k = options.k;
  report.n_permutations = options.n_permutations;
  report.seed = options.seed;
  report.model_id = set.model_id();
  report.positive = options.positive;

  const auto labels = labels_from(set.manifest(), options.positive);
  const FoldPlan plan = options.scheme == FoldScheme::kLeaveOneCategoryOut
                            ? build_loco_folds(set.manifest(), labels)
                            : build_stratified_folds(labels, options.k, options.seed);
  for (int layer : layers) {
    const Eigen::MatrixXd x = to_double(set.layer(layer));
    LayerProbe lp;
    lp.layer = layer;
    const ProbeModel model = fit_ridge(x, labels, options.lambda, layer);
    lp.train_accuracy = train_accuracy(model, x, labels);
    const CvResult cv = cross_validate(x, labels, plan, options.lambda);
    lp.cv_fold_accuracies = cv.fold_accuracies;
    lp.cv_mean = cv.mean;
    for (const auto& f : plan.folds) lp.fold_categories.push_back(f.category);
    if (options.n_permutations > 0) {
      PermutationOptions po;
      po.n_permutations = options.n_permutations;
      po.lambda = options.lambda;
      po.scheme = options.scheme;
      po.k = options.k;
      // Each layer gets its own permutation stream.
      po.seed = derive_seed(options.seed, streams::kPermutation, static_cast<std::uint64_t>(layer));
      po.jobs = options.jobs;
      const auto perm = permutation_baseline(x, labels, set.manifest(), po);
      lp.permutation_train_accuracies = perm.train_accuracies;
      lp.permutation_cv_means = perm.cv_means;
    }
    report.layers.push_back(std::move(lp));
  }
  return report;
}

nlohmann::json to_json(const ProbeReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& lp : report.layers) {
    layers.push_back({{"layer", lp.layer},
                      {"train_accuracy", lp.train_accuracy},
                      {"cv_fold_accuracies", lp.cv_fold_accuracies},
                      {"fold_categories", lp.fold_categories},
                      {"cv_mean", lp.cv_mean},
                      {"permutation_train_accuracies", lp.permutation_train_accuracies},
                      {"permutation_cv_means", lp.permutation_cv_means}});
  }
  return {{"model_id", report.model_id},
          {"n", report.n},
          {"d", report.d},
          {"lambda", report.lambda},
          {"fold_scheme", to_string(report.scheme)},
          {"k", report.k},
          {"n_permutations", report.n_permutations},
          {"seed", report.seed},
          {"positive_filter", to_json(report.positive)},
          {"intercept", "mean_centered"},
          {"label_encoding", "plus_minus_one"},
          {"feature_scaling", "none"},
          {"layers", layers}};
}

ProbeReport probe_report_from_json(const nlohmann::json& j) {
  ProbeReport r;
  try {
    r.model_id = j.value("model_id", std::string{});
    r.n = j.at("n").get<std::size_t>();
    r.d = j.at("d").get<std::size_t>();
    r.lambda = j.at("lambda").get<double>();
    r.scheme = j.at("fold_scheme").get<std::string>() == "leave_one_category_out"
                   ? FoldScheme::kLeaveOneCategoryOut
                   : FoldScheme::kStratifiedKFold;
    r.k = j.value("k", std::size_t{6});
    r.n_permutations = j.value("n_permutations", std::size_t{0});
    r.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("positive_filter")) r.positive = filter_from_json(j["positive_filter"]);
    for (const auto& l : j.at("layers")) {
      LayerProbe lp;
      lp.layer = l.at("layer").get<int>();
      lp.train_accuracy = l.at("train_accuracy").get<double>();
      lp.cv_fold_accuracies = l.value("cv_fold_accuracies", std::vector<double>{});
      lp.fold_categories = l.value("fold_categories", std::vector<std::string>{});
      lp.cv_mean = l.at("cv_mean").get<double>();
      lp.permutation_train_accuracies = l.value("permutation_train_accuracies", std::vector<double>{});
      lp.permutation_cv_means = l.value("permutation_cv_means", std::vector<double>{});
      r.layers.push_back(std::move(lp));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed probe report: ") + e.what());
  }
  return r;
}

BandSummary layer_band_summary(const ProbeReport& report, double band_low, double band_high,
                               std::optional<int> model_depth) {
  if (report.layers.empty()) fail(ErrorCode::kEmptyBand, "probe report has no layers");
  if (band_low > band_high) fail(ErrorCode::kInvalidArgument, "band bounds are reversed");
  BandSummary s;
  s.band_low = band_low;
  s.band_high = band_high;
  int max_layer = 0;
  for (const auto& lp : report.layers) max_layer = std::max(max_layer, lp.layer);
  s.model_depth = model_depth.value_or(max_layer + 1);
  if (s.model_depth < 2) fail(ErrorCode::kInvalidArgument, "model depth must be at least 2");

  double sum = 0.0;
  bool have_best = false;
  for (const auto& lp : report.layers) {
    const double depth = static_cast<double>(lp.layer) / static_cast<double>(s.model_depth - 1);
    if (depth >= band_low && depth <= band_high) {
      s.band_layers.push_back(lp.layer);
      sum += lp.cv_mean;
    }
    if (!have_best || lp.cv_mean > s.best_cv) {
      s.best_cv = lp.cv_mean;
      s.best_layer = lp.layer;
      have_best = true;
    }
  }
  if (s.band_layers.empty()) {
    fail(ErrorCode::kEmptyBand, "no probed layer falls inside the depth band");
  }
  s.band_mean = sum / static_cast<double>(s.band_layers.size());
  s.gap_pp = (s.best_cv - s.band_mean) * 100.0;
  return s;
}

nlohmann::json to_json(const BandSummary& s) {
  return {{"band", {s.band_low, s.band_high}},
          {"model_depth", s.model_depth},
          {"band_layers", s.band_layers},
          {"band_mean_cv", s.band_mean},
          {"best_layer", s.best_layer},
          {"best_cv", s.best_cv},
          {"gap_pp", s.gap_pp}};
}

}  // namespace routelab
