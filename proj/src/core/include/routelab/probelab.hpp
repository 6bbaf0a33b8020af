#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "routelab/prompt.hpp"
#include "routelab/tensorstore.hpp"

namespace routelab {

// Ridge classifier on raw features. Labels are mapped to +1/-1, features and
// labels are mean-centred so the intercept is not penalized.
struct ProbeModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double lambda = 1.0;
  int layer = -1;
  // ||(Xc'Xc + lambda I) w - Xc'yc|| / ||Xc'yc|| at fit time.
  double relative_residual = 0.0;
  std::string solver;  // "primal" (d <= n) or "dual"

  // x.w + b; a score of exactly 0 is classified as control.
  double score(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  int predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return score(x) > 0.0 ? 1 : 0; }
};

Eigen::MatrixXd to_double(const Matrix& m);
Eigen::MatrixXd gather_rows(const Matrix& m, std::span<const std::size_t> rows);

ProbeModel fit_ridge(const Eigen::MatrixXd& features, std::span<const int> labels, double lambda,
                     int layer = -1);
std::vector<int> predict(const ProbeModel& model, const Eigen::MatrixXd& features);
double train_accuracy(const ProbeModel& model, const Eigen::MatrixXd& features,
                      std::span<const int> labels);

// Relative normal-equation residual of `model` on (features, labels).
double normal_equation_residual(const ProbeModel& model, const Eigen::MatrixXd& features,
                                std::span<const int> labels);

// 1 for rows matching `positive`, 0 otherwise.
std::vector<int> labels_from(const Manifest& manifest, const PromptFilter& positive);

enum class FoldScheme { kStratifiedKFold, kLeaveOneCategoryOut };
const char* to_string(FoldScheme s);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::string category;  // held-out category for LOCO folds
};

struct FoldPlan {
  FoldScheme scheme = FoldScheme::kStratifiedKFold;
  std::vector<Fold> folds;
};

// Disjoint, exhaustive test sets; no row both train and test in a fold.
void validate_plan(const FoldPlan& plan, std::size_t n_rows);

// One fold per category (sorted by name); each category must contain both
// label classes. The group-based overload uses positive/control.
FoldPlan build_loco_folds(const Manifest& manifest);
FoldPlan build_loco_folds(const Manifest& manifest, std::span<const int> labels);

// Each class is shuffled with `seed` and dealt round-robin into k folds.
FoldPlan build_stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed);

struct CvResult {
  std::vector<double> fold_accuracies;
  double mean = 0.0;
};

CvResult cross_validate(const Eigen::MatrixXd& features, std::span<const int> labels,
                        const FoldPlan& plan, double lambda);
CvResult cross_validate(const ActivationSet& set, int layer, const FoldPlan& plan, double lambda,
                        const PromptFilter& positive = PromptFilter::of_group(Group::kPositive));

struct PermutationResult {
  std::vector<double> train_accuracies;
  std::vector<double> cv_means;
};

struct PermutationOptions {
  std::size_t n_permutations = 200;
  double lambda = 1.0;
  FoldScheme scheme = FoldScheme::kStratifiedKFold;
  std::size_t k = 6;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

// Refits on uniformly shuffled labels. Permutation i draws from
// derive_seed(seed, kPermutation, i); stratified folds for permutation i are
// rebuilt on the shuffled labels. LOCO folds come from `manifest`.
PermutationResult permutation_baseline(const Eigen::MatrixXd& features, std::span<const int> labels,
                                       const Manifest& manifest, const PermutationOptions& options);
PermutationResult permutation_baseline(const ActivationSet& set, int layer,
                                       const PermutationOptions& options,
                                       const PromptFilter& positive = PromptFilter::of_group(Group::kPositive));

struct ProbeOptions {
  double lambda = 1.0;
  FoldScheme scheme = FoldScheme::kStratifiedKFold;
  std::size_t k = 6;
  std::size_t n_permutations = 200;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  PromptFilter positive = PromptFilter::of_group(Group::kPositive);
};

struct LayerProbe {
  int layer = 0;
  double train_accuracy = 0.0;
  std::vector<double> cv_fold_accuracies;
  std::vector<std::string> fold_categories;
  double cv_mean = 0.0;
  std::vector<double> permutation_train_accuracies;
  std::vector<double> permutation_cv_means;
};

struct ProbeReport {
  std::vector<LayerProbe> layers;
  std::size_t n = 0;
  std::size_t d = 0;
  double lambda = 1.0;
  FoldScheme scheme = FoldScheme::kStratifiedKFold;
  std::size_t k = 6;
  std::size_t n_permutations = 0;
  std::uint64_t seed = 0;
  std::string model_id;
  PromptFilter positive;
};

ProbeReport run_probe(const ActivationSet& set, std::span<const int> layers,
                      const ProbeOptions& options);

nlohmann::json to_json(const ProbeReport& report);
ProbeReport probe_report_from_json(const nlohmann::json& j);

struct BandSummary {
  double band_low = 0.40;
  double band_high = 0.75;
  int model_depth = 0;
  std::vector<int> band_layers;
  double band_mean = 0.0;
  int best_layer = 0;
  double best_cv = 0.0;
  double gap_pp = 0.0;  // (best - band mean) * 100
};

// Layer l is in the band when l / (model_depth - 1) lies in [low, high].
// model_depth defaults to (largest reported layer + 1).
BandSummary layer_band_summary(const ProbeReport& report, double band_low = 0.40,
                               double band_high = 0.75, std::optional<int> model_depth = {});

nlohmann::json to_json(const BandSummary& s);

}  // namespace routelab
