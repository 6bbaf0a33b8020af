#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "routelab/tensorstore.hpp"

namespace routelab {

enum class DirectionKind { kPolitical, kSafety, kSentiment, kFormality, kRandom, kCustom };
const char* to_string(DirectionKind k);
DirectionKind parse_direction_kind(const std::string& s);

struct Direction {
  Eigen::VectorXd vector;  // unit norm
  int layer = 0;
  DirectionKind kind = DirectionKind::kCustom;
  std::string corpus_id;
  std::size_t n_pos = 1;
  std::size_t n_neg = 1;
  std::string model_id;

  std::size_t dim() const { return static_cast<std::size_t>(vector.size()); }
};

inline constexpr double kUnitTolerance = 1e-6;

// Throws kDegenerate unless |‖v‖ - 1| <= kUnitTolerance.
void require_unit(const Eigen::VectorXd& v, const std::string& what);

// Normalizes `raw`; throws kDegenerate for a zero (or numerically zero) vector.
Eigen::VectorXd normalized(const Eigen::VectorXd& raw, const std::string& what);

// Seeded uniform direction on the unit sphere.
Direction random_direction(std::size_t dim, std::uint64_t seed, int layer = 0);

void write_direction(const Direction& dir, const std::filesystem::path& path);
Direction read_direction(const std::filesystem::path& path);
nlohmann::json direction_info(const Direction& dir);

// A pair of row selections whose mean difference defines a direction.
struct Contrast {
  PromptPredicate positive;
  PromptPredicate negative;
};

// mean(rows in pos) - mean(rows in neg), accumulated in double.
Eigen::VectorXd mean_difference(const Matrix& layer, std::span<const std::size_t> pos_rows,
                                std::span<const std::size_t> neg_rows);

Direction extract_direction(const ActivationSet& set, int layer, const Contrast& contrast,
                            DirectionKind kind = DirectionKind::kCustom,
                            const std::string& corpus_id = {});

// Dot product over the product of norms, clamped to [-1, 1]. Identical
// inputs give exactly 1 and negated inputs exactly -1.
double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double cosine(const Direction& a, const Direction& b);

// layer / (n_layers - 1)
double normalized_depth(int layer, int n_layers);

// Type-7 (linear interpolation) sample quantile of `values`, q in [0, 1].
double quantile(std::vector<double> values, double q);

struct BootstrapOptions {
  std::size_t n_iter = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::optional<int> n_layers;  // for normalized depth; defaults to set's max layer + 1
};

struct CosineInterval {
  int layer = 0;
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double level = 0.95;
  std::size_t n_bootstrap = 0;
  double normalized_depth = 0.0;
  std::size_t redraws = 0;  // degenerate resamples that were redrawn
  bool point_in_ci = true;
  std::string method = "percentile";

  double width() const { return ci_high - ci_low; }
};

nlohmann::json to_json(const CosineInterval& c);

// Percentile bootstrap CI for cosine(direction A, direction B). Every
// iteration resamples each distinct class (by row set) with replacement; a
// class shared between A and B is resampled once and reused.
CosineInterval bootstrap_cosine_ci(const ActivationSet& set, int layer, const Contrast& a,
                                   const Contrast& b, const BootstrapOptions& options);

struct CosineSeries {
  std::vector<CosineInterval> entries;
};
nlohmann::json to_json(const CosineSeries& s);
CosineSeries cosine_series_from_json(const nlohmann::json& j);

CosineSeries bootstrap_cosine_series(const ActivationSet& set, std::span<const int> layers,
                                     const Contrast& a, const Contrast& b,
                                     const BootstrapOptions& options);

struct ConvergenceOptions {
  std::vector<std::size_t> sizes{8, 16, 32, 60, 90};
  std::size_t n_iter = 500;        // bootstrap iterations per subsample
  std::size_t n_subsamples = 10;   // subsample draws averaged per size
  double level = 0.95;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

struct ConvergencePoint {
  std::size_t size = 0;
  double mean_width = 0.0;
  std::vector<double> widths;  // one per subsample
};

struct ConvergenceCurve {
  int layer = 0;
  std::size_t pool_pairs = 0;
  std::vector<ConvergencePoint> points;
  std::size_t redraws = 0;
};

nlohmann::json to_json(const ConvergenceCurve& c);

// Pairs (pos row, neg row) from a contrast: by shared pair_id when every
// positive has a partner, otherwise by order within each side.
std::vector<std::pair<std::size_t, std::size_t>> contrast_pairs(const Manifest& manifest,
                                                                const Contrast& pairs);

// CI width of cosine(reference direction, pair direction) as a function of
// the number of pairs. For each size, n_subsamples subsets of pairs are drawn
// without replacement; within each, n_iter bootstrap iterations resample the
// pairs (pair-level) and the reference classes with replacement.
ConvergenceCurve convergence_analysis(const ActivationSet& set, int layer, const Contrast& reference,
                                      const Contrast& pairs, const ConvergenceOptions& options);

struct StabilityResult {
  int layer = 0;
  std::vector<double> cosines;  // in iteration order
  double median = 0.0;
  double mean = 0.0;
  double q05 = 0.0;
  double q95 = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  bool small_sample = false;  // fewer than kSmallSampleThreshold rows in a class
  std::size_t redraws = 0;
};

inline constexpr std::size_t kSmallSampleThreshold = 8;

nlohmann::json to_json(const StabilityResult& s, bool include_samples = false);

StabilityResult direction_stability(const ActivationSet& set, int layer, const Contrast& contrast,
                                    const BootstrapOptions& options);

struct TransferReport {
  bool compatible = false;
  std::optional<double> cosine;
  std::string foreign_model;
  std::string native_model;
  std::size_t foreign_dim = 0;
  std::size_t native_dim = 0;
};

nlohmann::json to_json(const TransferReport& t);
TransferReport transfer_check(const Direction& foreign, const Direction& native);

}  // namespace routelab
