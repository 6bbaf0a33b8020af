#include "routelab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "routelab/error.hpp"
#include "routelab/parallel.hpp"
#include "routelab/rng.hpp"

namespace routelab {

namespace {

constexpr const char* kDirectionFormat = "routelab.direction";
constexpr std::size_t kMaxRedraws = 1000;
// Mean differences below this norm (relative to the class means) are treated
// as zero and cannot be normalized.
constexpr double kZeroRelative = 1e-12;

}  // namespace

const char* to_string(DirectionKind k) {
  switch (k) {
    case DirectionKind::kPolitical: return "political";
    case DirectionKind::kSafety: return "safety";
    case DirectionKind::kSentiment: return "sentiment";
    case DirectionKind::kFormality: return "formality";
    case DirectionKind::kRandom: return "random";
    case DirectionKind::kCustom: return "custom";
  }
  return "custom";
}

DirectionKind parse_direction_kind(const std::string& s) {
  for (auto k : {DirectionKind::kPolitical, DirectionKind::kSafety, DirectionKind::kSentiment,
                 DirectionKind::kFormality, DirectionKind::kRandom, DirectionKind::kCustom}) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorCode::kInvalidArgument, "unknown direction kind '" + s + "'");
}

void require_unit(const Eigen::VectorXd& v, const std::string& what) {
  const double n = v.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > kUnitTolerance) {
    fail(ErrorCode::kDegenerate, what + " is not unit norm (norm " + std::to_string(n) + ")");
  }
}

Eigen::VectorXd normalized(const Eigen::VectorXd& raw, const std::string& what) {
  const double n = raw.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    fail(ErrorCode::kDegenerate, what + " is a zero vector and cannot be normalized");
  }
  return raw / n;
}

Direction random_direction(std::size_t dim, std::uint64_t seed, int layer) {
  if (dim == 0) fail(ErrorCode::kInvalidArgument, "random direction needs dim > 0");
  Rng rng(derive_seed(seed, streams::kRandomDir, static_cast<std::uint64_t>(layer)));
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  Direction d;
  d.vector = normalized(v, "random direction");
  d.layer = layer;
  d.kind = DirectionKind::kRandom;
  d.corpus_id = "random:" + std::to_string(seed);
  return d;
}

void write_direction(const Direction& dir, const std::filesystem::path& path) {
  require_unit(dir.vector, "direction");
  nlohmann::json header = direction_info(dir);
  header["format"] = kDirectionFormat;
  std::vector<float> values(dir.dim());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<float>(dir.vector(static_cast<Eigen::Index>(i)));
  }
  write_framed(path, std::move(header), {"vector"}, {std::span<const float>(values)});
}

Direction read_direction(const std::filesystem::path& path) {
  FramedFile file = read_framed(path, kDirectionFormat);
  if (file.blocks.size() != 1) fail(ErrorCode::kFormat, "direction file must hold one block");
  const auto& h = file.header;
  Direction d;
  try {
    d.layer = h.at("layer").get<int>();
    d.kind = parse_direction_kind(h.at("kind").get<std::string>());
    d.corpus_id = h.value("corpus_id", std::string{});
    d.n_pos = h.value("n_pos", std::size_t{1});
    d.n_neg = h.value("n_neg", std::size_t{1});
    d.model_id = h.value("model_id", std::string{});
    if (h.at("d").get<std::size_t>() != file.blocks[0].size()) {
      fail(ErrorCode::kTruncated, "direction block length differs from header d");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed direction header: ") + e.what());
  }
  d.vector = Eigen::Map<const Eigen::VectorXf>(file.blocks[0].data(),
                                               static_cast<Eigen::Index>(file.blocks[0].size()))
                 .cast<double>();
  require_unit(d.vector, "stored direction");
  return d;
}

nlohmann::json direction_info(const Direction& dir) {
  return {{"layer", dir.layer},     {"kind", to_string(dir.kind)}, {"corpus_id", dir.corpus_id},
          {"n_pos", dir.n_pos},     {"n_neg", dir.n_neg},          {"model_id", dir.model_id},
          {"d", dir.dim()}};
}

Eigen::VectorXd mean_difference(const Matrix& layer, std::span<const std::size_t> pos_rows,
                                std::span<const std::size_t> neg_rows) {
  if (pos_rows.empty() || neg_rows.empty()) {
    fail(ErrorCode::kEmptySelection, "direction extraction needs non-empty positive and negative sets");
  }
  Eigen::VectorXd pos = Eigen::VectorXd::Zero(layer.cols());
  Eigen::VectorXd neg = Eigen::VectorXd::Zero(layer.cols());
  for (std::size_t r : pos_rows) pos += layer.row(static_cast<Eigen::Index>(r)).transpose().cast<double>();
  for (std::size_t r : neg_rows) neg += layer.row(static_cast<Eigen::Index>(r)).transpose().cast<double>();
  pos /= static_cast<double>(pos_rows.size());
  neg /= static_cast<double>(neg_rows.size());
  Eigen::VectorXd diff = pos - neg;
  const double scale = std::max({pos.norm(), neg.norm(), 1.0});
  if (diff.norm() <= kZeroRelative * scale) diff.setZero();
  return diff;
}

Direction extract_direction(const ActivationSet& set, int layer, const Contrast& contrast,
                            DirectionKind kind, const std::string& corpus_id) {
  const auto pos = matching_rows(set.manifest(), contrast.positive);
  const auto neg = matching_rows(set.manifest(), contrast.negative);
  if (pos.empty()) fail(ErrorCode::kEmptySelection, "positive selection matched no prompts");
  if (neg.empty()) fail(ErrorCode::kEmptySelection, "negative selection matched no prompts");
  Direction d;
  d.vector = normalized(mean_difference(set.layer(layer), pos, neg), "class mean difference");
  d.layer = layer;
  d.kind = kind;
  d.corpus_id = corpus_id;
  d.n_pos = pos.size();
  d.n_neg = neg.size();
  d.model_id = set.model_id();
  return d;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kDimensionMismatch, "cosine between vectors of dimension " +
                                            std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  const double aa = a.dot(a);
  const double bb = b.dot(b);
  if (!(aa > 0.0) || !(bb > 0.0)) fail(ErrorCode::kDegenerate, "cosine of a zero vector");
  // sqrt(x*x) == x exactly in IEEE arithmetic, so cosine(v, v) is exactly 1.
  const double c = a.dot(b) / std::sqrt(aa * bb);
  return std::clamp(c, -1.0, 1.0);
}

double cosine(const Direction& a, const Direction& b) { return cosine(a.vector, b.vector); }

double normalized_depth(int layer, int n_layers) {
  if (n_layers < 2) return 0.0;
  return static_cast<double>(layer) / static_cast<double>(n_layers - 1);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) fail(ErrorCode::kInvalidArgument, "quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) fail(ErrorCode::kInvalidArgument, "quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// ---------------------------------------------------------------------------
// Bootstrap helpers

namespace {

int default_layers(const ActivationSet& set, const std::optional<int>& n_layers) {
  if (n_layers) return *n_layers;
  const auto layers = set.layers();
  return layers.empty() ? 1 : layers.back() + 1;
}

// Distinct row-sets among a list of classes; `slot[i]` maps class i to its
// distinct set so shared classes get one shared resample per iteration.
struct ClassTable {
  std::vector<std::vector<std::size_t>> distinct;
  std::vector<std::size_t> slot;

  explicit ClassTable(const std::vector<std::vector<std::size_t>>& classes) {
    for (const auto& c : classes) {
      auto it = std::find(distinct.begin(), distinct.end(), c);
      if (it == distinct.end()) {
        distinct.push_back(c);
        slot.push_back(distinct.size() - 1);
      } else {
        slot.push_back(static_cast<std::size_t>(it - distinct.begin()));
      }
    }
  }

  std::vector<std::vector<std::size_t>> resample(Rng& rng) const {
    std::vector<std::vector<std::size_t>> draws(distinct.size());
    for (std::size_t s = 0; s < distinct.size(); ++s) {
      const auto idx = resample_indices(rng, distinct[s].size());
      draws[s].resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) draws[s][i] = distinct[s][idx[i]];
    }
    std::vector<std::vector<std::size_t>> out(slot.size());
    for (std::size_t c = 0; c < slot.size(); ++c) out[c] = draws[slot[c]];
    return out;
  }
};

std::vector<std::size_t> rows_for(const ActivationSet& set, const PromptPredicate& pred,
                                  const char* what) {
  auto rows = matching_rows(set.manifest(), pred);
  if (rows.size() < 2) {
    fail(ErrorCode::kEmptySelection,
         std::string(what) + " selection needs at least two rows for resampling (got " +
             std::to_string(rows.size()) + ")");
  }
  return rows;
}

}  // namespace

nlohmann::json to_json(const CosineInterval& c) {
  return {{"layer", c.layer},
          {"point", c.point},
          {"ci_low", c.ci_low},
          {"ci_high", c.ci_high},
          {"level", c.level},
          {"n_bootstrap", c.n_bootstrap},
          {"normalized_depth", c.normalized_depth},
          {"redraws", c.redraws},
          {"point_in_ci", c.point_in_ci},
          {"method", c.method}};
}

CosineInterval bootstrap_cosine_ci(const ActivationSet& set, int layer, const Contrast& a,
                                   const Contrast& b, const BootstrapOptions& options) {
  if (options.n_iter < 1) fail(ErrorCode::kInvalidArgument, "bootstrap needs at least one iteration");
  if (!(options.level > 0.0 && options.level < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "confidence level must lie in (0, 1)");
  }
  const Matrix& m = set.layer(layer);
  const std::vector<std::vector<std::size_t>> classes = {
      rows_for(set, a.positive, "first positive"), rows_for(set, a.negative, "first negative"),
      rows_for(set, b.positive, "second positive"), rows_for(set, b.negative, "second negative")};

  CosineInterval out;
  out.layer = layer;
  out.level = options.level;
  out.n_bootstrap = options.n_iter;
  out.normalized_depth = normalized_depth(layer, default_layers(set, options.n_layers));
  out.point = cosine(normalized(mean_difference(m, classes[0], classes[1]), "first direction"),
                     normalized(mean_difference(m, classes[2], classes[3]), "second direction"));

  const ClassTable table(classes);
  std::vector<double> samples(options.n_iter);
  std::vector<std::size_t> redraws(options.n_iter, 0);
  parallel_for(options.n_iter, options.jobs, [&](std::size_t it) {
    Rng rng(derive_seed(options.seed, streams::kBootstrap, it));
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt > kMaxRedraws) fail(ErrorCode::kDegenerate, "bootstrap kept drawing zero directions");
      const auto draw = table.resample(rng);
      const Eigen::VectorXd da = mean_difference(m, draw[0], draw[1]);
      const Eigen::VectorXd db = mean_difference(m, draw[2], draw[3]);
      if (da.squaredNorm() == 0.0 || db.squaredNorm() == 0.0) {
        ++redraws[it];
        continue;
      }
      samples[it] = cosine(da, db);
      break;
    }
  });
  const double tail = (1.0 - options.level) / 2.0;
  out.ci_low = quantile(samples, tail);
  out.ci_high = quantile(samples, 1.0 - tail);
  out.redraws = std::accumulate(redraws.begin(), redraws.end(), std::size_t{0});
  out.point_in_ci = out.ci_low <= out.point && out.point <= out.ci_high;
  return out;
}

nlohmann::json to_json(const CosineSeries& s) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : s.entries) entries.push_back(to_json(e));
  return {{"entries", entries}};
}

CosineSeries cosine_series_from_json(const nlohmann::json& j) {
  CosineSeries s;
  try {
    for (const auto& e : j.at("entries")) {
      CosineInterval c;
      c.layer = e.at("layer").get<int>();
      c.point = e.at("point").get<double>();
      c.ci_low = e.at("ci_low").get<double>();
      c.ci_high = e.at("ci_high").get<double>();
      c.level = e.value("level", 0.95);
      c.n_bootstrap = e.value("n_bootstrap", std::size_t{0});
      c.normalized_depth = e.value("normalized_depth", 0.0);
      c.redraws = e.value("redraws", std::size_t{0});
      c.point_in_ci = e.value("point_in_ci", true);
      c.method = e.value("method", std::string{"percentile"});
      s.entries.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed cosine series: ") + e.what());
  }
  return s;
}

CosineSeries bootstrap_cosine_series(const ActivationSet& set, std::span<const int> layers,
                                     const Contrast& a, const Contrast& b,
                                     const BootstrapOptions& options) {
  CosineSeries series;
  for (int layer : layers) {
    BootstrapOptions per_layer = options;
    per_layer.seed = derive_seed(options.seed, streams::kBootstrap, 1000000u + static_cast<std::uint64_t>(layer));
    if (!per_layer.n_layers) per_layer.n_layers = default_layers(set, options.n_layers);
    series.entries.push_back(bootstrap_cosine_ci(set, layer, a, b, per_layer));
  }
  return series;
}

// ---------------------------------------------------------------------------
// Convergence

std::vector<std::pair<std::size_t, std::size_t>> contrast_pairs(const Manifest& manifest,
                                                                const Contrast& pairs) {
  const auto pos = matching_rows(manifest, pairs.positive);
  const auto neg = matching_rows(manifest, pairs.negative);
  if (pos.empty() || neg.empty()) fail(ErrorCode::kEmptySelection, "pair pool is empty");

  std::map<std::string, std::size_t> neg_by_pair;
  for (std::size_t r : neg) {
    if (manifest[r].pair_id) neg_by_pair[*manifest[r].pair_id] = r;
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  bool all_linked = true;
  for (std::size_t r : pos) {
    const auto& pid = manifest[r].pair_id;
    auto it = pid ? neg_by_pair.find(*pid) : neg_by_pair.end();
    if (it == neg_by_pair.end()) {
      all_linked = false;
      break;
    }
    out.emplace_back(r, it->second);
  }
  if (all_linked) return out;

  if (pos.size() != neg.size()) {
    fail(ErrorCode::kInvalidArgument,
         "cannot pair " + std::to_string(pos.size()) + " positives with " +
             std::to_string(neg.size()) + " negatives without pair ids");
  }
  out.clear();
  for (std::size_t i = 0; i < pos.size(); ++i) out.emplace_back(pos[i], neg[i]);
  return out;
}

nlohmann::json to_json(const ConvergenceCurve& c) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : c.points) {
    points.push_back({{"size", p.size}, {"mean_ci_width", p.mean_width}, {"widths", p.widths}});
  }
  return {{"layer", c.layer}, {"pool_pairs", c.pool_pairs}, {"redraws", c.redraws}, {"points", points}};
}

ConvergenceCurve convergence_analysis(const ActivationSet& set, int layer, const Contrast& reference,
                                      const Contrast& pairs, const ConvergenceOptions& options) {
  if (options.sizes.empty()) fail(ErrorCode::kInvalidArgument, "no subsample sizes given");
  for (std::size_t i = 1; i < options.sizes.size(); ++i) {
    if (options.sizes[i] <= options.sizes[i - 1]) {
      fail(ErrorCode::kInvalidArgument, "subsample sizes must be strictly increasing");
    }
  }
  if (options.n_iter < 1 || options.n_subsamples < 1) {
    fail(ErrorCode::kInvalidArgument, "need at least one iteration and one subsample");
  }
  const Matrix& m = set.layer(layer);
  const auto ref_pos = rows_for(set, reference.positive, "reference positive");
  const auto ref_neg = rows_for(set, reference.negative, "reference negative");
  const auto pool = contrast_pairs(set.manifest(), pairs);
  if (options.sizes.front() < 2) fail(ErrorCode::kInvalidArgument, "subsample size must be >= 2");
  if (options.sizes.back() > pool.size()) {
    fail(ErrorCode::kInvalidArgument, "subsample size " + std::to_string(options.sizes.back()) +
                                          " exceeds the pool of " + std::to_string(pool.size()) +
                                          " pairs");
  }

  ConvergenceCurve curve;
  curve.layer = layer;
  curve.pool_pairs = pool.size();
  const std::size_t n_sizes = options.sizes.size();
  const std::size_t tasks = n_sizes * options.n_subsamples;
  std::vector<double> widths(tasks, 0.0);
  std::vector<std::size_t> redraws(tasks, 0);
  const double tail = (1.0 - options.level) / 2.0;

  parallel_for(tasks, options.jobs, [&](std::size_t task) {
    const std::size_t size = options.sizes[task / options.n_subsamples];
    const std::uint64_t task_seed = derive_seed(options.seed, streams::kSubsample, task);
    Rng pick(task_seed);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < size; ++i) {
      std::swap(order[i], order[i + pick.uniform_index(pool.size() - i)]);
    }
    order.resize(size);

    std::vector<double> samples(options.n_iter);
    for (std::size_t it = 0; it < options.n_iter; ++it) {
      Rng rng(derive_seed(task_seed, streams::kBootstrap, it));
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt > kMaxRedraws) fail(ErrorCode::kDegenerate, "bootstrap kept drawing zero directions");
        std::vector<std::size_t> pos(size), neg(size);
        for (std::size_t i = 0; i < size; ++i) {
          const auto& pr = pool[order[rng.uniform_index(size)]];
          pos[i] = pr.first;
          neg[i] = pr.second;
        }
        std::vector<std::size_t> rp(ref_pos.size()), rn(ref_neg.size());
        for (auto& r : rp) r = ref_pos[rng.uniform_index(ref_pos.size())];
        for (auto& r : rn) r = ref_neg[rng.uniform_index(ref_neg.size())];
        const Eigen::VectorXd dp = mean_difference(m, pos, neg);
        const Eigen::VectorXd dr = mean_difference(m, rp, rn);
        if (dp.squaredNorm() == 0.0 || dr.squaredNorm() == 0.0) {
          ++redraws[task];
          continue;
        }
        samples[it] = cosine(dr, dp);
        break;
      }
    }
    widths[task] = quantile(samples, 1.0 - tail) - quantile(samples, tail);
  });

  for (std::size_t s = 0; s < n_sizes; ++s) {
    ConvergencePoint p;
    p.size = options.sizes[s];
    p.widths.assign(widths.begin() + static_cast<long>(s * options.n_subsamples),
                    widths.begin() + static_cast<long>((s + 1) * options.n_subsamples));
    p.mean_width = std::accumulate(p.widths.begin(), p.widths.end(), 0.0) /
                   static_cast<double>(p.widths.size());
    curve.points.push_back(std::move(p));
  }
  curve.redraws = std::accumulate(redraws.begin(), redraws.end(), std::size_t{0});
  return curve;
}

// ---------------------------------------------------------------------------
// Stability and transfer

nlohmann::json to_json(const StabilityResult& s, bool include_samples) {
  nlohmann::json j = {{"layer", s.layer},   {"median", s.median}, {"mean", s.mean},
                      {"q05", s.q05},       {"q95", s.q95},       {"n_pos", s.n_pos},
                      {"n_neg", s.n_neg},   {"small_sample", s.small_sample},
                      {"redraws", s.redraws}, {"n_bootstrap", s.cosines.size()}};
  if (include_samples) j["cosines"] = s.cosines;
  return j;
}

StabilityResult direction_stability(const ActivationSet& set, int layer, const Contrast& contrast,
                                    const BootstrapOptions& options) {
  if (options.n_iter < 1) fail(ErrorCode::kInvalidArgument, "bootstrap needs at least one iteration");
  const Matrix& m = set.layer(layer);
  const auto pos = rows_for(set, contrast.positive, "positive");
  const auto neg = rows_for(set, contrast.negative, "negative");
  const Eigen::VectorXd full = normalized(mean_difference(m, pos, neg), "full-sample direction");

  StabilityResult out;
  out.layer = layer;
  out.n_pos = pos.size();
  out.n_neg = neg.size();
  out.small_sample = std::min(pos.size(), neg.size()) < kSmallSampleThreshold;
  out.cosines.assign(options.n_iter, 0.0);
  std::vector<std::size_t> redraws(options.n_iter, 0);
  const ClassTable table({pos, neg});
  parallel_for(options.n_iter, options.jobs, [&](std::size_t it) {
    Rng rng(derive_seed(options.seed, streams::kBootstrap, it));
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt > kMaxRedraws) fail(ErrorCode::kDegenerate, "bootstrap kept drawing zero directions");
      const auto draw = table.resample(rng);
      const Eigen::VectorXd d = mean_difference(m, draw[0], draw[1]);
      if (d.squaredNorm() == 0.0) {
        ++redraws[it];
        continue;
      }
      out.cosines[it] = cosine(d, full);
      break;
    }
  });
  out.median = quantile(out.cosines, 0.5);
  out.q05 = quantile(out.cosines, 0.05);
  out.q95 = quantile(out.cosines, 0.95);
  out.mean = std::accumulate(out.cosines.begin(), out.cosines.end(), 0.0) /
             static_cast<double>(out.cosines.size());
  out.redraws = std::accumulate(redraws.begin(), redraws.end(), std::size_t{0});
  return out;
}

nlohmann::json to_json(const TransferReport& t) {
  nlohmann::json j = {{"compatible", t.compatible},   {"foreign_model", t.foreign_model},
                      {"native_model", t.native_model}, {"foreign_dim", t.foreign_dim},
                      {"native_dim", t.native_dim}};
  j["cosine"] = t.cosine ? nlohmann::json(*t.cosine) : nlohmann::json(nullptr);
  if (!t.compatible) j["reason"] = "hidden dimensions differ";
  return j;
}

TransferReport transfer_check(const Direction& foreign, const Direction& native) {
  TransferReport t;
  t.foreign_model = foreign.model_id;
  t.native_model = native.model_id;
  t.foreign_dim = foreign.dim();
  t.native_dim = native.dim();
  t.compatible = t.foreign_dim == t.native_dim;
  if (t.compatible) t.cosine = cosine(foreign, native);
  return t;
}

}  // namespace routelab
