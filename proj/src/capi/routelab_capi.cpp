#include "routelab/routelab.h"

#include <cstring>
#include <new>
#include <set>
#include <string>

#include "routelab/behaviorstats.hpp"
#include "routelab/error.hpp"
#include "routelab/geometry.hpp"
#include "routelab/oracle.hpp"
#include "routelab/probelab.hpp"
#include "routelab/report.hpp"
#include "routelab/surgery.hpp"
#include "routelab/synthlab.hpp"
#include "routelab/tensorstore.hpp"

struct rl_set {
  routelab::ActivationSet set;
};

struct rl_direction {
  routelab::Direction dir;
};

struct rl_oracle {
  std::unique_ptr<routelab::BehaviorOracle> oracle;
};

namespace {

using routelab::ErrorCode;
using routelab::fail;
using json = nlohmann::json;

thread_local std::string g_last_error;

template <typename Fn>
rl_status guard(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return RL_OK;
  } catch (const routelab::Error& e) {
    g_last_error = e.what();
    return static_cast<rl_status>(static_cast<int>(e.code()));
  } catch (const json::exception& e) {
    g_last_error = std::string("invalid JSON input: ") + e.what();
    return RL_ERR_INVALID_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return RL_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RL_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) fail(ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(const json& j, char** out) {
  need(out, "output pointer");
  *out = dup_string(j.dump(2));
}

// Parses a configuration object and rejects keys outside `known`.
json parse_config(const char* text, const std::set<std::string>& known) {
  if (text == nullptr || *text == '\0') return json::object();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kInvalidArgument, std::string("configuration is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "configuration must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) fail(ErrorCode::kInvalidArgument, "unknown configuration key '" + key + "'");
  }
  return j;
}

template <typename T>
T opt(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kInvalidArgument, std::string("configuration key '") + key + "' has the wrong type");
  }
}

template <typename T>
T req(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) {
    fail(ErrorCode::kInvalidArgument, std::string("configuration key '") + key + "' is required");
  }
  return opt<T>(j, key, T{});
}

routelab::PromptPredicate predicate(const json& filter) {
  if (filter.is_null()) return [](const routelab::PromptRecord&) { return true; };
  routelab::PromptFilter f = routelab::filter_from_json(filter);
  return [f](const routelab::PromptRecord& r) { return f.matches(r); };
}

routelab::PromptPredicate predicate_at(const json& j, const char* key, bool required) {
  if (!j.contains(key)) {
    if (required) fail(ErrorCode::kInvalidArgument, std::string("configuration key '") + key + "' is required");
    return predicate(json());
  }
  return predicate(j.at(key));
}

routelab::Contrast contrast(const json& j) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "a contrast must be {\"positive\", \"negative\"}");
  return {predicate_at(j, "positive", true), predicate_at(j, "negative", true)};
}

routelab::Contrast contrast_at(const json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorCode::kInvalidArgument, std::string("configuration key '") + key + "' is required");
  return contrast(j.at(key));
}

std::vector<int> layers_or_all(const json& j, const routelab::ActivationSet& set) {
  return opt<std::vector<int>>(j, "layers", set.layers());
}

std::vector<double> alphas_of(const json& j) {
  return opt<std::vector<double>>(j, "alphas",
                                  std::vector<double>(routelab::kDefaultAlphas.begin(), routelab::kDefaultAlphas.end()));
}

routelab::DirectionBank bank_of(const rl_direction* const* dirs, size_t n) {
  if (n == 0) fail(ErrorCode::kInvalidArgument, "at least one direction is required");
  need(dirs, "directions");
  if (n == 1) {
    need(dirs[0], "direction");
    return routelab::DirectionBank(dirs[0]->dir);
  }
  std::vector<routelab::Direction> v;
  for (size_t i = 0; i < n; ++i) {
    need(dirs[i], "direction");
    v.push_back(dirs[i]->dir);
  }
  return routelab::DirectionBank(std::move(v));
}

routelab::DirectionKind parse_kind(const std::string& s) { return routelab::parse_direction_kind(s); }

}  // namespace

extern "C" {

const char* rl_version(void) { return "0.1.0"; }

const char* rl_last_error(void) { return g_last_error.c_str(); }

const char* rl_status_name(rl_status status) {
  if (status == RL_OK) return "ok";
  return routelab::error_code_name(static_cast<ErrorCode>(status));
}

void rl_string_free(char* s) { std::free(s); }

// ---- sets ------------------------------------------------------------------

rl_status rl_set_read(const char* path, rl_set** out) {
  return guard([&] {
    need(path, "path");
    need(out, "output pointer");
    *out = new rl_set{routelab::read_activation_set(path)};
  });
}

rl_status rl_set_write(const rl_set* set, const char* path, char** summary_json) {
  return guard([&] {
    need(set, "set");
    need(path, "path");
    const auto summary = routelab::write_activation_set(set->set, path);
    if (summary_json) emit(routelab::to_json(summary), summary_json);
  });
}

rl_status rl_set_create(const char* model_id, const char* manifest_json, const int* layers, size_t n_layers,
                        size_t n, size_t d, const float* data, const char* metadata_json, rl_set** out) {
  return guard([&] {
    need(manifest_json, "manifest");
    need(out, "output pointer");
    if (n_layers > 0) {
      need(layers, "layers");
      if (n * d > 0) need(data, "data");
    }
    routelab::Manifest manifest;
    for (const auto& r : json::parse(manifest_json)) manifest.push_back(routelab::prompt_from_json(r));
    std::map<int, routelab::Matrix> blocks;
    for (size_t i = 0; i < n_layers; ++i) {
      routelab::Matrix m = Eigen::Map<const routelab::Matrix>(data + i * n * d, static_cast<Eigen::Index>(n),
                                                              static_cast<Eigen::Index>(d));
      if (!blocks.emplace(layers[i], std::move(m)).second) {
        fail(ErrorCode::kInvalidArgument, "layer " + std::to_string(layers[i]) + " given twice");
      }
    }
    json meta = metadata_json ? json::parse(metadata_json) : json::object();
    *out = new rl_set{routelab::ActivationSet(model_id ? model_id : "", std::move(manifest), std::move(blocks),
                                              std::move(meta))};
  });
}

void rl_set_free(rl_set* set) { delete set; }

rl_status rl_set_info(const rl_set* set, int include_manifest, char** out_json) {
  return guard([&] {
    need(set, "set");
    json j = {{"model_id", set->set.model_id()},
              {"n", set->set.rows()},
              {"d", set->set.dim()},
              {"layers", set->set.layers()},
              {"metadata", set->set.metadata()}};
    if (include_manifest) {
      json m = json::array();
      for (const auto& r : set->set.manifest()) m.push_back(routelab::to_json(r));
      j["manifest"] = std::move(m);
    }
    emit(j, out_json);
  });
}

rl_status rl_set_layer(const rl_set* set, int layer, const float** data, size_t* n, size_t* d) {
  return guard([&] {
    need(set, "set");
    need(data, "data pointer");
    const auto& m = set->set.layer(layer);
    *data = m.data();
    if (n) *n = static_cast<size_t>(m.rows());
    if (d) *d = static_cast<size_t>(m.cols());
  });
}

rl_status rl_set_select(const rl_set* set, const char* filter_json, rl_set** out) {
  return guard([&] {
    need(set, "set");
    need(out, "output pointer");
    const json filter = filter_json ? json::parse(filter_json) : json();
    *out = new rl_set{routelab::select_subset(set->set, predicate(filter))};
  });
}

rl_status rl_set_relabel(const rl_set* set, const char* manifest_jsonl_path, rl_set** out) {
  return guard([&] {
    need(set, "set");
    need(manifest_jsonl_path, "manifest path");
    need(out, "output pointer");
    *out = new rl_set{set->set.with_manifest(routelab::read_manifest_jsonl(manifest_jsonl_path))};
  });
}

rl_status rl_set_equal(const rl_set* a, const rl_set* b, int* equal) {
  return guard([&] {
    need(a, "set a");
    need(b, "set b");
    need(equal, "output pointer");
    *equal = routelab::bit_equal(a->set, b->set) ? 1 : 0;
  });
}

// ---- directions ------------------------------------------------------------

rl_status rl_direction_read(const char* path, rl_direction** out) {
  return guard([&] {
    need(path, "path");
    need(out, "output pointer");
    *out = new rl_direction{routelab::read_direction(path)};
  });
}

rl_status rl_direction_write(const rl_direction* dir, const char* path) {
  return guard([&] {
    need(dir, "direction");
    need(path, "path");
    routelab::write_direction(dir->dir, path);
  });
}

rl_status rl_direction_create(const double* values, size_t d, const char* info_json, rl_direction** out) {
  return guard([&] {
    need(values, "values");
    need(out, "output pointer");
    const json info = parse_config(info_json, {"layer", "kind", "corpus_id", "n_pos", "n_neg", "model_id", "d", "norm"});
    routelab::Direction dir;
    dir.vector = Eigen::Map<const Eigen::VectorXd>(values, static_cast<Eigen::Index>(d));
    routelab::require_unit(dir.vector, "direction");
    dir.layer = opt(info, "layer", 0);
    dir.kind = parse_kind(opt<std::string>(info, "kind", "custom"));
    dir.corpus_id = opt<std::string>(info, "corpus_id", "");
    dir.n_pos = opt<std::size_t>(info, "n_pos", 1);
    dir.n_neg = opt<std::size_t>(info, "n_neg", 1);
    dir.model_id = opt<std::string>(info, "model_id", "");
    *out = new rl_direction{std::move(dir)};
  });
}

rl_status rl_direction_random(size_t d, uint64_t seed, int layer, rl_direction** out) {
  return guard([&] {
    need(out, "output pointer");
    *out = new rl_direction{routelab::random_direction(d, seed, layer)};
  });
}

void rl_direction_free(rl_direction* dir) { delete dir; }

rl_status rl_direction_info(const rl_direction* dir, char** out_json) {
  return guard([&] {
    need(dir, "direction");
    emit(routelab::direction_info(dir->dir), out_json);
  });
}

rl_status rl_direction_values(const rl_direction* dir, const double** values, size_t* d) {
  return guard([&] {
    need(dir, "direction");
    need(values, "values pointer");
    *values = dir->dir.vector.data();
    if (d) *d = dir->dir.dim();
  });
}

rl_status rl_cosine(const rl_direction* a, const rl_direction* b, double* out) {
  return guard([&] {
    need(a, "direction a");
    need(b, "direction b");
    need(out, "output pointer");
    *out = routelab::cosine(a->dir, b->dir);
  });
}

rl_status rl_transfer_check(const rl_direction* foreign_dir, const rl_direction* native_dir, char** out_json) {
  return guard([&] {
    need(foreign_dir, "foreign direction");
    need(native_dir, "native direction");
    emit(routelab::to_json(routelab::transfer_check(foreign_dir->dir, native_dir->dir)), out_json);
  });
}

// ---- oracles ---------------------------------------------------------------

rl_status rl_oracle_from_truth(const char* truth_path, rl_oracle** out) {
  return guard([&] {
    need(truth_path, "truth path");
    need(out, "output pointer");
    auto truth = routelab::read_truth(truth_path);
    *out = new rl_oracle{std::make_unique<routelab::LinearOracle>(truth.oracle())};
  });
}

rl_status rl_oracle_from_labels(const char* jsonl_path, rl_oracle** out) {
  return guard([&] {
    need(jsonl_path, "label path");
    need(out, "output pointer");
    *out = new rl_oracle{std::make_unique<routelab::LabelTableOracle>(routelab::LabelTableOracle::read_jsonl(jsonl_path))};
  });
}

void rl_oracle_free(rl_oracle* oracle) { delete oracle; }

rl_status rl_oracle_label(const rl_oracle* oracle, const char* prompt_json, int layer, double alpha, const float* h,
                          size_t d, rl_outcome* out) {
  return guard([&] {
    need(oracle, "oracle");
    need(prompt_json, "prompt");
    need(h, "activation");
    need(out, "output pointer");
    const auto prompt = routelab::prompt_from_json(json::parse(prompt_json));
    const routelab::OracleQuery q{prompt, layer, alpha, std::span<const float>(h, d)};
    *out = static_cast<rl_outcome>(static_cast<int>(oracle->oracle->label(q)));
  });
}

// ---- analyses --------------------------------------------------------------

rl_status rl_probe(const rl_set* set, const char* config_json, char** out_json) {
  return guard([&] {
    need(set, "set");
    const json c = parse_config(config_json, {"layers", "lambda", "scheme", "k", "permutations", "seed", "jobs",
                                              "positive", "band"});
    routelab::ProbeOptions o;
    o.lambda = opt(c, "lambda", o.lambda);
    const std::string scheme = opt<std::string>(c, "scheme", "stratified");
    if (scheme == "loco") {
      o.scheme = routelab::FoldScheme::kLeaveOneCategoryOut;
    } else if (scheme != "stratified") {
      fail(ErrorCode::kInvalidArgument, "scheme must be 'stratified' or 'loco'");
    }
    o.k = opt(c, "k", o.k);
    o.n_permutations = opt(c, "permutations", o.n_permutations);
    o.seed = req<std::uint64_t>(c, "seed");
    o.jobs = opt(c, "jobs", 1u);
    if (c.contains("positive")) o.positive = routelab::filter_from_json(c.at("positive"));
    const auto layers = layers_or_all(c, set->set);
    const auto report = routelab::run_probe(set->set, layers, o);
    json out = {{"probe", routelab::to_json(report)}};
    if (c.contains("band")) {
      const json& b = c.at("band");
      std::optional<int> depth;
      if (b.contains("model_depth")) depth = b.at("model_depth").get<int>();
      out["band"] = routelab::to_json(
          routelab::layer_band_summary(report, b.value("low", 0.40), b.value("high", 0.75), depth));
    }
    emit(out, out_json);
  });
}

rl_status rl_caa(const rl_set* set, const char* config_json, rl_direction** out) {
  return guard([&] {
    need(set, "set");
    need(out, "output pointer");
    const json c = parse_config(config_json, {"layer", "positive", "negative", "kind", "corpus_id"});
    const routelab::Contrast con{predicate_at(c, "positive", true), predicate_at(c, "negative", true)};
    *out = new rl_direction{routelab::extract_direction(set->set, req<int>(c, "layer"), con,
                                                        parse_kind(opt<std::string>(c, "kind", "custom")),
                                                        opt<std::string>(c, "corpus_id", ""))};
  });
}

rl_status rl_cosine_series(const rl_set* set, const char* config_json, char** out_json) {
  return guard([&] {
    need(set, "set");
    const json c = parse_config(config_json, {"layers", "a", "b", "n_iter", "level", "seed", "jobs", "n_layers"});
    routelab::BootstrapOptions o;
    o.n_iter = opt(c, "n_iter", o.n_iter);
    o.level = opt(c, "level", o.level);
    o.seed = req<std::uint64_t>(c, "seed");
    o.jobs = opt(c, "jobs", 1u);
    if (c.contains("n_layers")) o.n_layers = c.at("n_layers").get<int>();
    const auto layers = layers_or_all(c, set->set);
    emit(routelab::to_json(routelab::bootstrap_cosine_series(set->set, layers, contrast_at(c, "a"),
                                                             contrast_at(c, "b"), o)),
         out_json);
  });
}

rl_status rl_converge(const rl_set* set, const char* config_json, char** out_json) {
  return guard([&] {
    need(set, "set");
    const json c = parse_config(config_json, {"layer", "reference", "pairs", "sizes", "n_iter", "n_subsamples",
                                              "level", "seed", "jobs"});
    routelab::ConvergenceOptions o;
    o.sizes = opt(c, "sizes", o.sizes);
    o.n_iter = opt(c, "n_iter", o.n_iter);
    o.n_subsamples = opt(c, "n_subsamples", o.n_subsamples);
    o.level = opt(c, "level", o.level);
    o.seed = req<std::uint64_t>(c, "seed");
    o.jobs = opt(c, "jobs", 1u);
    emit(routelab::to_json(routelab::convergence_analysis(set->set, req<int>(c, "layer"), contrast_at(c, "reference"),
                                                          contrast_at(c, "pairs"), o)),
         out_json);
  });
}

rl_status rl_stability(const rl_set* set, const char* config_json, char** out_json) {
  return guard([&] {
    need(set, "set");
    const json c = parse_config(config_json, {"layer", "positive", "negative", "n_iter", "level", "seed", "jobs"});
    routelab::BootstrapOptions o;
    o.n_iter = opt(c, "n_iter", o.n_iter);
    o.level = opt(c, "level", o.level);
    o.seed = req<std::uint64_t>(c, "seed");
    o.jobs = opt(c, "jobs", 1u);
    const routelab::Contrast con{predicate_at(c, "positive", true), predicate_at(c, "negative", true)};
    emit(routelab::to_json(routelab::direction_stability(set->set, req<int>(c, "layer"), con, o)), out_json);
  });
}

rl_status rl_ablate_set(const rl_set* set, const rl_direction* dir, const char* config_json, rl_set** out) {
  return guard([&] {
    need(set, "set");
    need(dir, "direction");
    need(out, "output pointer");
    const json c = parse_config(config_json, {"layers", "alpha"});
    routelab::AblationConfig cfg{dir->dir, req<std::vector<int>>(c, "layers"), opt(c, "alpha", 1.0)};
    *out = new rl_set{routelab::ablate_set(set->set, cfg)};
  });
}

rl_status rl_ablation_run(const rl_set* set, const rl_direction* dir, const rl_oracle* oracle, const char* config_json,
                          char** out_json) {
  return guard([&] {
    need(set, "set");
    need(dir, "direction");
    need(oracle, "oracle");
    const json c = parse_config(config_json, {"layers", "alpha", "eval", "eval_layer"});
    routelab::AblationConfig cfg{dir->dir, req<std::vector<int>>(c, "layers"), opt(c, "alpha", 1.0)};
    std::optional<int> eval_layer;
    if (c.contains("eval_layer")) eval_layer = c.at("eval_layer").get<int>();
    emit(routelab::to_json(
             routelab::run_ablation(set->set, cfg, *oracle->oracle, predicate_at(c, "eval", false), eval_layer)),
         out_json);
  });
}

rl_status rl_alpha_sweep(const rl_set* set, const rl_direction* const* dirs, size_t n_dirs, const rl_oracle* oracle,
                         const char* config_json, char** out_json) {
  return guard([&] {
    need(set, "set");
    need(oracle, "oracle");
    const json c = parse_config(config_json, {"layers", "alphas", "eval", "jobs"});
    const auto bank = bank_of(dirs, n_dirs);
    const auto layers = layers_or_all(c, set->set);
    const auto alphas = alphas_of(c);
    emit(routelab::to_json(routelab::alpha_sweep(set->set, bank, layers, alphas, *oracle->oracle,
                                                 predicate_at(c, "eval", false), opt(c, "jobs", 1u))),
         out_json);
  });
}

rl_status rl_alpha_select(const rl_set* selection, const rl_set* evaluation, const rl_set* adversarial,
                          const rl_direction* const* dirs, size_t n_dirs, const rl_oracle* oracle,
                          const char* config_json, char** out_json) {
  return guard([&] {
    need(selection, "selection set");
    need(evaluation, "evaluation set");
    need(adversarial, "adversarial set");
    need(oracle, "oracle");
    const json c = parse_config(config_json, {"layers", "alphas"});
    const auto bank = bank_of(dirs, n_dirs);
    const auto layers = layers_or_all(c, selection->set);
    const auto alphas = alphas_of(c);
    emit(routelab::to_json(routelab::select_alpha_clean(selection->set, evaluation->set, adversarial->set, bank,
                                                        layers, alphas, *oracle->oracle)),
         out_json);
  });
}

rl_status rl_residualize(const rl_set* set, const rl_direction* dirty, const char* config_json, rl_direction** clean,
                         char** out_json) {
  return guard([&] {
    need(set, "set");
    need(dirty, "direction");
    need(clean, "output pointer");
    const json c = parse_config(config_json, {"layer", "concepts", "seed", "lambda_r"});
    std::vector<routelab::ConceptSelection> concepts;
    for (const auto& cj : req<json>(c, "concepts")) {
      concepts.push_back({cj.at("name").get<std::string>(), predicate(cj.at("filter"))});
    }
    const int layer = opt(c, "layer", dirty->dir.layer);
    const auto atoms = routelab::build_atoms(set->set, layer, concepts, req<std::uint64_t>(c, "seed"),
                                             opt(c, "lambda_r", 0.01));
    auto result = routelab::residualize(dirty->dir, atoms);
    json report = routelab::to_json(result);
    report["atoms"] = routelab::atom_info(atoms);
    *clean = new rl_direction{result.clean};
    if (out_json) emit(report, out_json);
  });
}

rl_status rl_controls(const rl_set* set, const rl_direction* const* dirs, size_t n_dirs, const rl_oracle* oracle,
                      const char* config_json, char** out_json) {
  return guard([&] {
    need(set, "set");
    need(oracle, "oracle");
    need(dirs, "directions");
    const json c = parse_config(config_json, {"layers", "alphas", "eval", "jobs"});
    std::map<routelab::DirectionKind, std::vector<const rl_direction*>> by_kind;
    for (size_t i = 0; i < n_dirs; ++i) {
      need(dirs[i], "direction");
      by_kind[dirs[i]->dir.kind].push_back(dirs[i]);
    }
    auto political_it = by_kind.find(routelab::DirectionKind::kPolitical);
    if (political_it == by_kind.end()) fail(ErrorCode::kInvalidArgument, "no political direction given");
    const auto political = bank_of(political_it->second.data(), political_it->second.size());
    std::vector<routelab::DirectionBank> controls;
    for (const auto& [kind, group] : by_kind) {
      if (kind != routelab::DirectionKind::kPolitical) controls.push_back(bank_of(group.data(), group.size()));
    }
    if (controls.empty()) fail(ErrorCode::kInvalidArgument, "no control directions given");
    const auto layers = layers_or_all(c, set->set);
    const auto alphas = alphas_of(c);
    const auto eval = predicate_at(c, "eval", false);
    const auto battery = routelab::negative_control_battery(set->set, political, controls, layers, alphas,
                                                            *oracle->oracle, eval, opt(c, "jobs", 1u));
    json out = routelab::to_json(battery);
    const int deepest = *std::max_element(layers.begin(), layers.end());
    const auto& baseline = battery.political.grid.baseline.at(deepest);
    out["model_id"] = set->set.model_id();
    out["n"] = baseline.total;
    out["baseline_layer"] = deepest;
    out["baseline_refusal_rate"] = baseline.refusal_rate();
    out["max_control_delta_pp"] = battery.max_control_delta_pp();
    emit(out, out_json);
  });
}

rl_status rl_synth(const char* spec_json, rl_set** out_set, rl_oracle** out_oracle, const char* truth_path) {
  return guard([&] {
    need(spec_json, "spec");
    need(out_set, "output pointer");
    json j;
    try {
      j = json::parse(spec_json);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kInvalidArgument, std::string("spec is not valid JSON: ") + e.what());
    }
    auto data = routelab::generate(routelab::spec_from_json(j));
    if (truth_path) routelab::write_truth(data.truth, truth_path);
    if (out_oracle) *out_oracle = new rl_oracle{std::make_unique<routelab::LinearOracle>(data.truth.oracle())};
    *out_set = new rl_set{std::move(data.set)};
  });
}

rl_status rl_truth_direction(const char* truth_path, int layer, const char* kind, rl_direction** out) {
  return guard([&] {
    need(truth_path, "truth path");
    need(kind, "kind");
    need(out, "output pointer");
    *out = new rl_direction{routelab::read_truth(truth_path).planted(layer, parse_kind(kind))};
  });
}

rl_status rl_stats(const char* records_path, const char* config_json, char** out_json) {
  return guard([&] {
    need(records_path, "records path");
    const json c = parse_config(config_json, {"filter", "refusal", "steering", "flags", "discrimination", "agreement",
                                              "group_by"});
    const auto all = routelab::read_behavior_jsonl(records_path);
    const auto filter = routelab::record_filter_from_json(c.value("filter", json()));
    const auto records = routelab::filter_records(all, filter);
    const bool any = c.contains("refusal") || c.contains("steering") || c.contains("flags") ||
                     c.contains("discrimination") || c.contains("agreement");
    const bool do_refusal = any ? opt(c, "refusal", false) : true;
    const bool do_steering = any ? opt(c, "steering", false) : true;

    auto analyze = [&](std::span<const routelab::BehaviorRecord> recs, const std::string& model) {
      json out = json::object();
      if (do_refusal) out["refusal"] = routelab::to_json(routelab::refusal_rate(recs));
      if (do_steering) out["steering"] = routelab::to_json(routelab::steering_mean(recs));
      if (opt(c, "flags", false)) {
        json f = json::object();
        for (const auto& [name, rate] : routelab::flag_rates(recs)) f[name] = routelab::to_json(rate);
        out["flags"] = f;
      }
      if (c.contains("discrimination")) {
        const auto& d = c.at("discrimination");
        const auto ccp = routelab::filter_records(recs, routelab::record_filter_from_json(d.at("ccp")));
        const auto par = routelab::filter_records(recs, routelab::record_filter_from_json(d.at("parallel")));
        out["discrimination"] = routelab::to_json(
            routelab::discrimination(model, routelab::refusal_rate(ccp), routelab::refusal_rate(par)));
      }
      if (c.contains("agreement")) {
        const auto& a = c.at("agreement");
        const auto coarse = a.contains("coarse_map") ? routelab::coarse_map_from_json(a.at("coarse_map"))
                                                     : routelab::default_coarse_map();
        std::optional<std::string> reference;
        if (a.contains("reference")) reference = a.at("reference").get<std::string>();
        out["agreement"] = routelab::to_json(routelab::agreement_report(recs, coarse, reference));
      }
      return out;
    };

    const std::string group_by = opt<std::string>(c, "group_by", "");
    if (group_by.empty()) {
      if (records.empty()) fail(ErrorCode::kEmptySelection, "no behavior records selected");
      std::string model = filter.model_id.value_or("");
      if (model.empty()) {
        model = records.front().model_id;
        for (const auto& r : records) {
          if (r.model_id != model) model = "all";
        }
      }
      json out = analyze(records, model);
      out["model_id"] = model;
      emit(out, out_json);
      return;
    }
    if (group_by != "model_id") fail(ErrorCode::kInvalidArgument, "group_by supports only 'model_id'");
    std::map<std::string, std::vector<routelab::BehaviorRecord>> groups;
    for (const auto& r : records) groups[r.model_id].push_back(r);
    if (groups.empty()) fail(ErrorCode::kEmptySelection, "no behavior records selected");
    json rows = json::array();
    for (const auto& [model, recs] : groups) {
      json row = analyze(recs, model);
      row["model_id"] = model;
      rows.push_back(std::move(row));
    }
    emit(json{{"groups", rows}}, out_json);
  });
}

rl_status rl_kappa(const char* config_json, double* out) {
  return guard([&] {
    need(out, "output pointer");
    const json c = parse_config(config_json, {"a", "b", "category"});
    const auto a = req<std::vector<std::string>>(c, "a");
    const auto b = req<std::vector<std::string>>(c, "b");
    *out = c.contains("category") ? routelab::cohen_kappa(a, b, c.at("category").get<std::string>())
                                  : routelab::cohen_kappa(a, b);
  });
}

rl_status rl_classify_discrimination(double delta_pp, char** out_json) {
  return guard([&] {
    const auto cls = routelab::classify_discrimination(delta_pp);
    emit(json{{"delta_pp", delta_pp}, {"class", routelab::to_string(cls.cls)}, {"on_boundary", cls.on_boundary}},
         out_json);
  });
}

rl_status rl_grade(const char* flags_json, char** out_json) {
  return guard([&] {
    need(flags_json, "flags");
    json j;
    try {
      j = json::parse(flags_json);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kInvalidArgument, std::string("flags are not valid JSON: ") + e.what());
    }
    emit(routelab::to_json(routelab::evidence_level(routelab::evidence_flags_from_json(j))), out_json);
  });
}

}  // extern "C"

namespace {

json rows_of(const json& in) {
  if (in.is_object() && in.contains("groups")) return in.at("groups");
  return in.is_array() ? in : json::array({in});
}

}  // namespace

extern "C" {

rl_status rl_report(const char* kind, const char* input_json, char** out_text) {
  return guard([&] {
    need(kind, "kind");
    need(input_json, "input");
    need(out_text, "output pointer");
    json in;
    try {
      in = json::parse(input_json);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kInvalidArgument, std::string("report input is not valid JSON: ") + e.what());
    }
    const std::string k = kind;
    std::string text;
    if (k == "probe") {
      text = routelab::probe_table(in.contains("probe") ? in.at("probe") : in);
      if (in.contains("band")) text += "\n" + routelab::band_table(in.at("band"));
    } else if (k == "band") {
      text = routelab::band_table(in.contains("band") ? in.at("band") : in);
    } else if (k == "depth") {
      text = routelab::depth_cosine_table(in);
    } else if (k == "controls") {
      text = routelab::control_delta_table(in.is_array() ? in : json::array({in}));
    } else if (k == "steering") {
      text = routelab::steering_table(rows_of(in));
    } else if (k == "refusal_steering") {
      text = routelab::refusal_steering_table(rows_of(in));
    } else if (k == "agreement") {
      text = routelab::agreement_table(in.contains("agreement") ? in.at("agreement") : in);
    } else if (k == "sweep") {
      text = routelab::sweep_table(in);
    } else if (k == "alpha_select") {
      text = routelab::alpha_select_table(in);
    } else {
      fail(ErrorCode::kInvalidArgument, "unknown report kind '" + k + "'");
    }
    *out_text = dup_string(text);
  });
}

}  // extern "C"
