// routelab command-line interface. Every subcommand is a thin adapter over
// the C API in routelab/routelab.h.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "routelab/routelab.h"

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(rl_status s) {
  if (s != RL_OK) throw DomainError(std::string(rl_status_name(s)) + ": " + rl_last_error());
}

struct StrDeleter {
  void operator()(char* p) const { rl_string_free(p); }
};
std::string take(char* p) {
  std::unique_ptr<char, StrDeleter> owned(p);
  return p ? std::string(p) : std::string();
}

struct SetDeleter {
  void operator()(rl_set* p) const { rl_set_free(p); }
};
struct DirDeleter {
  void operator()(rl_direction* p) const { rl_direction_free(p); }
};
struct OracleDeleter {
  void operator()(rl_oracle* p) const { rl_oracle_free(p); }
};
using SetPtr = std::unique_ptr<rl_set, SetDeleter>;
using DirPtr = std::unique_ptr<rl_direction, DirDeleter>;
using OraclePtr = std::unique_ptr<rl_oracle, OracleDeleter>;

SetPtr load_set(const std::string& path) {
  rl_set* s = nullptr;
  check(rl_set_read(path.c_str(), &s));
  return SetPtr(s);
}

DirPtr load_dir(const std::string& path) {
  rl_direction* d = nullptr;
  check(rl_direction_read(path.c_str(), &d));
  return DirPtr(d);
}

std::vector<DirPtr> load_dirs(const std::vector<std::string>& paths) {
  std::vector<DirPtr> out;
  for (const auto& p : paths) out.push_back(load_dir(p));
  return out;
}

std::vector<const rl_direction*> raw(const std::vector<DirPtr>& dirs) {
  std::vector<const rl_direction*> out;
  for (const auto& d : dirs) out.push_back(d.get());
  return out;
}

json parse_json_arg(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(what + " is not valid JSON: " + e.what());
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_arg(ss.str(), path);
}

// Global state shared by subcommands.
struct Globals {
  std::string format = "json";
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  std::string out;
  std::vector<std::string> inputs;  // every input path, for the overwrite check
  std::vector<std::string> outputs;
};

Globals g;

std::uint64_t need_seed() {
  if (!g.seed) throw UsageError("--seed is required for this subcommand");
  return *g.seed;
}

// Pipes such as /dev/fd/N have no canonical form; compare those by absolute path.
fs::path resolved(const std::string& p) {
  std::error_code ec;
  auto r = fs::weakly_canonical(p, ec);
  return ec ? fs::absolute(p).lexically_normal() : r;
}

void guard_outputs() {
  for (const auto& o : g.outputs) {
    if (o.empty()) continue;
    const auto out = resolved(o);
    for (const auto& i : g.inputs) {
      if (!i.empty() && resolved(i) == out) {
        throw UsageError("output " + o + " would overwrite input " + i);
      }
    }
  }
}

void write_text(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  const fs::path tmp = fs::path(path).concat(".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw DomainError("io: cannot write " + path);
    f << text;
    if (!text.empty() && text.back() != '\n') f << '\n';
  }
  fs::rename(tmp, path);
}

// Prints a JSON document, or a table when --format table and a report kind
// exists for it.
void print(const std::string& json_text, const char* report_kind) {
  if (g.format == "table" && report_kind) {
    char* text = nullptr;
    check(rl_report(report_kind, json_text.c_str(), &text));
    write_text(take(text), g.out);
    return;
  }
  write_text(json_text, g.out);
}

std::string dump(const json& j) { return j.dump(2); }

struct OracleArgs {
  std::string truth;
  std::string labels;
};

void add_oracle_options(CLI::App* cmd, OracleArgs& o) {
  auto* t = cmd->add_option("--truth", o.truth, "Synthetic ground-truth file (linear oracle)")->check(CLI::ExistingFile);
  auto* l = cmd->add_option("--labels", o.labels, "JSON-lines outcome table oracle")->check(CLI::ExistingFile);
  t->excludes(l);
}

OraclePtr load_oracle(const OracleArgs& o) {
  rl_oracle* p = nullptr;
  if (!o.truth.empty()) {
    g.inputs.push_back(o.truth);
    check(rl_oracle_from_truth(o.truth.c_str(), &p));
  } else if (!o.labels.empty()) {
    g.inputs.push_back(o.labels);
    check(rl_oracle_from_labels(o.labels.c_str(), &p));
  } else {
    throw UsageError("an oracle is required: pass --truth or --labels");
  }
  return OraclePtr(p);
}

void set_filter(json& cfg, const char* key, const std::string& text, const std::string& flag) {
  if (!text.empty()) cfg[key] = parse_json_arg(text, flag);
}

json contrast(const std::string& pos, const std::string& neg, const std::string& flag) {
  if (pos.empty() || neg.empty()) throw UsageError(flag + " needs both positive and negative filters");
  return {{"positive", parse_json_arg(pos, flag + " positive")}, {"negative", parse_json_arg(neg, flag + " negative")}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"routelab: probing, direction statistics and ablation for hidden-state dumps"};
  app.require_subcommand(1);
  if (const char* env = std::getenv("ROUTELAB_JOBS")) {
    try {
      g.jobs = static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      std::cerr << "error: ROUTELAB_JOBS must be a positive integer\n";
      return kExitUsage;
    }
  }
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"json", "table"}));
  app.add_option("--seed", g.seed, "Root seed for every stochastic step");
  app.add_option("--jobs", g.jobs, "Worker threads (default: ROUTELAB_JOBS or 1)")->check(CLI::PositiveNumber);
  app.fallthrough();

  std::function<void()> action;

  // probe ---------------------------------------------------------------
  struct {
    std::string acts, positive;
    std::vector<int> layers;
    bool loco = false, band = false;
    std::size_t k = 6, perms = 200;
    double lambda = 1.0, band_low = 0.40, band_high = 0.75;
    std::optional<int> model_depth;
  } probe;
  auto* probe_cmd = app.add_subcommand("probe", "Ridge probe with CV and permutation baseline");
  probe_cmd->add_option("--acts", probe.acts, "Activation container")->required()->check(CLI::ExistingFile);
  probe_cmd->add_option("--layer,--layers", probe.layers, "Layers to probe (default: all)");
  probe_cmd->add_flag("--loco", probe.loco, "Leave-one-category-out folds instead of stratified k-fold");
  probe_cmd->add_option("--k", probe.k, "Stratified fold count")->check(CLI::PositiveNumber);
  probe_cmd->add_option("--perms", probe.perms, "Shuffled-label refits");
  probe_cmd->add_option("--lambda", probe.lambda, "Ridge strength");
  probe_cmd->add_option("--positive", probe.positive, "Prompt filter JSON for the positive class");
  probe_cmd->add_flag("--band", probe.band, "Add a layer-band summary");
  probe_cmd->add_option("--band-low", probe.band_low, "Band lower edge (fraction of depth)");
  probe_cmd->add_option("--band-high", probe.band_high, "Band upper edge (fraction of depth)");
  probe_cmd->add_option("--model-depth", probe.model_depth, "Model layer count for depth fractions");
  probe_cmd->add_option("--out", g.out, "Write the report here instead of stdout");
  probe_cmd->callback([&] {
    action = [&] {
      g.inputs.push_back(probe.acts);
      g.outputs.push_back(g.out);
      guard_outputs();
      auto set = load_set(probe.acts);
      json cfg = {{"scheme", probe.loco ? "loco" : "stratified"},
                  {"k", probe.k},
                  {"permutations", probe.perms},
                  {"lambda", probe.lambda},
                  {"seed", need_seed()},
                  {"jobs", g.jobs}};
      if (!probe.layers.empty()) cfg["layers"] = probe.layers;
      set_filter(cfg, "positive", probe.positive, "--positive");
      if (probe.band) {
        cfg["band"] = {{"low", probe.band_low}, {"high", probe.band_high}};
        if (probe.model_depth) cfg["band"]["model_depth"] = *probe.model_depth;
      }
      char* out = nullptr;
      check(rl_probe(set.get(), dump(cfg).c_str(), &out));
      print(take(out), "probe");
    };
  });

  // caa -----------------------------------------------------------------
  struct {
    std::string acts, pos, neg, kind = "custom", corpus, out;
    int layer = 0;
    std::size_t stability = 0;
  } caa;
  auto* caa_cmd = app.add_subcommand("caa", "Extract a mean-difference direction");
  caa_cmd->add_option("--acts", caa.acts, "Activation container")->required()->check(CLI::ExistingFile);
  caa_cmd->add_option("--layer", caa.layer, "Layer")->required();
  caa_cmd->add_option("--pos", caa.pos, "Prompt filter JSON for the positive side")->required();
  caa_cmd->add_option("--neg", caa.neg, "Prompt filter JSON for the negative side")->required();
  caa_cmd->add_option("--kind", caa.kind, "Direction kind")
      ->check(CLI::IsMember({"political", "safety", "sentiment", "formality", "random", "custom"}));
  caa_cmd->add_option("--corpus", caa.corpus, "Corpus identifier recorded with the direction");
  caa_cmd->add_option("--out", caa.out, "Direction file to write")->required();
  caa_cmd->add_option("--stability", caa.stability, "Also bootstrap direction stability with N iterations");
  caa_cmd->callback([&] {
    action = [&] {
      g.inputs.push_back(caa.acts);
      g.outputs.push_back(caa.out);
      guard_outputs();
      auto set = load_set(caa.acts);
      json cfg = {{"layer", caa.layer},
                  {"positive", parse_json_arg(caa.pos, "--pos")},
                  {"negative", parse_json_arg(caa.neg, "--neg")},
                  {"kind", caa.kind},
                  {"corpus_id", caa.corpus}};
      rl_direction* d = nullptr;
      check(rl_caa(set.get(), dump(cfg).c_str(), &d));
      DirPtr dir(d);
      check(rl_direction_write(dir.get(), caa.out.c_str()));
      char* info = nullptr;
      check(rl_direction_info(dir.get(), &info));
      json result = {{"direction", json::parse(take(info))}, {"path", caa.out}};
      if (caa.stability > 0) {
        json s = {{"layer", caa.layer},
                  {"positive", cfg["positive"]},
                  {"negative", cfg["negative"]},
                  {"n_iter", caa.stability},
                  {"seed", need_seed()},
                  {"jobs", g.jobs}};
        char* out = nullptr;
        check(rl_stability(set.get(), dump(s).c_str(), &out));
        result["stability"] = json::parse(take(out));
      }
      print(dump(result), nullptr);
    };
  });

  // cosine --------------------------------------------------------------
  struct {
    std::string a, b, acts, a_pos, a_neg, b_pos, b_neg;
    std::vector<int> layers;
    std::size_t n_boot = 1000;
    double level = 0.95;
    std::optional<int> n_layers;
  } cos;
  auto* cos_cmd = app.add_subcommand("cosine", "Direction cosine, transfer check, or bootstrap cosine series");
  cos_cmd->add_option("--a", cos.a, "First direction file")->check(CLI::ExistingFile);
  cos_cmd->add_option("--b", cos.b, "Second direction file")->check(CLI::ExistingFile);
  cos_cmd->add_option("--acts", cos.acts, "Activation container (bootstrap mode)")->check(CLI::ExistingFile);
  cos_cmd->add_option("--a-pos", cos.a_pos, "Filter JSON: direction A positive side");
  cos_cmd->add_option("--a-neg", cos.a_neg, "Filter JSON: direction A negative side");
  cos_cmd->add_option("--b-pos", cos.b_pos, "Filter JSON: direction B positive side");
  cos_cmd->add_option("--b-neg", cos.b_neg, "Filter JSON: direction B negative side");
  cos_cmd->add_option("--layer,--layers", cos.layers, "Layers (default: all)");
  cos_cmd->add_option("--n-boot", cos.n_boot, "Bootstrap iterations");
  cos_cmd->add_option("--level", cos.level, "Confidence level");
  cos_cmd->add_option("--n-layers", cos.n_layers, "Model layer count for normalized depth");
  cos_cmd->add_option("--out", g.out, "Write the result here instead of stdout");
  cos_cmd->callback([&] {
    action = [&] {
      g.outputs.push_back(g.out);
      if (!cos.acts.empty()) {
        g.inputs.push_back(cos.acts);
        guard_outputs();
        auto set = load_set(cos.acts);
        json cfg = {{"a", contrast(cos.a_pos, cos.a_neg, "--a-pos/--a-neg")},
                    {"b", contrast(cos.b_pos, cos.b_neg, "--b-pos/--b-neg")},
                    {"n_iter", cos.n_boot},
                    {"level", cos.level},
                    {"seed", need_seed()},
                    {"jobs", g.jobs}};
        if (!cos.layers.empty()) cfg["layers"] = cos.layers;
        if (cos.n_layers) cfg["n_layers"] = *cos.n_layers;
        char* out = nullptr;
        check(rl_cosine_series(set.get(), dump(cfg).c_str(), &out));
        const std::string text = take(out);
        if (g.format == "table") {
          char* table = nullptr;
          check(rl_report("depth", dump(json{{"series", json::parse(text)}}).c_str(), &table));
          write_text(take(table), g.out);
        } else {
          write_text(text, g.out);
        }
        return;
      }
      if (cos.a.empty() || cos.b.empty()) throw UsageError("cosine needs --a and --b, or --acts with filters");
      g.inputs.push_back(cos.a);
      g.inputs.push_back(cos.b);
      guard_outputs();
      auto a = load_dir(cos.a);
      auto b = load_dir(cos.b);
      char* out = nullptr;
      check(rl_transfer_check(a.get(), b.get(), &out));
      print(take(out), nullptr);
    };
  });

  // converge ------------------------------------------------------------
  struct {
    std::string acts, ref_pos, ref_neg, pos, neg;
    int layer = 0;
    std::vector<std::size_t> sizes{8, 16, 32, 60, 90};
    std::size_t n_iter = 500, n_sub = 10;
    double level = 0.95;
  } conv;
  auto* conv_cmd = app.add_subcommand("converge", "Bootstrap CI width against number of prompt pairs");
  conv_cmd->add_option("--acts", conv.acts, "Activation container")->required()->check(CLI::ExistingFile);
  conv_cmd->add_option("--layer", conv.layer, "Layer")->required();
  conv_cmd->add_option("--ref-pos", conv.ref_pos, "Filter JSON: reference positive side")->required();
  conv_cmd->add_option("--ref-neg", conv.ref_neg, "Filter JSON: reference negative side")->required();
  conv_cmd->add_option("--pos", conv.pos, "Filter JSON: paired positive side")->required();
  conv_cmd->add_option("--neg", conv.neg, "Filter JSON: paired negative side")->required();
  conv_cmd->add_option("--sizes", conv.sizes, "Pair counts");
  conv_cmd->add_option("--n-iter", conv.n_iter, "Bootstrap iterations per subsample");
  conv_cmd->add_option("--n-subsamples", conv.n_sub, "Subsamples per size");
  conv_cmd->add_option("--level", conv.level, "Confidence level");
  conv_cmd->add_option("--out", g.out, "Write the curve here instead of stdout");
  conv_cmd->callback([&] {
    action = [&] {
      g.inputs.push_back(conv.acts);
      g.outputs.push_back(g.out);
      guard_outputs();
      auto set = load_set(conv.acts);
      json cfg = {{"layer", conv.layer},
                  {"reference", contrast(conv.ref_pos, conv.ref_neg, "--ref-pos/--ref-neg")},
                  {"pairs", contrast(conv.pos, conv.neg, "--pos/--neg")},
                  {"sizes", conv.sizes},
                  {"n_iter", conv.n_iter},
                  {"n_subsamples", conv.n_sub},
                  {"level", conv.level},
                  {"seed", need_seed()},
                  {"jobs", g.jobs}};
      char* out = nullptr;
      check(rl_converge(set.get(), dump(cfg).c_str(), &out));
      print(take(out), nullptr);
    };
  });

  // ablate --------------------------------------------------------------
  struct {
    std::string acts, eval, out_set;
    std::vector<std::string> dirs;
    std::vector<int> layers;
    std::optional<double> alpha;
    std::vector<double> alphas;
    bool sweep = false;
    std::optional<int> eval_layer;
    OracleArgs oracle;
  } abl;
  auto* abl_cmd = app.add_subcommand("ablate", "Projection ablation of a set, a single run, or an alpha sweep");
  abl_cmd->add_option("--acts", abl.acts, "Activation container")->required()->check(CLI::ExistingFile);
  abl_cmd->add_option("--dir", abl.dirs, "Direction file(s); one for all layers or one per layer")
      ->required()
      ->check(CLI::ExistingFile);
  abl_cmd->add_option("--layer,--layers", abl.layers, "Layers to ablate (sweep default: all)");
  abl_cmd->add_option("--alpha", abl.alpha, "Ablation strength");
  abl_cmd->add_flag("--sweep", abl.sweep, "Sweep alphas per layer");
  abl_cmd->add_option("--alphas", abl.alphas, "Sweep alphas (default 2 5 8 12 20)");
  abl_cmd->add_option("--eval", abl.eval, "Filter JSON selecting evaluated prompts");
  abl_cmd->add_option("--eval-layer", abl.eval_layer, "Layer the oracle reads (default: deepest ablated)");
  abl_cmd->add_option("--out-set", abl.out_set, "Write the ablated activation container");
  abl_cmd->add_option("--out", g.out, "Write the report here instead of stdout");
  add_oracle_options(abl_cmd, abl.oracle);
  abl_cmd->callback([&] {
    action = [&] {
      g.inputs.push_back(abl.acts);
      for (const auto& d : abl.dirs) g.inputs.push_back(d);
      g.outputs.push_back(abl.out_set);
      g.outputs.push_back(g.out);
      guard_outputs();
      auto set = load_set(abl.acts);
      auto dirs = load_dirs(abl.dirs);
      auto ptrs = raw(dirs);
      if (abl.sweep) {
        auto oracle = load_oracle(abl.oracle);
        json cfg = {{"jobs", g.jobs}};
        if (!abl.layers.empty()) cfg["layers"] = abl.layers;
        if (!abl.alphas.empty()) cfg["alphas"] = abl.alphas;
        set_filter(cfg, "eval", abl.eval, "--eval");
        char* out = nullptr;
        check(rl_alpha_sweep(set.get(), ptrs.data(), ptrs.size(), oracle.get(), dump(cfg).c_str(), &out));
        print(take(out), "sweep");
        return;
      }
      if (abl.layers.empty()) throw UsageError("--layers is required");
      if (dirs.size() != 1) throw UsageError("a single ablation takes exactly one --dir");
      json cfg = {{"layers", abl.layers}, {"alpha", abl.alpha.value_or(1.0)}};
      if (!abl.out_set.empty()) {
        rl_set* s = nullptr;
        check(rl_ablate_set(set.get(), ptrs[0], dump(cfg).c_str(), &s));
        SetPtr ablated(s);
        char* summary = nullptr;
        check(rl_set_write(ablated.get(), abl.out_set.c_str(), &summary));
        if (abl.oracle.truth.empty() && abl.oracle.labels.empty()) {
          print(dump(json{{"path", abl.out_set}, {"checksums", json::parse(take(summary))}}), nullptr);
          return;
        }
        rl_string_free(summary);
      }
      auto oracle = load_oracle(abl.oracle);
      set_filter(cfg, "eval", abl.eval, "--eval");
      if (abl.eval_layer) cfg["eval_layer"] = *abl.eval_layer;
      char* out = nullptr;
      check(rl_ablation_run(set.get(), ptrs[0], oracle.get(), dump(cfg).c_str(), &out));
      print(take(out), nullptr);
    };
  });

  // alpha-select ----------------------------------------------------------
  struct {
    std::string selection, evaluation, adversarial;
    std::vector<std::string> dirs;
    std::vector<int> layers;
    std::vector<double> alphas;
    OracleArgs oracle;
  } sel;
  auto* sel_cmd = app.add_subcommand("alpha-select", "Pick the smallest refusal-eliminating alpha on held-in data");
  sel_cmd->add_option("--selection", sel.selection, "Selection set")->required()->check(CLI::ExistingFile);
  sel_cmd->add_option("--evaluation", sel.evaluation, "Held-out evaluation set")->required()->check(CLI::ExistingFile);
  sel_cmd->add_option("--adversarial", sel.adversarial, "Held-out adversarial set")->required()->check(CLI::ExistingFile);
  sel_cmd->add_option("--dir", sel.dirs, "Direction file(s)")->required()->check(CLI::ExistingFile);
  sel_cmd->add_option("--layer,--layers", sel.layers, "Layers (default: all)");
  sel_cmd->add_option("--alphas", sel.alphas, "Candidate alphas (default 2 5 8 12 20)");
  sel_cmd->add_option("--out", g.out, "Write the report here instead of stdout");
  add_oracle_options(sel_cmd, sel.oracle);
  sel_cmd->callback([&] {
    action = [&] {
      g.inputs.insert(g.inputs.end(), {sel.selection, sel.evaluation, sel.adversarial});
      for (const auto& d : sel.dirs) g.inputs.push_back(d);
      g.outputs.push_back(g.out);
      guard_outputs();
      auto s = load_set(sel.selection);
      auto e = load_set(sel.evaluation);
      auto a = load_set(sel.adversarial);
      auto dirs = load_dirs(sel.dirs);
      auto ptrs = raw(dirs);
      auto oracle = load_oracle(sel.oracle);
      json cfg = json::object();
      if (!sel.layers.empty()) cfg["layers"] = sel.layers;
      if (!sel.alphas.empty()) cfg["alphas"] = sel.alphas;
      char* out = nullptr;
      check(rl_alpha_select(s.get(), e.get(), a.get(), ptrs.data(), ptrs.size(), oracle.get(), dump(cfg).c_str(),
                            &out));
      print(take(out), "alpha_select");
    };
  });

  // residualize -------------------------------------------------------------
  struct {
    std::string acts, dir, out;
    std::vector<std::string> concepts;
    std::optional<int> layer;
    double lambda_r = 0.01;
  } res;
  auto* res_cmd = app.add_subcommand("residualize", "Remove protected-concept atoms from a direction");
  res_cmd->add_option("--acts", res.acts, "Activation container")->required()->check(CLI::ExistingFile);
  res_cmd->add_option("--dir", res.dir, "Direction to clean")->required()->check(CLI::ExistingFile);
  res_cmd->add_option("--concept", res.concepts, "NAME=FILTER_JSON protected concept (repeatable)")->required();
  res_cmd->add_option("--layer", res.layer, "Layer (default: the direction's layer)");
  res_cmd->add_option("--lambda-r", res.lambda_r, "Ridge strength of the atom regression");
  res_cmd->add_option("--out", res.out, "Clean direction file to write")->required();
  res_cmd->callback([&] {
    action = [&] {
      g.inputs.insert(g.inputs.end(), {res.acts, res.dir});
      g.outputs.push_back(res.out);
      guard_outputs();
      auto set = load_set(res.acts);
      auto dir = load_dir(res.dir);
      json concepts = json::array();
      for (const auto& c : res.concepts) {
        const auto eq = c.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--concept expects NAME=FILTER_JSON");
        concepts.push_back({{"name", c.substr(0, eq)}, {"filter", parse_json_arg(c.substr(eq + 1), "--concept")}});
      }
      json cfg = {{"concepts", concepts}, {"seed", need_seed()}, {"lambda_r", res.lambda_r}};
      if (res.layer) cfg["layer"] = *res.layer;
      rl_direction* clean = nullptr;
      char* out = nullptr;
      check(rl_residualize(set.get(), dir.get(), dump(cfg).c_str(), &clean, &out));
      DirPtr owned(clean);
      json report = json::parse(take(out));
      check(rl_direction_write(owned.get(), res.out.c_str()));
      report["path"] = res.out;
      g.out.clear();
      print(dump(report), nullptr);
    };
  });

  // controls ----------------------------------------------------------------
  struct {
    std::string acts, eval;
    std::vector<std::string> dirs;
    std::vector<int> layers;
    std::vector<double> alphas;
    OracleArgs oracle;
  } ctl;
  auto* ctl_cmd = app.add_subcommand("controls", "Political ablation against control-direction ablations");
  ctl_cmd->add_option("--acts", ctl.acts, "Activation container")->required()->check(CLI::ExistingFile);
  ctl_cmd->add_option("--dir", ctl.dirs, "Direction files; grouped into banks by kind")->required()->check(CLI::ExistingFile);
  ctl_cmd->add_option("--layer,--layers", ctl.layers, "Layers (default: all)");
  ctl_cmd->add_option("--alphas", ctl.alphas, "Alphas (default 2 5 8 12 20)");
  ctl_cmd->add_option("--eval", ctl.eval, "Filter JSON selecting evaluated prompts");
  ctl_cmd->add_option("--out", g.out, "Write the report here instead of stdout");
  add_oracle_options(ctl_cmd, ctl.oracle);
  ctl_cmd->callback([&] {
    action = [&] {
      g.inputs.push_back(ctl.acts);
      for (const auto& d : ctl.dirs) g.inputs.push_back(d);
      g.outputs.push_back(g.out);
      guard_outputs();
      auto set = load_set(ctl.acts);
      auto dirs = load_dirs(ctl.dirs);
      auto ptrs = raw(dirs);
      auto oracle = load_oracle(ctl.oracle);
      json cfg = {{"jobs", g.jobs}};
      if (!ctl.layers.empty()) cfg["layers"] = ctl.layers;
      if (!ctl.alphas.empty()) cfg["alphas"] = ctl.alphas;
      set_filter(cfg, "eval", ctl.eval, "--eval");
      char* out = nullptr;
      check(rl_controls(set.get(), ptrs.data(), ptrs.size(), oracle.get(), dump(cfg).c_str(), &out));
      print(take(out), "controls");
    };
  });

  // synth ---------------------------------------------------------------------
  struct {
    std::string spec, out, truth;
    bool yi = false;
  } syn;
  auto* syn_cmd = app.add_subcommand("synth", "Generate a synthetic activation set with planted directions");
  syn_cmd->add_option("--spec", syn.spec, "Synthetic spec JSON")->required()->check(CLI::ExistingFile);
  syn_cmd->add_option("--out", syn.out, "Activation container to write")->required();
  syn_cmd->add_option("--truth", syn.truth, "Ground-truth file to write");
  syn_cmd->add_flag("--yi", syn.yi, "Plant the concept without routing");
  syn_cmd->callback([&] {
    action = [&] {
      g.inputs.push_back(syn.spec);
      g.outputs.insert(g.outputs.end(), {syn.out, syn.truth});
      guard_outputs();
      if (!syn.truth.empty() && resolved(syn.truth) == resolved(syn.out)) {
        throw UsageError("--truth and --out must differ");
      }
      json spec = read_json_file(syn.spec);
      if (g.seed) spec["seed"] = *g.seed;
      if (!spec.contains("seed")) throw UsageError("a seed is required: pass --seed or set \"seed\" in the --spec file");
      if (syn.yi) spec["routed"] = false;
      rl_set* s = nullptr;
      check(rl_synth(dump(spec).c_str(), &s, nullptr, syn.truth.empty() ? nullptr : syn.truth.c_str()));
      SetPtr set(s);
      char* summary = nullptr;
      check(rl_set_write(set.get(), syn.out.c_str(), &summary));
      json result = {{"path", syn.out}, {"checksums", json::parse(take(summary))}};
      if (!syn.truth.empty()) result["truth"] = syn.truth;
      g.out.clear();
      print(dump(result), nullptr);
    };
  });

  // stats ---------------------------------------------------------------------
  struct {
    std::string records, filter, ccp, parallel, reference, coarse_map, group_by, kappa;
    bool refusal = false, steering = false, flags = false, agreement = false;
    std::optional<double> classify;
    std::string table = "refusal_steering";
  } st;
  auto* st_cmd = app.add_subcommand("stats", "Refusal, steering, discrimination and agreement statistics");
  st_cmd->add_option("--records", st.records, "Behavior records (JSON lines)")->check(CLI::ExistingFile);
  st_cmd->add_option("--filter", st.filter, "Record filter JSON");
  st_cmd->add_flag("--refusal", st.refusal, "Refusal rate");
  st_cmd->add_flag("--steering", st.steering, "Steering mean over non-refused responses");
  st_cmd->add_flag("--flags", st.flags, "Rates of non-exclusive behavior flags");
  st_cmd->add_option("--ccp", st.ccp, "Record filter JSON for discrimination prompts");
  st_cmd->add_option("--parallel", st.parallel, "Record filter JSON for matched parallel prompts");
  st_cmd->add_flag("--agreement", st.agreement, "Multi-judge agreement");
  st_cmd->add_option("--reference", st.reference, "Reference judge for agreement");
  st_cmd->add_option("--coarse-map", st.coarse_map, "Coarse bucket map JSON file")->check(CLI::ExistingFile);
  st_cmd->add_option("--group-by", st.group_by, "Group records")->check(CLI::IsMember({"model_id"}));
  st_cmd->add_option("--classify", st.classify, "Classify a discrimination delta in pp");
  st_cmd->add_option("--kappa", st.kappa, "Kappa input JSON file {a, b, category?}")->check(CLI::ExistingFile);
  st_cmd->add_option("--table", st.table, "Table shape for --format table")
      ->check(CLI::IsMember({"refusal_steering", "steering", "agreement"}));
  st_cmd->add_option("--out", g.out, "Write the result here instead of stdout");
  st_cmd->callback([&] {
    action = [&] {
      g.outputs.push_back(g.out);
      if (st.classify) {
        guard_outputs();
        char* out = nullptr;
        check(rl_classify_discrimination(*st.classify, &out));
        print(take(out), nullptr);
        return;
      }
      if (!st.kappa.empty()) {
        g.inputs.push_back(st.kappa);
        guard_outputs();
        double k = 0.0;
        check(rl_kappa(dump(read_json_file(st.kappa)).c_str(), &k));
        print(dump(json{{"kappa", k}}), nullptr);
        return;
      }
      if (st.records.empty()) throw UsageError("stats needs --records, --classify or --kappa");
      g.inputs.push_back(st.records);
      if (!st.coarse_map.empty()) g.inputs.push_back(st.coarse_map);
      guard_outputs();
      json cfg = json::object();
      set_filter(cfg, "filter", st.filter, "--filter");
      if (st.refusal) cfg["refusal"] = true;
      if (st.steering) cfg["steering"] = true;
      if (st.flags) cfg["flags"] = true;
      if (!st.ccp.empty() || !st.parallel.empty()) {
        cfg["discrimination"] = {{"ccp", parse_json_arg(st.ccp.empty() ? "{}" : st.ccp, "--ccp")},
                                 {"parallel", parse_json_arg(st.parallel.empty() ? "{}" : st.parallel, "--parallel")}};
      }
      if (st.agreement) {
        cfg["agreement"] = json::object();
        if (!st.reference.empty()) cfg["agreement"]["reference"] = st.reference;
        if (!st.coarse_map.empty()) cfg["agreement"]["coarse_map"] = read_json_file(st.coarse_map);
      }
      if (!st.group_by.empty()) cfg["group_by"] = st.group_by;
      char* out = nullptr;
      check(rl_stats(st.records.c_str(), dump(cfg).c_str(), &out));
      const std::string text = take(out);
      if (g.format == "table" && st.table != "agreement" && st.group_by.empty()) {
        json row = json::parse(text);
        row["model_id"] = st.filter.empty() ? "all" : parse_json_arg(st.filter, "--filter").value("model_id", "all");
        print(dump(json::array({row})), st.table.c_str());
        return;
      }
      print(text, st.table.c_str());
    };
  });

  // grade ---------------------------------------------------------------------
  struct {
    bool train_sep = false, heldout_cv = false, causal = false, failure = false;
    std::string flags;
  } gr;
  auto* gr_cmd = app.add_subcommand("grade", "Evidence level from available result types");
  gr_cmd->add_flag("--train-sep", gr.train_sep, "Train-set separability result available");
  gr_cmd->add_flag("--heldout-cv", gr.heldout_cv, "Held-out generalization result available");
  gr_cmd->add_flag("--causal", gr.causal, "Causal intervention result available");
  gr_cmd->add_flag("--failure-mode", gr.failure, "Failure-mode analysis available");
  gr_cmd->add_option("--flags", gr.flags, "Flags JSON file instead of switches")->check(CLI::ExistingFile);
  gr_cmd->add_option("--out", g.out, "Write the grade here instead of stdout");
  gr_cmd->callback([&] {
    action = [&] {
      g.outputs.push_back(g.out);
      json flags;
      if (!gr.flags.empty()) {
        g.inputs.push_back(gr.flags);
        flags = read_json_file(gr.flags);
      } else {
        flags = {{"train_sep", gr.train_sep},
                 {"heldout_cv", gr.heldout_cv},
                 {"causal_intervention", gr.causal},
                 {"failure_mode", gr.failure}};
      }
      guard_outputs();
      char* out = nullptr;
      check(rl_grade(dump(flags).c_str(), &out));
      print(take(out), nullptr);
    };
  });

  // report --------------------------------------------------------------------
  struct {
    std::string kind;
    std::vector<std::string> inputs;
  } rep;
  auto* rep_cmd = app.add_subcommand("report", "Assemble plain-text tables from analysis outputs");
  rep_cmd->add_option("--kind", rep.kind, "Table kind")
      ->required()
      ->check(CLI::IsMember({"probe", "band", "depth", "controls", "steering", "refusal_steering", "agreement",
                             "sweep", "alpha_select"}));
  rep_cmd->add_option("--in", rep.inputs, "Input JSON file(s); for depth use LABEL=FILE")->required();
  rep_cmd->add_option("--out", g.out, "Write the table here instead of stdout");
  rep_cmd->callback([&] {
    action = [&] {
      g.outputs.push_back(g.out);
      json input;
      if (rep.kind == "depth") {
        input = json::object();
        for (const auto& spec : rep.inputs) {
          const auto eq = spec.find('=');
          const std::string label = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
          const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
          g.inputs.push_back(path);
          input[label] = read_json_file(path);
        }
      } else if (rep.inputs.size() == 1) {
        g.inputs.push_back(rep.inputs[0]);
        input = read_json_file(rep.inputs[0]);
      } else {
        input = json::array();
        for (const auto& p : rep.inputs) {
          g.inputs.push_back(p);
          json doc = read_json_file(p);
          if (doc.contains("groups")) {
            for (auto& row : doc["groups"]) input.push_back(row);
          } else {
            input.push_back(doc);
          }
        }
      }
      guard_outputs();
      char* out = nullptr;
      check(rl_report(rep.kind.c_str(), dump(input).c_str(), &out));
      write_text(take(out), g.out);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (action) action();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitOk;
}
