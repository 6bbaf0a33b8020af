#include "routelab/synthlab.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <set>

#include "routelab/error.hpp"
#include "routelab/rng.hpp"

namespace routelab {

namespace {

constexpr const char* kTruthFormat = "routelab.truth";

template <typename T>
T take(const nlohmann::json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::kInvalidArgument, std::string("spec field '") + key + "' has the wrong type");
  }
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& what) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, what + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) fail(ErrorCode::kInvalidArgument, "unknown " + what + " field '" + key + "'");
  }
}

double schedule_at(const std::vector<double>& schedule, int layer, double fallback) {
  if (schedule.empty()) return fallback;
  return schedule.at(static_cast<std::size_t>(layer));
}

Eigen::VectorXd round_to_float(const Eigen::VectorXd& v) { return v.cast<float>().cast<double>(); }

std::string layer_block(int layer, const char* what) {
  return "layer:" + std::to_string(layer) + ":" + what;
}

}  // namespace

const char* to_string(Geometry g) {
  switch (g) {
    case Geometry::kModular: return "modular";
    case Geometry::kCoupled: return "coupled";
    case Geometry::kEntangled: return "entangled";
  }
  return "modular";
}

Geometry parse_geometry(const std::string& s) {
  if (s == "modular") return Geometry::kModular;
  if (s == "coupled") return Geometry::kCoupled;
  if (s == "entangled") return Geometry::kEntangled;
  fail(ErrorCode::kInvalidArgument, "unknown geometry '" + s + "'");
}

const char* to_string(CategoryKind k) {
  switch (k) {
    case CategoryKind::kPolitical: return "political";
    case CategoryKind::kSafety: return "safety";
    case CategoryKind::kSentiment: return "sentiment";
    case CategoryKind::kFormality: return "formality";
    case CategoryKind::kNeutral: return "neutral";
  }
  return "neutral";
}

CategoryKind parse_category_kind(const std::string& s) {
  if (s == "political") return CategoryKind::kPolitical;
  if (s == "safety") return CategoryKind::kSafety;
  if (s == "sentiment") return CategoryKind::kSentiment;
  if (s == "formality") return CategoryKind::kFormality;
  if (s == "neutral") return CategoryKind::kNeutral;
  fail(ErrorCode::kInvalidArgument, "unknown category kind '" + s + "'");
}

double SyntheticCategory::gain_at(int layer) const {
  if (routing_gain.size() == 1) return routing_gain[0];
  return routing_gain.at(static_cast<std::size_t>(layer));
}

double SyntheticSpec::concept_at(int layer) const {
  return schedule_at(concept_schedule, layer, layer >= emergence_layer ? concept_strength : 0.0);
}

double SyntheticSpec::routing_at(int layer) const {
  if (!routed) return 0.0;
  return schedule_at(routing_schedule, layer, layer >= emergence_layer ? routing_strength : 0.0);
}

double SyntheticSpec::rho_at(int layer) const {
  if (geometry != Geometry::kCoupled) return 0.0;
  return schedule_at(coupling_schedule, layer, rho);
}

std::size_t SyntheticSpec::rows() const {
  std::size_t n = 0;
  for (const auto& c : categories) n += c.n_positive + c.n_control;
  return n;
}

void SyntheticSpec::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::kInvalidArgument, "synthetic spec: " + m); };
  if (d < 6) bad("d must be at least 6");
  if (n_layers < 1) bad("n_layers must be at least 1");
  if (emergence_layer < 0 || emergence_layer > n_layers) bad("emergence_layer must lie in [0, n_layers]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) bad("noise_sigma must be >= 0");
  if (!(rho >= 0.0 && rho <= 1.0)) bad("rho must lie in [0, 1]");
  if (!(eta >= 0.0 && eta <= 1.0)) bad("eta must lie in [0, 1]");
  const auto layers = static_cast<std::size_t>(n_layers);
  for (const auto* s : {&coupling_schedule, &concept_schedule, &routing_schedule}) {
    if (!s->empty() && s->size() != layers) bad("per-layer schedules need n_layers entries");
    for (double v : *s) {
      if (!std::isfinite(v)) bad("schedule values must be finite");
    }
  }
  for (double v : coupling_schedule) {
    if (!(v >= 0.0 && v <= 1.0)) bad("coupling schedule values must lie in [0, 1]");
  }
  for (double v : {concept_strength, routing_strength, knowledge_strength, safety_strength, style_strength}) {
    if (!std::isfinite(v)) bad("strengths must be finite");
  }
  if (categories.empty()) bad("at least one category is required");
  std::set<std::string> names;
  for (const auto& c : categories) {
    if (c.name.empty()) bad("category names must be non-empty");
    if (!names.insert(c.name).second) bad("duplicate category '" + c.name + "'");
    if (c.n_positive + c.n_control < 1) bad("category '" + c.name + "' has no prompts");
    if (c.routing_gain.size() != 1 && c.routing_gain.size() != layers) {
      bad("routing_gain of '" + c.name + "' needs 1 or n_layers entries");
    }
    if (c.intensity && (*c.intensity < 1 || *c.intensity > 4)) bad("intensity must lie in 1..4");
    if (!(c.offset >= 0.0)) bad("category offset must be >= 0");
  }
}

SyntheticSpec spec_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"d", "n_layers", "emergence_layer", "noise_sigma", "seed", "geometry", "rho", "eta",
                  "coupling_schedule", "concept_strength", "routing_strength", "knowledge_strength",
                  "safety_strength", "style_strength", "concept_schedule", "routing_schedule", "routed",
                  "model_id", "id_prefix", "categories"},
                 "spec");
  SyntheticSpec s;
  s.d = take(j, "d", s.d);
  s.n_layers = take(j, "n_layers", s.n_layers);
  s.emergence_layer = take(j, "emergence_layer", s.emergence_layer);
  s.noise_sigma = take(j, "noise_sigma", s.noise_sigma);
  s.seed = take(j, "seed", s.seed);
  s.geometry = parse_geometry(take(j, "geometry", std::string(to_string(s.geometry))));
  s.rho = take(j, "rho", s.rho);
  s.eta = take(j, "eta", s.eta);
  s.coupling_schedule = take(j, "coupling_schedule", s.coupling_schedule);
  s.concept_strength = take(j, "concept_strength", s.concept_strength);
  s.routing_strength = take(j, "routing_strength", s.routing_strength);
  s.knowledge_strength = take(j, "knowledge_strength", s.knowledge_strength);
  s.safety_strength = take(j, "safety_strength", s.safety_strength);
  s.style_strength = take(j, "style_strength", s.style_strength);
  s.concept_schedule = take(j, "concept_schedule", s.concept_schedule);
  s.routing_schedule = take(j, "routing_schedule", s.routing_schedule);
  s.routed = take(j, "routed", s.routed);
  s.model_id = take(j, "model_id", s.model_id);
  s.id_prefix = take(j, "id_prefix", s.id_prefix);
  if (!j.contains("categories") || !j.at("categories").is_array()) {
    fail(ErrorCode::kInvalidArgument, "spec needs a 'categories' array");
  }
  for (const auto& cj : j.at("categories")) {
    reject_unknown(cj, {"name", "kind", "n_positive", "n_control", "routing_gain", "language", "intensity", "offset"},
                   "category");
    SyntheticCategory c;
    c.name = take(cj, "name", std::string{});
    c.kind = parse_category_kind(take(cj, "kind", std::string("political")));
    c.n_positive = take(cj, "n_positive", std::size_t{0});
    c.n_control = take(cj, "n_control", std::size_t{0});
    if (cj.contains("routing_gain")) {
      const auto& g = cj.at("routing_gain");
      if (g.is_number()) {
        c.routing_gain = {g.get<double>()};
      } else if (g.is_array()) {
        c.routing_gain = g.get<std::vector<double>>();
      } else {
        fail(ErrorCode::kInvalidArgument, "routing_gain must be a number or an array");
      }
    }
    c.language = parse_language(take(cj, "language", std::string("en")));
    if (cj.contains("intensity") && !cj.at("intensity").is_null()) c.intensity = cj.at("intensity").get<int>();
    c.offset = take(cj, "offset", 0.0);
    s.categories.push_back(std::move(c));
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : s.categories) {
    nlohmann::json cj = {{"name", c.name},
                         {"kind", to_string(c.kind)},
                         {"n_positive", c.n_positive},
                         {"n_control", c.n_control},
                         {"language", to_string(c.language)},
                         {"offset", c.offset}};
    cj["routing_gain"] = c.routing_gain.size() == 1 ? nlohmann::json(c.routing_gain[0]) : nlohmann::json(c.routing_gain);
    if (c.intensity) cj["intensity"] = *c.intensity;
    cats.push_back(std::move(cj));
  }
  return {{"d", s.d},
          {"n_layers", s.n_layers},
          {"emergence_layer", s.emergence_layer},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed},
          {"geometry", to_string(s.geometry)},
          {"rho", s.rho},
          {"eta", s.eta},
          {"coupling_schedule", s.coupling_schedule},
          {"concept_strength", s.concept_strength},
          {"routing_strength", s.routing_strength},
          {"knowledge_strength", s.knowledge_strength},
          {"safety_strength", s.safety_strength},
          {"style_strength", s.style_strength},
          {"concept_schedule", s.concept_schedule},
          {"routing_schedule", s.routing_schedule},
          {"routed", s.routed},
          {"model_id", s.model_id},
          {"id_prefix", s.id_prefix},
          {"categories", cats}};
}

SyntheticSpec read_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kInvalidArgument, std::string("spec is not valid JSON: ") + e.what());
  }
  return spec_from_json(j);
}

SyntheticSpec yi_mode(SyntheticSpec spec) {
  spec.routed = false;
  return spec;
}

// ---------------------------------------------------------------------------

LinearOracle GroundTruth::oracle() const {
  std::map<int, LayerReadout> readouts;
  for (const auto& [layer, p] : layers) {
    LayerReadout r;
    r.routing = p.routing;
    r.routing_threshold = p.routing_threshold;
    r.knowledge = p.knowledge;
    r.knowledge_threshold = p.knowledge_threshold;
    r.extra_refusals.emplace_back(p.safety, p.safety_threshold);
    readouts.emplace(layer, std::move(r));
  }
  return LinearOracle(std::move(readouts));
}

const PlantedLayer& GroundTruth::at(int layer) const {
  auto it = layers.find(layer);
  if (it == layers.end()) fail(ErrorCode::kMissingLayer, "no planted layer " + std::to_string(layer));
  return it->second;
}

Direction GroundTruth::planted(int layer, DirectionKind kind) const {
  const PlantedLayer& p = at(layer);
  Direction d;
  d.layer = layer;
  d.kind = kind;
  d.model_id = spec.model_id;
  d.corpus_id = "planted";
  switch (kind) {
    case DirectionKind::kPolitical: d.vector = p.routing; break;
    case DirectionKind::kSafety: d.vector = p.safety; break;
    case DirectionKind::kSentiment: d.vector = p.sentiment; break;
    case DirectionKind::kFormality: d.vector = p.formality; break;
    default: fail(ErrorCode::kInvalidArgument, "no planted direction of that kind");
  }
  d.vector.normalize();
  return d;
}

namespace {

PlantedLayer plant_layer(const SyntheticSpec& spec, int layer, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(spec.d);
  std::array<Eigen::VectorXd, 6> e;
  for (std::size_t i = 0; i < e.size(); ++i) {
    Eigen::VectorXd v(d);
    for (Eigen::Index j = 0; j < d; ++j) v(j) = rng.normal();
    for (std::size_t p = 0; p < i; ++p) v -= e[p].dot(v) * e[p];
    for (std::size_t p = 0; p < i; ++p) v -= e[p].dot(v) * e[p];
    e[i] = v.normalized();
  }
  PlantedLayer out;
  out.concept_dir = e[0];
  out.routing = e[1];
  out.knowledge = e[2];
  out.safety = e[3];
  out.sentiment = e[4];
  out.formality = e[5];
  if (spec.geometry == Geometry::kEntangled) {
    out.knowledge = spec.eta * e[1] + std::sqrt(1.0 - spec.eta * spec.eta) * e[2];
  }
  const double rho = spec.rho_at(layer);
  if (spec.geometry == Geometry::kCoupled) {
    out.safety = rho * e[1] + std::sqrt(1.0 - rho * rho) * e[3];
  }
  for (auto* v : {&out.concept_dir, &out.routing, &out.knowledge, &out.safety, &out.sentiment, &out.formality}) {
    *v = round_to_float(*v);
  }
  out.concept_coef = spec.concept_at(layer);
  out.routing_coef = spec.routing_at(layer);
  const double q = spec.knowledge_strength;
  out.routing_threshold = q * out.routing.dot(out.knowledge) + spec.routing_strength / 2.0;
  out.safety_threshold = q * out.safety.dot(out.knowledge) + spec.safety_strength / 2.0;
  out.knowledge_threshold = q / 2.0;
  return out;
}

Eigen::VectorXd row_mean(const SyntheticSpec& spec, const SyntheticCategory& cat, Group group,
                         const PlantedLayer& p, int layer) {
  Eigen::VectorXd mean = spec.knowledge_strength * p.knowledge;
  if (group == Group::kControl) return mean;
  switch (cat.kind) {
    case CategoryKind::kPolitical:
      mean += p.concept_coef * p.concept_dir + cat.gain_at(layer) * p.routing_coef * p.routing;
      break;
    case CategoryKind::kSafety: mean += spec.safety_strength * p.safety; break;
    case CategoryKind::kSentiment: mean += spec.style_strength * p.sentiment; break;
    case CategoryKind::kFormality: mean += spec.style_strength * p.formality; break;
    case CategoryKind::kNeutral: break;
  }
  return mean;
}

}  // namespace

SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  GroundTruth truth;
  truth.spec = spec;
  Rng frame_rng(derive_seed(spec.seed, streams::kSynthetic, 0));
  for (int layer = 0; layer < spec.n_layers; ++layer) {
    truth.layers.emplace(layer, plant_layer(spec, layer, frame_rng));
  }

  const auto d = static_cast<Eigen::Index>(spec.d);
  Manifest manifest;
  std::vector<std::size_t> row_category;
  std::vector<Eigen::VectorXd> offsets;
  for (std::size_t ci = 0; ci < spec.categories.size(); ++ci) {
    const auto& c = spec.categories[ci];
    Eigen::VectorXd off = Eigen::VectorXd::Zero(d);
    if (c.offset > 0.0) {
      Rng rng(derive_seed(spec.seed, streams::kSynthetic, 0x100000 + ci));
      for (Eigen::Index j = 0; j < d; ++j) off(j) = rng.normal();
      off *= c.offset / off.norm();
    }
    offsets.push_back(std::move(off));
    const std::size_t paired = std::min(c.n_positive, c.n_control);
    for (Group g : {Group::kPositive, Group::kControl}) {
      const std::size_t count = g == Group::kPositive ? c.n_positive : c.n_control;
      for (std::size_t i = 0; i < count; ++i) {
        PromptRecord r;
        r.prompt_id = spec.id_prefix + c.name + (g == Group::kPositive ? "-pos-" : "-ctl-") + std::to_string(i);
        r.topic = to_string(c.kind);
        r.category = c.name;
        r.group = g;
        r.language = c.language;
        r.intensity = c.intensity;
        if (i < paired) r.pair_id = spec.id_prefix + c.name + "-" + std::to_string(i);
        manifest.push_back(std::move(r));
        row_category.push_back(ci);
      }
    }
  }

  std::map<int, Matrix> layers;
  for (int layer = 0; layer < spec.n_layers; ++layer) {
    const PlantedLayer& p = truth.layers.at(layer);
    Rng noise(derive_seed(spec.seed, streams::kSynthetic, 1 + static_cast<std::uint64_t>(layer)));
    Matrix m(static_cast<Eigen::Index>(manifest.size()), d);
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      const auto& cat = spec.categories[row_category[i]];
      Eigen::VectorXd h = row_mean(spec, cat, manifest[i].group, p, layer) + offsets[row_category[i]];
      if (spec.noise_sigma > 0.0) {
        for (Eigen::Index j = 0; j < d; ++j) h(j) += spec.noise_sigma * noise.normal();
      }
      m.row(static_cast<Eigen::Index>(i)) = h.transpose().cast<float>();
    }
    layers.emplace(layer, std::move(m));
  }
  nlohmann::json meta = {{"source", "synthetic"},
                         {"capture_point", "synthetic"},
                         {"n_layers", spec.n_layers},
                         {"spec", to_json(spec)}};
  return {ActivationSet(spec.model_id, std::move(manifest), std::move(layers), std::move(meta)),
          std::move(truth)};
}

void write_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  nlohmann::json layers = nlohmann::json::array();
  std::vector<std::string> names;
  std::vector<std::vector<float>> storage;
  for (const auto& [layer, p] : truth.layers) {
    layers.push_back({{"layer", layer},
                      {"concept_coef", p.concept_coef},
                      {"routing_coef", p.routing_coef},
                      {"routing_threshold", p.routing_threshold},
                      {"safety_threshold", p.safety_threshold},
                      {"knowledge_threshold", p.knowledge_threshold}});
    const std::pair<const char*, const Eigen::VectorXd*> vecs[] = {
        {"concept", &p.concept_dir}, {"routing", &p.routing},     {"knowledge", &p.knowledge},
        {"safety", &p.safety},   {"sentiment", &p.sentiment}, {"formality", &p.formality}};
    for (const auto& [name, v] : vecs) {
      names.push_back(layer_block(layer, name));
      storage.emplace_back(v->data(), v->data() + v->size());
    }
  }
  std::vector<std::span<const float>> blocks(storage.begin(), storage.end());
  nlohmann::json header = {{"format", kTruthFormat}, {"spec", to_json(truth.spec)}, {"layers", layers}};
  write_framed(path, std::move(header), names, blocks);
}

GroundTruth read_truth(const std::filesystem::path& path) {
  FramedFile file = read_framed(path, kTruthFormat);
  GroundTruth truth;
  std::map<std::string, const std::vector<float>*> blocks;
  for (std::size_t i = 0; i < file.blocks.size(); ++i) blocks[file.block_names[i]] = &file.blocks[i];
  auto vec = [&](int layer, const char* what) {
    auto it = blocks.find(layer_block(layer, what));
    if (it == blocks.end()) fail(ErrorCode::kFormat, "truth file lacks block " + layer_block(layer, what));
    Eigen::VectorXd v(static_cast<Eigen::Index>(it->second->size()));
    for (std::size_t j = 0; j < it->second->size(); ++j) v(static_cast<Eigen::Index>(j)) = (*it->second)[j];
    return v;
  };
  try {
    truth.spec = spec_from_json(file.header.at("spec"));
    for (const auto& lj : file.header.at("layers")) {
      PlantedLayer p;
      const int layer = lj.at("layer").get<int>();
      p.concept_coef = lj.at("concept_coef").get<double>();
      p.routing_coef = lj.at("routing_coef").get<double>();
      p.routing_threshold = lj.at("routing_threshold").get<double>();
      p.safety_threshold = lj.at("safety_threshold").get<double>();
      p.knowledge_threshold = lj.at("knowledge_threshold").get<double>();
      p.concept_dir = vec(layer, "concept");
      p.routing = vec(layer, "routing");
      p.knowledge = vec(layer, "knowledge");
      p.safety = vec(layer, "safety");
      p.sentiment = vec(layer, "sentiment");
      p.formality = vec(layer, "formality");
      truth.layers.emplace(layer, std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed truth header: ") + e.what());
  }
  return truth;
}

}  // namespace routelab
