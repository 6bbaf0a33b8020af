#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "routelab/geometry.hpp"
#include "routelab/oracle.hpp"
#include "routelab/tensorstore.hpp"

namespace routelab {

// Linear-Gaussian stand-in for a model's hidden states. Each layer carries an
// orthonormal frame from which the planted directions are built:
//   concept c, routing r, knowledge k, safety s, sentiment, formality.
// A positive row of a political category at layer L is
//   concept_L * c + gain_{cat,L} * routing_L * r + q * k + noise,
// controls get q * k + noise only.

enum class Geometry { kModular, kCoupled, kEntangled };
const char* to_string(Geometry g);
Geometry parse_geometry(const std::string& s);

enum class CategoryKind { kPolitical, kSafety, kSentiment, kFormality, kNeutral };
const char* to_string(CategoryKind k);
CategoryKind parse_category_kind(const std::string& s);

struct SyntheticCategory {
  std::string name;
  CategoryKind kind = CategoryKind::kPolitical;
  std::size_t n_positive = 0;
  std::size_t n_control = 0;
  // One value for every layer, or one per layer.
  std::vector<double> routing_gain{1.0};
  Language language = Language::kEn;
  std::optional<int> intensity;
  // Norm of a random offset added to every row of the category.
  double offset = 0.0;

  double gain_at(int layer) const;
};

struct SyntheticSpec {
  std::size_t d = 256;
  int n_layers = 12;
  int emergence_layer = 3;
  double noise_sigma = 0.5;
  std::uint64_t seed = 0;
  Geometry geometry = Geometry::kModular;
  double rho = 0.0;  // cos(r, s) for coupled geometry
  double eta = 0.0;  // cos(r, k) for entangled geometry
  std::vector<double> coupling_schedule;  // optional per-layer rho

  double concept_strength = 4.0;
  double routing_strength = 8.0;
  double knowledge_strength = 6.0;
  double safety_strength = 8.0;
  double style_strength = 4.0;  // sentiment and formality categories

  // Optional per-layer overrides of the concept and routing coefficients.
  std::vector<double> concept_schedule;
  std::vector<double> routing_schedule;
  bool routed = true;

  std::string model_id = "synthetic";
  std::string id_prefix;
  std::vector<SyntheticCategory> categories;

  void validate() const;
  double concept_at(int layer) const;
  double routing_at(int layer) const;
  double rho_at(int layer) const;
  std::size_t rows() const;
};

SyntheticSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec read_spec(const std::filesystem::path& path);

// Concept planted, routing removed; the oracle keeps its thresholds.
SyntheticSpec yi_mode(SyntheticSpec spec);

struct PlantedLayer {
  Eigen::VectorXd concept_dir, routing, knowledge, safety, sentiment, formality;
  double concept_coef = 0.0;
  double routing_coef = 0.0;
  double routing_threshold = 0.0;
  double safety_threshold = 0.0;
  double knowledge_threshold = 0.0;
};

struct GroundTruth {
  SyntheticSpec spec;
  std::map<int, PlantedLayer> layers;

  LinearOracle oracle() const;
  const PlantedLayer& at(int layer) const;
  Direction planted(int layer, DirectionKind kind) const;
};

struct SyntheticData {
  ActivationSet set;
  GroundTruth truth;
};

SyntheticData generate(const SyntheticSpec& spec);

void write_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth read_truth(const std::filesystem::path& path);

}  // namespace routelab
