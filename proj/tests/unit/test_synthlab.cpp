#include <doctest.h>

#include <cmath>

#include "routelab/error.hpp"
#include "routelab/probelab.hpp"
#include "routelab/surgery.hpp"
#include "routelab/synthlab.hpp"
#include "support.hpp"

using namespace routelab;
using doctest::Approx;

namespace {

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.d = 24;
  spec.n_layers = 4;
  spec.emergence_layer = 1;
  spec.seed = seed;
  spec.categories.push_back(testsupport::category("a", CategoryKind::kPolitical, 10, 10));
  spec.categories.push_back(testsupport::category("b", CategoryKind::kPolitical, 10, 10));
  spec.categories.push_back(testsupport::category("harm", CategoryKind::kSafety, 6, 6));
  return spec;
}

std::size_t refusals(const SyntheticData& data, int layer) {
  const LinearOracle oracle = data.truth.oracle();
  std::size_t n = 0;
  const Matrix& m = data.set.layer(layer);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const std::span<const float> row(m.row(i).data(), static_cast<std::size_t>(m.cols()));
    n += oracle.label(layer, row) == Outcome::kRefuse ? 1 : 0;
  }
  return n;
}

}  // namespace

TEST_SUITE("synthetic generator") {
  TEST_CASE("same seed, same bits; different seed, different bits") {
    const SyntheticData a = generate(small_spec(1));
    const SyntheticData b = generate(small_spec(1));
    const SyntheticData c = generate(small_spec(2));
    CHECK(bit_equal(a.set, b.set));
    CHECK_FALSE(bit_equal(a.set, c.set));
    CHECK(a.set.rows() == small_spec(1).rows());
    CHECK(a.set.rows() == 52);
  }

  TEST_CASE("planted frame is orthonormal") {
    const SyntheticData data = generate(small_spec(3));
    const PlantedLayer& p = data.truth.at(2);
    const std::vector<const Eigen::VectorXd*> frame{&p.concept_dir, &p.routing,   &p.knowledge,
                                                    &p.safety,      &p.sentiment, &p.formality};
    for (std::size_t i = 0; i < frame.size(); ++i) {
      for (std::size_t j = 0; j < frame.size(); ++j) {
        // Stored at float precision.
        CHECK(std::abs(frame[i]->dot(*frame[j]) - (i == j ? 1.0 : 0.0)) < 1e-6);
      }
    }
  }

  TEST_CASE("coupled geometry sets cos(r, s) = rho") {
    SyntheticSpec spec = small_spec(4);
    spec.geometry = Geometry::kCoupled;
    spec.rho = 0.6;
    const SyntheticData data = generate(spec);
    const PlantedLayer& p = data.truth.at(3);
    CHECK(std::abs(p.routing.dot(p.safety) - 0.6) < 1e-6);
  }

  TEST_CASE("spec JSON round trip and unknown keys") {
    SyntheticSpec spec = small_spec(5);
    spec.coupling_schedule = {0.1, 0.2, 0.3, 0.4};
    const nlohmann::json j = to_json(spec);
    CHECK(to_json(spec_from_json(j)) == j);
    nlohmann::json bad = j;
    bad["colour"] = "blue";
    CHECK_THROWS_AS(spec_from_json(bad), Error);
    bad = j;
    bad["categories"][0]["wat"] = 1;
    CHECK_THROWS_AS(spec_from_json(bad), Error);
  }

  TEST_CASE("invalid specs") {
    SyntheticSpec spec = small_spec(1);
    spec.emergence_layer = 9;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = small_spec(1);
    spec.d = 4;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = small_spec(1);
    spec.categories.clear();
    CHECK_THROWS_AS(spec.validate(), Error);
  }

  TEST_CASE("routing refuses political positives and safety positives only") {
    const SyntheticData data = generate(small_spec(6));
    CHECK(refusals(data, 3) == 26);
    CHECK(refusals(data, 0) == 6);
  }

  TEST_CASE("yi mode: concept separable, no political refusal") {
    const SyntheticSpec spec = yi_mode(small_spec(7));
    const SyntheticData data = generate(spec);
    CHECK(refusals(data, 3) == 6);
    ProbeOptions o;
    o.n_permutations = 0;
    o.scheme = FoldScheme::kLeaveOneCategoryOut;
    o.positive = PromptFilter::of_group(Group::kPositive);
    o.positive.exclude_categories = std::vector<std::string>{"harm"};
    const ActivationSet political = select_subset(data.set, [](const PromptRecord& r) { return r.category != "harm"; });
    const std::vector<int> layers{3};
    CHECK(run_probe(political, layers, o).layers[0].train_accuracy == 1.0);
  }

  TEST_CASE("truth file round trip") {
    testsupport::TempDir tmp;
    const SyntheticData data = generate(small_spec(8));
    write_truth(data.truth, tmp / "truth.rtl");
    const GroundTruth back = read_truth(tmp / "truth.rtl");
    CHECK(to_json(back.spec) == to_json(data.truth.spec));
    for (const auto& [layer, p] : data.truth.layers) {
      CHECK((back.at(layer).routing - p.routing).norm() < 1e-6);
      CHECK(back.at(layer).routing_threshold == Approx(p.routing_threshold).epsilon(1e-6));
    }
  }

  TEST_CASE("recovered direction approaches the planted one as noise falls") {
    double previous = -1.0;
    for (double sigma : {2.0, 0.5, 0.05}) {
      SyntheticSpec spec = small_spec(9);
      spec.noise_sigma = sigma;
      const SyntheticData data = generate(spec);
      const Direction got = extract_direction(data.set, 3, testsupport::category_contrast("a"));
      const double c = cosine(got.vector, (spec.concept_at(3) * data.truth.at(3).concept_dir +
                                           spec.routing_at(3) * data.truth.at(3).routing)
                                              .normalized());
      CHECK(c > previous);
      previous = c;
    }
    CHECK(previous > 0.99);
  }
}
