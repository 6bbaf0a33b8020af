#include <doctest.h>

#include <sstream>

#include "routelab/behaviorstats.hpp"
#include "routelab/error.hpp"
#include "routelab/probelab.hpp"
#include "routelab/report.hpp"
#include "routelab/surgery.hpp"
#include "routelab/synthlab.hpp"
#include "support.hpp"

using namespace routelab;

namespace {

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

bool contains(const std::string& text, const std::string& needle) { return text.find(needle) != std::string::npos; }

SyntheticData data() {
  SyntheticSpec spec;
  spec.d = 24;
  spec.n_layers = 5;
  spec.emergence_layer = 1;
  spec.seed = 3;
  spec.categories.push_back(testsupport::category("a", CategoryKind::kPolitical, 8, 8));
  spec.categories.push_back(testsupport::category("b", CategoryKind::kPolitical, 8, 8));
  spec.categories.push_back(testsupport::category("harm", CategoryKind::kSafety, 8, 8));
  spec.categories.push_back(testsupport::category("mood", CategoryKind::kSentiment, 8, 8));
  return generate(spec);
}

}  // namespace

TEST_SUITE("tables") {
  TEST_CASE("alignment") {
    const std::string t = format_table({"Name", "Value"}, {{"a", "1"}, {"longer", "12345"}}, "Title");
    const auto l = lines_of(t);
    REQUIRE(l.size() == 5);
    CHECK(l[0] == "Title");
    CHECK(l[1] == "Name    Value");
    CHECK(l[2] == "-------------");
    CHECK(l[3] == "a           1");
    CHECK(l[4] == "longer  12345");
    CHECK_THROWS_AS(format_table({"a", "b"}, {{"x"}}), Error);
    CHECK(format_percent(0.1234) == "12.3%");
    CHECK(format_fixed(2.0, 1) == "2.0");
  }

  TEST_CASE("probe and band tables read real reports") {
    const SyntheticData d = data();
    ProbeOptions o;
    o.n_permutations = 2;
    o.k = 4;
    const auto layers = d.set.layers();
    const ProbeReport r = run_probe(d.set, layers, o);
    const std::string t = probe_table(to_json(r));
    CHECK(lines_of(t).size() == 2 + 1 + layers.size());
    CHECK(contains(t, "stratified"));
    o.n_permutations = 0;
    CHECK(contains(probe_table(to_json(run_probe(d.set, layers, o))), "---"));
    const std::string b = band_table(to_json(layer_band_summary(r, 0.4, 0.75)));
    CHECK(contains(b, "40%-75%"));
    CHECK(contains(b, "2,3"));
  }

  TEST_CASE("depth table reads cosine series") {
    const SyntheticData d = data();
    BootstrapOptions o;
    o.n_iter = 20;
    const auto layers = d.set.layers();
    const auto s = bootstrap_cosine_series(d.set, layers, testsupport::category_contrast("a"),
                                           testsupport::category_contrast("harm"), o);
    const nlohmann::json in = {{"m1", to_json(s)}, {"m2", to_json(s)}};
    const std::string t = depth_cosine_table(in);
    INFO(t);
    CHECK(contains(t, "m1"));
    CHECK(contains(t, "0-20% (L0-0)"));
    CHECK(lines_of(t).size() == 2 + 1 + 5);
    CHECK_THROWS_AS(depth_cosine_table(nlohmann::json::object()), Error);
  }

  TEST_CASE("sweep, alpha selection and control tables read real grids") {
    const SyntheticData d = data();
    const LinearOracle oracle = d.truth.oracle();
    const DirectionBank bank(d.truth.planted(4, DirectionKind::kPolitical));
    const std::vector<int> layers{3, 4};
    const std::vector<double> alphas{0.5, 1.0};
    const PromptPredicate eval = testsupport::in_category("a", Group::kPositive);
    const SweepGrid g = alpha_sweep(d.set, bank, layers, alphas, oracle, eval);
    const std::string t = sweep_table(to_json(g));
    CHECK(contains(t, "a=0.5"));
    CHECK(contains(t, "political"));
    CHECK(lines_of(t).size() == 2 + 1 + 2);

    const ActivationSet sel = select_subset(d.set, testsupport::in_category("a"));
    const ActivationSet ev = select_subset(d.set, testsupport::in_category("b"));
    const ActivationSet adv = select_subset(d.set, testsupport::in_category("harm"));
    const auto report = select_alpha_clean(sel, ev, adv, bank, layers, alphas, oracle);
    const std::string a = alpha_select_table(to_json(report));
    CHECK(lines_of(a).size() == 2 + 1 + 2);

    const DirectionBank mood(random_direction(24, 5));
    const auto battery = negative_control_battery(d.set, bank, {mood}, layers, alphas, oracle, eval);
    nlohmann::json row = to_json(battery);
    row["model_id"] = "synthetic";
    row["n"] = 8;
    row["baseline_refusal_rate"] = 1.0;
    row["max_control_delta_pp"] = battery.max_control_delta_pp();
    CHECK(contains(control_delta_table(nlohmann::json::array({row})), "100.0%"));
  }

  TEST_CASE("behavior tables read real summaries") {
    std::vector<BehaviorRecord> recs{testsupport::record("a", "m", true, 0), testsupport::record("b", "m", false, 3)};
    const nlohmann::json row = {{"model_id", "m"},
                                {"refusal", to_json(refusal_rate(recs))},
                                {"steering", to_json(steering_mean(recs))}};
    const std::string rs = refusal_steering_table(nlohmann::json::array({row}));
    CHECK(contains(rs, "50.0%"));
    CHECK(contains(rs, "3.00"));
    CHECK(contains(steering_table(nlohmann::json::array({row})), "1/2"));

    const auto fixture = testsupport::judge_fixture();
    const std::string t = agreement_table(to_json(agreement_report(fixture, default_coarse_map(), "human")));
    CHECK(contains(t, "54.2%"));
    CHECK(contains(t, "87.5%"));
    CHECK(contains(t, "ccp_evasion rate"));
    CHECK(contains(t, "44.8%"));
  }
}
