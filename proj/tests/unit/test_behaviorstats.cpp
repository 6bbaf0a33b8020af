#include <doctest.h>

#include <fstream>

#include "routelab/behaviorstats.hpp"
#include "routelab/error.hpp"
#include "support.hpp"

using namespace routelab;
using doctest::Approx;

TEST_SUITE("records") {
  TEST_CASE("validation") {
    BehaviorRecord r = testsupport::record("p", "m", false, 3);
    CHECK_NOTHROW(validate_record(r));
    r.steering = 0;
    CHECK_THROWS_AS(validate_record(r), Error);  // 0 means refused
    r.refused = true;
    CHECK_NOTHROW(validate_record(r));
    r.steering = 6;
    CHECK_THROWS_AS(validate_record(r), Error);
    r.steering.reset();
    r.prompt_id.clear();
    CHECK_THROWS_AS(validate_record(r), Error);
  }

  TEST_CASE("JSON round trip and unknown keys") {
    BehaviorRecord r = testsupport::record("p", "m", false, 4, Condition::kSafetyAblation);
    r.taxonomy = Taxonomy::kPartialFactual;
    r.prompt_set = "ccp";
    r.flags["hedged"] = true;
    const BehaviorRecord back = behavior_from_json(to_json(r));
    CHECK(to_json(back) == to_json(r));
    nlohmann::json j = to_json(r);
    j["surprise"] = 1;
    CHECK_THROWS_AS(behavior_from_json(j), Error);
  }

  TEST_CASE("jsonl errors name the line") {
    testsupport::TempDir tmp;
    {
      std::ofstream f(tmp / "r.jsonl");
      f << to_json(testsupport::record("a", "m", true)).dump() << "\n\n";
      f << R"({"prompt_id":"b","model_id":"m","condition":"baseline","refused":"yes","judge_id":"j"})" << '\n';
    }
    try {
      read_behavior_jsonl(tmp / "r.jsonl");
      FAIL("expected a parse failure");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
  }
}

TEST_SUITE("rates") {
  TEST_CASE("refusal, deltas and steering") {
    std::vector<BehaviorRecord> recs{testsupport::record("a", "m", true, 0), testsupport::record("b", "m", false, 2),
                                     testsupport::record("c", "m", false, 5), testsupport::record("d", "m", false)};
    const Rate r = refusal_rate(recs);
    CHECK(r.count == 1);
    CHECK(r.total == 4);
    CHECK(delta_pp(Rate{3, 4}, r) == Approx(50.0));
    const SteeringSummary s = steering_mean(recs);
    REQUIRE(s.mean.has_value());
    CHECK(*s.mean == Approx(3.5));
    CHECK(s.scored == 2);
    CHECK(s.refusals == 1);
    CHECK_THROWS_AS(refusal_rate(std::span<const BehaviorRecord>{}), Error);

    const std::vector<BehaviorRecord> all_refused{testsupport::record("a", "m", true, 0)};
    const SteeringSummary none = steering_mean(all_refused);
    CHECK_FALSE(none.mean.has_value());
    CHECK_FALSE(none.reason.empty());
  }

  TEST_CASE("discrimination classes and boundaries") {
    CHECK(classify_discrimination(25).cls == DiscriminationClass::kStrong);
    CHECK(classify_discrimination(20).cls == DiscriminationClass::kModerate);
    CHECK(classify_discrimination(20).on_boundary);
    CHECK(classify_discrimination(10.5).cls == DiscriminationClass::kModerate);
    CHECK(classify_discrimination(10).cls == DiscriminationClass::kNeutral);
    CHECK(classify_discrimination(-10).cls == DiscriminationClass::kNeutral);
    CHECK(classify_discrimination(-10).on_boundary);
    CHECK(classify_discrimination(-10.5).cls == DiscriminationClass::kInverted);
    CHECK_FALSE(classify_discrimination(3).on_boundary);
    const DiscriminationResult d = discrimination("m", Rate{9, 10}, Rate{2, 10});
    CHECK(d.delta_pp == Approx(70.0));
    CHECK(d.classification.cls == DiscriminationClass::kStrong);
  }
}

TEST_SUITE("kappa") {
  TEST_CASE("two-class hand computation") {
    // p_o = 3/4, p_e = 0.5*0.25 + 0.5*0.75 = 1/2, kappa = 1/2.
    const std::vector<std::string> a{"x", "x", "y", "y"}, b{"x", "y", "y", "y"};
    CHECK(cohen_kappa(a, b) == Approx(0.5));
    CHECK(cohen_kappa(a, b, "x") == Approx(0.5));
  }

  TEST_CASE("three-class hand computation") {
    // p_o = 1/2, p_e = 0.25 + 0.0625 + 0.0625 = 0.375, kappa = 0.125 / 0.625.
    const std::vector<std::string> a{"x", "y", "z", "x"}, b{"x", "y", "x", "z"};
    CHECK(cohen_kappa(a, b) == Approx(0.2));
    // One-vs-rest for z: a = 0,0,1,0; b = 0,0,0,1. p_o = 1/2, p_e = 0.625.
    CHECK(cohen_kappa(a, b, "z") == Approx((0.5 - 0.625) / 0.375));
  }

  TEST_CASE("degenerate and invalid inputs") {
    const std::vector<std::string> same{"x", "x"};
    CHECK(cohen_kappa(same, same) == 1.0);
    const std::vector<std::string> shorter{"x"};
    CHECK_THROWS_AS(cohen_kappa(same, shorter), Error);
  }
}

TEST_SUITE("agreement") {
  TEST_CASE("judge fixture agreement and evasion rates") {
    const auto recs = testsupport::judge_fixture();
    const AgreementReport r = agreement_report(recs, default_coarse_map(), std::string("human"));
    REQUIRE(r.comparisons.size() == 1);
    const JudgeComparison& c = r.comparisons.front();
    CHECK(c.judge == "judge");
    CHECK(c.shared == 96);
    CHECK(c.fine.count == 52);
    CHECK(c.coarse.count == 84);
    CHECK(r.judge_rates.at("judge").at("ccp_evasion").count == 43);
    CHECK(r.judge_rates.at("human").at("ccp_evasion").count == 15);
    CHECK(r.fine_agreement() == Approx(52.0 / 96.0));
  }

  TEST_CASE("coarse map must cover every label") {
    CHECK(default_coarse_map().size() == kTaxonomySize);
    const nlohmann::json partial = {{"bad", {"wrong_event"}}};
    CHECK_THROWS_AS(coarse_map_from_json(partial), Error);
  }
}

TEST_SUITE("evidence") {
  TEST_CASE("levels are contiguous from the first") {
    CHECK(evidence_level({}).level == 0);
    CHECK(evidence_level({true, false, false, false}).level == 1);
    CHECK(evidence_level({true, true, true, true}).level == 4);
    const EvidenceGrade g = evidence_level({true, true, false, true});
    CHECK(g.level == 2);
    CHECK(g.gaps.size() == 1);
    CHECK(g.level_name() == "ii");
    const EvidenceGrade skipped = evidence_level({false, true, true, false});
    CHECK(skipped.level == 0);
    CHECK(skipped.gaps.size() == 2);
  }
}
