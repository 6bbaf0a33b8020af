#include <doctest.h>

#include <set>

#include <Eigen/Dense>

#include "routelab/error.hpp"
#include "routelab/probelab.hpp"
#include "routelab/synthlab.hpp"
#include "support.hpp"

using namespace routelab;
using doctest::Approx;

namespace {

ActivationSet planted_set(std::uint64_t seed, std::size_t categories = 4, std::size_t per_side = 10) {
  SyntheticSpec spec;
  spec.d = 32;
  spec.n_layers = 4;
  spec.emergence_layer = 2;
  spec.seed = seed;
  for (std::size_t c = 0; c < categories; ++c) {
    spec.categories.push_back(
        testsupport::category("cat" + std::to_string(c), CategoryKind::kPolitical, per_side, per_side));
  }
  return generate(spec).set;
}

}  // namespace

TEST_SUITE("ridge") {
  TEST_CASE("primal fit matches a hand-inverted 2x2 system") {
    // Five rows, two features; labels 1,0,1,0,1 map to +1,-1,+1,-1,+1.
    Eigen::MatrixXd x(5, 2);
    x << 1, 2, 2, 0, 3, 5, 4, 1, 0, 3;
    const std::vector<int> labels{1, 0, 1, 0, 1};
    const double lambda = 0.5;

    // Oracle: centre, form the 2x2 normal equations, invert by cofactors.
    double mx0 = 0, mx1 = 0, my = 0;
    for (int i = 0; i < 5; ++i) {
      mx0 += x(i, 0) / 5;
      mx1 += x(i, 1) / 5;
      my += (labels[static_cast<std::size_t>(i)] ? 1.0 : -1.0) / 5;
    }
    double a = lambda, b = 0, d = lambda, r0 = 0, r1 = 0;
    for (int i = 0; i < 5; ++i) {
      const double c0 = x(i, 0) - mx0, c1 = x(i, 1) - mx1;
      const double yc = (labels[static_cast<std::size_t>(i)] ? 1.0 : -1.0) - my;
      a += c0 * c0;
      b += c0 * c1;
      d += c1 * c1;
      r0 += c0 * yc;
      r1 += c1 * yc;
    }
    const double det = a * d - b * b;
    const double w0 = (d * r0 - b * r1) / det;
    const double w1 = (-b * r0 + a * r1) / det;
    const double bias = my - (mx0 * w0 + mx1 * w1);

    const ProbeModel m = fit_ridge(x, labels, lambda);
    CHECK(m.solver == "primal");
    CHECK(m.weights(0) == Approx(w0).epsilon(1e-12));
    CHECK(m.weights(1) == Approx(w1).epsilon(1e-12));
    CHECK(m.bias == Approx(bias).epsilon(1e-12));
    CHECK(m.relative_residual < 1e-12);
  }

  TEST_CASE("dual solver agrees with the primal normal equations when d > n") {
    Rng rng(4);
    Eigen::MatrixXd x(10, 60);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const std::vector<int> labels{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    const double lambda = 2.0;
    const ProbeModel m = fit_ridge(x, labels, lambda);
    CHECK(m.solver == "dual");

    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd xc = x.rowwise() - mu;
    Eigen::VectorXd y(10);
    for (int i = 0; i < 10; ++i) y(i) = labels[static_cast<std::size_t>(i)] ? 1.0 : -1.0;
    const double ybar = y.mean();
    const Eigen::VectorXd yc = y.array() - ybar;
    const Eigen::MatrixXd a = xc.transpose() * xc + lambda * Eigen::MatrixXd::Identity(60, 60);
    const Eigen::VectorXd w = a.llt().solve(xc.transpose() * yc);
    CHECK((m.weights - w).norm() / w.norm() < 1e-10);
    CHECK(m.bias == Approx(ybar - mu.dot(w)).epsilon(1e-10));
    CHECK(normal_equation_residual(m, x, labels) < 1e-10);
  }

  TEST_CASE("free separability when d >> n") {
    Rng rng(8);
    Eigen::MatrixXd x(20, 500);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    std::vector<int> labels(20);
    for (auto& l : labels) l = rng.uniform01() < 0.5 ? 1 : 0;
    labels[0] = 1;
    labels[1] = 0;
    CHECK(train_accuracy(fit_ridge(x, labels, 1.0), x, labels) == 1.0);
  }

  TEST_CASE("errors") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 2);
    const std::vector<int> one_class{1, 1, 1, 1};
    CHECK_THROWS_AS(fit_ridge(x, one_class, 1.0), Error);
    try {
      fit_ridge(x, one_class, 1.0);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kSingleClass);
    }
    const std::vector<int> labels{1, 0, 1, 0};
    CHECK_THROWS_AS(fit_ridge(x, labels, 0.0), Error);
    const ProbeModel m = fit_ridge(x, labels, 1.0);
    CHECK_THROWS_AS(predict(m, Eigen::MatrixXd::Ones(2, 3)), Error);
  }
}

TEST_SUITE("folds") {
  TEST_CASE("stratified folds are disjoint, exhaustive and balanced") {
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i < 12 ? 1 : 0;
    const FoldPlan plan = build_stratified_folds(labels, 6, 3);
    CHECK_NOTHROW(validate_plan(plan, labels.size()));
    REQUIRE(plan.folds.size() == 6);
    std::multiset<std::size_t> all;
    for (const auto& f : plan.folds) {
      std::size_t pos = 0;
      for (auto i : f.test) {
        all.insert(i);
        pos += static_cast<std::size_t>(labels[i]);
      }
      CHECK(pos == 2);
      CHECK(f.test.size() == 5);
      CHECK(f.train.size() == 25);
    }
    CHECK(all.size() == 30);
    CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 30);
    CHECK(build_stratified_folds(labels, 6, 3).folds[0].test == plan.folds[0].test);
    CHECK(build_stratified_folds(labels, 6, 4).folds[0].test != plan.folds[0].test);
  }

  TEST_CASE("LOCO holds out each category once, in name order") {
    const ActivationSet set = planted_set(1, 3, 4);
    const FoldPlan plan = build_loco_folds(set.manifest());
    REQUIRE(plan.folds.size() == 3);
    CHECK(plan.folds[0].category == "cat0");
    CHECK(plan.folds[2].category == "cat2");
    for (const auto& f : plan.folds) {
      for (auto i : f.test) CHECK(set.manifest()[i].category == f.category);
      for (auto i : f.train) CHECK(set.manifest()[i].category != f.category);
    }
    CHECK_NOTHROW(validate_plan(plan, set.rows()));
  }

  TEST_CASE("LOCO needs two categories and both classes per category") {
    const ActivationSet one = planted_set(1, 1, 4);
    CHECK_THROWS_AS(build_loco_folds(one.manifest()), Error);
    const ActivationSet set = planted_set(1, 2, 4);
    std::vector<int> labels(set.rows(), 0);
    for (std::size_t i = 0; i < set.rows(); ++i) labels[i] = set.manifest()[i].category == "cat0" ? 1 : 0;
    CHECK_THROWS_AS(build_loco_folds(set.manifest(), labels), Error);
  }

  TEST_CASE("validate_plan rejects overlap") {
    FoldPlan bad;
    bad.folds.push_back({{0, 1}, {1, 2}, ""});
    bad.folds.push_back({{1, 2}, {0}, ""});
    CHECK_THROWS_AS(validate_plan(bad, 3), Error);
  }
}

TEST_SUITE("probe") {
  TEST_CASE("planted concept: CV high after emergence, chance before") {
    const ActivationSet set = planted_set(12, 4, 12);
    ProbeOptions o;
    o.scheme = FoldScheme::kLeaveOneCategoryOut;
    o.n_permutations = 10;
    o.seed = 3;
    const auto layers = set.layers();
    const ProbeReport r = run_probe(set, layers, o);
    REQUIRE(r.layers.size() == 4);
    CHECK(r.layers[0].cv_mean < 0.75);
    CHECK(r.layers[3].cv_mean > 0.95);
    CHECK(r.layers[3].permutation_cv_means.size() == 10);
    CHECK(r.layers[3].fold_categories == std::vector<std::string>{"cat0", "cat1", "cat2", "cat3"});
  }

  TEST_CASE("permutations do not depend on the number of jobs") {
    const ActivationSet set = planted_set(5, 3, 8);
    ProbeOptions o;
    o.n_permutations = 12;
    o.seed = 99;
    const std::vector<int> layers{1, 3};
    o.jobs = 1;
    const ProbeReport a = run_probe(set, layers, o);
    o.jobs = 4;
    const ProbeReport b = run_probe(set, layers, o);
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      CHECK(a.layers[i].permutation_cv_means == b.layers[i].permutation_cv_means);
      CHECK(a.layers[i].permutation_train_accuracies == b.layers[i].permutation_train_accuracies);
    }
    o.seed = 100;
    CHECK(run_probe(set, layers, o).layers[0].permutation_cv_means != a.layers[0].permutation_cv_means);
  }

  TEST_CASE("report JSON round trip") {
    const ActivationSet set = planted_set(6, 2, 6);
    ProbeOptions o;
    o.n_permutations = 3;
    o.k = 3;
    o.seed = 1;
    const auto layers = set.layers();
    const ProbeReport r = run_probe(set, layers, o);
    const ProbeReport back = probe_report_from_json(to_json(r));
    CHECK(to_json(back) == to_json(r));
  }
}

TEST_SUITE("band") {
  ProbeReport synthetic_report() {
    ProbeReport r;
    const double cv[] = {0.5, 0.55, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.7, 0.6};
    for (int l = 0; l < 10; ++l) {
      LayerProbe lp;
      lp.layer = l;
      lp.cv_mean = cv[l];
      r.layers.push_back(lp);
    }
    return r;
  }

  TEST_CASE("band membership uses layer / (depth - 1)") {
    const BandSummary s = layer_band_summary(synthetic_report(), 0.40, 0.75);
    CHECK(s.model_depth == 10);
    CHECK(s.band_layers == std::vector<int>{4, 5, 6});
    CHECK(s.band_mean == Approx((0.8 + 0.85 + 0.9) / 3));
    CHECK(s.best_layer == 7);
    CHECK(s.gap_pp == Approx((0.95 - 0.85) * 100));
  }

  TEST_CASE("explicit model depth and empty bands") {
    const BandSummary s = layer_band_summary(synthetic_report(), 0.40, 0.75, 20);
    CHECK(s.band_layers == std::vector<int>{8, 9});
    try {
      layer_band_summary(synthetic_report(), 0.95, 0.96);
      FAIL("expected an empty band");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kEmptyBand);
    }
  }
}
