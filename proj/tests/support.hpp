#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "routelab/behaviorstats.hpp"
#include "routelab/geometry.hpp"
#include "routelab/rng.hpp"
#include "routelab/synthlab.hpp"
#include "routelab/tensorstore.hpp"

namespace testsupport {

inline routelab::SyntheticCategory category(const std::string& name, routelab::CategoryKind kind, std::size_t n_pos,
                                            std::size_t n_ctl, double gain = 1.0, double offset = 0.0) {
  routelab::SyntheticCategory c;
  c.name = name;
  c.kind = kind;
  c.n_positive = n_pos;
  c.n_control = n_ctl;
  c.routing_gain = {gain};
  c.offset = offset;
  return c;
}

inline routelab::PromptPredicate in_category(const std::string& name, routelab::Group g) {
  return [name, g](const routelab::PromptRecord& r) { return r.category == name && r.group == g; };
}

inline routelab::PromptPredicate in_category(const std::string& name) {
  return [name](const routelab::PromptRecord& r) { return r.category == name; };
}

inline routelab::Contrast category_contrast(const std::string& name) {
  return {in_category(name, routelab::Group::kPositive), in_category(name, routelab::Group::kControl)};
}

inline Eigen::VectorXd random_unit(std::size_t d, std::uint64_t seed) {
  routelab::Rng rng(seed);
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v / v.norm();
}

inline Eigen::VectorXd random_normal(std::size_t d, routelab::Rng& rng) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v;
}

// Self-deleting scratch directory.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("routelab-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline routelab::BehaviorRecord record(const std::string& prompt_id, const std::string& model, bool refused,
                                       std::optional<int> steering = std::nullopt,
                                       routelab::Condition condition = routelab::Condition::kBaseline) {
  routelab::BehaviorRecord r;
  r.prompt_id = prompt_id;
  r.model_id = model;
  r.condition = condition;
  r.refused = refused;
  r.steering = steering;
  r.judge_id = "judge";
  return r;
}

// 96 items labelled by a human and a model judge: 14 shared evasion labels,
// 29 judge-only evasions (human: 15 partial_factual, 7 generic_filler,
// 6 accurate, 1 wrong_event), 1 human-only evasion (judge: partial_factual),
// and 52 others (38 agree, 10 differ inside a coarse bucket, 4 across).
inline std::vector<routelab::BehaviorRecord> judge_fixture() {
  using routelab::Taxonomy;
  std::vector<std::pair<Taxonomy, Taxonomy>> items;  // (human, judge)
  auto add = [&](int n, Taxonomy h, Taxonomy j) {
    for (int i = 0; i < n; ++i) items.emplace_back(h, j);
  };
  add(14, Taxonomy::kCcpEvasion, Taxonomy::kCcpEvasion);
  add(15, Taxonomy::kPartialFactual, Taxonomy::kCcpEvasion);
  add(7, Taxonomy::kGenericFiller, Taxonomy::kCcpEvasion);
  add(6, Taxonomy::kAccurate, Taxonomy::kCcpEvasion);
  add(1, Taxonomy::kWrongEvent, Taxonomy::kCcpEvasion);
  add(1, Taxonomy::kCcpEvasion, Taxonomy::kPartialFactual);
  add(20, Taxonomy::kAccurate, Taxonomy::kAccurate);
  add(10, Taxonomy::kWrongEvent, Taxonomy::kWrongEvent);
  add(8, Taxonomy::kTrueRefusal, Taxonomy::kTrueRefusal);
  add(6, Taxonomy::kWrongEvent, Taxonomy::kWrongDate);
  add(4, Taxonomy::kGenericFiller, Taxonomy::kGarbled);
  add(2, Taxonomy::kAccurate, Taxonomy::kWrongEvent);
  add(2, Taxonomy::kTrueRefusal, Taxonomy::kPartialFactual);
  std::vector<routelab::BehaviorRecord> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (int who = 0; who < 2; ++who) {
      routelab::BehaviorRecord r;
      r.prompt_id = "item-" + std::to_string(i);
      r.model_id = "m";
      r.condition = routelab::Condition::kPoliticalAblation;
      r.judge_id = who == 0 ? "human" : "judge";
      r.taxonomy = who == 0 ? items[i].first : items[i].second;
      r.refused = *r.taxonomy == Taxonomy::kTrueRefusal;
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace testsupport
