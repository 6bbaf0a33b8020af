#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace routelab {

enum class Group { kPositive, kControl };
enum class Language { kEn, kZh, kOther };

const char* to_string(Group g);
const char* to_string(Language l);
Group parse_group(const std::string& s);
Language parse_language(const std::string& s);

struct PromptRecord {
  std::string prompt_id;
  std::string topic;
  std::string category;
  Group group = Group::kControl;
  Language language = Language::kEn;
  std::optional<int> intensity;
  std::optional<std::string> pair_id;
  std::optional<std::string> text;

  bool operator==(const PromptRecord&) const = default;
};

nlohmann::json to_json(const PromptRecord& r);
PromptRecord prompt_from_json(const nlohmann::json& j);

using Manifest = std::vector<PromptRecord>;

// Unique prompt ids, pair ids used at most twice, intensity in 1..4.
void validate_manifest(const Manifest& manifest);

Manifest read_manifest_jsonl(const std::filesystem::path& path);
void write_manifest_jsonl(const Manifest& manifest, const std::filesystem::path& path);

// Conjunction of equality constraints over manifest fields. An empty filter
// matches everything.
struct PromptFilter {
  std::optional<Group> group;
  std::optional<std::string> category;
  std::optional<std::string> topic;
  std::optional<Language> language;
  std::optional<int> intensity;
  std::optional<std::vector<std::string>> prompt_ids;
  std::optional<std::vector<std::string>> exclude_categories;

  bool matches(const PromptRecord& r) const;

  static PromptFilter of_group(Group g) {
    PromptFilter f;
    f.group = g;
    return f;
  }
  static PromptFilter of_category(std::string c) {
    PromptFilter f;
    f.category = std::move(c);
    return f;
  }
};

PromptFilter filter_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PromptFilter& f);

}  // namespace routelab
