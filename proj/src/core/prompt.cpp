#include "routelab/prompt.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "routelab/error.hpp"

namespace routelab {

const char* to_string(Group g) { return g == Group::kPositive ? "positive" : "control"; }

const char* to_string(Language l) {
  switch (l) {
    case Language::kEn: return "en";
    case Language::kZh: return "zh";
    case Language::kOther: return "other";
  }
  return "other";
}

Group parse_group(const std::string& s) {
  if (s == "positive") return Group::kPositive;
  if (s == "control") return Group::kControl;
  fail(ErrorCode::kFormat, "unknown group '" + s + "'");
}

Language parse_language(const std::string& s) {
  if (s == "en") return Language::kEn;
  if (s == "zh") return Language::kZh;
  if (s == "other") return Language::kOther;
  fail(ErrorCode::kFormat, "unknown language '" + s + "'");
}

nlohmann::json to_json(const PromptRecord& r) {
  nlohmann::json j;
  j["prompt_id"] = r.prompt_id;
  j["topic"] = r.topic;
  j["category"] = r.category;
  j["group"] = to_string(r.group);
  j["language"] = to_string(r.language);
  if (r.intensity) j["intensity"] = *r.intensity;
  if (r.pair_id) j["pair_id"] = *r.pair_id;
  if (r.text) j["text"] = *r.text;
  return j;
}

PromptRecord prompt_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::kFormat, "prompt record must be a JSON object");
  PromptRecord r;
  try {
    r.prompt_id = j.at("prompt_id").get<std::string>();
    r.topic = j.value("topic", std::string{});
    r.category = j.value("category", std::string{});
    r.group = parse_group(j.at("group").get<std::string>());
    r.language = parse_language(j.value("language", std::string{"en"}));
    if (j.contains("intensity") && !j["intensity"].is_null()) r.intensity = j["intensity"].get<int>();
    if (j.contains("pair_id") && !j["pair_id"].is_null()) r.pair_id = j["pair_id"].get<std::string>();
    if (j.contains("text") && !j["text"].is_null()) r.text = j["text"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed prompt record: ") + e.what());
  }
  return r;
}

void validate_manifest(const Manifest& manifest) {
  std::set<std::string> ids;
  std::map<std::string, int> pairs;
  for (const auto& r : manifest) {
    if (r.prompt_id.empty()) fail(ErrorCode::kFormat, "empty prompt_id");
    if (!ids.insert(r.prompt_id).second) {
      fail(ErrorCode::kFormat, "duplicate prompt_id '" + r.prompt_id + "'");
    }
    if (r.pair_id && ++pairs[*r.pair_id] > 2) {
      fail(ErrorCode::kFormat, "pair_id '" + *r.pair_id + "' used more than twice");
    }
    if (r.intensity && (*r.intensity < 1 || *r.intensity > 4)) {
      fail(ErrorCode::kFormat, "intensity out of range 1-4 for '" + r.prompt_id + "'");
    }
  }
}

Manifest read_manifest_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest " + path.string());
  Manifest out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::kFormat, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(prompt_from_json(j));
  }
  validate_manifest(out);
  return out;
}

void write_manifest_jsonl(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write manifest " + path.string());
  for (const auto& r : manifest) out << to_json(r).dump() << '\n';
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

bool PromptFilter::matches(const PromptRecord& r) const {
  if (group && r.group != *group) return false;
  if (category && r.category != *category) return false;
  if (topic && r.topic != *topic) return false;
  if (language && r.language != *language) return false;
  if (intensity && r.intensity != intensity) return false;
  if (prompt_ids &&
      std::find(prompt_ids->begin(), prompt_ids->end(), r.prompt_id) == prompt_ids->end()) {
    return false;
  }
  if (exclude_categories && std::find(exclude_categories->begin(), exclude_categories->end(),
                                      r.category) != exclude_categories->end()) {
    return false;
  }
  return true;
}

PromptFilter filter_from_json(const nlohmann::json& j) {
  PromptFilter f;
  if (j.is_null()) return f;
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "filter must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "group") f.group = parse_group(value.get<std::string>());
    else if (key == "category") f.category = value.get<std::string>();
    else if (key == "topic") f.topic = value.get<std::string>();
    else if (key == "language") f.language = parse_language(value.get<std::string>());
    else if (key == "intensity") f.intensity = value.get<int>();
    else if (key == "prompt_ids") f.prompt_ids = value.get<std::vector<std::string>>();
    else if (key == "exclude_categories") f.exclude_categories = value.get<std::vector<std::string>>();
    else fail(ErrorCode::kInvalidArgument, "unknown filter key '" + key + "'");
  }
  return f;
}

nlohmann::json to_json(const PromptFilter& f) {
  nlohmann::json j = nlohmann::json::object();
  if (f.group) j["group"] = to_string(*f.group);
  if (f.category) j["category"] = *f.category;
  if (f.topic) j["topic"] = *f.topic;
  if (f.language) j["language"] = to_string(*f.language);
  if (f.intensity) j["intensity"] = *f.intensity;
  if (f.prompt_ids) j["prompt_ids"] = *f.prompt_ids;
  if (f.exclude_categories) j["exclude_categories"] = *f.exclude_categories;
  return j;
}

}  // namespace routelab
