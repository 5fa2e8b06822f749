#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "difd/corpus/bio.hpp"
#include "difd/corpus/instance.hpp"
#include "difd/corpus/tokenizer.hpp"
#include "difd/error.hpp"

namespace difd::corpus {

// Canonical interchange format, one object per line:
//   {"id", "sentence_id", "tokens": [..], "aspect_span": [start, end],
//    "bio_tags": ["O","B",..], "polarity": "positive", "domain": "source"}
// bio_tags may be replaced by "aspects": [[s,e],..]; polarity may be absent;
// id and sentence_id are optional.

inline nlohmann::ordered_json to_json(const Instance& inst) {
  nlohmann::ordered_json j;
  j["id"] = inst.id;
  j["sentence_id"] = inst.sentence_id;
  j["tokens"] = inst.tokens;
  j["aspect_span"] = {inst.aspect.start, inst.aspect.end};
  auto tags = nlohmann::ordered_json::array();
  for (auto t : inst.tags) tags.push_back(std::string(1, to_char(t)));
  j["bio_tags"] = std::move(tags);
  if (inst.polarity) j["polarity"] = std::string(to_string(*inst.polarity));
  j["domain"] = std::string(to_string(inst.domain));
  return j;
}

inline std::string to_jsonl(const std::vector<Instance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += to_json(inst).dump();
    out += '\n';
  }
  return out;
}

inline Instance instance_from_json(const nlohmann::json& j, const std::string& where) {
  auto bad = [&](const std::string& field, const std::string& why) {
    fail(ErrorKind::data, where + ": field '" + field + "': " + why);
  };
  auto span_from = [&](const nlohmann::json& v, const std::string& field) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned()) {
      bad(field, "expected [start, end] with non-negative integers");
    }
    return Span{v[0].get<std::size_t>(), v[1].get<std::size_t>()};
  };

  if (!j.is_object()) fail(ErrorKind::data, where + ": expected a JSON object");
  Instance inst;
  if (!j.contains("tokens") || !j["tokens"].is_array()) bad("tokens", "missing or not an array");
  for (const auto& t : j["tokens"]) {
    if (!t.is_string()) bad("tokens", "non-string token");
    inst.tokens.push_back(t.get<std::string>());
  }
  if (!j.contains("aspect_span")) bad("aspect_span", "missing");
  inst.aspect = span_from(j["aspect_span"], "aspect_span");

  if (!j.contains("domain") || !j["domain"].is_string()) bad("domain", "missing");
  const auto dom = domain_from_string(j["domain"].get<std::string>());
  if (!dom) bad("domain", "expected \"source\" or \"target\"");
  inst.domain = *dom;

  if (j.contains("polarity") && !j["polarity"].is_null()) {
    if (!j["polarity"].is_string()) bad("polarity", "expected a string");
    const auto pol = polarity_from_string(j["polarity"].get<std::string>());
    if (!pol) bad("polarity", "unknown polarity '" + j["polarity"].get<std::string>() + "'");
    inst.polarity = pol;
  }

  if (j.contains("bio_tags")) {
    if (!j["bio_tags"].is_array()) bad("bio_tags", "not an array");
    for (const auto& t : j["bio_tags"]) {
      const auto tag = t.is_string() ? tag_from_string(t.get<std::string>()) : std::nullopt;
      if (!tag) bad("bio_tags", "tags must be \"B\", \"I\" or \"O\"");
      inst.tags.push_back(*tag);
    }
  } else {
    std::vector<Span> spans;
    if (j.contains("aspects")) {
      if (!j["aspects"].is_array()) bad("aspects", "not an array");
      for (const auto& s : j["aspects"]) spans.push_back(span_from(s, "aspects"));
    } else {
      spans.push_back(inst.aspect);
    }
    std::sort(spans.begin(), spans.end());
    spans.erase(std::unique(spans.begin(), spans.end()), spans.end());
    try {
      inst.tags = encode_bio(spans, inst.tokens.size());
    } catch (const Error& e) {
      bad("aspects", e.what());
    }
  }

  inst.id = j.value("id", std::string());
  inst.sentence_id = j.value("sentence_id", std::string());
  if (inst.sentence_id.empty()) {
    // Sentence identity falls back to the token sequence itself.
    for (const auto& t : inst.tokens) inst.sentence_id += t + "\x1f";
  }
  validate(inst, where);
  return inst;
}

inline std::vector<Instance> parse_jsonl(std::istream& in, const std::string& name) {
  std::vector<Instance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data, where + ": " + e.what());
    }
    Instance inst = instance_from_json(j, where);
    if (inst.id.empty()) inst.id = name + ":" + std::to_string(lineno);
    out.push_back(std::move(inst));
  }
  return out;
}

inline std::vector<Instance> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open " + path.string());
  return parse_jsonl(in, path.filename().string());
}

/// Twitter triples: a sentence containing the placeholder "$T$", the aspect
/// text, and a polarity in {-1, 0, 1}. The placeholder is replaced by the
/// aspect tokens.
inline std::vector<Instance> convert_twitter(std::istream& in, Domain domain, const std::string& name = "twitter") {
  std::vector<Instance> out;
  std::string sentence, aspect, label;
  std::size_t lineno = 0;
  while (std::getline(in, sentence)) {
    ++lineno;
    if (sentence.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::size_t first_line = lineno;
    if (!std::getline(in, aspect) || !std::getline(in, label)) {
      fail(ErrorKind::data, name + ":" + std::to_string(first_line) + ": truncated record");
    }
    lineno += 2;
    const auto where = name + ":" + std::to_string(first_line);
    const auto pos = sentence.find("$T$");
    if (pos == std::string::npos) fail(ErrorKind::data, where + ": missing $T$ placeholder");
    const auto left = tokenize_words(sentence.substr(0, pos));
    const auto mid = tokenize_words(aspect);
    const auto right = tokenize_words(sentence.substr(pos + 3));
    if (mid.empty()) fail(ErrorKind::data, where + ": empty aspect");

    Instance inst;
    inst.tokens = left;
    inst.tokens.insert(inst.tokens.end(), mid.begin(), mid.end());
    inst.tokens.insert(inst.tokens.end(), right.begin(), right.end());
    inst.aspect = {left.size(), left.size() + mid.size()};
    inst.tags = encode_bio({inst.aspect}, inst.tokens.size());
    const auto l = label.substr(0, label.find_last_not_of(" \t\r") + 1);
    if (l == "1") inst.polarity = Polarity::positive;
    else if (l == "-1") inst.polarity = Polarity::negative;
    else if (l == "0") inst.polarity = Polarity::neutral;
    else fail(ErrorKind::data, where + ": polarity must be -1, 0 or 1");
    inst.domain = domain;
    inst.id = name + ":" + std::to_string(first_line);
    inst.sentence_id = inst.id;
    validate(inst, where);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace difd::corpus
