#pragma once

// Protected-concept policy: concepts with synonyms and generic descriptors,
// the global similarity threshold tau and the free-text policy handed to
// the judge. Immutable once loaded.
//
// File schema (UTF-8 JSON, unknown keys rejected):
//   {
//     "tau": number in (0, 1),                  optional, default 0.75
//     "policy_text": string,
//     "max_rewrite_iterations": integer >= 1,   optional, default 5
//     "concepts": [
//       {"id": string, "canonical_name": string,
//        "synonyms": [string, ...], "generic_descriptor": string}, ...
//     ]
//   }

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gog/embed.hpp"
#include "gog/errors.hpp"
#include "gog/windows.hpp"

namespace gog {

struct ProtectedConcept {
  std::string id;
  std::string canonical_name;
  std::vector<std::string> synonyms;
  std::string generic_descriptor;
  // canonical name first, then synonyms in file order
  std::vector<Embedding> embeddings;

  std::vector<std::string> names() const {
    std::vector<std::string> out{canonical_name};
    out.insert(out.end(), synonyms.begin(), synonyms.end());
    return out;
  }

  friend bool operator==(const ProtectedConcept&, const ProtectedConcept&) = default;
};

struct Policy {
  std::vector<ProtectedConcept> concepts;
  double tau = 0.75;
  std::string policy_text;
  int max_rewrite_iterations = 5;
  EncoderConfig encoder;

  const ProtectedConcept* find(std::string_view id) const {
    for (const auto& c : concepts) {
      if (c.id == id) return &c;
    }
    return nullptr;
  }

  friend bool operator==(const Policy&, const Policy&) = default;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                                const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(where + ": unknown key \"" + key + "\"", key);
    }
  }
}

inline std::string require_string(const nlohmann::json& obj, const char* key, const std::string& where,
                                  const std::string& subject) {
  if (!obj.contains(key) || !obj[key].is_string()) {
    throw ConfigError(where + ": \"" + key + "\" must be a string", subject);
  }
  return obj[key].get<std::string>();
}

}  // namespace detail

inline Policy parse_policy(std::string_view json_text, const EncoderConfig& cfg) {
  cfg.validate();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("policy: parse error: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("policy: top level must be an object");
  detail::reject_unknown_keys(doc, {"tau", "policy_text", "max_rewrite_iterations", "concepts"}, "policy");

  Policy policy;
  policy.encoder = cfg;
  if (doc.contains("tau")) {
    if (!doc["tau"].is_number()) throw ConfigError("policy: \"tau\" must be a number", "tau");
    policy.tau = doc["tau"].get<double>();
  }
  if (!(policy.tau > 0.0 && policy.tau < 1.0)) {
    throw ConfigError("policy: \"tau\" must lie in (0, 1), got " + std::to_string(policy.tau), "tau");
  }
  policy.policy_text = detail::require_string(doc, "policy_text", "policy", "policy_text");
  if (doc.contains("max_rewrite_iterations")) {
    const auto& v = doc["max_rewrite_iterations"];
    if (!v.is_number_integer() || v.get<long long>() < 1) {
      throw ConfigError("policy: \"max_rewrite_iterations\" must be a positive integer",
                        "max_rewrite_iterations");
    }
    policy.max_rewrite_iterations = v.get<int>();
  }

  if (!doc.contains("concepts") || !doc["concepts"].is_array() || doc["concepts"].empty()) {
    throw ConfigError("policy: \"concepts\" must be a non-empty array", "concepts");
  }
  std::set<std::string> seen;
  for (const auto& item : doc["concepts"]) {
    if (!item.is_object()) throw ConfigError("policy: every concept must be an object", "concepts");
    const std::string id = item.contains("id") && item["id"].is_string() ? item["id"].get<std::string>() : "";
    if (id.empty()) throw ConfigError("policy: concept with missing or empty id", "id");
    const std::string where = "concept \"" + id + "\"";
    detail::reject_unknown_keys(item, {"id", "canonical_name", "synonyms", "generic_descriptor"}, where);
    if (!seen.insert(id).second) throw ConfigError("policy: duplicate concept id \"" + id + "\"", id);

    ProtectedConcept entry;
    entry.id = id;
    entry.canonical_name = detail::require_string(item, "canonical_name", where, id);
    entry.generic_descriptor = detail::require_string(item, "generic_descriptor", where, id);
    if (normalize_text(entry.canonical_name).empty()) throw ConfigError(where + ": empty canonical_name", id);
    if (normalize_text(entry.generic_descriptor).empty()) {
      throw ConfigError(where + ": empty generic_descriptor", id);
    }
    if (item.contains("synonyms")) {
      if (!item["synonyms"].is_array()) throw ConfigError(where + ": \"synonyms\" must be an array", id);
      for (const auto& s : item["synonyms"]) {
        if (!s.is_string() || normalize_text(s.get<std::string>()).empty()) {
          throw ConfigError(where + ": synonyms must be non-empty strings", id);
        }
        entry.synonyms.push_back(s.get<std::string>());
      }
    }
    for (const auto& name : entry.names()) entry.embeddings.push_back(encode(name, cfg));
    policy.concepts.push_back(std::move(entry));
  }

  // A descriptor that still reads as a protected concept would make the
  // fallback rewrite produce a flagged prompt.
  for (const auto& entry : policy.concepts) {
    for (const auto& other : policy.concepts) {
      const double s = windowed_similarity(entry.generic_descriptor, other.embeddings, cfg);
      if (s >= policy.tau) {
        throw ConfigError("concept \"" + entry.id + "\": generic_descriptor collides with concept \"" +
                              other.id + "\" (similarity " + std::to_string(s) + " >= tau)",
                          entry.id);
      }
    }
  }
  return policy;
}

inline Policy load_policy(const std::string& path, const EncoderConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("policy: cannot open " + path, "policy");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_policy(buf.str(), cfg);
}

inline std::string serialize_policy(const Policy& policy) {
  nlohmann::json doc;
  doc["tau"] = policy.tau;
  doc["policy_text"] = policy.policy_text;
  doc["max_rewrite_iterations"] = policy.max_rewrite_iterations;
  doc["concepts"] = nlohmann::json::array();
  for (const auto& c : policy.concepts) {
    doc["concepts"].push_back({{"id", c.id},
                               {"canonical_name", c.canonical_name},
                               {"synonyms", c.synonyms},
                               {"generic_descriptor", c.generic_descriptor}});
  }
  return doc.dump(2);
}

struct ConceptEmbedding {
  std::string concept_id;
  std::string text;
  Embedding embedding;
};

inline std::vector<ConceptEmbedding> all_concept_embeddings(const Policy& policy) {
  std::vector<ConceptEmbedding> out;
  for (const auto& c : policy.concepts) {
    const auto names = c.names();
    for (std::size_t i = 0; i < names.size(); ++i) out.push_back({c.id, names[i], c.embeddings[i]});
  }
  return out;
}

}  // namespace gog
