#pragma once

// Prompt-level concept detection. A prompt is flagged when its best
// similarity to some protected concept strictly exceeds tau, or when the
// policy judge says it violates the written policy.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "gog/embed.hpp"
#include "gog/errors.hpp"
#include "gog/registry.hpp"
#include "gog/windows.hpp"

namespace gog {

struct JudgeResult {
  int verdict = 0;                    // 0 or 1
  std::vector<std::string> concepts;  // ids the judge named, may be empty
};

class PolicyJudge {
 public:
  virtual ~PolicyJudge() = default;
  // Must return or throw TransportError / ParseError; implementations
  // enforce their own timeout.
  virtual JudgeResult judge(std::string_view prompt, std::string_view policy_text) = 0;
};

struct DetectionReport {
  bool flagged = false;
  std::set<std::string> matched;
  std::map<std::string, double> scores;
  std::optional<int> judge_verdict;
  std::vector<std::string> warnings;

  double max_score() const {
    double best = -1.0;
    for (const auto& [_, s] : scores) best = std::max(best, s);
    return best;
  }

  friend bool operator==(const DetectionReport&, const DetectionReport&) = default;
};

struct ScoreOptions {
  bool windowed = true;
};

// s_i for every concept: max cosine over the concept's names against the
// whole prompt and, when windowed, against each 1..5-word sub-phrase.
inline std::map<std::string, double> similarity_scores(std::string_view prompt, const Policy& policy,
                                                       ScoreOptions opts = {}) {
  std::vector<Embedding> probes{encode(prompt, policy.encoder)};
  if (opts.windowed) {
    const auto words = split_words(prompt);
    for (const Window& w : word_windows(words)) probes.push_back(encode(w.text, policy.encoder));
  }
  std::map<std::string, double> scores;
  for (const auto& c : policy.concepts) {
    double best = -1.0;
    for (const Embedding& probe : probes) {
      for (const Embedding& target : c.embeddings) best = std::max(best, cosine(probe, target));
    }
    scores[c.id] = best;
  }
  return scores;
}

// Combines precomputed scores with an optional judge verdict. Matched
// concepts are those above tau plus whatever the judge named; when only the
// judge fired and it named nothing usable, the top-scoring concept stands in.
inline DetectionReport decide(std::map<std::string, double> scores, const Policy& policy,
                              const std::optional<JudgeResult>& judge) {
  DetectionReport report;
  report.scores = std::move(scores);
  bool embedding_hit = false;
  for (const auto& [id, s] : report.scores) {
    if (s > policy.tau) {
      embedding_hit = true;
      report.matched.insert(id);
    }
  }
  bool judge_hit = false;
  if (judge) {
    if (judge->verdict != 0 && judge->verdict != 1) {
      throw ContractViolation("judge verdict must be 0 or 1");
    }
    report.judge_verdict = judge->verdict;
    judge_hit = judge->verdict == 1;
    if (judge_hit) {
      for (const auto& id : judge->concepts) {
        if (policy.find(id)) {
          report.matched.insert(id);
        } else {
          report.warnings.push_back("judge named unknown concept \"" + id + "\"");
        }
      }
      if (report.matched.empty() && !report.scores.empty()) {
        auto top = std::max_element(report.scores.begin(), report.scores.end(),
                                    [](const auto& a, const auto& b) { return a.second < b.second; });
        report.matched.insert(top->first);
      }
    }
  }
  report.flagged = embedding_hit || judge_hit;
  return report;
}

// Judge outages never block: the embedding branch decides alone and the
// failure is recorded in the report's warnings.
inline DetectionReport flag(std::string_view prompt, const Policy& policy, PolicyJudge* judge = nullptr) {
  auto scores = similarity_scores(prompt, policy);
  std::optional<JudgeResult> verdict;
  std::vector<std::string> warnings;
  if (judge) {
    try {
      verdict = judge->judge(prompt, policy.policy_text);
    } catch (const TransportError& e) {
      warnings.push_back(std::string("judge unavailable: ") + e.what());
    } catch (const ParseError& e) {
      warnings.push_back(std::string("judge reply unparseable: ") + e.what());
    }
  }
  DetectionReport report = decide(std::move(scores), policy, verdict);
  report.warnings.insert(report.warnings.begin(), warnings.begin(), warnings.end());
  return report;
}

struct ScoredWindow {
  Window window;
  double score = 0.0;
};

// Windows of `prompt` whose similarity to `target` exceeds tau, best first.
inline std::vector<ScoredWindow> crossing_windows(std::string_view prompt, const ProtectedConcept& target,
                                                  const Policy& policy) {
  std::vector<ScoredWindow> out;
  const auto words = split_words(prompt);
  for (Window& w : word_windows(words)) {
    const Embedding probe = encode(w.text, policy.encoder);
    double best = -1.0;
    for (const Embedding& e : target.embeddings) best = std::max(best, cosine(probe, e));
    if (best > policy.tau) out.push_back({std::move(w), best});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  return out;
}

}  // namespace gog
