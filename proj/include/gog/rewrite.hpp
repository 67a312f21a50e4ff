#pragma once

// Prompt sanitization: a rewriter proposes a candidate, detection re-checks
// it, and the loop repeats until the candidate is clean or the iteration cap
// is hit. A deterministic substitution rewriter is provided so the loop runs
// without any remote model.

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gog/detect.hpp"
#include "gog/embed.hpp"
#include "gog/errors.hpp"
#include "gog/registry.hpp"
#include "gog/windows.hpp"

namespace gog {

inline constexpr std::string_view kJudgeOnlyReplacement = "A generic scene in the requested style";
inline constexpr std::string_view kReframePrefix = "A generic scene: ";

class Rewriter {
 public:
  virtual ~Rewriter() = default;
  // `report` is the detection result for `prompt`. May throw
  // TransportError (propagated) or ParseError (counted as a failed attempt).
  virtual std::string rewrite(std::string_view prompt, const DetectionReport& report, const Policy& policy) = 0;
};

namespace detail {

inline bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80 || c == '_'; }

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

// Trim and collapse whitespace while keeping case.
inline std::string collapse_spaces(std::string_view text) {
  std::string out;
  bool pending = false;
  for (char c : text) {
    if (is_space(static_cast<unsigned char>(c))) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

inline bool is_article(std::string_view word) {
  std::string w;
  for (char c : word) w.push_back(ascii_lower(c));
  return w == "a" || w == "an" || w == "the";
}

inline std::string_view first_word(std::string_view text) {
  const auto end = text.find(' ');
  return end == std::string_view::npos ? text : text.substr(0, end);
}

// Appends `descriptor` in place of a matched name. A leading article in the
// descriptor replaces an article already preceding the match ("a Mario" ->
// "the character"); capitalization follows sentence position.
inline void emit_descriptor(std::string& out, std::string descriptor) {
  if (is_article(first_word(descriptor))) {
    std::size_t end = out.size();
    while (end > 0 && out[end - 1] == ' ') --end;
    std::size_t begin = end;
    while (begin > 0 && is_word_byte(static_cast<unsigned char>(out[begin - 1]))) --begin;
    if (begin < end && is_article(std::string_view(out).substr(begin, end - begin))) out.erase(begin);
  }
  std::size_t last = out.size();
  while (last > 0 && out[last - 1] == ' ') --last;
  const bool sentence_start = last == 0 || out[last - 1] == '.' || out[last - 1] == '!' || out[last - 1] == '?';
  if (!descriptor.empty()) {
    if (sentence_start) {
      descriptor[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(descriptor[0])));
    } else if (descriptor.size() > 1 && std::isupper(static_cast<unsigned char>(descriptor[0])) &&
               !std::isupper(static_cast<unsigned char>(descriptor[1]))) {
      descriptor[0] = ascii_lower(descriptor[0]);
    }
  }
  out += descriptor;
}

struct Needle {
  std::string text;  // normalized (lower case, single spaces)
  const ProtectedConcept* owner = nullptr;
};

// Whole-word, case-insensitive, longest-name-first replacement of every
// listed name in a single left-to-right pass. Returns the number of
// replacements made.
inline std::size_t substitute_names(std::string& text, const std::vector<const ProtectedConcept*>& matched) {
  std::vector<Needle> needles;
  for (const ProtectedConcept* c : matched) {
    for (const auto& name : c->names()) needles.push_back({normalize_text(name), c});
  }
  std::sort(needles.begin(), needles.end(), [](const Needle& a, const Needle& b) {
    if (a.text.size() != b.text.size()) return a.text.size() > b.text.size();
    return a.text < b.text;
  });

  const std::string source = collapse_spaces(text);
  std::string lowered;
  for (char c : source) lowered.push_back(ascii_lower(c));

  std::string out;
  std::size_t count = 0;
  std::size_t i = 0;
  while (i < source.size()) {
    const bool at_boundary = i == 0 || !is_word_byte(static_cast<unsigned char>(source[i - 1]));
    const Needle* hit = nullptr;
    if (at_boundary) {
      for (const Needle& n : needles) {
        if (n.text.empty() || lowered.compare(i, n.text.size(), n.text) != 0) continue;
        const std::size_t end = i + n.text.size();
        if (end < source.size() && is_word_byte(static_cast<unsigned char>(source[end]))) continue;
        hit = &n;
        break;
      }
    }
    if (hit) {
      emit_descriptor(out, hit->owner->generic_descriptor);
      i += hit->text.size();
      ++count;
    } else {
      out.push_back(source[i]);
      ++i;
    }
  }
  text = collapse_spaces(out);
  return count;
}

inline std::string trim_punct(std::string_view text) {
  std::size_t lo = 0;
  std::size_t hi = text.size();
  auto junk = [](unsigned char c) { return is_space(c) || c == ',' || c == ';' || c == ':'; };
  while (lo < hi && junk(static_cast<unsigned char>(text[lo]))) ++lo;
  while (hi > lo && junk(static_cast<unsigned char>(text[hi - 1]))) --hi;
  return std::string(text.substr(lo, hi - lo));
}

}  // namespace detail

// Deterministic stand-in for the LLM rewrite.
//   1. Every whole-word occurrence of a matched concept's name or synonym is
//      replaced by that concept's generic descriptor.
//   2. With no literal occurrence, the windows that score above tau are
//      deleted (best first, re-scoring after each deletion) and the rest is
//      reframed as "A generic scene: <rest>, featuring <descriptor>".
//   3. With neither, the prompt is returned unchanged.
inline std::string fallback_rewrite(std::string_view prompt, const std::set<std::string>& matched,
                                    const Policy& policy) {
  if (matched.empty()) throw ContractViolation("fallback_rewrite: matched concept set is empty");
  std::vector<const ProtectedConcept*> concepts;
  for (const auto& c : policy.concepts) {
    if (matched.count(c.id)) concepts.push_back(&c);
  }
  if (concepts.size() != matched.size()) throw ContractViolation("fallback_rewrite: unknown concept id in matched set");

  std::string text(prompt);
  if (detail::substitute_names(text, concepts) > 0) return text;

  text = detail::collapse_spaces(text);
  const ProtectedConcept* top = nullptr;
  bool deleted = false;
  // Each pass removes at least one word, so this terminates.
  while (true) {
    const ProtectedConcept* best_owner = nullptr;
    ScoredWindow best;
    for (const ProtectedConcept* c : concepts) {
      auto hits = crossing_windows(text, *c, policy);
      if (!hits.empty() && (!best_owner || hits.front().score > best.score)) {
        best = hits.front();
        best_owner = c;
      }
    }
    if (!best_owner) break;
    if (!top) top = best_owner;
    const auto words = split_words(text);
    const std::size_t begin = words[best.window.first_word].raw_begin;
    const std::size_t end = words[best.window.first_word + best.window.word_count - 1].raw_end;
    text = detail::collapse_spaces(text.substr(0, begin) + " " + text.substr(end));
    deleted = true;
  }
  if (!deleted) return std::string(prompt);

  std::string descriptor = top->generic_descriptor;
  const std::string rest = detail::trim_punct(text);
  if (rest.empty()) return std::string(kReframePrefix) + descriptor;
  return std::string(kReframePrefix) + rest + ", featuring " + descriptor;
}

// Rewriter backed by fallback_rewrite. Judge-only detections (no concept
// above tau) carry no span to remove, so the whole prompt is replaced.
class FallbackRewriter final : public Rewriter {
 public:
  std::string rewrite(std::string_view prompt, const DetectionReport& report, const Policy& policy) override {
    if (report.scores.empty() || report.max_score() <= policy.tau) return std::string(kJudgeOnlyReplacement);
    return fallback_rewrite(prompt, report.matched, policy);
  }
};

inline double prompt_similarity(std::string_view a, std::string_view b, const EncoderConfig& cfg) {
  return cosine(encode(a, cfg), encode(b, cfg));
}

struct RewriteAttempt {
  std::string candidate;
  DetectionReport report;
  bool from_fallback = false;
  std::string error;  // set when the rewriter produced no candidate
};

struct RewriteOutcome {
  std::string sanitized_prompt;
  int iterations_used = 0;  // primary-rewriter calls, <= max_rewrite_iterations
  bool used_fallback = false;
  double similarity_to_original = 0.0;
  bool verified_clean = false;
  DetectionReport final_report;
};

class SanitizationFailed : public std::runtime_error {
 public:
  explicit SanitizationFailed(std::vector<RewriteAttempt> attempts)
      : std::runtime_error("no clean rewrite after " + std::to_string(attempts.size()) + " attempts"),
        attempts_(std::move(attempts)) {}

  const std::vector<RewriteAttempt>& attempts() const noexcept { return attempts_; }

 private:
  std::vector<RewriteAttempt> attempts_;
};

struct SanitizeOptions {
  Rewriter* fallback = nullptr;    // tried once from the original prompt after the cap
  PolicyJudge* judge = nullptr;    // re-detection uses the same judge as the first pass
};

// Each primary call rewrites the previous candidate, so a rewrite that
// reintroduces a protected reference gets another pass. At most
// max_rewrite_iterations + 1 rewriter calls are made.
inline RewriteOutcome sanitize(std::string_view prompt, const DetectionReport& report, const Policy& policy,
                               Rewriter& rewriter, SanitizeOptions opts = {}) {
  if (!report.flagged) throw ContractViolation("sanitize: prompt was not flagged");

  std::vector<RewriteAttempt> attempts;
  auto success = [&](std::string candidate, DetectionReport rep, int iterations, bool fallback) {
    RewriteOutcome out;
    out.similarity_to_original = prompt_similarity(candidate, prompt, policy.encoder);
    out.sanitized_prompt = std::move(candidate);
    out.iterations_used = iterations;
    out.used_fallback = fallback;
    out.verified_clean = true;
    out.final_report = std::move(rep);
    return out;
  };

  std::string current(prompt);
  DetectionReport current_report = report;
  for (int i = 1; i <= policy.max_rewrite_iterations; ++i) {
    std::string candidate;
    try {
      candidate = rewriter.rewrite(current, current_report, policy);
    } catch (const ParseError& e) {
      attempts.push_back({"", {}, false, e.what()});
      continue;
    }
    DetectionReport rep = flag(candidate, policy, opts.judge);
    attempts.push_back({candidate, rep, false, ""});
    if (!rep.flagged) return success(std::move(candidate), std::move(rep), i, false);
    current = std::move(candidate);
    current_report = std::move(rep);
  }

  if (opts.fallback && opts.fallback != &rewriter) {
    std::string candidate;
    try {
      candidate = opts.fallback->rewrite(prompt, report, policy);
    } catch (const ParseError& e) {
      attempts.push_back({"", {}, true, e.what()});
      throw SanitizationFailed(std::move(attempts));
    }
    DetectionReport rep = flag(candidate, policy, opts.judge);
    attempts.push_back({candidate, rep, true, ""});
    if (!rep.flagged) return success(std::move(candidate), std::move(rep), policy.max_rewrite_iterations, true);
  }
  throw SanitizationFailed(std::move(attempts));
}

}  // namespace gog
