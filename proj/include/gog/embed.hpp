#pragma once

// Deterministic text encoder and the vector algebra shared by detection,
// guidance and the denoiser.
//
// The encoder is signed feature hashing over character n-grams of the
// case-folded, whitespace-collapsed text, L2-normalized. It has no learned
// semantics; synonym proximity comes from the policy listing synonyms
// explicitly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gog/errors.hpp"

namespace gog {

class Embedding {
 public:
  Embedding() = default;
  explicit Embedding(std::vector<double> values) : values_(std::move(values)) {}

  static Embedding zeros(std::size_t dimension) {
    return Embedding(std::vector<double>(dimension, 0.0));
  }

  std::size_t dimension() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double norm() const {
    double sum = 0.0;
    for (double v : values_) sum += v * v;
    return std::sqrt(sum);
  }

  bool is_zero() const {
    for (double v : values_) {
      if (v != 0.0) return false;
    }
    return true;
  }

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  std::vector<double> values_;
};

struct EncoderConfig {
  std::size_t dimension = 64;
  std::size_t ngram_size = 3;
  std::uint64_t hash_seed = 0x9e3779b97f4a7c15ULL;

  void validate() const {
    if (dimension < 2) throw ContractViolation("encoder dimension must be >= 2");
    if (ngram_size < 1) throw ContractViolation("encoder ngram_size must be >= 1");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h);
}

inline bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace detail

// ASCII case folding plus whitespace collapsing and trimming. Non-ASCII
// UTF-8 bytes pass through untouched.
inline std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (detail::is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    out.push_back(static_cast<char>(c));
  }
  return out;
}

// Empty (or whitespace-only) text maps to the zero vector, which doubles as
// the unconditional embedding.
inline Embedding encode(std::string_view text, const EncoderConfig& cfg) {
  cfg.validate();
  const std::string normalized = normalize_text(text);
  std::vector<double> values(cfg.dimension, 0.0);
  if (normalized.empty()) return Embedding(std::move(values));

  const std::string padded = " " + normalized + " ";
  const std::size_t n = std::min(cfg.ngram_size, padded.size());
  for (std::size_t i = 0; i + n <= padded.size(); ++i) {
    const std::uint64_t h = detail::fnv1a64(std::string_view(padded).substr(i, n), cfg.hash_seed);
    const std::size_t bucket = static_cast<std::size_t>(h % cfg.dimension);
    values[bucket] += (h >> 63) ? -1.0 : 1.0;
  }

  double sum = 0.0;
  for (double v : values) sum += v * v;
  // Every n-gram can cancel against another; the result is then the zero
  // vector rather than a division by zero.
  if (sum == 0.0) return Embedding(std::move(values));
  const double inv = 1.0 / std::sqrt(sum);
  for (double& v : values) v *= inv;
  return Embedding(std::move(values));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractViolation("dimension mismatch in dot product");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

// Zero when either operand has norm below 1e-12, so the similarity is total
// over the zero embedding.
inline double cosine(const Embedding& a, const Embedding& b) {
  if (a.dimension() != b.dimension()) {
    throw ContractViolation("cosine: dimension mismatch (" + std::to_string(a.dimension()) +
                            " vs " + std::to_string(b.dimension()) + ")");
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  const double c = dot(a.values(), b.values()) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

// (1 - alpha) * a + alpha * b, not re-normalized. Endpoints and equal
// operands return the operand itself so they are bitwise exact.
inline Embedding mix(const Embedding& a, const Embedding& b, double alpha) {
  if (a.dimension() != b.dimension()) throw ContractViolation("mix: dimension mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractViolation("mix: alpha must lie in [0, 1]");
  if (alpha == 0.0 || a == b) return a;
  if (alpha == 1.0) return b;
  std::vector<double> out(a.dimension());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - alpha) * a[i] + alpha * b[i];
  return Embedding(std::move(out));
}

}  // namespace gog
