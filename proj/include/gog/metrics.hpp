#pragma once

// Sample-set analogues of entity-count and feature-consistency metrics on a
// concept world.
//   detect_count:     samples within radius_multiplier * sigma of the protected mean
//   cons_fraction:    share of samples whose most responsible component is the intended one
//   prompt_alignment: mean cosine between the prompt and each sample's nearest component

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gog/diffusion.hpp"
#include "gog/embed.hpp"

namespace gog {

using Sample = std::vector<double>;

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return sum;
}

inline bool within_radius(const Sample& x, const MixtureComponent& c, double radius_multiplier) {
  const double r = radius_multiplier * c.std;
  return squared_distance(x, c.mean) <= r * r;
}

inline std::size_t detect_count(std::span<const Sample> samples, const ConceptWorld& world,
                                std::string_view protected_label, double radius_multiplier = 2.0) {
  const auto& c = world.components[world.index_of(protected_label)];
  std::size_t count = 0;
  for (const auto& x : samples) count += within_radius(x, c, radius_multiplier) ? 1 : 0;
  return count;
}

// Posterior component responsibilities of the clean (t = 0) mixture.
inline std::vector<double> responsibilities(const Sample& x, const ConceptWorld& world) {
  const std::size_t K = world.components.size();
  const double d = static_cast<double>(world.dimension());
  std::vector<double> r(K);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    const auto& c = world.components[k];
    const double var = c.std * c.std;
    r[k] = std::log(c.weight) - 0.5 * d * std::log(var) - 0.5 * squared_distance(x, c.mean) / var;
    top = std::max(top, r[k]);
  }
  double sum = 0.0;
  for (double& v : r) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : r) v /= sum;
  return r;
}

inline std::size_t most_responsible(const Sample& x, const ConceptWorld& world) {
  const auto r = responsibilities(x, world);
  std::size_t best = 0;
  for (std::size_t k = 1; k < r.size(); ++k) {
    if (r[k] > r[best]) best = k;
  }
  return best;
}

// Fraction of samples attributed to each component, in component order.
inline std::vector<double> label_fractions(std::span<const Sample> samples, const ConceptWorld& world) {
  std::vector<double> out(world.components.size(), 0.0);
  if (samples.empty()) return out;
  for (const auto& x : samples) out[most_responsible(x, world)] += 1.0;
  for (double& f : out) f /= static_cast<double>(samples.size());
  return out;
}

inline double cons_fraction(std::span<const Sample> samples, const ConceptWorld& world,
                            std::string_view intended_label) {
  return label_fractions(samples, world)[world.index_of(intended_label)];
}

inline std::size_t nearest_component(const Sample& x, const ConceptWorld& world) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < world.components.size(); ++k) {
    const double d = squared_distance(x, world.components[k].mean);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

inline double prompt_alignment(std::string_view prompt, const ConceptWorld& world, std::span<const Sample> samples,
                               const EncoderConfig& cfg) {
  if (samples.empty()) return 0.0;
  const Embedding phi = encode(prompt, cfg);
  double sum = 0.0;
  for (const auto& x : samples) sum += cosine(phi, world.components[nearest_component(x, world)].concept_embedding);
  return sum / static_cast<double>(samples.size());
}

}  // namespace gog
