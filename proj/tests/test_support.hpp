#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gog/gog.hpp"

namespace gog::testing {

inline std::string data_path(const std::string& name) { return std::string(GOG_DATA_DIR) + "/" + name; }
inline std::string fixture_path(const std::string& name) { return std::string(GOG_FIXTURE_DIR) + "/" + name; }

inline Embedding random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n;
  std::vector<double> v(d);
  double s = 0.0;
  for (double& x : v) {
    x = n(rng);
    s += x * x;
  }
  for (double& x : v) x /= std::sqrt(s);
  return Embedding(std::move(v));
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(d);
  for (double& x : v) x = n(rng);
  return v;
}

// Two concepts, small enough to reason about by hand.
inline const char* kTwoConceptPolicy = R"({
  "tau": 0.75,
  "policy_text": "Do not depict protected characters.",
  "max_rewrite_iterations": 3,
  "concepts": [
    {"id": "mario", "canonical_name": "Mario", "synonyms": ["Nintendo plumber", "Jumpman"],
     "generic_descriptor": "the character"},
    {"id": "pikachu", "canonical_name": "Pikachu", "synonyms": [],
     "generic_descriptor": "a small, lively creature"}
  ]
})";

inline Policy two_concept_policy() { return parse_policy(kTwoConceptPolicy, EncoderConfig{}); }

// World with a component per listed label, concept embedding = encode(label).
inline ConceptWorld make_world(const std::vector<std::pair<std::string, std::vector<double>>>& means, double std,
                               const EncoderConfig& cfg = {}) {
  ConceptWorld w;
  for (const auto& [label, mu] : means) {
    w.components.push_back({label, mu, std, 1.0 / static_cast<double>(means.size()), encode(label, cfg)});
  }
  w.validate();
  return w;
}

// Three well-separated 2D components with distinct spreads and weights.
inline ConceptWorld three_component_world(const EncoderConfig& cfg = {}) {
  ConceptWorld w;
  w.components.push_back({"pikachu", {3.0, 3.0}, 0.5, 0.5, encode("Pikachu", cfg)});
  w.components.push_back({"creature", {-3.0, -2.0}, 0.8, 0.3, encode("a small, lively creature", cfg)});
  w.components.push_back({"plumber", {2.5, -3.5}, 0.3, 0.2, encode("Mario", cfg)});
  w.validate();
  return w;
}

namespace oracle {

// log q_v(x_t) written directly from the mixture density, no shared code
// with the library's noise predictor.
inline double log_marginal(const ConceptWorld& w, const NoiseSchedule& s, const std::vector<double>& x, int t,
                           const std::vector<double>& v) {
  const double ab = s.alpha_bar(t);
  const double d = static_cast<double>(x.size());
  long double total = 0.0L;
  for (std::size_t k = 0; k < w.components.size(); ++k) {
    const auto& c = w.components[k];
    const double var = ab * c.std * c.std + 1.0 - ab;
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sq += std::pow(x[i] - std::sqrt(ab) * c.mean[i], 2);
    total += v[k] * std::pow(2.0 * M_PI * var, -d / 2.0) * std::exp(-0.5 * sq / var);
  }
  return std::log(static_cast<double>(total));
}

inline std::vector<double> fd_noise(const ConceptWorld& w, const NoiseSchedule& s, const std::vector<double>& x, int t,
                                    const std::vector<double>& v, double h = 1e-5) {
  std::vector<double> eps(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double grad = (log_marginal(w, s, xp, t, v) - log_marginal(w, s, xm, t, v)) / (2 * h);
    eps[i] = -std::sqrt(1.0 - s.alpha_bar(t)) * grad;
  }
  return eps;
}

inline double relative_error(const std::vector<double>& got, const std::vector<double>& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::sqrt(den);
}

// Two-component equal-weight 1D mixture CDF.
inline double mixture_cdf(double x, double mu, double sigma) {
  auto phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  return 0.5 * phi((x - mu) / sigma) + 0.5 * phi((x + mu) / sigma);
}

// Two-sided one-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> xs, double mu, double sigma) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = mixture_cdf(xs[i], mu, sigma);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

// Asymptotic Kolmogorov distribution P(K > lambda).
inline double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int j = 1; j <= 100; ++j) p += 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace oracle

}  // namespace gog::testing
