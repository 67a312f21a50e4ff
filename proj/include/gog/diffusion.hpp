#pragma once

// Closed-form diffusion backend. The data distribution is an isotropic
// Gaussian mixture ("concept world") whose components carry concept
// embeddings; conditioning on an embedding reweights the components. The
// noise prediction is exact:
//
//   q_v(x_t) = sum_k v_k N(x_t; sqrt(abar_t) mu_k, (abar_t sigma_k^2 + 1 - abar_t) I)
//   eps_hat  = -sqrt(1 - abar_t) * grad log q_v(x_t)
//
// World file schema (JSON, unknown keys rejected):
//   {
//     "encoder":  {"dimension": int, "ngram_size": int, "hash_seed": uint64},   optional
//     "schedule": {"steps": int, "beta_start": number, "beta_end": number},    optional
//     "kappa": number > 0,                                                     optional, default 0.1
//     "components": [
//       {"label": string, "concept_text": string (optional, defaults to label),
//        "mean": [number, ...], "std": number > 0, "weight": number > 0}, ...
//     ]
//   }

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gog/embed.hpp"
#include "gog/errors.hpp"
#include "gog/guidance.hpp"

namespace gog {

struct ScheduleConfig {
  int steps = 200;
  // Linear betas of the 1000-step DDPM schedule (1e-4 .. 0.02) rescaled by
  // 1000 / steps, so abar_T stays small at short horizons.
  double beta_start = 1e-4 * 1000.0 / 200.0;
  double beta_end = 0.02 * 1000.0 / 200.0;

  static ScheduleConfig scaled_linear(int steps) {
    if (steps < 1) throw ContractViolation("schedule: steps must be >= 1");
    return {steps, 1e-4 * 1000.0 / steps, 0.02 * 1000.0 / steps};
  }

  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

class NoiseSchedule {
 public:
  explicit NoiseSchedule(const ScheduleConfig& cfg = {}) {
    if (cfg.steps < 1) throw ConfigError("schedule: steps must be >= 1", "steps");
    const int T = cfg.steps;
    beta_.resize(T + 1, 0.0);
    alpha_.resize(T + 1, 1.0);
    alpha_bar_.resize(T + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
      const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
      beta_[t] = cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start);
      if (!(beta_[t] > 0.0 && beta_[t] < 1.0)) throw ConfigError("schedule: every beta must lie in (0, 1)", "beta");
      alpha_[t] = 1.0 - beta_[t];
      alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
    }
    if (!(alpha_bar_[T] < 0.05)) {
      throw ConfigError("schedule: final alpha_bar " + std::to_string(alpha_bar_[T]) + " must be < 0.05",
                        "schedule");
    }
  }

  int steps() const noexcept { return static_cast<int>(beta_.size()) - 1; }
  // t in 1..T
  double beta(int t) const { return beta_.at(checked(t, 1)); }
  double alpha(int t) const { return alpha_.at(checked(t, 1)); }
  // t in 0..T; alpha_bar(0) = 1
  double alpha_bar(int t) const { return alpha_bar_.at(checked(t, 0)); }

 private:
  int checked(int t, int lo) const {
    if (t < lo || t > steps()) throw ContractViolation("schedule: timestep " + std::to_string(t) + " out of range");
    return t;
  }

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

struct MixtureComponent {
  std::string label;
  std::vector<double> mean;
  double std = 1.0;
  double weight = 1.0;
  Embedding concept_embedding;
};

struct ConceptWorld {
  std::vector<MixtureComponent> components;
  double kappa = 0.1;

  std::size_t dimension() const { return components.empty() ? 0 : components.front().mean.size(); }

  std::size_t index_of(std::string_view label) const {
    for (std::size_t k = 0; k < components.size(); ++k) {
      if (components[k].label == label) return k;
    }
    throw ConfigError("world: unknown component label \"" + std::string(label) + "\"", std::string(label));
  }

  bool has_label(std::string_view label) const {
    for (const auto& c : components) {
      if (c.label == label) return true;
    }
    return false;
  }

  void validate() const {
    if (components.empty()) throw ConfigError("world: at least one component required", "components");
    if (!(kappa > 0.0)) throw ConfigError("world: kappa must be > 0", "kappa");
    const std::size_t d = dimension();
    if (d == 0) throw ConfigError("world: component means must be non-empty", "mean");
    const std::size_t emb_dim = components.front().concept_embedding.dimension();
    std::set<std::string> labels;
    double total = 0.0;
    for (const auto& c : components) {
      if (!labels.insert(c.label).second) throw ConfigError("world: duplicate label \"" + c.label + "\"", c.label);
      if (c.mean.size() != d) throw ConfigError("world: component \"" + c.label + "\" has wrong dimension", c.label);
      for (double m : c.mean) {
        if (!std::isfinite(m)) throw ConfigError("world: non-finite mean in \"" + c.label + "\"", c.label);
      }
      if (!(c.std > 0.0) || !std::isfinite(c.std)) throw ConfigError("world: std must be > 0 in \"" + c.label + "\"", c.label);
      if (!(c.weight > 0.0)) throw ConfigError("world: weight must be > 0 in \"" + c.label + "\"", c.label);
      if (c.concept_embedding.dimension() != emb_dim) {
        throw ConfigError("world: concept embeddings must share one dimension", c.label);
      }
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("world: weights must sum to 1", "weight");
  }
};

struct LatentState {
  std::vector<double> x;
  int t = 0;
};

enum class SamplerMode { ancestral, deterministic };

inline std::string to_string(SamplerMode mode) {
  return mode == SamplerMode::ancestral ? "ancestral" : "deterministic";
}

inline SamplerMode parse_sampler_mode(std::string_view text) {
  if (text == "ancestral" || text == "ddpm") return SamplerMode::ancestral;
  if (text == "deterministic" || text == "ddim") return SamplerMode::deterministic;
  throw ConfigError("unknown sampler mode \"" + std::string(text) + "\"", "mode");
}

// The zero embedding selects the prior weights (unconditional branch);
// otherwise v_k is proportional to w_k * exp(cos(phi, phi_k) / kappa).
inline std::vector<double> conditioning_weights(const ConceptWorld& world, const Embedding& phi) {
  std::vector<double> v(world.components.size());
  if (phi.is_zero()) {
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = world.components[k].weight;
    return v;
  }
  std::vector<double> logits(v.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < v.size(); ++k) {
    const auto& c = world.components[k];
    if (c.concept_embedding.dimension() != phi.dimension()) {
      throw ContractViolation("conditioning_weights: embedding dimension mismatch");
    }
    logits[k] = std::log(c.weight) + cosine(phi, c.concept_embedding) / world.kappa;
    top = std::max(top, logits[k]);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    v[k] = std::exp(logits[k] - top);
    sum += v[k];
  }
  for (double& x : v) x /= sum;
  return v;
}

// Noise prediction for precomputed conditioning weights; the sampler calls
// this directly so the weights are not recomputed every step.
inline std::vector<double> predict_noise_weighted(const ConceptWorld& world, const NoiseSchedule& schedule,
                                                  std::span<const double> x, int t, std::span<const double> weights) {
  if (t < 1 || t > schedule.steps()) throw ContractViolation("predict_noise: t must lie in [1, T]");
  const std::size_t d = world.dimension();
  if (x.size() != d) throw ContractViolation("predict_noise: latent dimension mismatch");
  for (double xi : x) {
    if (!std::isfinite(xi)) throw ContractViolation("predict_noise: non-finite latent");
  }
  const double ab = schedule.alpha_bar(t);
  const double sab = std::sqrt(ab);
  const std::size_t K = world.components.size();

  std::vector<double> log_r(K, -std::numeric_limits<double>::infinity());
  std::vector<double> inv_var(K);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    const auto& c = world.components[k];
    const double var = ab * c.std * c.std + (1.0 - ab);
    inv_var[k] = 1.0 / var;
    if (weights[k] <= 0.0) continue;
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = x[i] - sab * c.mean[i];
      sq += diff * diff;
    }
    log_r[k] = std::log(weights[k]) - 0.5 * static_cast<double>(d) * std::log(var) - 0.5 * sq * inv_var[k];
    top = std::max(top, log_r[k]);
  }
  double norm = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    log_r[k] = std::exp(log_r[k] - top);
    norm += log_r[k];
  }

  std::vector<double> eps(d, 0.0);
  const double scale = std::sqrt(1.0 - ab);
  for (std::size_t k = 0; k < K; ++k) {
    const double r = log_r[k] / norm;
    if (r == 0.0) continue;
    const auto& c = world.components[k];
    // -sqrt(1 - abar) * r_k * (-(x - sqrt(abar) mu_k) / var_k)
    for (std::size_t i = 0; i < d; ++i) eps[i] += scale * r * (x[i] - sab * c.mean[i]) * inv_var[k];
  }
  return eps;
}

inline std::vector<double> predict_noise(const ConceptWorld& world, const NoiseSchedule& schedule,
                                         const LatentState& state, const Embedding& phi) {
  const auto v = conditioning_weights(world, phi);
  return predict_noise_weighted(world, schedule, state.x, state.t, v);
}

// Tweedie estimate of x_0 from a noise prediction.
inline std::vector<double> predicted_x0(const NoiseSchedule& schedule, const LatentState& state,
                                        std::span<const double> eps) {
  const double ab = schedule.alpha_bar(state.t);
  std::vector<double> x0(state.x.size());
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = (state.x[i] - std::sqrt(1.0 - ab) * eps[i]) / std::sqrt(ab);
  return x0;
}

// x_t -> x_{t-1}.
//   ancestral:     (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t) + sqrt(beta_t) z,  z = 0 at t = 1
//   deterministic: sqrt(abar_{t-1}) x0_hat + sqrt(1 - abar_{t-1}) eps
inline LatentState scheduler_step(const NoiseSchedule& schedule, const LatentState& state, std::span<const double> eps,
                                  SamplerMode mode, std::mt19937_64* rng = nullptr) {
  if (state.t < 1) throw ContractViolation("scheduler_step: t must be >= 1");
  if (eps.size() != state.x.size()) throw ContractViolation("scheduler_step: noise dimension mismatch");
  const int t = state.t;
  LatentState next{std::vector<double>(state.x.size()), t - 1};
  if (mode == SamplerMode::ancestral) {
    const double beta = schedule.beta(t);
    const double coef = beta / std::sqrt(1.0 - schedule.alpha_bar(t));
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
    const double sigma = std::sqrt(beta);
    if (t > 1 && !rng) throw ContractViolation("scheduler_step: ancestral mode needs an rng");
    std::normal_distribution<double> normal;
    for (std::size_t i = 0; i < next.x.size(); ++i) {
      next.x[i] = inv_sqrt_alpha * (state.x[i] - coef * eps[i]);
      if (t > 1) next.x[i] += sigma * normal(*rng);
    }
  } else {
    const auto x0 = predicted_x0(schedule, state, eps);
    const double ab_prev = schedule.alpha_bar(t - 1);
    for (std::size_t i = 0; i < next.x.size(); ++i) {
      next.x[i] = std::sqrt(ab_prev) * x0[i] + std::sqrt(1.0 - ab_prev) * eps[i];
    }
  }
  return next;
}

// Per-step instrumentation: (state before the step, eps_uncond, eps_cond, guided eps).
using StepObserver = std::function<void(const LatentState&, std::span<const double>, std::span<const double>,
                                        std::span<const double>)>;

// Latent decoder hook. The toy latent space is the output space.
inline std::vector<double> decode(std::vector<double> z0) { return z0; }

struct SampleRequest {
  Embedding phi_cond;  // phi_mix
  Embedding phi_uncond;  // phi_neg
  double eta = 1.0;
  SamplerMode mode = SamplerMode::ancestral;
};

inline std::vector<double> sample(const ConceptWorld& world, const NoiseSchedule& schedule, const SampleRequest& req,
                                  std::uint64_t seed, const StepObserver& observer = {}) {
  if (!(req.eta >= 0.0)) throw ContractViolation("sample: eta must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  LatentState state{std::vector<double>(world.dimension()), schedule.steps()};
  for (double& xi : state.x) xi = normal(rng);

  const auto w_uncond = conditioning_weights(world, req.phi_uncond);
  const auto w_cond = conditioning_weights(world, req.phi_cond);
  while (state.t >= 1) {
    const auto eps_u = predict_noise_weighted(world, schedule, state.x, state.t, w_uncond);
    const auto eps_c = predict_noise_weighted(world, schedule, state.x, state.t, w_cond);
    const auto eps = cfg_combine(eps_u, eps_c, req.eta);
    if (observer) observer(state, eps_u, eps_c, eps);
    state = scheduler_step(schedule, state, eps, req.mode, &rng);
  }
  return decode(std::move(state.x));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return detail::splitmix64(base ^ detail::splitmix64(index + 0x632be59bd9b4e019ULL));
}

// Sample i uses derive_seed(seed, i), so results do not depend on the
// thread count.
inline std::vector<std::vector<double>> sample_many(const ConceptWorld& world, const NoiseSchedule& schedule,
                                                    const SampleRequest& req, std::size_t count, std::uint64_t seed,
                                                    unsigned threads = 0) {
  std::vector<std::vector<double>> out(count);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
  auto work = [&](unsigned lane) {
    for (std::size_t i = lane; i < count; i += threads) out[i] = sample(world, schedule, req, derive_seed(seed, i));
  };
  if (threads == 1) {
    work(0);
    return out;
  }
  std::vector<std::jthread> pool;
  for (unsigned lane = 0; lane < threads; ++lane) pool.emplace_back(work, lane);
  pool.clear();
  return out;
}

struct LoadedWorld {
  EncoderConfig encoder;
  ScheduleConfig schedule;
  ConceptWorld world;
};

inline LoadedWorld parse_world(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("world: parse error: ") + e.what());
  }
  auto reject_unknown = [](const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                           const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : obj.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        throw ConfigError(where + ": unknown key \"" + key + "\"", key);
      }
    }
  };
  reject_unknown(doc, {"encoder", "schedule", "kappa", "components"}, "world");

  LoadedWorld out;
  try {
    if (doc.contains("encoder")) {
      const auto& e = doc["encoder"];
      reject_unknown(e, {"dimension", "ngram_size", "hash_seed"}, "world.encoder");
      if (e.contains("dimension")) out.encoder.dimension = e["dimension"].get<std::size_t>();
      if (e.contains("ngram_size")) out.encoder.ngram_size = e["ngram_size"].get<std::size_t>();
      if (e.contains("hash_seed")) out.encoder.hash_seed = e["hash_seed"].get<std::uint64_t>();
    }
    if (doc.contains("schedule")) {
      const auto& s = doc["schedule"];
      reject_unknown(s, {"steps", "beta_start", "beta_end"}, "world.schedule");
      const int steps = s.value("steps", 200);
      out.schedule = ScheduleConfig::scaled_linear(steps);
      if (s.contains("beta_start")) out.schedule.beta_start = s["beta_start"].get<double>();
      if (s.contains("beta_end")) out.schedule.beta_end = s["beta_end"].get<double>();
    }
    if (doc.contains("kappa")) out.world.kappa = doc["kappa"].get<double>();
    if (!doc.contains("components") || !doc["components"].is_array()) {
      throw ConfigError("world: \"components\" must be an array", "components");
    }
    for (const auto& item : doc["components"]) {
      reject_unknown(item, {"label", "concept_text", "mean", "std", "weight"}, "world.components");
      MixtureComponent c;
      c.label = item.at("label").get<std::string>();
      c.mean = item.at("mean").get<std::vector<double>>();
      c.std = item.at("std").get<double>();
      c.weight = item.at("weight").get<double>();
      const std::string text = item.value("concept_text", c.label);
      c.concept_embedding = encode(text, out.encoder);
      out.world.components.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world: ") + e.what());
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("world: ") + e.what(), "encoder");
  }
  out.encoder.validate();
  out.world.validate();
  [[maybe_unused]] NoiseSchedule check(out.schedule);
  return out;
}

inline LoadedWorld load_world(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("world: cannot open " + path, "world");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_world(buf.str());
}

}  // namespace gog
