#pragma once

#include <span>
#include <vector>

#include "gog/embed.hpp"
#include "gog/errors.hpp"

namespace gog {

struct GuidanceConfig {
  double alpha = 0.7;  // 0 = original prompt only, 1 = sanitized prompt only
  double eta = 3.0;    // classifier-free guidance scale

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractViolation("alpha must lie in [0, 1]");
    if (!(eta >= 0.0)) throw ContractViolation("eta must be >= 0");
  }
};

// phi_mix = (1 - alpha) * phi_p + alpha * phi_pre
inline Embedding mix_prompt_embeddings(const Embedding& phi_p, const Embedding& phi_pre, double alpha) {
  return mix(phi_p, phi_pre, alpha);
}

// eps_uncond + eta * (eps_cond - eps_uncond). eta = 0 and eta = 1 return the
// corresponding operand unchanged.
inline std::vector<double> cfg_combine(std::span<const double> eps_uncond, std::span<const double> eps_cond,
                                       double eta) {
  if (eps_uncond.size() != eps_cond.size()) throw ContractViolation("cfg_combine: dimension mismatch");
  if (!(eta >= 0.0)) throw ContractViolation("cfg_combine: eta must be >= 0");
  if (eta == 0.0) return {eps_uncond.begin(), eps_uncond.end()};
  if (eta == 1.0) return {eps_cond.begin(), eps_cond.end()};
  std::vector<double> out(eps_uncond.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_uncond[i] + eta * (eps_cond[i] - eps_uncond[i]);
  return out;
}

}  // namespace gog
