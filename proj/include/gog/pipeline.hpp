#pragma once

// End-to-end guarded generation:
//   detect -> rewrite (flagged prompts only) -> encode -> mix -> sample -> decode -> metrics
// plus alpha/eta sweeps and the report writers (report.json, samples.csv,
// sweep.csv, sweep.svg).

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gog/detect.hpp"
#include "gog/diffusion.hpp"
#include "gog/embed.hpp"
#include "gog/errors.hpp"
#include "gog/guidance.hpp"
#include "gog/metrics.hpp"
#include "gog/registry.hpp"
#include "gog/rewrite.hpp"

namespace gog {

struct RunConfig {
  std::string policy_path;
  std::string world_path;
  std::string prompt;
  double alpha = 0.7;
  double eta = 3.0;
  SamplerMode mode = SamplerMode::ancestral;
  std::size_t num_samples = 4;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::optional<std::string> llm_url;
  std::string llm_model = "gpt-4o";
  std::optional<std::string> protected_label;
  std::optional<std::string> intended_label;

  void validate() const {
    if (num_samples < 1) throw ConfigError("num_samples must be >= 1", "samples");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]", "alpha");
    if (!(eta >= 0.0)) throw ConfigError("eta must be >= 0", "eta");
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline nlohmann::json to_json(const RunConfig& c) {
  auto opt = [](const std::optional<std::string>& s) { return s ? nlohmann::json(*s) : nlohmann::json(nullptr); };
  return {{"policy", c.policy_path},
          {"world", c.world_path},
          {"prompt", c.prompt},
          {"alpha", c.alpha},
          {"eta", c.eta},
          {"mode", to_string(c.mode)},
          {"samples", c.num_samples},
          {"seed", c.seed},
          {"out", c.out_dir},
          {"llm_url", opt(c.llm_url)},
          {"llm_model", c.llm_model},
          {"protected", opt(c.protected_label)},
          {"intended", opt(c.intended_label)}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<std::string>();
  };
  RunConfig c;
  try {
    c.policy_path = j.at("policy").get<std::string>();
    c.world_path = j.at("world").get<std::string>();
    c.prompt = j.at("prompt").get<std::string>();
    c.alpha = j.at("alpha").get<double>();
    c.eta = j.at("eta").get<double>();
    c.mode = parse_sampler_mode(j.at("mode").get<std::string>());
    c.num_samples = j.at("samples").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out_dir = j.at("out").get<std::string>();
    c.llm_url = opt("llm_url");
    c.llm_model = j.at("llm_model").get<std::string>();
    c.protected_label = opt("protected");
    c.intended_label = opt("intended");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return c;
}

// Everything loaded from disk once per invocation.
struct Environment {
  Policy policy;
  LoadedWorld world;
  NoiseSchedule schedule;
  std::string policy_hash;
};

inline std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string(what) + ": cannot open " + path, what);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline Environment load_environment(const RunConfig& config) {
  LoadedWorld world = parse_world(read_file(config.world_path, "world"));
  const std::string policy_text = read_file(config.policy_path, "policy");
  Policy policy = parse_policy(policy_text, world.encoder);
  NoiseSchedule schedule(world.schedule);
  return {std::move(policy), std::move(world), std::move(schedule), hex64(detail::fnv1a64(policy_text, 0))};
}

struct Services {
  PolicyJudge* judge = nullptr;
  Rewriter* rewriter = nullptr;  // defaults to the deterministic FallbackRewriter
  Rewriter* fallback = nullptr;
};

struct PreparedPrompt {
  std::string prompt;
  std::string sanitized_prompt;
  DetectionReport detection;
  std::optional<RewriteOutcome> rewrite;
  Embedding phi_p;
  Embedding phi_pre;
};

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"detect", "rewrite", "encode", "mix", "sample", "decode", "metrics"};
  return names;
}

// Detection, rewriting and prompt encoding. Throws SanitizationFailed for a
// flagged prompt that cannot be cleaned; nothing is generated in that case.
inline PreparedPrompt prepare(const Environment& env, const std::string& prompt, Services services,
                              std::vector<std::string>* trace = nullptr) {
  auto mark = [&](const char* stage) {
    if (trace) trace->push_back(stage);
  };
  PreparedPrompt out;
  out.prompt = prompt;

  mark("detect");
  out.detection = flag(prompt, env.policy, services.judge);

  mark("rewrite");
  if (out.detection.flagged) {
    FallbackRewriter deterministic;
    Rewriter& rewriter = services.rewriter ? *services.rewriter : deterministic;
    out.rewrite = sanitize(prompt, out.detection, env.policy, rewriter, {services.fallback, services.judge});
    out.sanitized_prompt = out.rewrite->sanitized_prompt;
  } else {
    out.sanitized_prompt = prompt;
  }

  mark("encode");
  out.phi_p = encode(out.prompt, env.policy.encoder);
  out.phi_pre = encode(out.sanitized_prompt, env.policy.encoder);
  return out;
}

struct RunMetrics {
  std::optional<std::size_t> detect_count;
  std::optional<double> detect_rate;
  std::optional<double> cons_fraction;
  double prompt_alignment = 0.0;
};

struct RunReport {
  RunConfig config;
  std::string policy_hash;
  PreparedPrompt prepared;
  std::vector<std::string> trace;
  std::vector<Sample> samples;
  std::vector<std::string> nearest;
  std::vector<bool> in_protected_radius;
  RunMetrics metrics;
};

inline constexpr double kDetectRadiusMultiplier = 2.0;

inline RunMetrics compute_metrics(const Environment& env, const RunConfig& config, std::span<const Sample> samples) {
  const ConceptWorld& world = env.world.world;
  RunMetrics m;
  if (config.protected_label) {
    m.detect_count = detect_count(samples, world, *config.protected_label, kDetectRadiusMultiplier);
    m.detect_rate = static_cast<double>(*m.detect_count) / static_cast<double>(samples.size());
  }
  if (config.intended_label) m.cons_fraction = cons_fraction(samples, world, *config.intended_label);
  m.prompt_alignment = prompt_alignment(config.prompt, world, samples, env.policy.encoder);
  return m;
}

// Mixing, sampling, decoding and metrics for an already prepared prompt.
inline RunReport generate(const Environment& env, const PreparedPrompt& prepared, const RunConfig& config,
                          std::vector<std::string> trace = {}) {
  config.validate();
  const ConceptWorld& world = env.world.world;
  if (config.protected_label) world.index_of(*config.protected_label);
  if (config.intended_label) world.index_of(*config.intended_label);

  RunReport report;
  report.config = config;
  report.policy_hash = env.policy_hash;
  report.prepared = prepared;

  trace.push_back("mix");
  const Embedding phi_mix = mix_prompt_embeddings(prepared.phi_p, prepared.phi_pre, config.alpha);
  const Embedding phi_neg = Embedding::zeros(phi_mix.dimension());

  trace.push_back("sample");
  SampleRequest request{phi_mix, phi_neg, config.eta, config.mode};
  auto latents = sample_many(world, env.schedule, request, config.num_samples, config.seed);

  trace.push_back("decode");
  report.samples.reserve(latents.size());
  for (auto& z : latents) report.samples.push_back(decode(std::move(z)));

  trace.push_back("metrics");
  report.metrics = compute_metrics(env, config, report.samples);
  for (const auto& x : report.samples) {
    report.nearest.push_back(world.components[nearest_component(x, world)].label);
    report.in_protected_radius.push_back(
        config.protected_label &&
        within_radius(x, world.components[world.index_of(*config.protected_label)], kDetectRadiusMultiplier));
  }
  report.trace = std::move(trace);
  return report;
}

inline RunReport run(const Environment& env, const RunConfig& config, Services services = {}) {
  config.validate();
  std::vector<std::string> trace;
  PreparedPrompt prepared = prepare(env, config.prompt, services, &trace);
  return generate(env, prepared, config, std::move(trace));
}

inline RunReport run(const RunConfig& config, Services services = {}) {
  config.validate();
  const Environment env = load_environment(config);
  return run(env, config, services);
}

inline nlohmann::json to_json(const DetectionReport& r) {
  nlohmann::json scores = nlohmann::json::object();
  for (const auto& [id, s] : r.scores) scores[id] = s;
  return {{"flagged", r.flagged},
          {"matched", std::vector<std::string>(r.matched.begin(), r.matched.end())},
          {"scores", scores},
          {"judge_verdict", r.judge_verdict ? nlohmann::json(*r.judge_verdict) : nlohmann::json(nullptr)},
          {"warnings", r.warnings}};
}

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json rewrite = nullptr;
  if (r.prepared.rewrite) {
    const auto& o = *r.prepared.rewrite;
    rewrite = {{"sanitized_prompt", o.sanitized_prompt},
               {"iterations_used", o.iterations_used},
               {"used_fallback", o.used_fallback},
               {"similarity_to_original", o.similarity_to_original},
               {"verified_clean", o.verified_clean}};
  }
  auto opt_num = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    samples.push_back({{"x", r.samples[i]}, {"nearest", r.nearest[i]}, {"in_protected_radius", r.in_protected_radius[i]}});
  }
  return {{"config", to_json(r.config)},
          {"policy_hash", r.policy_hash},
          {"detection", to_json(r.prepared.detection)},
          {"sanitized_prompt", r.prepared.sanitized_prompt},
          {"rewrite", rewrite},
          {"trace", r.trace},
          {"metrics",
           {{"detect_count", opt_num(r.metrics.detect_count)},
            {"detect_rate", opt_num(r.metrics.detect_rate)},
            {"cons_fraction", opt_num(r.metrics.cons_fraction)},
            {"prompt_alignment", r.metrics.prompt_alignment},
            {"radius_multiplier", kDetectRadiusMultiplier}}},
          {"samples", samples}};
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

// index, x0..x{d-1}, nearest, in_protected_radius
inline std::string samples_csv(const RunReport& r) {
  std::ostringstream out;
  const std::size_t d = r.samples.empty() ? 0 : r.samples.front().size();
  out << "index";
  for (std::size_t i = 0; i < d; ++i) out << ",x" << i;
  out << ",nearest,in_protected_radius\n";
  for (std::size_t s = 0; s < r.samples.size(); ++s) {
    out << s;
    for (double v : r.samples[s]) out << ',' << format_double(v);
    out << ',' << csv_field(r.nearest[s]) << ',' << (r.in_protected_radius[s] ? 1 : 0) << '\n';
  }
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string(), "out");
  out << text;
}

inline void write_run_outputs(const RunReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", to_json(r).dump(2) + "\n");
  write_text(dir / "samples.csv", samples_csv(r));
}

struct SweepCell {
  double alpha = 0.0;
  double eta = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::size_t num_samples = 0;
  RunMetrics metrics;
};

inline std::uint64_t cell_seed(std::uint64_t base, double alpha, double eta) {
  const auto a = std::bit_cast<std::uint64_t>(alpha);
  const auto e = std::bit_cast<std::uint64_t>(eta);
  return base ^ detail::splitmix64(a ^ detail::splitmix64(e));
}

// One generation per (eta, alpha) cell, eta-major. The prompt is detected
// and rewritten once; a cell that fails is recorded and the sweep goes on.
inline std::vector<SweepCell> sweep(const Environment& env, const RunConfig& config, const std::vector<double>& alphas,
                                    const std::vector<double>& etas, Services services = {}) {
  if (alphas.empty() || etas.empty()) throw ConfigError("sweep: alpha and eta lists must be non-empty", "sweep");
  const PreparedPrompt prepared = prepare(env, config.prompt, services);
  std::vector<SweepCell> cells;
  for (double eta : etas) {
    for (double alpha : alphas) {
      SweepCell cell;
      cell.alpha = alpha;
      cell.eta = eta;
      cell.seed = cell_seed(config.seed, alpha, eta);
      cell.num_samples = config.num_samples;
      RunConfig c = config;
      c.alpha = alpha;
      c.eta = eta;
      c.seed = cell.seed;
      try {
        cell.metrics = generate(env, prepared, c).metrics;
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

inline std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream out;
  out << "alpha,eta,seed,status,num_samples,detect_count,detect_rate,cons_fraction,prompt_alignment,error\n";
  auto opt = [](const auto& v) { return v ? format_double(static_cast<double>(*v)) : std::string(); };
  for (const auto& c : cells) {
    out << format_double(c.alpha) << ',' << format_double(c.eta) << ',' << c.seed << ',' << (c.ok ? "ok" : "error")
        << ',' << c.num_samples << ',';
    if (c.ok) {
      out << (c.metrics.detect_count ? std::to_string(*c.metrics.detect_count) : "") << ','
          << opt(c.metrics.detect_rate) << ',' << opt(c.metrics.cons_fraction) << ','
          << format_double(c.metrics.prompt_alignment) << ',';
    } else {
      out << ",,,,";
    }
    out << csv_field(c.error) << '\n';
  }
  return out.str();
}

// Detect rate against alpha, one polyline per eta. Plot area is
// [60, 580] x [40, 340] inside a 640x400 canvas; each series is a
// <polyline class="series" data-eta="..."> with one <circle> per cell.
inline std::string sweep_svg(const std::vector<SweepCell>& cells) {
  constexpr double left = 60, right = 580, top = 40, bottom = 340;
  double amin = 0.0, amax = 1.0;
  for (const auto& c : cells) {
    amin = std::min(amin, c.alpha);
    amax = std::max(amax, c.alpha);
  }
  auto px = [&](double a) { return left + (a - amin) / (amax - amin) * (right - left); };
  auto py = [&](double r) { return bottom - r * (bottom - top); };
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::vector<double> etas;
  for (const auto& c : cells) {
    if (std::find(etas.begin(), etas.end(), c.eta) == etas.end()) etas.push_back(c.eta);
  }

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  s << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s << "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
       "detect rate vs mixing weight</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\"" << bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double r = i / 5.0;
    const double a = amin + (amax - amin) * r;
    s << "<text x=\"" << px(a) << "\" y=\"" << bottom + 16 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"10\">" << format_double(std::round(a * 100) / 100) << "</text>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << py(r) + 3 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"10\">" << format_double(r) << "</text>\n";
  }
  s << "<text x=\"320\" y=\"380\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">alpha</text>\n";
  s << "<text x=\"16\" y=\"190\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
       "transform=\"rotate(-90 16 190)\">detect rate</text>\n";

  for (std::size_t e = 0; e < etas.size(); ++e) {
    const char* color = palette[e % std::size(palette)];
    std::vector<const SweepCell*> series;
    for (const auto& c : cells) {
      if (c.eta == etas[e] && c.ok && c.metrics.detect_rate) series.push_back(&c);
    }
    std::sort(series.begin(), series.end(), [](auto* a, auto* b) { return a->alpha < b->alpha; });
    s << "<polyline class=\"series\" data-eta=\"" << format_double(etas[e]) << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series.size(); ++i) {
      s << (i ? " " : "") << px(series[i]->alpha) << ',' << py(*series[i]->metrics.detect_rate);
    }
    s << "\"/>\n";
    for (auto* c : series) {
      s << "<circle cx=\"" << px(c->alpha) << "\" cy=\"" << py(*c->metrics.detect_rate) << "\" r=\"3\" fill=\""
        << color << "\"/>\n";
    }
    s << "<text x=\"" << right + 8 << "\" y=\"" << top + 14 * (e + 1) << "\" font-family=\"sans-serif\" "
      << "font-size=\"10\" fill=\"" << color << "\">eta=" << format_double(etas[e]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_sweep_outputs(const std::vector<SweepCell>& cells, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "sweep.csv", sweep_csv(cells));
  write_text(dir / "sweep.svg", sweep_svg(cells));
}

}  // namespace gog
