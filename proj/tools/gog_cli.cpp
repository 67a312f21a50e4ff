// gog: guarded generation on the analytic concept world.
//
//   gog run   --policy P --world W --prompt "..." [--alpha A --eta E ...]
//   gog sweep --policy P --world W --prompt "..." --alphas 0,0.5,1 --etas 1,3
//
// Exit codes: 0 success, 2 configuration error, 3 sanitization failure,
// 4 transport failure.

#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gog/gog.hpp"
#include "gog/http_transport.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSanitization = 3;
constexpr int kExitTransport = 4;

struct Options {
  gog::RunConfig run;
  std::string mode = "ancestral";
  std::string protected_label;
  std::string intended_label;
  std::string llm_url;
  std::vector<double> alphas;
  std::vector<double> etas;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--policy", o.run.policy_path, "Policy JSON file")->required();
  cmd->add_option("--world", o.run.world_path, "Concept world JSON file")->required();
  cmd->add_option("--prompt", o.run.prompt, "User prompt")->required();
  cmd->add_option("--mode", o.mode, "Sampler: ancestral (DDPM) or deterministic (DDIM)")
      ->check(CLI::IsMember({"ancestral", "deterministic", "ddpm", "ddim"}));
  cmd->add_option("--samples", o.run.num_samples, "Samples per run or sweep cell")->capture_default_str();
  cmd->add_option("--seed", o.run.seed, "Base RNG seed")->capture_default_str();
  cmd->add_option("--out", o.run.out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--llm-url", o.llm_url, "Chat-completion base URL; enables the remote judge and rewriter");
  cmd->add_option("--llm-model", o.run.llm_model, "Model name sent to the endpoint")->capture_default_str();
  cmd->add_option("--protected", o.protected_label, "World label counted by the detect metric");
  cmd->add_option("--intended", o.intended_label, "World label checked by the consistency metric");
  cmd->add_flag("-v,--verbose", o.verbose, "Log (redacted) endpoint traffic to stderr");
}

struct RemoteServices {
  std::shared_ptr<gog::ChatClient> client;
  std::unique_ptr<gog::RemoteJudge> judge;
  std::unique_ptr<gog::RemoteRewriter> rewriter;
  gog::FallbackRewriter fallback;

  gog::Services services() {
    if (!client) return {};
    return {judge.get(), rewriter.get(), &fallback};
  }
};

void connect(RemoteServices& remote, const Options& o, const gog::Policy& policy) {
  if (o.llm_url.empty()) return;
  auto cfg = gog::EndpointConfig::from_environment(o.llm_url, o.run.llm_model);
  gog::RequestLog log;
  if (o.verbose) log = [](const std::string& line) { std::cerr << "[llm] " << line << "\n"; };
  remote.client = std::make_shared<gog::ChatClient>(cfg, std::make_shared<gog::HttplibTransport>(),
                                                    gog::thread_sleeper(), log);
  std::vector<std::string> ids;
  for (const auto& c : policy.concepts) ids.push_back(c.id);
  remote.judge = std::make_unique<gog::RemoteJudge>(remote.client, ids);
  remote.rewriter = std::make_unique<gog::RemoteRewriter>(remote.client);
}

void finalize(Options& o) {
  o.run.mode = gog::parse_sampler_mode(o.mode);
  if (!o.protected_label.empty()) o.run.protected_label = o.protected_label;
  if (!o.intended_label.empty()) o.run.intended_label = o.intended_label;
  if (!o.llm_url.empty()) o.run.llm_url = o.llm_url;
  o.run.validate();
}

void print_warnings(const gog::DetectionReport& report) {
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
}

int run_command(Options& o) {
  finalize(o);
  const gog::Environment env = gog::load_environment(o.run);
  RemoteServices remote;
  connect(remote, o, env.policy);
  const gog::RunReport report = gog::run(env, o.run, remote.services());
  print_warnings(report.prepared.detection);
  gog::write_run_outputs(report, o.run.out_dir);
  std::cout << "flagged=" << (report.prepared.detection.flagged ? 1 : 0) << " sanitized=\""
            << report.prepared.sanitized_prompt << "\"";
  if (report.metrics.detect_rate) std::cout << " detect_rate=" << *report.metrics.detect_rate;
  if (report.metrics.cons_fraction) std::cout << " cons=" << *report.metrics.cons_fraction;
  std::cout << " alignment=" << report.metrics.prompt_alignment << "\n";
  return kExitOk;
}

int sweep_command(Options& o) {
  finalize(o);
  if (!o.run.protected_label) throw gog::ConfigError("sweep needs --protected to compute detect rates", "protected");
  for (double a : o.alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw gog::ConfigError("--alphas values must lie in [0, 1]", "alphas");
  }
  for (double e : o.etas) {
    if (!(e >= 0.0)) throw gog::ConfigError("--etas values must be >= 0", "etas");
  }
  const gog::Environment env = gog::load_environment(o.run);
  RemoteServices remote;
  connect(remote, o, env.policy);
  const auto cells = gog::sweep(env, o.run, o.alphas, o.etas, remote.services());
  gog::write_sweep_outputs(cells, o.run.out_dir);
  std::size_t failed = 0;
  for (const auto& c : cells) {
    if (!c.ok) {
      ++failed;
      std::cerr << "cell alpha=" << c.alpha << " eta=" << c.eta << " failed: " << c.error << "\n";
    }
  }
  std::cout << cells.size() << " cells, " << failed << " failed\n";
  return kExitOk;
}

nlohmann::json failure_payload(const gog::SanitizationFailed& e) {
  nlohmann::json attempts = nlohmann::json::array();
  for (const auto& a : e.attempts()) {
    attempts.push_back({{"candidate", a.candidate},
                        {"from_fallback", a.from_fallback},
                        {"error", a.error},
                        {"detection", gog::to_json(a.report)}});
  }
  return {{"error", "sanitization_failed"}, {"message", e.what()}, {"attempts", attempts}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guarded generation with concept detection, prompt rewriting and mixed-embedding guidance"};
  app.require_subcommand(1);

  Options o;
  auto* run = app.add_subcommand("run", "Run one guarded generation and write report.json and samples.csv");
  add_common(run, o);
  run->add_option("--alpha", o.run.alpha, "Mixing weight between original and sanitized prompt")->capture_default_str();
  run->add_option("--eta", o.run.eta, "Guidance scale")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "Grid over alpha x eta; writes sweep.csv and sweep.svg");
  add_common(sweep, o);
  sweep->add_option("--alphas", o.alphas, "Comma-separated mixing weights")->delimiter(',')->required();
  sweep->add_option("--etas", o.etas, "Comma-separated guidance scales")->delimiter(',')->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return run_command(o);
    return sweep_command(o);
  } catch (const gog::SanitizationFailed& e) {
    std::cerr << failure_payload(e).dump(2) << "\n";
    return kExitSanitization;
  } catch (const gog::TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return kExitTransport;
  } catch (const gog::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const gog::ContractViolation& e) {
    std::cerr << "invalid arguments: " << e.what() << "\n";
    return kExitConfig;
  } catch (const gog::ParseError& e) {
    std::cerr << "endpoint reply error: " << e.what() << "\n";
    return kExitTransport;
  }
}
