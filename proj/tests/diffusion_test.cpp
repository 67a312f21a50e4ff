#include <gtest/gtest.h>

#include <cstring>

#include "test_support.hpp"

using namespace gog;
using gog::testing::three_component_world;
namespace oracle = gog::testing::oracle;

namespace {

ConceptWorld gaussian_world(std::vector<double> mean, double std) {
  ConceptWorld w;
  w.components.push_back({"only", std::move(mean), std, 1.0, encode("only", EncoderConfig{})});
  w.validate();
  return w;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(NoiseSchedule, DefaultInvariants) {
  const NoiseSchedule s;
  EXPECT_EQ(s.steps(), 200);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  for (int t = 1; t <= s.steps(); ++t) {
    EXPECT_GT(s.beta(t), 0.0);
    EXPECT_LT(s.beta(t), 1.0);
    EXPECT_DOUBLE_EQ(s.alpha(t), 1.0 - s.beta(t));
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
  EXPECT_LT(s.alpha_bar(200), 0.05);
  EXPECT_NEAR(s.beta(1), 5e-4, 1e-15);
  EXPECT_NEAR(s.beta(200), 0.1, 1e-15);
}

TEST(NoiseSchedule, CumulativeProductOracle) {
  const NoiseSchedule s;
  long double prod = 1.0L;
  for (int t = 1; t <= 200; ++t) {
    prod *= 1.0L - (5e-4L + (0.1L - 5e-4L) * (t - 1) / 199.0L);
    EXPECT_NEAR(s.alpha_bar(t), static_cast<double>(prod), 1e-13);
  }
}

TEST(NoiseSchedule, RejectsSchedulesThatDoNotReachNoise) {
  EXPECT_THROW(NoiseSchedule({200, 1e-4, 0.02}), ConfigError);
  EXPECT_THROW(NoiseSchedule({200, 0.0, 0.1}), ConfigError);
  EXPECT_THROW(NoiseSchedule({200, 0.1, 1.0}), ConfigError);
  EXPECT_THROW(NoiseSchedule({0, 0.1, 0.1}), ConfigError);
  EXPECT_NO_THROW(NoiseSchedule(ScheduleConfig::scaled_linear(50)));
  EXPECT_NO_THROW(NoiseSchedule(ScheduleConfig::scaled_linear(1000)));
}

TEST(NoiseSchedule, OutOfRangeTimestep) {
  const NoiseSchedule s;
  EXPECT_THROW(s.beta(0), ContractViolation);
  EXPECT_THROW(s.alpha_bar(201), ContractViolation);
}

TEST(ConceptWorld, Validation) {
  auto w = three_component_world();
  w.components[0].weight = 0.6;
  EXPECT_THROW(w.validate(), ConfigError);
  w = three_component_world();
  w.components[1].label = "pikachu";
  EXPECT_THROW(w.validate(), ConfigError);
  w = three_component_world();
  w.components[2].std = 0.0;
  EXPECT_THROW(w.validate(), ConfigError);
  w = three_component_world();
  w.kappa = 0.0;
  EXPECT_THROW(w.validate(), ConfigError);
  EXPECT_THROW(three_component_world().index_of("nope"), ConfigError);
}

TEST(ConditioningWeights, ZeroEmbeddingGivesPrior) {
  const auto w = three_component_world();
  const auto v = conditioning_weights(w, Embedding::zeros(64));
  EXPECT_EQ(v, (std::vector<double>{0.5, 0.3, 0.2}));
}

TEST(ConditioningWeights, ExactConceptEmbeddingDominates) {
  const auto w = three_component_world();
  for (std::size_t j = 0; j < w.components.size(); ++j) {
    const auto v = conditioning_weights(w, w.components[j].concept_embedding);
    std::vector<double> want(3);
    double sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& c = w.components[k];
      want[k] = c.weight * std::exp(cosine(w.components[j].concept_embedding, c.concept_embedding) / w.kappa);
      sum += want[k];
    }
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(v[k], want[k] / sum, 1e-12);
    EXPECT_GT(v[j], 0.99);
  }
}

TEST(ConditioningWeights, IdenticalEmbeddingsKeepPriorRatio) {
  ConceptWorld w;
  const Embedding e = encode("twin", EncoderConfig{});
  w.components.push_back({"a", {0.0}, 1.0, 0.75, e});
  w.components.push_back({"b", {1.0}, 1.0, 0.25, e});
  w.validate();
  std::mt19937_64 rng(5);
  const auto v = conditioning_weights(w, gog::testing::random_unit(rng, 64));
  EXPECT_NEAR(v[0] / v[1], 3.0, 1e-12);
}

TEST(PredictNoise, SingleStandardGaussianClosedForm) {
  const auto w = gaussian_world({0.0, 0.0}, 1.0);
  const NoiseSchedule s;
  std::mt19937_64 rng(1);
  for (int t : {1, 17, 100, 200}) {
    const auto x = gog::testing::random_vector(rng, 2, 2.0);
    const auto eps = predict_noise(w, s, {x, t}, Embedding::zeros(64));
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(eps[i], x[i] * std::sqrt(1.0 - s.alpha_bar(t)), 1e-14);
  }
}

TEST(PredictNoise, VanishesAtAMode) {
  const auto w = three_component_world();
  const NoiseSchedule s;
  const auto v = conditioning_weights(w, Embedding::zeros(64));
  for (int t : {1, 20, 60}) {
    // Fixed-point iteration x = sum_k g_k(x) sqrt(abar) mu_k / var_k / sum_k g_k(x) / var_k
    // from a point near the first component climbs to that mode.
    const double ab = s.alpha_bar(t);
    std::vector<double> x{3.2, 2.9};
    for (int it = 0; it < 500; ++it) {
      std::vector<double> g(3);
      for (std::size_t k = 0; k < 3; ++k) {
        const auto& c = w.components[k];
        const double var = ab * c.std * c.std + 1 - ab;
        const double sq = std::pow(x[0] - std::sqrt(ab) * c.mean[0], 2) + std::pow(x[1] - std::sqrt(ab) * c.mean[1], 2);
        g[k] = v[k] * std::exp(-0.5 * sq / var) / var / var;
      }
      std::vector<double> next(2, 0.0);
      double den = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < 2; ++i) next[i] += g[k] * std::sqrt(ab) * w.components[k].mean[i];
        den += g[k];
      }
      for (double& xi : next) xi /= den;
      x = next;
    }
    const auto eps = predict_noise(w, s, {x, t}, Embedding::zeros(64));
    EXPECT_LT(std::hypot(eps[0], eps[1]), 1e-6) << "t=" << t;
  }
}

TEST(PredictNoise, MatchesFiniteDifferenceOfLogDensity) {
  const auto w = three_component_world();
  const NoiseSchedule s;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> coord(-5.0, 5.0);
  std::uniform_int_distribution<int> step(1, s.steps());
  const std::vector<Embedding> phis{Embedding::zeros(64), w.components[0].concept_embedding,
                                    w.components[1].concept_embedding, encode("Show me Pikachu", EncoderConfig{}),
                                    mix(w.components[0].concept_embedding, w.components[2].concept_embedding, 0.5)};
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> x{coord(rng), coord(rng)};
    const int t = step(rng);
    const auto& phi = phis[i % phis.size()];
    const auto v = conditioning_weights(w, phi);
    const auto eps = predict_noise(w, s, {x, t}, phi);
    EXPECT_LT(oracle::relative_error(eps, oracle::fd_noise(w, s, x, t, v)), 1e-4) << "t=" << t;
  }
}

TEST(PredictNoise, TweedieMatchesPosteriorMixtureMean) {
  const auto w = three_component_world();
  const NoiseSchedule s;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> coord(-4.0, 4.0);
  std::uniform_int_distribution<int> step(1, s.steps());
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> x{coord(rng), coord(rng)};
    const int t = step(rng);
    const double ab = s.alpha_bar(t);
    const auto v = conditioning_weights(w, Embedding::zeros(64));
    // E[x0 | xt] = sum_k r_k (mu_k + sqrt(ab) sigma_k^2 / var_k (xt - sqrt(ab) mu_k))
    std::vector<long double> logr(3);
    long double top = -1e300L;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& c = w.components[k];
      const double var = ab * c.std * c.std + 1 - ab;
      long double sq = 0;
      for (std::size_t j = 0; j < 2; ++j) sq += std::pow(x[j] - std::sqrt(ab) * c.mean[j], 2);
      logr[k] = std::log(static_cast<long double>(v[k])) - std::log(static_cast<long double>(var)) - 0.5L * sq / var;
      top = std::max(top, logr[k]);
    }
    long double z = 0;
    for (auto& l : logr) z += (l = std::exp(l - top));
    std::vector<double> want(2, 0.0);
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& c = w.components[k];
      const double var = ab * c.std * c.std + 1 - ab;
      for (std::size_t j = 0; j < 2; ++j) {
        want[j] += static_cast<double>(logr[k] / z) *
                   (c.mean[j] + std::sqrt(ab) * c.std * c.std / var * (x[j] - std::sqrt(ab) * c.mean[j]));
      }
    }
    const LatentState st{x, t};
    const auto x0 = predicted_x0(s, st, predict_noise(w, s, st, Embedding::zeros(64)));
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(x0[j], want[j], 1e-9) << "t=" << t;
  }
}

TEST(PredictNoise, FiniteEverywhere) {
  const auto w = three_component_world();
  const NoiseSchedule s;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> angle(0.0, 2 * M_PI);
  for (int t = 1; t <= s.steps(); t += 7) {
    for (double r : {0.0, 10.0, 35.0, 50.0}) {
      const double a = angle(rng);
      const auto eps = predict_noise(w, s, {{r * std::cos(a), r * std::sin(a)}, t}, w.components[2].concept_embedding);
      for (double e : eps) EXPECT_TRUE(std::isfinite(e));
    }
  }
}

TEST(PredictNoise, ContractViolations) {
  const auto w = three_component_world();
  const NoiseSchedule s;
  EXPECT_THROW(predict_noise(w, s, {{0.0, 0.0}, 0}, Embedding::zeros(64)), ContractViolation);
  EXPECT_THROW(predict_noise(w, s, {{NAN, 0.0}, 5}, Embedding::zeros(64)), ContractViolation);
  EXPECT_THROW(predict_noise(w, s, {{0.0}, 5}, Embedding::zeros(64)), ContractViolation);
  EXPECT_THROW(predict_noise(w, s, {{0.0, 0.0}, 5}, encode("x", {.dimension = 8})), ContractViolation);
}

TEST(SchedulerStep, DeterministicWithZeroNoise) {
  const NoiseSchedule s;
  const LatentState st{{1.5, -0.5}, 120};
  const std::vector<double> zero(2, 0.0);
  const auto x0 = predicted_x0(s, st, zero);
  EXPECT_EQ(x0[0], 1.5 / std::sqrt(s.alpha_bar(120)));
  const auto next = scheduler_step(s, st, zero, SamplerMode::deterministic);
  EXPECT_EQ(next.t, 119);
  EXPECT_NEAR(next.x[0], std::sqrt(s.alpha_bar(119)) * 1.5 / std::sqrt(s.alpha_bar(120)), 1e-15);
}

TEST(SchedulerStep, AncestralIsReproducible) {
  const NoiseSchedule s;
  const LatentState st{{0.3, 0.7}, 50};
  const std::vector<double> eps{0.1, -0.2};
  std::mt19937_64 a(77), b(77);
  EXPECT_TRUE(bitwise_equal(scheduler_step(s, st, eps, SamplerMode::ancestral, &a).x,
                            scheduler_step(s, st, eps, SamplerMode::ancestral, &b).x));
}

TEST(SchedulerStep, AncestralFormulaAndFinalStepIsNoiseless) {
  const NoiseSchedule s;
  const std::vector<double> eps{0.1, -0.2};
  const LatentState last{{0.3, 0.7}, 1};
  const auto out = scheduler_step(s, last, eps, SamplerMode::ancestral);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(out.x[i], (last.x[i] - s.beta(1) / std::sqrt(1 - s.alpha_bar(1)) * eps[i]) / std::sqrt(s.alpha(1)),
                1e-15);
  }
  std::mt19937_64 rng(3), probe(3);
  const LatentState mid{{0.3, 0.7}, 10};
  const auto got = scheduler_step(s, mid, eps, SamplerMode::ancestral, &rng);
  std::normal_distribution<double> n;
  for (std::size_t i = 0; i < 2; ++i) {
    const double z = n(probe);
    EXPECT_NEAR(got.x[i],
                (mid.x[i] - s.beta(10) / std::sqrt(1 - s.alpha_bar(10)) * eps[i]) / std::sqrt(s.alpha(10)) +
                    std::sqrt(s.beta(10)) * z,
                1e-15);
  }
}

TEST(SchedulerStep, ContractViolations) {
  const NoiseSchedule s;
  EXPECT_THROW(scheduler_step(s, {{0.0}, 0}, std::vector<double>{0.0}, SamplerMode::deterministic), ContractViolation);
  EXPECT_THROW(scheduler_step(s, {{0.0}, 5}, std::vector<double>{0.0, 1.0}, SamplerMode::deterministic),
               ContractViolation);
  EXPECT_THROW(scheduler_step(s, {{0.0}, 5}, std::vector<double>{0.0}, SamplerMode::ancestral), ContractViolation);
}

TEST(Sample, DdimTrajectoryMatchesStraightLineOracle) {
  const auto w = gaussian_world({0.0, 0.0}, 1.0);
  const NoiseSchedule s;
  const std::uint64_t seed = 4242;
  const auto got = sample(w, s, {Embedding::zeros(64), Embedding::zeros(64), 1.0, SamplerMode::deterministic}, seed);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<double> x{n(rng), n(rng)};
  for (int t = s.steps(); t >= 1; --t) {
    const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1);
    for (double& xi : x) {
      const double eps = xi * std::sqrt(1 - ab);  // standard Gaussian world
      const double x0 = (xi - std::sqrt(1 - ab) * eps) / std::sqrt(ab);
      xi = std::sqrt(ab_prev) * x0 + std::sqrt(1 - ab_prev) * eps;
    }
  }
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(got[i], x[i], 1e-9);
}

TEST(Sample, EtaOneUsesConditionalNoiseEveryStep) {
  const auto w = three_component_world();
  const NoiseSchedule s;
  int steps = 0;
  sample(w, s, {w.components[0].concept_embedding, Embedding::zeros(64), 1.0, SamplerMode::ancestral}, 3,
         [&](const LatentState&, std::span<const double>, std::span<const double> c, std::span<const double> e) {
           ++steps;
           EXPECT_TRUE(std::equal(c.begin(), c.end(), e.begin(), e.end()));
         });
  EXPECT_EQ(steps, s.steps());
}

TEST(Sample, EtaZeroEqualsUnconditionalSampling) {
  const auto w = three_component_world();
  const NoiseSchedule s;
  for (auto mode : {SamplerMode::ancestral, SamplerMode::deterministic}) {
    const auto guided = sample(w, s, {w.components[0].concept_embedding, Embedding::zeros(64), 0.0, mode}, 11);
    const auto uncond = sample(w, s, {Embedding::zeros(64), Embedding::zeros(64), 1.0, mode}, 11);
    EXPECT_TRUE(bitwise_equal(guided, uncond));
  }
}

TEST(Sample, SeededDeterminism) {
  const auto w = three_component_world();
  const NoiseSchedule s;
  for (auto mode : {SamplerMode::ancestral, SamplerMode::deterministic}) {
    const SampleRequest req{w.components[1].concept_embedding, Embedding::zeros(64), 3.0, mode};
    EXPECT_TRUE(bitwise_equal(sample(w, s, req, 99), sample(w, s, req, 99)));
  }
  const SampleRequest req{w.components[1].concept_embedding, Embedding::zeros(64), 3.0, SamplerMode::ancestral};
  EXPECT_FALSE(bitwise_equal(sample(w, s, req, 99), sample(w, s, req, 100)));
}

TEST(Sample, NegativeEtaRejected) {
  const auto w = three_component_world();
  EXPECT_THROW(sample(w, NoiseSchedule{}, {Embedding::zeros(64), Embedding::zeros(64), -1.0}, 1), ContractViolation);
}

TEST(SampleMany, IndependentOfThreadCount) {
  const auto w = three_component_world();
  const NoiseSchedule s;
  const SampleRequest req{w.components[0].concept_embedding, Embedding::zeros(64), 3.0, SamplerMode::ancestral};
  const auto one = sample_many(w, s, req, 37, 5, 1);
  const auto many = sample_many(w, s, req, 37, 5, 6);
  ASSERT_EQ(one.size(), 37u);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(one[i], many[i]));
    EXPECT_TRUE(bitwise_equal(one[i], sample(w, s, req, derive_seed(5, i))));
  }
}

TEST(Sample, MonteCarloSingleComponent) {
  const auto w = gaussian_world({3.0, 0.0}, 0.5);
  const NoiseSchedule s;
  const auto xs =
      sample_many(w, s, {Embedding::zeros(64), Embedding::zeros(64), 1.0, SamplerMode::ancestral}, 5000, 123);
  for (std::size_t j = 0; j < 2; ++j) {
    double m = 0.0, m2 = 0.0;
    for (const auto& x : xs) {
      m += x[j];
      m2 += x[j] * x[j];
    }
    m /= xs.size();
    const double sd = std::sqrt(m2 / xs.size() - m * m);
    EXPECT_NEAR(m, w.components[0].mean[j], 0.05) << "axis " << j;
    EXPECT_NEAR(sd, 0.5, 0.05) << "axis " << j;
  }
}

TEST(SamplerMode, Parsing) {
  EXPECT_EQ(parse_sampler_mode("ddpm"), SamplerMode::ancestral);
  EXPECT_EQ(parse_sampler_mode("ancestral"), SamplerMode::ancestral);
  EXPECT_EQ(parse_sampler_mode("ddim"), SamplerMode::deterministic);
  EXPECT_EQ(to_string(SamplerMode::deterministic), "deterministic");
  EXPECT_THROW(parse_sampler_mode("euler"), ConfigError);
}

TEST(WorldFile, SampleWorldLoads) {
  const auto lw = load_world(gog::testing::data_path("world.json"));
  EXPECT_EQ(lw.world.components.size(), 2u);
  EXPECT_EQ(lw.world.dimension(), 2u);
  EXPECT_EQ(lw.schedule.steps, 200);
  EXPECT_TRUE(lw.world.components[0].concept_embedding == encode("Pikachu", lw.encoder));
}

TEST(WorldFile, Rejections) {
  const std::string comp = R"({"label": "a", "mean": [0, 0], "std": 1, "weight": 1})";
  EXPECT_NO_THROW(parse_world(R"({"components": [)" + comp + "]}"));
  EXPECT_THROW(parse_world(R"({"components": [)" + comp + "], \"extra\": 1}"), ConfigError);
  EXPECT_THROW(parse_world(R"({"components": [{"label": "a", "mean": [0], "std": 1, "weight": 0.5}]})"), ConfigError);
  EXPECT_THROW(parse_world(R"({"components": [{"label": "a", "mean": [0], "std": -1, "weight": 1}]})"), ConfigError);
  EXPECT_THROW(parse_world(R"({"schedule": {"steps": 200, "beta_end": 0.02, "beta_start": 0.0001}, "components": [)" +
                           comp + "]}"),
               ConfigError);
  EXPECT_THROW(parse_world(R"({"encoder": {"dimension": 1}, "components": [)" + comp + "]}"), ConfigError);
  EXPECT_THROW(parse_world("nope"), ConfigError);
  EXPECT_THROW(load_world("/nonexistent.json"), ConfigError);
}
