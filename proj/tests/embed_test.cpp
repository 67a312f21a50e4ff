#include <gtest/gtest.h>

#include <cstring>

#include "test_support.hpp"

using namespace gog;
using gog::testing::random_unit;

namespace {

bool bitwise_equal(const Embedding& a, const Embedding& b) {
  if (a.dimension() != b.dimension()) return false;
  return std::memcmp(a.values().data(), b.values().data(), a.dimension() * sizeof(double)) == 0;
}

long double oracle_cosine(const Embedding& a, const Embedding& b) {
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.dimension(); ++i) {
    ab += static_cast<long double>(a[i]) * b[i];
    aa += static_cast<long double>(a[i]) * a[i];
    bb += static_cast<long double>(b[i]) * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

Embedding basis(std::size_t d, std::size_t i) {
  std::vector<double> v(d, 0.0);
  v[i] = 1.0;
  return Embedding(v);
}

}  // namespace

TEST(Encode, EmptyTextIsZeroVector) {
  const EncoderConfig cfg;
  const Embedding e = encode("", cfg);
  EXPECT_EQ(e.dimension(), cfg.dimension);
  EXPECT_TRUE(e.is_zero());
  EXPECT_EQ(e.norm(), 0.0);
  EXPECT_TRUE(encode("   \t\n ", cfg).is_zero());
}

TEST(Encode, Deterministic) {
  const EncoderConfig cfg;
  EXPECT_TRUE(bitwise_equal(encode("Mario", cfg), encode("Mario", cfg)));
}

TEST(Encode, CaseAndWhitespaceFolding) {
  const EncoderConfig cfg;
  EXPECT_TRUE(bitwise_equal(encode("mario", cfg), encode("  MARIO ", cfg)));
  EXPECT_TRUE(bitwise_equal(encode("show me  mario", cfg), encode("Show\tme\nMario", cfg)));
  EXPECT_EQ(normalize_text("  A\t B  c "), "a b c");
}

TEST(Encode, UnitNormForNonEmptyText) {
  const EncoderConfig cfg;
  for (const char* s : {"a", "Mario", "Create a detailed image of Pikachu", "Pokémon", "x y z w"}) {
    EXPECT_NEAR(encode(s, cfg).norm(), 1.0, 1e-9) << s;
  }
}

TEST(Encode, DimensionFollowsConfig) {
  EncoderConfig cfg;
  cfg.dimension = 16;
  EXPECT_EQ(encode("Mario", cfg).dimension(), 16u);
  cfg.dimension = 1;
  EXPECT_THROW(encode("Mario", cfg), ContractViolation);
  cfg.dimension = 16;
  cfg.ngram_size = 0;
  EXPECT_THROW(encode("Mario", cfg), ContractViolation);
}

TEST(Encode, HashSeedChangesTheEmbedding) {
  EncoderConfig a, b;
  b.hash_seed = 12345;
  EXPECT_FALSE(encode("Mario", a) == encode("Mario", b));
}

TEST(Encode, DistinctStringsAreLessSimilar) {
  const EncoderConfig cfg;
  EXPECT_LT(cosine(encode("Mario", cfg), encode("Pikachu", cfg)), 0.75);
}

TEST(Cosine, SelfSimilarityIsOne) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto v = random_unit(rng, 64);
    EXPECT_NEAR(cosine(v, v), 1.0, 1e-12);
  }
}

TEST(Cosine, OrthogonalBasisVectors) {
  EXPECT_EQ(cosine(basis(8, 0), basis(8, 3)), 0.0);
}

TEST(Cosine, MatchesLongDoubleOracle) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_unit(rng, 64);
    const auto b = random_unit(rng, 64);
    EXPECT_NEAR(cosine(a, b), static_cast<double>(oracle_cosine(a, b)), 1e-9);
  }
}

TEST(Cosine, ZeroNormGivesZero) {
  EXPECT_EQ(cosine(Embedding::zeros(4), basis(4, 1)), 0.0);
  EXPECT_EQ(cosine(Embedding::zeros(4), Embedding::zeros(4)), 0.0);
}

TEST(Cosine, DimensionMismatchIsContractViolation) {
  EXPECT_THROW(cosine(basis(4, 0), basis(5, 0)), ContractViolation);
}

TEST(Cosine, StaysWithinUnitInterval) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_unit(rng, 3);
    const auto b = random_unit(rng, 3);
    const double c = cosine(a, b);
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(Mix, EndpointsAreExact) {
  std::mt19937_64 rng(11);
  const auto a = random_unit(rng, 64);
  const auto b = random_unit(rng, 64);
  EXPECT_TRUE(bitwise_equal(mix(a, b, 0.0), a));
  EXPECT_TRUE(bitwise_equal(mix(a, b, 1.0), b));
}

TEST(Mix, MidpointMatchesElementwiseOracle) {
  std::mt19937_64 rng(12);
  const auto a = random_unit(rng, 64);
  const auto b = random_unit(rng, 64);
  const auto m = mix(a, b, 0.5);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(m[i], (a[i] + b[i]) / 2.0, 1e-12);
}

TEST(Mix, NotRenormalized) {
  const auto m = mix(basis(2, 0), basis(2, 1), 0.5);
  EXPECT_NEAR(m.norm(), std::sqrt(0.5), 1e-15);
}

TEST(Mix, AlphaOutOfRangeIsContractViolation) {
  EXPECT_THROW(mix(basis(2, 0), basis(2, 1), -0.1), ContractViolation);
  EXPECT_THROW(mix(basis(2, 0), basis(2, 1), 1.5), ContractViolation);
  EXPECT_THROW(mix(basis(2, 0), basis(3, 1), 0.5), ContractViolation);
}

TEST(MixProperty, SymmetricSumsRecoverOperands) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_unit(rng, 16);
    const auto b = random_unit(rng, 16);
    const double alpha = u(rng);
    const auto x = mix(a, b, alpha);
    const auto y = mix(b, a, alpha);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(x[i] + y[i], a[i] + b[i], 1e-12);
  }
}

TEST(MixProperty, NormBoundedByConvexity) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_unit(rng, 16);
    const auto b = random_unit(rng, 16);
    EXPECT_LE(mix(a, b, u(rng)).norm(), std::max(a.norm(), b.norm()) + 1e-12);
  }
}
