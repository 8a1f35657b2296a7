// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch.hpp>

#include <cmath>

#include "geoattn/embeddings.hpp"
#include "geoattn/rng.hpp"

using namespace geoattn;

TEST_CASE("embed returns the literal 4-vectors", "[embeddings]") {
  auto lin0 = embed(0.0, EmbeddingKind::Lin);
  REQUIRE(lin0 == std::vector<double>{1.0, -1.0, 0.0, 0.0});
  auto trig0 = embed(0.0, EmbeddingKind::Trig);
  REQUIRE(trig0 == std::vector<double>{1.0, -1.0, 0.0, 0.0});
  auto quad = embed(0.4, EmbeddingKind::Quad);
  REQUIRE(quad[0] == Approx(0.92).epsilon(1e-15));
  REQUIRE(quad[1] == Approx(-0.92).epsilon(1e-15));
  REQUIRE(quad[2] == Approx(0.4));
  REQUIRE(quad[3] == Approx(-0.4));
}

TEST_CASE("ln_dot_exact hand values", "[embeddings]") {
  REQUIRE(ln_dot_exact(0.37, 0.37, EmbeddingKind::Trig) == 4.0);
  // lin at (0.1, 0.2): 4 (1 + 0.02) / sqrt(1.01 * 1.04)
  const double want = 4.08 / std::sqrt(1.01 * 1.04);
  REQUIRE(ln_dot_exact(0.1, 0.2, EmbeddingKind::Lin) == Approx(want).epsilon(1e-15));
  REQUIRE(want == Approx(3.98091).margin(5e-6));
}

TEST_CASE("closed forms agree with the numeric LN pipeline to 1e-10", "[embeddings]") {
  for (EmbeddingKind kind : {EmbeddingKind::Trig, EmbeddingKind::Lin, EmbeddingKind::Quad}) {
    double worst = 0.0;
    for (int i = 0; i < 41; ++i)
      for (int j = 0; j < 41; ++j) {
        const double x1 = -0.5 + i * 0.025, x2 = -0.5 + j * 0.025;
        worst = std::max(worst, std::fabs(ln_dot_exact(x1, x2, kind) -
                                          ln_dot_numeric(x1, x2, kind)));
      }
    INFO(embedding_name(kind));
    REQUIRE(worst < 1e-10);
  }
}

TEST_CASE("approx_error vanishes as the range shrinks and orders correctly", "[embeddings]") {
  for (EmbeddingKind kind : {EmbeddingKind::Trig, EmbeddingKind::Lin, EmbeddingKind::Quad})
    REQUIRE(approx_error(kind, 1e-3, 21) < 1e-10);
  for (double r : {0.1, 0.25, 0.5})
    REQUIRE(approx_error(EmbeddingKind::Quad, r, 101) <= approx_error(EmbeddingKind::Lin, r, 101));
  // empirical order of the lin error is >= 3 (log-log slope over a decade)
  const double e_lo = approx_error(EmbeddingKind::Lin, 0.05, 101);
  const double e_hi = approx_error(EmbeddingKind::Lin, 0.5, 101);
  const double slope = std::log(e_hi / e_lo) / std::log(0.5 / 0.05);
  REQUIRE(slope >= 2.5);
}

TEST_CASE("approx_error(lin, 0.1, 101) regression value", "[embeddings]") {
  // The sup sits at the corner x1 = -x2 = r, where the deviation reduces by
  // hand to 8 r^4 / (1 + r^2); frozen numeric value kept alongside.
  const double r = 0.1;
  REQUIRE(approx_error(EmbeddingKind::Lin, r, 101) ==
          Approx(8.0 * r * r * r * r / (1.0 + r * r)).epsilon(1e-12));
  REQUIRE(approx_error(EmbeddingKind::Lin, r, 101) ==
          Approx(7.920792079207928e-4).epsilon(1e-12));
}

TEST_CASE("approx_error validates arguments", "[embeddings]") {
  REQUIRE_THROWS_AS(approx_error(EmbeddingKind::Lin, 0.0, 11), std::invalid_argument);
  REQUIRE_THROWS_AS(approx_error(EmbeddingKind::Lin, 0.1, 1), std::invalid_argument);
}

TEST_CASE("rescale sweep: quartic improvement, limit, numeric agreement", "[embeddings]") {
  // For x_range = 1 the scaled sup error reduces by hand to 8 / (c^2 + 1),
  // so doubling c approaches a 4x reduction from above.
  const auto curve = rescale_sweep(EmbeddingKind::Lin, {1.0, 2.0, 4.0, 8.0, 16.0, 256.0}, 1.0);
  for (std::size_t i = 0; i + 1 < curve.size(); ++i)
    REQUIRE(curve[i + 1].sup_error < curve[i].sup_error);
  // the sup sits at the corner x1 = -x2 = 1; cancellation against values of
  // size 4c^2 limits the achievable agreement at large c
  for (std::size_t i = 0; i < 5; ++i)
    REQUIRE(curve[i].sup_error ==
            Approx(8.0 / (curve[i].c * curve[i].c + 1.0)).epsilon(1e-9));
  REQUIRE(curve[4].sup_error <= 0.25 * curve[3].sup_error * 1.05);  // c: 8 -> 16
  REQUIRE(curve.back().sup_error < 1.3e-4);
  REQUIRE_THROWS_AS(rescale_sweep(EmbeddingKind::Lin, {0.0}, 1.0), std::invalid_argument);

  // the scaled closed form matches the scaled numeric pipeline
  for (double c : {1.0, 4.0}) {
    double worst = 0.0;
    for (int i = 0; i < 21; ++i)
      for (int j = 0; j < 21; ++j) {
        const double x1 = -1.0 + 0.1 * i, x2 = -1.0 + 0.1 * j;
        const double exact = c * c * ln_dot_exact(x1 / c, x2 / c, EmbeddingKind::Lin);
        const double numeric = c * c * ln_dot_numeric(x1 / c, x2 / c, EmbeddingKind::Lin);
        worst = std::max(worst, std::fabs(exact - numeric));
      }
    REQUIRE(worst < 1e-10);
  }
}

TEST_CASE("glu quadratic identities hold to 1e-12 over |x| <= 30", "[embeddings]") {
  REQUIRE(glu_quadratic_identity(0.0, Activation::ReGLU) == 0.0);
  REQUIRE(glu_quadratic_identity(3.0, Activation::ReGLU) == 0.0);
  REQUIRE(glu_quadratic_identity(-7.5, Activation::SwiGLU) < 1e-12);
  for (int i = 0; i <= 120; ++i) {
    const double x = -30.0 + 0.5 * i;
    REQUIRE(glu_quadratic_identity(x, Activation::ReGLU) <= 1e-12 * std::max(1.0, x * x));
    REQUIRE(glu_quadratic_identity(x, Activation::SwiGLU) <= 1e-12 * std::max(1.0, x * x));
  }
  REQUIRE_THROWS_AS(glu_quadratic_identity(1.0, Activation::ReLU), std::invalid_argument);
}

TEST_CASE("n-dimensional embeddings approximate the shared quadratic", "[embeddings]") {
  // 2n+2 layout: LN(E(a)) . LN(E(b)) ~ -(n+1)|a-b|^2 + 2(n+1) for small coords
  for (int n : {2, 3, 4}) {
    for (EmbeddingKind kind : {EmbeddingKind::Lin, EmbeddingKind::Quad}) {
      double worst = 0.0;
      Rng rng(17 + n);
      for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(n), b(n);
        double d2 = 0.0;
        for (int t = 0; t < n; ++t) {
          a[t] = rng.uniform(-0.05, 0.05);
          b[t] = rng.uniform(-0.05, 0.05);
          d2 += (a[t] - b[t]) * (a[t] - b[t]);
        }
        const auto ea = embed_nd(a, kind);
        const auto eb = embed_nd(b, kind);
        const int d = static_cast<int>(ea.size());
        REQUIRE(d == 2 * n + 2);
        Tensor gain({d}, 1.0), bias({d}, 0.0);
        Tensor la = layer_norm(Tensor({d}, ea), gain, bias, 0.0);
        Tensor lb = layer_norm(Tensor({d}, eb), gain, bias, 0.0);
        double dot = 0.0;
        for (int t = 0; t < d; ++t) dot += la[static_cast<std::size_t>(t)] * lb[static_cast<std::size_t>(t)];
        worst = std::max(worst, std::fabs(dot - (-(n + 1.0) * d2 + 2.0 * (n + 1.0))));
      }
      INFO("n=" << n << " kind=" << embedding_name(kind));
      REQUIRE(worst < 1e-3);
    }
  }
  REQUIRE_THROWS_AS(embed_nd({0.1, 0.2}, EmbeddingKind::Trig), std::invalid_argument);
}
