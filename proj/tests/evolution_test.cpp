#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "casimir/evolution.hpp"

using namespace casimir;

namespace {

CMatrix random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> d(0.0, 1.0);
  CMatrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = {d(rng), d(rng)};
  return m;
}

double max_abs(const CMatrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(VariableMaps, VacuumAndZero) {
  const CavityParams p(1.0, 1e-3, 2.0, 1.0, 6);
  const auto x = x_from_qp(vacuum_state(p), p);
  EXPECT_LT(max_abs(x.X - vacuum_x_state(p).X), 1e-15);

  const QPState zero{0.0, CMatrix::Zero(6, 6), CMatrix::Zero(6, 6)};
  EXPECT_EQ(max_abs(x_from_qp(zero, p).X), 0.0);
  EXPECT_EQ(max_abs(qp_from_x(XState{0.0, CMatrix::Zero(6, 12)}, p).Q), 0.0);

  const auto back = qp_from_x(vacuum_x_state(p), p);
  const auto vac = vacuum_state(p);
  EXPECT_LT(max_abs(back.Q - vac.Q), 1e-15);
  EXPECT_LT(max_abs(back.P - vac.P), 1e-15);
}

TEST(VariableMaps, RoundTripIsIdentity) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int K = 1 + trial % 9;
    const CavityParams p(0.5 + trial * 0.1, 1e-3, 2.0, 1.0, K);
    const QPState s{0.2, random_matrix(rng, K, K), random_matrix(rng, K, K) * (10.0 * trial + 1)};
    const auto r = qp_from_x(x_from_qp(s, p), p);
    EXPECT_LE(max_abs(r.Q - s.Q), 1e-12 * max_abs(s.Q));
    EXPECT_LE(max_abs(r.P - s.P), 1e-12 * max_abs(s.P));
    EXPECT_EQ(r.t, s.t);
  }
}

TEST(VariableMaps, DimensionMismatch) {
  const CavityParams p(1.0, 0.0, 2.0, 1.0, 4);
  const QPState bad{0.0, CMatrix::Zero(3, 3), CMatrix::Zero(3, 3)};
  EXPECT_THROW(x_from_qp(bad, p), InvalidInput);
  EXPECT_THROW(qp_from_x(XState{0.0, CMatrix::Zero(4, 4)}, p), InvalidInput);
}

TEST(VacuumState, CanonicalStartShiftsVelocity) {
  const auto p = CavityParams::from_periods(1.0, 1e-3, 2.0, 1, 5);
  const auto kin = vacuum_state(p, StartMatching::kinematic);
  const auto can = vacuum_state(p, StartMatching::canonical);
  EXPECT_EQ(max_abs(kin.Q - can.Q), 0.0);
  // Q̇ − λgQ reproduces the kinematic vacuum velocity.
  const CouplingMatrix g(5);
  const CMatrix pi_can = can.P - wall_log_derivative(0.0, p) * can.Q * g.matrix().transpose();
  EXPECT_LT(max_abs(pi_can - kin.P), 1e-16);
}

TEST(RhsFull, FreeOscillatorsAtZeroDrive) {
  const CavityParams p(1.0, 0.0, 2.0, 1.0, 5);
  std::mt19937_64 rng(3);
  const QPState s{0.4, random_matrix(rng, 5, 5), random_matrix(rng, 5, 5)};
  const auto d = rhs_full(0.4, s, p);
  EXPECT_EQ(max_abs(d.Q - s.P), 0.0);
  for (int k = 1; k <= 5; ++k) {
    const double w = k * pi;
    EXPECT_LT(max_abs(d.P.col(k - 1) + w * w * s.Q.col(k - 1)), 1e-12 * w * w);
  }
  const QPState zero{0.0, CMatrix::Zero(5, 5), CMatrix::Zero(5, 5)};
  EXPECT_EQ(max_abs(rhs_full(0.1, zero, CavityParams(1.0, 0.2, 3.0, 1.0, 5)).P), 0.0);
}

TEST(RhsFull, MatchesTermByTermEvaluation) {
  // K = 3, t = 0.1, each term of
  //   Q̈_nk = −ω_k(t)²Q_nk + 2λΣ_j g_kj Q̇_nj + λ̇Σ_j g_kj Q_nj + λ²Σ_{j,l} g_jk g_jl Q_nl
  // evaluated with scalar loops and an independently written λ, λ̇.
  const int K = 3;
  const double eps = 0.05, gamma = 2.0, L0 = 1.0, t = 0.1;
  const CavityParams p(L0, eps, gamma, 1.0, K);
  std::mt19937_64 rng(11);
  const QPState s{t, random_matrix(rng, K, K), random_matrix(rng, K, K)};

  const double W = gamma * pi / L0;
  const double L = L0 * (1 + eps * std::sin(W * t));
  const double Ld = L0 * eps * W * std::cos(W * t);
  const double Ldd = -L0 * eps * W * W * std::sin(W * t);
  const double lam = Ld / L;
  const double lam_dot = Ldd / L - (Ld / L) * (Ld / L);
  auto g = [](int k, int j) {
    if (k == j) return 0.0;
    return std::pow(-1.0, k - j) * 2.0 * k * j / double(j * j - k * k);
  };

  const auto d = rhs_full(t, s, p);
  for (int n = 1; n <= K; ++n)
    for (int k = 1; k <= K; ++k) {
      const double wk = k * pi / L;
      cplx expect = -wk * wk * s.Q(n - 1, k - 1);
      for (int j = 1; j <= K; ++j) {
        expect += 2.0 * lam * g(k, j) * s.P(n - 1, j - 1);
        expect += lam_dot * g(k, j) * s.Q(n - 1, j - 1);
        for (int l = 1; l <= K; ++l) expect += lam * lam * g(j, k) * g(j, l) * s.Q(n - 1, l - 1);
      }
      EXPECT_LT(std::abs(d.P(n - 1, k - 1) - expect), 1e-12 * std::max(1.0, std::abs(expect)));
      EXPECT_EQ(d.Q(n - 1, k - 1), s.P(n - 1, k - 1));
    }
}

TEST(RhsLinearized, FreeEvolutionAndZero) {
  const CavityParams p(1.0, 0.0, 2.0, 1.0, 4);
  std::mt19937_64 rng(5);
  const XState s{0.2, random_matrix(rng, 4, 8)};
  const auto d = rhs_linearized(0.2, s, p);
  const cplx I{0.0, 1.0};
  for (int n = 1; n <= 4; ++n)
    for (int k = 1; k <= 4; ++k) {
      EXPECT_LT(std::abs(d(n, k, Sign::minus) + I * (k * pi) * s(n, k, Sign::minus)), 1e-13);
      EXPECT_LT(std::abs(d(n, k, Sign::plus) - I * (k * pi) * s(n, k, Sign::plus)), 1e-13);
    }
  const XState zero{0.0, CMatrix::Zero(4, 8)};
  EXPECT_EQ(max_abs(rhs_linearized(0.3, zero, CavityParams(1.0, 0.1, 2.0, 1.0, 4)).X), 0.0);
}

TEST(RhsLinearized, MatchesSinCosExpansionForTwoModes) {
  // Independent construction from the sin/cos form of the first-order system:
  //   Ẋ_kσ = iσω_k X_kσ − iσω_k ε sinΩt (X_k− + X_k+)
  //          + σ εΩ cosΩt Σ_j g_kj √(ω_j/ω_k) (−X_j− + X_j+)
  //          + σ (i/2) εΩ² sinΩt Σ_j g_kj (X_j− + X_j+)/√(ω_jω_k)
  const int K = 2;
  const double eps = 0.01, gamma = 2.0, t = 0.3;
  const CavityParams p(1.0, eps, gamma, 1.0, K);
  const double W = gamma * pi;
  const double sn = std::sin(W * t), cs = std::cos(W * t);
  const cplx I{0.0, 1.0};
  const double g12 = -4.0 / 3.0, g21 = 4.0 / 3.0;
  auto g = [&](int k, int j) { return k == j ? 0.0 : (k == 1 ? g12 : g21); };

  CMatrix M = CMatrix::Zero(4, 4);
  auto idx = [](int k, int sigma) { return 2 * (k - 1) + (sigma > 0 ? 1 : 0); };
  for (int k = 1; k <= 2; ++k)
    for (int sigma : {-1, 1}) {
      const int r = idx(k, sigma);
      const double wk = k * pi;
      M(r, r) += I * double(sigma) * wk;
      M(r, idx(k, -1)) += -I * double(sigma) * wk * eps * sn;
      M(r, idx(k, 1)) += -I * double(sigma) * wk * eps * sn;
      for (int j = 1; j <= 2; ++j) {
        const double wj = j * pi;
        const double c1 = sigma * eps * W * cs * g(k, j) * std::sqrt(wj / wk);
        M(r, idx(j, -1)) += -c1;
        M(r, idx(j, 1)) += c1;
        const cplx c2 = double(sigma) * 0.5 * I * eps * W * W * sn * g(k, j) / std::sqrt(wj * wk);
        M(r, idx(j, -1)) += c2;
        M(r, idx(j, 1)) += c2;
      }
    }
  const CMatrix V = LinearizedSystem(p).generator(t);
  EXPECT_LT(max_abs(V - M), 1e-12 * max_abs(M));
}

TEST(Integrate, FreeEvolutionIsExact) {
  const auto p = CavityParams::from_periods(1.0, 0.0, 2.0, 4, 8);
  const auto times = uniform_times(p.T(), 8);
  const auto states = integrate_full(p, IntegratorConfig::tight(1e-13, 1e-15), times);
  ASSERT_EQ(states.size(), times.size());
  for (const auto& s : states)
    for (int n = 1; n <= 8; ++n)
      for (int k = 1; k <= 8; ++k) {
        const double w = k * pi;
        const cplx exact = n == k ? std::polar(1.0, -w * s.t) / std::sqrt(2.0 * w) : cplx{};
        EXPECT_LT(std::abs(s.Q(n - 1, k - 1) - exact), 1e-10 / std::sqrt(2.0 * w));
      }
}

TEST(Integrate, WronskianConservedWithoutDrive) {
  const auto p = CavityParams::from_periods(1.0, 0.0, 3.0, 6, 6);
  const auto states = integrate_full(p, IntegratorConfig::tight(), uniform_times(p.T(), 5));
  const auto& s0 = states.front();
  const CMatrix W0 = s0.Q.cwiseProduct(s0.P.conjugate()) - s0.Q.conjugate().cwiseProduct(s0.P);
  for (const auto& s : states) {
    const CMatrix W = s.Q.cwiseProduct(s.P.conjugate()) - s.Q.conjugate().cwiseProduct(s.P);
    EXPECT_LT(max_abs(W - W0), 1e-10);
  }
}

TEST(Integrate, FixedStepIsBitReproducible) {
  const auto p = CavityParams::from_periods(1.0, 1e-3, 2.0, 3, 6);
  const auto times = uniform_times(p.T(), 3);
  const auto a = integrate_full(p, IntegratorConfig{}, times);
  const auto b = integrate_full(p, IntegratorConfig{}, times);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE((a[i].Q.array() == b[i].Q.array()).all());
    EXPECT_TRUE((a[i].P.array() == b[i].P.array()).all());
  }
}

TEST(Integrate, RungeKuttaIsFourthOrder) {
  const auto p = CavityParams::from_periods(1.0, 0.01, 2.0, 2, 4);
  const auto ref = evolve_full(p, IntegratorConfig::tight(1e-13, 1e-15));
  auto error_with = [&](int steps) {
    IntegratorConfig c;
    c.steps_per_period = steps;
    const auto s = evolve_full(p, c);
    return std::max(max_abs(s.Q - ref.Q), max_abs(s.P - ref.P) / (4 * pi));
  };
  const double ratio = error_with(40) / error_with(80);
  EXPECT_GT(ratio, 13.0);
  EXPECT_LT(ratio, 19.0);
}

TEST(Integrate, LinearizedAndFullAgreeToSecondOrder) {
  // Same T for both amplitudes: max |Q_full − Q_lin| scales as ε².
  auto deviation = [](double eps) {
    const auto p = CavityParams::from_periods(1.0, eps, 2.0, 4, 8);
    const auto times = uniform_times(p.T(), 40);
    const auto cfg = IntegratorConfig::tight();
    const auto full = integrate_full(p, cfg, times, StartMatching::kinematic);
    const auto lin = integrate_linearized(p, cfg, times);
    double dev = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i)
      dev = std::max(dev, max_abs(full[i].Q - qp_from_x(lin[i], p).Q));
    return dev;
  };
  const double ratio = deviation(1e-3) / deviation(5e-4);
  EXPECT_GE(ratio, 3.0);
  EXPECT_LE(ratio, 5.0);
}

TEST(Integrate, LinearizedDeviationAtFixedDriveStrength) {
  // Holding ε·ω₁·T fixed, the O(ε²) frequency shift accumulates over a time
  // ~1/ε, so the deviation only halves with ε.
  auto deviation = [](double eps, int M) {
    const auto p = CavityParams::from_periods(1.0, eps, 2.0, M, 8);
    const auto times = uniform_times(p.T(), 10 * M);
    const auto cfg = IntegratorConfig::tight();
    const auto full = integrate_full(p, cfg, times, StartMatching::kinematic);
    const auto lin = integrate_linearized(p, cfg, times);
    double dev = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i)
      dev = std::max(dev, max_abs(full[i].Q - qp_from_x(lin[i], p).Q));
    return dev;
  };
  const double ratio = deviation(1e-3, 16) / deviation(5e-4, 32);
  EXPECT_GT(ratio, 1.8);
  EXPECT_LT(ratio, 2.2);
}

TEST(Integrate, ModeFunctionVanishesAtMovingWall) {
  const auto p = CavityParams::from_periods(1.0, 1e-3, 2.0, 2, 8);
  const std::vector<double> times{0.3, 0.77, 1.25};
  const auto states = integrate_full(p, IntegratorConfig{}, times);
  for (const auto& s : states)
    for (int n = 1; n <= 8; ++n)
      EXPECT_LT(std::abs(mode_function_eval(n, wall_position(s.t, p), s.t, s.Q, p)), 1e-12);
}

TEST(Integrate, RejectsBadSampleTimes) {
  const auto p = CavityParams::from_periods(1.0, 1e-3, 2.0, 2, 4);
  const std::vector<double> unsorted{0.5, 0.2};
  const std::vector<double> outside{0.5, 3.0};
  EXPECT_THROW(integrate_full(p, IntegratorConfig{}, unsorted), InvalidInput);
  EXPECT_THROW(integrate_linearized(p, IntegratorConfig{}, outside), InvalidInput);
  IntegratorConfig bad;
  bad.steps_per_period = 0;
  EXPECT_THROW(evolve_full(p, bad), InvalidInput);
}

TEST(Integrate, StepLimitAndNonFiniteAbort) {
  const auto p = CavityParams::from_periods(1.0, 1e-3, 2.0, 2, 4);
  IntegratorConfig cfg;
  cfg.max_steps = 10;
  EXPECT_THROW(evolve_full(p, cfg), IntegrationError);
  cfg.scheme = Scheme::adaptive;
  EXPECT_THROW(evolve_linearized(p, cfg), IntegrationError);

  auto blow_up = [](double, const Eigen::Ref<const CMatrix>& Y) -> CMatrix {
    return Y * std::numeric_limits<double>::infinity();
  };
  const std::vector<double> times{1.0};
  EXPECT_THROW(detail::propagate(blow_up, CMatrix::Ones(2, 2), times, IntegratorConfig{}, 1.0),
               IntegrationError);
}
