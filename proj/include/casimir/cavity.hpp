#pragma once

// Cavity geometry, wall trajectory, instantaneous sine basis, inter-mode
// couplings g_kj and the drive coefficients v^s_{kσ,jσ'} of the first-order
// mode equations. Units: c = ħ = 1.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "casimir/errors.hpp"

namespace casimir {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using RMatrix = Eigen::MatrixXd;

inline constexpr double pi = std::numbers::pi;

/// Branch label for the σ and s indices. Stored as 0 for − and 1 for +;
/// all formulas use sign_value() = ∓1.
enum class Sign : int { minus = 0, plus = 1 };

constexpr int sign_value(Sign s) { return s == Sign::plus ? 1 : -1; }
constexpr int sign_slot(Sign s) { return static_cast<int>(s); }
constexpr Sign flip(Sign s) { return s == Sign::plus ? Sign::minus : Sign::plus; }
constexpr char sign_char(Sign s) { return s == Sign::plus ? '+' : '-'; }

inline constexpr Sign kSigns[] = {Sign::minus, Sign::plus};

/// Truncation used when none is given: first-order resonance couples modes
/// within ±γ, second-order chains within ±2γ.
inline int default_modes(double gamma) {
  return std::max(16, static_cast<int>(std::ceil(4.0 * gamma)));
}

/// εω₁T above which first-order results are flagged as untrustworthy.
inline constexpr double kPerturbativeLimit = 0.2;

/// Physical and truncation parameters of one run. Immutable; derived
/// frequencies are computed on access.
class CavityParams {
 public:
  CavityParams(double L0, double epsilon, double gamma, double duration, int modes)
      : L0_(L0), epsilon_(epsilon), gamma_(gamma), T_(duration), K_(modes) {
    if (!(std::isfinite(L0) && L0 > 0.0)) throw InvalidInput("L0 must be positive");
    if (!(std::isfinite(epsilon) && epsilon >= 0.0 && epsilon < 1.0))
      throw InvalidInput("epsilon must satisfy 0 <= epsilon < 1");
    if (!(std::isfinite(gamma) && gamma > 0.0)) throw InvalidInput("gamma must be positive");
    if (!(std::isfinite(duration) && duration >= 0.0)) throw InvalidInput("T must be >= 0");
    if (modes < 1) throw InvalidInput("mode truncation K must be >= 1");
  }

  /// T = periods · 2π/Ω, which always returns the wall to L0 at t = T.
  /// modes <= 0 selects default_modes(gamma).
  static CavityParams from_periods(double L0, double epsilon, double gamma, int periods,
                                   int modes = 0) {
    if (periods < 0) throw InvalidInput("period count M must be >= 0");
    const double omega = gamma * pi / L0;
    return {L0, epsilon, gamma, periods * 2.0 * pi / omega,
            modes > 0 ? modes : default_modes(gamma)};
  }

  double L0() const { return L0_; }
  double epsilon() const { return epsilon_; }
  double gamma() const { return gamma_; }
  double T() const { return T_; }
  int modes() const { return K_; }

  double omega1() const { return pi / L0_; }
  double drive_frequency() const { return gamma_ * omega1(); }
  double drive_period() const { return 2.0 * pi / drive_frequency(); }

  /// Static mode frequency ω_k = kω₁.
  double omega(int k) const {
    check_mode(k);
    return k * omega1();
  }

  /// εω₁T, the expansion parameter of the short-time results.
  double drive_strength() const { return epsilon_ * omega1() * T_; }
  bool perturbative_warning() const { return drive_strength() > kPerturbativeLimit; }

  /// γ as an integer when it is one (to 1e-12), else nullopt.
  std::optional<int> integer_gamma() const {
    const double r = std::round(gamma_);
    if (std::abs(gamma_ - r) <= 1e-12) return static_cast<int>(r);
    return std::nullopt;
  }
  int require_integer_gamma() const {
    if (auto g = integer_gamma()) return *g;
    throw ResonanceUndefinedError();
  }

  void check_mode(int k) const {
    if (k < 1 || k > K_)
      throw IndexRangeError("mode index " + std::to_string(k) + " outside 1.." +
                            std::to_string(K_));
  }

  CavityParams with_epsilon(double e) const { return {L0_, e, gamma_, T_, K_}; }
  CavityParams with_duration(double t) const { return {L0_, epsilon_, gamma_, t, K_}; }
  CavityParams with_modes(int k) const { return {L0_, epsilon_, gamma_, T_, k}; }

 private:
  double L0_;
  double epsilon_;
  double gamma_;
  double T_;
  int K_;
};

// ---------------------------------------------------------------------------
// Wall law L(t) = L0 (1 + ε sin Ωt) and its logarithmic derivatives.

inline double wall_position(double t, const CavityParams& p) {
  return p.L0() * (1.0 + p.epsilon() * std::sin(p.drive_frequency() * t));
}

/// λ = L̇/L.
inline double wall_log_derivative(double t, const CavityParams& p) {
  const double w = p.drive_frequency();
  const double e = p.epsilon();
  return e * w * std::cos(w * t) / (1.0 + e * std::sin(w * t));
}

/// λ̇ = L̈/L − λ².
inline double wall_log_derivative_rate(double t, const CavityParams& p) {
  const double w = p.drive_frequency();
  const double e = p.epsilon();
  const double s = std::sin(w * t);
  const double c = std::cos(w * t);
  const double d = 1.0 + e * s;
  return -(e * w * w * s * d + e * e * w * w * c * c) / (d * d);
}

/// L̈/L.
inline double wall_accel_ratio(double t, const CavityParams& p) {
  const double w = p.drive_frequency();
  const double e = p.epsilon();
  const double s = std::sin(w * t);
  return -e * w * w * s / (1.0 + e * s);
}

/// Instantaneous frequency ω_k(t) = kπ/L(t).
inline double mode_frequency(int k, double t, const CavityParams& p) {
  p.check_mode(k);
  return k * pi / wall_position(t, p);
}

// ---------------------------------------------------------------------------
// Couplings.

/// g_kj = (−1)^(k−j) 2kj/(j² − k²), zero on the diagonal.
inline double coupling_g(int k, int j) {
  if (k < 1 || j < 1) throw IndexRangeError("coupling indices must be >= 1");
  if (k == j) return 0.0;
  const double sign = ((k - j) % 2 == 0) ? 1.0 : -1.0;
  return sign * 2.0 * k * j / (static_cast<double>(j) * j - static_cast<double>(k) * k);
}

/// Dense K×K table of g_kj, 1-based accessors.
class CouplingMatrix {
 public:
  explicit CouplingMatrix(int modes) : g_(modes, modes) {
    if (modes < 1) throw InvalidInput("CouplingMatrix needs K >= 1");
    for (int k = 1; k <= modes; ++k)
      for (int j = 1; j <= modes; ++j) g_(k - 1, j - 1) = coupling_g(k, j);
  }

  int size() const { return static_cast<int>(g_.rows()); }
  double operator()(int k, int j) const {
    if (k < 1 || j < 1 || k > size() || j > size())
      throw IndexRangeError("coupling index outside truncation");
    return g_(k - 1, j - 1);
  }
  const RMatrix& matrix() const { return g_; }

 private:
  RMatrix g_;
};

/// v^s_{kσ,jσ'} = σγ g_kj √(j/k) (σ'/2 + sγ/(4j)) − sσ (k/2) δ_kj.
inline double drive_coefficient(Sign s, int k, Sign sigma, int j, Sign sigma_p,
                                const CavityParams& p) {
  p.check_mode(k);
  p.check_mode(j);
  const double sv = sign_value(s);
  const double sg = sign_value(sigma);
  const double sgp = sign_value(sigma_p);
  const double gamma = p.gamma();
  double v = sg * gamma * coupling_g(k, j) * std::sqrt(static_cast<double>(j) / k) *
             (0.5 * sgp + sv * gamma / (4.0 * j));
  if (k == j) v -= sv * sg * 0.5 * k;
  return v;
}

// ---------------------------------------------------------------------------
// Instantaneous basis and mode functions.

/// φ_k(x, L) = √(2/L) sin(kπx/L).
inline double instantaneous_basis(int k, double x, double L) {
  if (!(L > 0.0)) throw DomainError("basis length must be positive");
  if (x < 0.0 || x > L) throw DomainError("position outside [0, L]");
  if (k < 1) throw IndexRangeError("basis index must be >= 1");
  if (x == L) return 0.0;
  return std::sqrt(2.0 / L) * std::sin(k * pi * x / L);
}

/// ψ_n(x, t) = Σ_k Q_nk φ_k(x, L(t)) for row n of the amplitude matrix Q.
inline cplx mode_function_eval(int n, double x, double t, const CMatrix& Q,
                               const CavityParams& p) {
  p.check_mode(n);
  if (Q.rows() != p.modes() || Q.cols() != p.modes())
    throw InvalidInput("amplitude matrix must be K x K");
  const double L = wall_position(t, p);
  if (x < 0.0 || x > L) throw DomainError("position outside [0, L(t)]");
  cplx psi{0.0, 0.0};
  for (int k = 1; k <= p.modes(); ++k) psi += Q(n - 1, k - 1) * instantaneous_basis(k, x, L);
  return psi;
}

}  // namespace casimir
