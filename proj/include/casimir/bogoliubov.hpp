#pragma once

// Bogoliubov coefficients at wall-stop time and photon-number spectra.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "casimir/cavity.hpp"
#include "casimir/evolution.hpp"
#include "casimir/perturbation.hpp"

namespace casimir {

enum class Provenance { numeric_full, numeric_linearized, analytic_resonant, analytic_first_order };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::numeric_full: return "numeric-full";
    case Provenance::numeric_linearized: return "numeric-linearized";
    case Provenance::analytic_resonant: return "analytic-resonant";
    case Provenance::analytic_first_order: return "analytic-first-order";
  }
  return "unknown";
}

inline Provenance provenance_from_string(const std::string& s) {
  for (auto p : {Provenance::numeric_full, Provenance::numeric_linearized,
                 Provenance::analytic_resonant, Provenance::analytic_first_order})
    if (to_string(p) == s) return p;
  throw InvalidInput("unknown provenance '" + s + "'");
}

/// Calibrated constant C in the first-order normalization tolerance C·(εω₁T)².
inline constexpr double kFirstOrderDefectScale = 50.0;
inline constexpr double kNumericFullDefectTolerance = 1e-6;

struct BogoliubovPair {
  CMatrix alpha;
  CMatrix beta;
  double T = 0.0;
  Provenance provenance = Provenance::numeric_full;

  int modes() const { return static_cast<int>(alpha.rows()); }
};

/// L(T) must equal L0 for matching onto the static basis.
inline void check_stop_time(double T, const CavityParams& p) {
  const double L = wall_position(T, p);
  if (std::abs(L - p.L0()) > 1e-9 * p.L0()) {
    const double period = p.drive_period();
    const double nearest = std::round(T / period) * period;
    throw MatchingDomainError("wall is not at L0 at T = " + std::to_string(T) +
                              "; nearest valid stop time is T = " + std::to_string(nearest) +
                              " (" + std::to_string(static_cast<long>(std::round(T / period))) +
                              " drive periods)");
  }
}

/// Matches ψ_n and ∂_tψ_n at t = T onto free out-modes of the static cavity:
///   α_nk = (iω_kQ_nk − Q̇_nk + λ_T Σ_l g_kl Q_nl) e^{iω_kT} / (i√(2ω_k))
///   β_nk = (iω_kQ_nk + Q̇_nk − λ_T Σ_l g_kl Q_nl) e^{−iω_kT} / (i√(2ω_k))
inline BogoliubovPair project_bogoliubov(const QPState& s, double lambda_T, const CavityParams& p,
                                         Provenance provenance = Provenance::numeric_full) {
  const int K = p.modes();
  check_square(s.Q, K, "Q");
  check_square(s.P, K, "P");
  check_stop_time(s.t, p);
  const CouplingMatrix g(K);
  const CMatrix momentum = s.P - lambda_T * s.Q * g.matrix().transpose();
  const cplx I{0.0, 1.0};
  BogoliubovPair b{CMatrix(K, K), CMatrix(K, K), s.t, provenance};
  for (int k = 1; k <= K; ++k) {
    const double w = p.omega(k);
    const cplx denom = I * std::sqrt(2.0 * w);
    const auto q = s.Q.col(k - 1);
    const auto pi_k = momentum.col(k - 1);
    b.alpha.col(k - 1) = (I * w * q - pi_k) * (std::polar(1.0, w * s.t) / denom);
    b.beta.col(k - 1) = (I * w * q + pi_k) * (std::polar(1.0, -w * s.t) / denom);
  }
  return b;
}

inline BogoliubovPair project_bogoliubov(const QPState& s, const CavityParams& p,
                                         Provenance provenance = Provenance::numeric_full) {
  return project_bogoliubov(s, wall_log_derivative(s.t, p), p, provenance);
}

/// Pair from an X-variable state (linearized integration or analytic series).
inline BogoliubovPair project_bogoliubov(const XState& s, const CavityParams& p,
                                         Provenance provenance = Provenance::numeric_linearized) {
  return project_bogoliubov(qp_from_x(s, p), p, provenance);
}

/// β_nk = −εω₁T v⁺_{k−,n−} δ_{k,γ−n} e^{−iω_kT}.
inline cplx beta_resonant_analytic(int n, int k, const CavityParams& p) {
  const int g = p.require_integer_gamma();
  p.check_mode(n);
  p.check_mode(k);
  if (k != g - n) return {0.0, 0.0};
  const double v = drive_coefficient(Sign::plus, k, Sign::minus, n, Sign::minus, p);
  return -p.drive_strength() * v * std::polar(1.0, -p.omega(k) * p.T());
}

/// Resonance-only pair at t = T: β from beta_resonant_analytic, α from the
/// secular α-type terms k = n ± γ.
inline BogoliubovPair analytic_resonant_pair(const CavityParams& p) {
  const int g = p.require_integer_gamma();
  const int K = p.modes();
  BogoliubovPair b{CMatrix::Identity(K, K), CMatrix::Zero(K, K), p.T(),
                   Provenance::analytic_resonant};
  const double x = p.drive_strength();
  for (int n = 1; n <= K; ++n)
    for (int k = 1; k <= K; ++k) {
      b.beta(n - 1, k - 1) = beta_resonant_analytic(n, k, p);
      if (k == n + g)
        b.alpha(n - 1, k - 1) += x * drive_coefficient(Sign::minus, k, Sign::minus, n, Sign::minus, p);
      if (k == n - g)
        b.alpha(n - 1, k - 1) += x * drive_coefficient(Sign::plus, k, Sign::minus, n, Sign::minus, p);
    }
  return b;
}

/// Pair from the complete first-order closed form X⁽⁰⁾ + εX⁽¹⁾ at t = T.
inline BogoliubovPair analytic_first_order_pair(const CavityParams& p) {
  return project_bogoliubov(PerturbativeSolution(p, 1).state(p.T()), p,
                            Provenance::analytic_first_order);
}

// ---------------------------------------------------------------------------

struct PhotonSpectrum {
  std::vector<double> N;  // N[k-1]
  Provenance provenance = Provenance::numeric_full;

  int modes() const { return static_cast<int>(N.size()); }
  double total() const {
    double s = 0.0;
    for (double v : N) s += v;
    return s;
  }
  /// N_k, or nullopt beyond the truncation (never reported as zero).
  std::optional<double> at(int k) const {
    if (k < 1) throw IndexRangeError("mode index must be >= 1");
    if (k > modes()) return std::nullopt;
    return N[static_cast<std::size_t>(k - 1)];
  }
};

/// N_k = Σ_n |β_nk|².
inline PhotonSpectrum photon_number(const BogoliubovPair& b) {
  PhotonSpectrum s{std::vector<double>(static_cast<std::size_t>(b.beta.cols())), b.provenance};
  for (Eigen::Index k = 0; k < b.beta.cols(); ++k)
    s.N[static_cast<std::size_t>(k)] = b.beta.col(k).squaredNorm();
  return s;
}

/// N_k = ¼(γ−k)k(εω₁T)² for k < γ, else 0.
inline double photon_number_analytic(int k, const CavityParams& p) {
  const int g = p.require_integer_gamma();
  if (k < 1) throw IndexRangeError("mode index must be >= 1");
  if (k >= g) return 0.0;
  const double x = p.drive_strength();
  return 0.25 * (g - k) * k * x * x;
}

inline PhotonSpectrum analytic_spectrum(const CavityParams& p) {
  PhotonSpectrum s{std::vector<double>(static_cast<std::size_t>(p.modes())),
                   Provenance::analytic_resonant};
  for (int k = 1; k <= p.modes(); ++k) s.N[static_cast<std::size_t>(k - 1)] = photon_number_analytic(k, p);
  return s;
}

/// All modes whose N_k lies within relative tolerance `tie` of the maximum.
/// An all-zero spectrum yields the empty set.
inline std::set<int> peak_mode(const PhotonSpectrum& s, double tie = 0.0) {
  if (s.N.empty()) throw InvalidInput("empty spectrum");
  const double top = *std::max_element(s.N.begin(), s.N.end());
  std::set<int> out;
  if (!(top > 0.0)) return out;
  for (int k = 1; k <= s.modes(); ++k)
    if (s.N[static_cast<std::size_t>(k - 1)] >= top * (1.0 - tie)) out.insert(k);
  return out;
}

/// max over n, m ≤ limit of |Σ_k(α_nk α*_mk − β_nk β*_mk) − δ_nm|; limit 0 means K.
inline double unitarity_defect(const BogoliubovPair& b, int limit = 0) {
  const int K = b.modes();
  const int L = (limit <= 0 || limit > K) ? K : limit;
  const CMatrix a = b.alpha.topRows(L);
  const CMatrix be = b.beta.topRows(L);
  CMatrix D = a * a.adjoint() - be * be.adjoint();
  D -= CMatrix::Identity(L, L);
  return D.cwiseAbs().maxCoeff();
}

/// Accepted normalization defect for a pair of the given provenance.
inline double normalization_tolerance(Provenance prov, const CavityParams& p,
                                      double scale = kFirstOrderDefectScale) {
  if (prov == Provenance::numeric_full) return kNumericFullDefectTolerance;
  const double x = p.epsilon() * std::max(1.0, p.omega1() * p.T());
  return scale * x * x;
}

}  // namespace casimir
