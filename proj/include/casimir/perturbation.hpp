#pragma once

// Closed-form perturbation solution of the linearized X system:
// zeroth order, the full first order through E-kernels, its secular
// (resonant) part, and the second-order resonant chain.

#include <cmath>
#include <complex>
#include <utility>

#include "casimir/cavity.hpp"
#include "casimir/evolution.hpp"

namespace casimir {

/// |m| at or below this is treated as exact resonance.
inline constexpr double kResonanceTolerance = 1e-9;

inline bool is_resonant(double m) { return std::abs(m) <= kResonanceTolerance; }

/// E^k_m(t) = ω₁t e^{−ikω₁t} for m = 0, else (i/m)(e^{−i(m+k)ω₁t} − e^{−ikω₁t}).
/// The m ≠ 0 branch uses e^{−imθ} − 1 = −2sin²(mθ/2) − i sin(mθ), which stays
/// accurate as m → 0. k may be negative (E^{−k} terms).
inline cplx e_kernel(double m, int k, double t, const CavityParams& p) {
  const double theta = p.omega1() * t;
  const cplx carrier = std::polar(1.0, -k * theta);
  if (is_resonant(m)) return theta * carrier;
  const double half = std::sin(0.5 * m * theta);
  return carrier * cplx{std::sin(m * theta) / m, -2.0 * half * half / m};
}

inline cplx x_zeroth(int n, int k, Sign sigma, double t, const CavityParams& p) {
  p.check_mode(n);
  p.check_mode(k);
  if (n != k || sigma != Sign::minus) return {0.0, 0.0};
  return std::polar(1.0, -p.omega(k) * t);
}

/// Bare first-order coefficient X⁽¹⁾_{n,kσ}(t) (not multiplied by ε).
inline cplx x_first_order(int n, int k, Sign sigma, double t, const CavityParams& p) {
  p.check_mode(n);
  p.check_mode(k);
  const double g = p.gamma();
  const double vm = drive_coefficient(Sign::minus, k, Sign::minus, n, Sign::minus, p);
  const double vp = drive_coefficient(Sign::plus, k, Sign::minus, n, Sign::minus, p);
  if (sigma == Sign::plus)
    return -vm * e_kernel(n + g + k, -k, t, p) - vp * e_kernel(n - g + k, -k, t, p);
  return vm * e_kernel(n + g - k, k, t, p) + vp * e_kernel(n - g - k, k, t, p);
}

/// The part of X⁽¹⁾ that grows linearly in t (terms whose detuning vanishes).
inline cplx x_first_order_secular(int n, int k, Sign sigma, double t, const CavityParams& p) {
  p.check_mode(n);
  p.check_mode(k);
  const double g = p.gamma();
  const double vm = drive_coefficient(Sign::minus, k, Sign::minus, n, Sign::minus, p);
  const double vp = drive_coefficient(Sign::plus, k, Sign::minus, n, Sign::minus, p);
  cplx out{0.0, 0.0};
  if (sigma == Sign::plus) {
    if (is_resonant(n + g + k)) out -= vm * e_kernel(0.0, -k, t, p);
    if (is_resonant(n - g + k)) out -= vp * e_kernel(0.0, -k, t, p);
  } else {
    if (is_resonant(n + g - k)) out += vm * e_kernel(0.0, k, t, p);
    if (is_resonant(n - g - k)) out += vp * e_kernel(0.0, k, t, p);
  }
  return out;
}

/// Q_nk(t) through O(ε): Q⁽⁰⁾ + ε(X⁽¹⁾_{k−} + X⁽¹⁾_{k+})/√(2ω_k).
inline cplx q_first_order(int n, int k, double t, const CavityParams& p) {
  const double norm = 1.0 / std::sqrt(2.0 * p.omega(k));
  const cplx q0 = x_zeroth(n, k, Sign::minus, t, p) * norm;
  if (p.epsilon() == 0.0) return q0;
  return q0 + p.epsilon() * norm *
                  (x_first_order(n, k, Sign::minus, t, p) + x_first_order(n, k, Sign::plus, t, p));
}

/// Q_nk(t) keeping only the resonance terms of the first-order solution.
inline cplx q_resonant(int n, int k, double t, const CavityParams& p) {
  const int g = p.require_integer_gamma();
  p.check_mode(n);
  p.check_mode(k);
  const double w = p.omega(k);
  const double norm = 1.0 / std::sqrt(2.0 * w);
  cplx q = x_zeroth(n, k, Sign::minus, t, p) * norm;
  const double vm = drive_coefficient(Sign::minus, k, Sign::minus, n, Sign::minus, p);
  const double vp = drive_coefficient(Sign::plus, k, Sign::minus, n, Sign::minus, p);
  cplx bracket{0.0, 0.0};
  if (k == g - n) bracket -= vp * std::polar(1.0, w * t);
  if (k == n + g) bracket += vm * std::polar(1.0, -w * t);
  if (k == n - g) bracket += vp * std::polar(1.0, -w * t);
  return q + p.epsilon() * p.omega1() * t * norm * bracket;
}

/// Sum of v-chain products feeding X⁽²⁾_{n,kσ}: over σ₁, s₁, s₂ with
/// −σk + (s₁+s₂)γ − n = 0 and intermediate mode j = σ₁(s₁γ − n) inside 1..K.
inline double second_order_chain_sum(int n, int k, Sign sigma, const CavityParams& p) {
  const int g = p.require_integer_gamma();
  p.check_mode(n);
  p.check_mode(k);
  double sum = 0.0;
  for (Sign s1 : kSigns)
    for (Sign s2 : kSigns) {
      if (-sign_value(sigma) * k + (sign_value(s1) + sign_value(s2)) * g - n != 0) continue;
      for (Sign sigma1 : kSigns) {
        const int j = sign_value(sigma1) * (sign_value(s1) * g - n);
        if (j < 1 || j > p.modes()) continue;
        sum += drive_coefficient(s2, k, sigma, j, sigma1, p) *
               drive_coefficient(s1, j, sigma1, n, Sign::minus, p);
      }
    }
  return sum;
}

/// Resonant second-order coefficient X⁽²⁾_{n,kσ}(t) ≈ ½(ω₁t)² e^{σikω₁t} × chain sum.
inline cplx x_second_order_resonant(int n, int k, Sign sigma, double t, const CavityParams& p) {
  const double chain = second_order_chain_sum(n, k, sigma, p);
  const double theta = p.omega1() * t;
  return 0.5 * theta * theta * chain * std::polar(1.0, sign_value(sigma) * k * theta);
}

/// Truncated perturbation series X⁽⁰⁾ + εX⁽¹⁾ [+ ε²X⁽²⁾_res].
class PerturbativeSolution {
 public:
  PerturbativeSolution(CavityParams p, int order, bool resonant_only = false)
      : p_(std::move(p)), order_(order), resonant_only_(resonant_only) {
    if (order < 0 || order > 2) throw InvalidInput("perturbative order must be 0, 1 or 2");
    if (order == 2 || resonant_only) p_.require_integer_gamma();
  }

  int order() const { return order_; }
  bool resonant_only() const { return resonant_only_; }
  const CavityParams& params() const { return p_; }

  cplx operator()(int n, int k, Sign sigma, double t) const {
    cplx x = x_zeroth(n, k, sigma, t, p_);
    if (order_ >= 1) {
      const cplx x1 = resonant_only_ ? x_first_order_secular(n, k, sigma, t, p_)
                                     : x_first_order(n, k, sigma, t, p_);
      x += p_.epsilon() * x1;
    }
    if (order_ >= 2) x += p_.epsilon() * p_.epsilon() * x_second_order_resonant(n, k, sigma, t, p_);
    return x;
  }

  /// All K×2K amplitudes at time t.
  XState state(double t) const {
    const int K = p_.modes();
    XState s{t, CMatrix(K, 2 * K)};
    for (int n = 1; n <= K; ++n)
      for (int k = 1; k <= K; ++k)
        for (Sign sg : kSigns) s(n, k, sg) = (*this)(n, k, sg, t);
    return s;
  }

 private:
  CavityParams p_;
  int order_;
  bool resonant_only_;
};

/// Bare first-order amplitudes X⁽¹⁾ for every (n, k, σ) at time t.
inline XState x_first_order_state(double t, const CavityParams& p) {
  const int K = p.modes();
  XState s{t, CMatrix(K, 2 * K)};
  for (int n = 1; n <= K; ++n)
    for (int k = 1; k <= K; ++k)
      for (Sign sg : kSigns) s(n, k, sg) = x_first_order(n, k, sg, t, p);
  return s;
}

}  // namespace casimir
