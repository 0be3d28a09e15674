#pragma once

// Time evolution of the truncated mode equations.
//
// Two systems share one stepping core:
//   full        Q̈ + ω_k(t)²Q = 2λ gQ̇ + λ̇ gQ + λ² gᵀg Q   (exact λ, λ̇, ω_k(t))
//   linearized  Ẋ = (V⁽⁰⁾ + εV⁽¹⁾(t)) X                   (first order in ε)
// Row n of every state matrix is the solution that starts in mode n.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/numeric/odeint.hpp>

#include "casimir/cavity.hpp"

namespace casimir {

/// Q_nk and P_nk = Q̇_nk at time t, both K×K.
struct QPState {
  double t = 0.0;
  CMatrix Q;
  CMatrix P;

  int modes() const { return static_cast<int>(Q.rows()); }
};

/// X_{n,kσ} at time t stored as a K×2K matrix; column 2(k−1)+slot(σ), so a
/// row reads (X_{n,1−}, X_{n,1+}, X_{n,2−}, ...).
struct XState {
  double t = 0.0;
  CMatrix X;

  int modes() const { return static_cast<int>(X.rows()); }
  cplx operator()(int n, int k, Sign sigma) const {
    return X(n - 1, 2 * (k - 1) + sign_slot(sigma));
  }
  cplx& operator()(int n, int k, Sign sigma) {
    return X(n - 1, 2 * (k - 1) + sign_slot(sigma));
  }
};

inline int x_column(int k, Sign sigma) { return 2 * (k - 1) + sign_slot(sigma); }

enum class Scheme { rk4, adaptive };

inline std::string to_string(Scheme s) { return s == Scheme::rk4 ? "rk4" : "adaptive"; }
inline Scheme scheme_from_string(const std::string& s) {
  if (s == "rk4") return Scheme::rk4;
  if (s == "adaptive") return Scheme::adaptive;
  throw InvalidInput("unknown scheme '" + s + "' (expected rk4 or adaptive)");
}

struct IntegratorConfig {
  Scheme scheme = Scheme::rk4;
  /// Fixed step = drive period / steps_per_period.
  int steps_per_period = 200;
  double rtol = 1e-10;
  double atol = 1e-12;
  long max_steps = 50'000'000;

  void validate() const {
    if (steps_per_period < 1) throw InvalidInput("steps per period must be >= 1");
    if (!(rtol > 0.0) || !(atol > 0.0)) throw InvalidInput("tolerances must be positive");
    if (max_steps < 1) throw InvalidInput("max steps must be >= 1");
  }

  static IntegratorConfig tight(double rtol = 1e-12, double atol = 1e-14) {
    IntegratorConfig c;
    c.scheme = Scheme::adaptive;
    c.rtol = rtol;
    c.atol = atol;
    return c;
  }
};

/// How the wall's initial velocity jump is matched at t = 0.
///  kinematic: Q̇(0) = −iωQ(0), the vacuum in the static-basis variables
///             (the starting point of the linearized X system).
///  canonical: the canonical momentum Q̇ − λgQ equals −iωQ at t = 0, i.e.
///             the field and its time derivative are continuous when the
///             wall starts moving. Consistent with the λ-correction used
///             when projecting at t = T.
enum class StartMatching { kinematic, canonical };

inline std::string to_string(StartMatching m) {
  return m == StartMatching::kinematic ? "kinematic" : "canonical";
}

// ---------------------------------------------------------------------------
// Variable maps (static frequencies ω_k = kω₁).

inline void check_square(const CMatrix& m, int K, const char* what) {
  if (m.rows() != K || m.cols() != K)
    throw InvalidInput(std::string(what) + " must be K x K");
}

inline XState x_from_qp(const QPState& s, const CavityParams& p) {
  const int K = p.modes();
  check_square(s.Q, K, "Q");
  check_square(s.P, K, "P");
  XState x{s.t, CMatrix(K, 2 * K)};
  const cplx I{0.0, 1.0};
  for (int k = 1; k <= K; ++k) {
    const double w = p.omega(k);
    const double a = std::sqrt(w / 2.0);
    x.X.col(x_column(k, Sign::minus)) = a * (s.Q.col(k - 1) + I * s.P.col(k - 1) / w);
    x.X.col(x_column(k, Sign::plus)) = a * (s.Q.col(k - 1) - I * s.P.col(k - 1) / w);
  }
  return x;
}

inline QPState qp_from_x(const XState& s, const CavityParams& p) {
  const int K = p.modes();
  if (s.X.rows() != K || s.X.cols() != 2 * K) throw InvalidInput("X must be K x 2K");
  QPState q{s.t, CMatrix(K, K), CMatrix(K, K)};
  const cplx I{0.0, 1.0};
  for (int k = 1; k <= K; ++k) {
    const double w = p.omega(k);
    const auto xm = s.X.col(x_column(k, Sign::minus));
    const auto xp = s.X.col(x_column(k, Sign::plus));
    q.Q.col(k - 1) = (xm + xp) / std::sqrt(2.0 * w);
    q.P.col(k - 1) = I * std::sqrt(w / 2.0) * (xp - xm);
  }
  return q;
}

/// Vacuum initial condition Q_nk = δ_nk/√(2ω_k), with Q̇ set by `matching`.
inline QPState vacuum_state(const CavityParams& p,
                            StartMatching matching = StartMatching::kinematic) {
  const int K = p.modes();
  QPState s{0.0, CMatrix::Zero(K, K), CMatrix::Zero(K, K)};
  for (int k = 1; k <= K; ++k) {
    const double w = p.omega(k);
    s.Q(k - 1, k - 1) = 1.0 / std::sqrt(2.0 * w);
    s.P(k - 1, k - 1) = cplx{0.0, -std::sqrt(w / 2.0)};
  }
  if (matching == StartMatching::canonical) {
    const CouplingMatrix g(K);
    s.P += wall_log_derivative(0.0, p) * s.Q * g.matrix().transpose();
  }
  return s;
}

inline XState vacuum_x_state(const CavityParams& p) {
  const int K = p.modes();
  XState x{0.0, CMatrix::Zero(K, 2 * K)};
  for (int k = 1; k <= K; ++k) x(k, k, Sign::minus) = 1.0;
  return x;
}

// ---------------------------------------------------------------------------
// Right-hand sides.

/// Exact truncated second-order system written as a first-order system in
/// Y = [Q | P] (K×2K).
class FullSystem {
 public:
  explicit FullSystem(const CavityParams& p) : p_(p) {
    const CouplingMatrix g(p.modes());
    gt_ = g.matrix().transpose().cast<cplx>();
    gtg_ = (g.matrix().transpose() * g.matrix()).cast<cplx>();
  }

  CMatrix operator()(double t, const Eigen::Ref<const CMatrix>& Y) const {
    const int K = p_.modes();
    const auto Q = Y.leftCols(K);
    const auto P = Y.rightCols(K);
    const double lam = wall_log_derivative(t, p_);
    const double lam_dot = wall_log_derivative_rate(t, p_);
    const double L = wall_position(t, p_);

    CMatrix dY(K, 2 * K);
    dY.leftCols(K) = P;
    auto dP = dY.rightCols(K);
    dP.noalias() = (2.0 * lam * P + lam_dot * Q) * gt_;
    if (lam != 0.0) dP.noalias() += (lam * lam) * Q * gtg_;
    for (int k = 1; k <= K; ++k) {
      const double w = k * pi / L;
      dP.col(k - 1) -= (w * w) * Q.col(k - 1);
    }
    return dY;
  }

  static CMatrix pack(const QPState& s) {
    CMatrix Y(s.Q.rows(), 2 * s.Q.cols());
    Y << s.Q, s.P;
    return Y;
  }
  static QPState unpack(double t, const CMatrix& Y) {
    const auto K = Y.rows();
    return {t, Y.leftCols(K), Y.rightCols(K)};
  }

 private:
  CavityParams p_;
  CMatrix gt_;
  CMatrix gtg_;
};

inline QPState rhs_full(double t, const QPState& s, const CavityParams& p) {
  check_square(s.Q, p.modes(), "Q");
  check_square(s.P, p.modes(), "P");
  return FullSystem::unpack(t, FullSystem(p)(t, FullSystem::pack(s)));
}

/// First-order system Ẋ = (V⁽⁰⁾ + εV⁽¹⁾(t))X with
///   V⁽⁰⁾_{kσ,jσ'} = iσω_k δ_kj δ_σσ',  V⁽¹⁾ = Σ_s ω₁ v^s e^{siγω₁t}.
class LinearizedSystem {
 public:
  explicit LinearizedSystem(const CavityParams& p)
      : p_(p), v_plus_(2 * p.modes(), 2 * p.modes()), v_minus_(2 * p.modes(), 2 * p.modes()),
        v0_(2 * p.modes()) {
    const int K = p.modes();
    for (int k = 1; k <= K; ++k) {
      for (Sign sg : kSigns) {
        v0_(x_column(k, sg)) = cplx{0.0, sign_value(sg) * p.omega(k)};
        for (int j = 1; j <= K; ++j)
          for (Sign sgp : kSigns) {
            v_plus_(x_column(k, sg), x_column(j, sgp)) =
                drive_coefficient(Sign::plus, k, sg, j, sgp, p);
            v_minus_(x_column(k, sg), x_column(j, sgp)) =
                drive_coefficient(Sign::minus, k, sg, j, sgp, p);
          }
      }
    }
  }

  /// Full generator V⁽⁰⁾ + εV⁽¹⁾(t) as a 2K×2K matrix.
  CMatrix generator(double t) const {
    const double phase = p_.drive_frequency() * t;
    const cplx ep = std::polar(1.0, phase);
    const double w1 = p_.omega1();
    CMatrix V = (p_.epsilon() * w1) * (ep * v_plus_.cast<cplx>() + std::conj(ep) * v_minus_.cast<cplx>());
    V.diagonal() += v0_;
    return V;
  }

  CMatrix operator()(double t, const Eigen::Ref<const CMatrix>& X) const {
    CMatrix dX(X.rows(), X.cols());
    dX.noalias() = X * generator(t).transpose();
    return dX;
  }

  const RMatrix& v_plus() const { return v_plus_; }
  const RMatrix& v_minus() const { return v_minus_; }

 private:
  CavityParams p_;
  RMatrix v_plus_;
  RMatrix v_minus_;
  Eigen::VectorXcd v0_;
};

inline XState rhs_linearized(double t, const XState& s, const CavityParams& p) {
  if (s.X.rows() != p.modes() || s.X.cols() != 2 * p.modes())
    throw InvalidInput("X must be K x 2K");
  return {t, LinearizedSystem(p)(t, s.X)};
}

// ---------------------------------------------------------------------------
// Stepping core.

namespace detail {

inline void check_finite(const CMatrix& Y, double t) {
  if (!Y.allFinite())
    throw IntegrationError("non-finite state at t = " + std::to_string(t));
}

inline void check_samples(std::span<const double> times, double T) {
  double prev = 0.0;
  for (double t : times) {
    if (!std::isfinite(t) || t < 0.0 || t > T * (1.0 + 1e-12) + 1e-300)
      throw InvalidInput("sample time " + std::to_string(t) + " outside [0, T]");
    if (t < prev) throw InvalidInput("sample times must be sorted");
    prev = t;
  }
}

template <class System>
CMatrix rk4_step(const System& f, double t, const CMatrix& Y, double h) {
  const CMatrix k1 = f(t, Y);
  const CMatrix k2 = f(t + 0.5 * h, Y + (0.5 * h) * k1);
  const CMatrix k3 = f(t + 0.5 * h, Y + (0.5 * h) * k2);
  const CMatrix k4 = f(t + h, Y + h * k3);
  return Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Fixed-step RK4. Each interval between samples is cut into the smallest
/// whole number of equal steps not longer than the nominal step, so runs
/// are bit-reproducible and sample times are hit exactly.
template <class System>
std::vector<CMatrix> propagate_rk4(const System& f, CMatrix Y, std::span<const double> times,
                                   double nominal_step, long max_steps) {
  std::vector<CMatrix> out;
  out.reserve(times.size());
  double t = 0.0;
  long steps = 0;
  for (double target : times) {
    const double span = target - t;
    if (span > 0.0) {
      const long n = std::max(1L, static_cast<long>(std::ceil(span / nominal_step - 1e-9)));
      const double h = span / static_cast<double>(n);
      for (long i = 0; i < n; ++i) {
        if (++steps > max_steps) throw IntegrationError("step limit exceeded");
        Y = rk4_step(f, t + i * h, Y, h);
      }
      t = target;
      check_finite(Y, t);
    }
    out.push_back(Y);
  }
  return out;
}

/// Adaptive embedded Runge–Kutta–Fehlberg 7(8) with step control.
template <class System>
std::vector<CMatrix> propagate_adaptive(const System& f, const CMatrix& Y0,
                                        std::span<const double> times, double initial_step,
                                        double rtol, double atol, long max_steps) {
  namespace ode = boost::numeric::odeint;
  using state = std::vector<double>;
  const auto rows = Y0.rows();
  const auto cols = Y0.cols();
  const auto n = static_cast<std::size_t>(2 * rows * cols);

  auto as_matrix = [rows, cols](const state& x) {
    return Eigen::Map<const CMatrix>(reinterpret_cast<const cplx*>(x.data()), rows, cols);
  };
  auto rhs = [&](const state& x, state& dxdt, double t) {
    Eigen::Map<CMatrix>(reinterpret_cast<cplx*>(dxdt.data()), rows, cols) = f(t, as_matrix(x));
  };

  state x(n);
  Eigen::Map<CMatrix>(reinterpret_cast<cplx*>(x.data()), rows, cols) = Y0;
  auto stepper = ode::make_controlled(atol, rtol, ode::runge_kutta_fehlberg78<state>());

  std::vector<CMatrix> out;
  out.reserve(times.size());
  double t = 0.0;
  double dt = initial_step;
  long steps = 0;
  for (double target : times) {
    while (t < target) {
      if (++steps > max_steps) throw IntegrationError("step limit exceeded");
      const bool last = t + dt >= target;
      double h = last ? target - t : dt;
      const double h_tried = h;
      if (stepper.try_step(rhs, x, t, h) == ode::success) {
        // A truncated final step should not shrink the next proposal.
        dt = last ? std::max(h, dt) : h;
        if (last) t = target;
      } else {
        dt = h;
        if (!(dt > 0.0) || dt < 1e-14 * std::max(1.0, target) || h >= h_tried)
          throw IntegrationError("tolerance failure: step size underflow at t = " +
                                 std::to_string(t));
      }
    }
    out.emplace_back(as_matrix(x));
    check_finite(out.back(), t);
  }
  return out;
}

template <class System>
std::vector<CMatrix> propagate(const System& f, const CMatrix& Y0, std::span<const double> times,
                               const IntegratorConfig& cfg, double period) {
  cfg.validate();
  const double step = period / cfg.steps_per_period;
  if (cfg.scheme == Scheme::rk4) return propagate_rk4(f, Y0, times, step, cfg.max_steps);
  return propagate_adaptive(f, Y0, times, step, cfg.rtol, cfg.atol, cfg.max_steps);
}

}  // namespace detail

/// Integrates the exact truncated system from the vacuum and returns the
/// state at each requested time (sorted, within [0, T]).
inline std::vector<QPState> integrate_full(const CavityParams& p, const IntegratorConfig& cfg,
                                           std::span<const double> sample_times,
                                           StartMatching matching = StartMatching::kinematic) {
  detail::check_samples(sample_times, p.T());
  const FullSystem sys(p);
  const auto Ys = detail::propagate(sys, FullSystem::pack(vacuum_state(p, matching)),
                                    sample_times, cfg, p.drive_period());
  std::vector<QPState> out;
  out.reserve(Ys.size());
  for (std::size_t i = 0; i < Ys.size(); ++i) out.push_back(FullSystem::unpack(sample_times[i], Ys[i]));
  return out;
}

/// Integrates the ε-linearized X system from X_{n,k−} = δ_nk, X_{n,k+} = 0.
inline std::vector<XState> integrate_linearized(const CavityParams& p, const IntegratorConfig& cfg,
                                                std::span<const double> sample_times) {
  detail::check_samples(sample_times, p.T());
  const LinearizedSystem sys(p);
  const auto Xs =
      detail::propagate(sys, vacuum_x_state(p).X, sample_times, cfg, p.drive_period());
  std::vector<XState> out;
  out.reserve(Xs.size());
  for (std::size_t i = 0; i < Xs.size(); ++i) out.push_back({sample_times[i], Xs[i]});
  return out;
}

/// Convenience: the full state at t = T only.
inline QPState evolve_full(const CavityParams& p, const IntegratorConfig& cfg,
                           StartMatching matching = StartMatching::kinematic) {
  const double T = p.T();
  return integrate_full(p, cfg, std::span<const double>(&T, 1), matching).front();
}

inline XState evolve_linearized(const CavityParams& p, const IntegratorConfig& cfg) {
  const double T = p.T();
  return integrate_linearized(p, cfg, std::span<const double>(&T, 1)).front();
}

/// n + 1 equally spaced times on [0, T].
inline std::vector<double> uniform_times(double T, int n) {
  std::vector<double> ts(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) ts[static_cast<std::size_t>(i)] = T * i / n;
  ts.back() = T;
  return ts;
}

}  // namespace casimir
