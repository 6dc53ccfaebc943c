#pragma once

// Steady-state linear-Gaussian estimation for the integrator chain with
// p = 2n+2:
//
//   dx = A x dt + E dW,   y = C x + zeta,
//   A_{j,k} = delta_{j,k+1},  E_k = delta_{k,0},  C_k = sqrt(mu) delta_{k,n},
//   mu = 4 N kappa^(2n+1).
//
// Every steady-state covariance factors as V_{k,l} = Vt_{k,l} mu^-(k+l+1)/p
// with Vt independent of mu, so the normalized matrices depend on p only.
// Indices are 0-based throughout.

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "phasetrack/error.hpp"
#include "phasetrack/phase_process.hpp"

namespace phasetrack {

/// Largest p for which the Vandermonde solve stays well conditioned.
inline constexpr int max_riccati_p = 20;

struct LgSystem {
    int n = 0;
    Eigen::MatrixXd A;
    Eigen::VectorXd E;
    Eigen::RowVectorXd C;
    double mu = 0.0;
    double kappa = 1.0;
    double photon_flux = 0.0;

    int p() const { return 2 * n + 2; }
    int dimension() const { return n + 1; }
    /// Fastest filter time constant, mu^(-1/p).
    double timescale() const { return std::pow(mu, -1.0 / p()); }
};

inline LgSystem build_lg_system(double p, double kappa, double photon_flux) {
    require(is_even_integer(p), "requires-even-p", "LG model needs even integer p >= 2, got " + std::to_string(p));
    require(kappa > 0.0, "invalid-kappa", "kappa must be positive");
    require(photon_flux > 0.0, "invalid-flux", "photon flux must be positive");
    LgSystem s;
    s.n = static_cast<int>(p / 2) - 1;
    const int d = s.n + 1;
    s.kappa = kappa;
    s.photon_flux = photon_flux;
    s.mu = 4.0 * photon_flux * std::pow(kappa, 2 * s.n + 1);
    s.A = Eigen::MatrixXd::Zero(d, d);
    for (int j = 1; j < d; ++j) {
        s.A(j, j - 1) = 1.0;
    }
    s.E = Eigen::VectorXd::Zero(d);
    s.E(0) = 1.0;
    s.C = Eigen::RowVectorXd::Zero(d);
    s.C(s.n) = std::sqrt(s.mu);
    return s;
}

namespace detail {

inline void require_riccati_p(int p) {
    require(p >= 2 && p % 2 == 0, "requires-even-p", "p must be an even integer >= 2, got " + std::to_string(p));
    if (p > max_riccati_p) {
        throw Error(ErrorKind::numerical, "conditioning-limit",
                    "p = " + std::to_string(p) + " exceeds the supported maximum of " + std::to_string(max_riccati_p));
    }
}

inline void require_square(const Eigen::MatrixXd& m, Eigen::Index dim, const char* what) {
    require(m.rows() == dim && m.cols() == dim, "dimension-mismatch",
            std::string(what) + " must be " + std::to_string(dim) + "x" + std::to_string(dim));
}

}  // namespace detail

namespace detail {

using LongMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LongComplexMatrix = Eigen::Matrix<std::complex<long double>, Eigen::Dynamic, Eigen::Dynamic>;

inline std::complex<long double> stable_eigenvalue(int k, int p) {
    const long double pi = std::numbers::pi_v<long double>;
    const std::complex<long double> i{0.0L, 1.0L};
    return i * std::exp(i * (pi * static_cast<long double>(2 * k - 1) / static_cast<long double>(p)));
}

}  // namespace detail

/// Stable eigenvalues i e^{i pi (2k-1)/p}, k = 1..n+1, of the normalized
/// Hamiltonian matrix.
inline Eigen::VectorXcd stable_hamiltonian_eigenvalues(int p) {
    detail::require_riccati_p(p);
    Eigen::VectorXcd lambda(p / 2);
    for (int k = 1; k <= p / 2; ++k) {
        lambda(k - 1) = std::complex<double>(detail::stable_eigenvalue(k, p));
    }
    return lambda;
}

/// Normalized filtered covariance Vt_F = X Y^-1 from the stable eigenvectors,
/// Y_{jk} = lambda_k^(j-1), X_{jk} = (-lambda_k)^-j (1-based j).
/// Solved in extended precision: Y is Vandermonde with condition ~1e8 at p = 20.
inline Eigen::MatrixXd solve_filter_covariance(int p) {
    detail::require_riccati_p(p);
    const int d = p / 2;
    detail::LongComplexMatrix Y(d, d);
    detail::LongComplexMatrix X(d, d);
    for (int k = 0; k < d; ++k) {
        const std::complex<long double> lambda = detail::stable_eigenvalue(k + 1, p);
        std::complex<long double> power{1.0L, 0.0L};
        const std::complex<long double> inv_neg = -1.0L / lambda;
        std::complex<long double> inv_power = inv_neg;
        for (int j = 0; j < d; ++j) {
            Y(j, k) = power;
            X(j, k) = inv_power;
            power *= lambda;
            inv_power *= inv_neg;
        }
    }
    // V Y = X  <=>  Y^T V^T = X^T
    const detail::LongComplexMatrix V = Y.transpose().partialPivLu().solve(X.transpose()).transpose();
    const long double imag = V.imag().cwiseAbs().maxCoeff();
    if (imag > 1e-9L) {
        fail_numerical("conditioning-limit",
                       "eigenvector solution has imaginary residue " + std::to_string(static_cast<double>(imag)));
    }
    return V.real().cast<double>();
}

/// Largest violation of Vt_{k-1,l} + Vt_{k,l-1} + delta_{k0} delta_{l0} - Vt_{k,n} Vt_{n,l} = 0.
inline double riccati_residual(const Eigen::MatrixXd& v, int n) {
    detail::require_square(v, n + 1, "covariance");
    double worst = 0.0;
    for (int k = 0; k <= n; ++k) {
        for (int l = 0; l <= n; ++l) {
            double r = -v(k, n) * v(n, l);
            if (k > 0) r += v(k - 1, l);
            if (l > 0) r += v(k, l - 1);
            if (k == 0 && l == 0) r += 1.0;
            worst = std::max(worst, std::abs(r));
        }
    }
    return worst;
}

struct RiccatiOdeResult {
    Eigen::MatrixXd v;  // physical filtered covariance
    double time = 0.0;
    long steps = 0;
    double max_asymmetry = 0.0;  // largest |V - V^T| seen along the flow
};

/// Integrates dV/dt = A V + V A^T + E E^T - V C^T C V from V(0) = mu^(-1/p) I
/// with RK4 until |dV/dt| * tau < tol |V| (Frobenius norms, tau = mu^(-1/p)).
inline RiccatiOdeResult solve_filter_covariance_ode(const LgSystem& sys, double tol, long max_steps = 5'000'000) {
    require(tol > 0.0, "invalid-tolerance", "tolerance must be positive");
    const Eigen::Index d = sys.dimension();
    const Eigen::MatrixXd EEt = sys.E * sys.E.transpose();
    const Eigen::MatrixXd CtC = sys.C.transpose() * sys.C;
    const auto rhs = [&](const Eigen::MatrixXd& V) -> Eigen::MatrixXd {
        return sys.A * V + V * sys.A.transpose() + EEt - V * CtC * V;
    };
    const double tau = sys.timescale();

    RiccatiOdeResult out;
    Eigen::MatrixXd V = Eigen::MatrixXd::Identity(d, d) * tau;
    for (long step = 0; step < max_steps; ++step) {
        const Eigen::MatrixXd k1 = rhs(V);
        if (k1.norm() * tau < tol * V.norm()) {
            out.v = V;
            out.steps = step;
            return out;
        }
        // Step limited by the fastest local rate.
        const double rate = 1.0 + 2.0 * sys.A.norm() + (V * CtC).norm();
        const double h = std::min(0.05 * tau, 0.1 / rate);
        const Eigen::MatrixXd k2 = rhs(V + 0.5 * h * k1);
        const Eigen::MatrixXd k3 = rhs(V + 0.5 * h * k2);
        const Eigen::MatrixXd k4 = rhs(V + h * k3);
        V += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.time += h;
        out.max_asymmetry = std::max(out.max_asymmetry, (V - V.transpose()).cwiseAbs().maxCoeff());
    }
    fail_numerical("riccati-ode-stalled", "Riccati flow did not settle within " + std::to_string(max_steps) + " steps");
}

/// Normalized retrofiltered covariance: [Vt_R]_{k,l} = (-1)^(k+l) [Vt_F]_{k,l}.
inline Eigen::MatrixXd retro_covariance(const Eigen::MatrixXd& vf_tilde) {
    require(vf_tilde.rows() == vf_tilde.cols() && vf_tilde.rows() > 0, "dimension-mismatch",
            "covariance must be square");
    Eigen::MatrixXd vr = vf_tilde;
    for (Eigen::Index k = 0; k < vr.rows(); ++k) {
        for (Eigen::Index l = 0; l < vr.cols(); ++l) {
            if ((k + l) % 2 != 0) {
                vr(k, l) = -vr(k, l);
            }
        }
    }
    return vr;
}

/// Two-filter combination (V_F^-1 + V_R^-1)^-1.
inline Eigen::MatrixXd smoother_covariance(const Eigen::MatrixXd& vf, const Eigen::MatrixXd& vr) {
    require(vf.rows() == vf.cols() && vf.rows() > 0, "dimension-mismatch", "covariance must be square");
    detail::require_square(vr, vf.rows(), "retrofiltered covariance");
    const auto f = vf.fullPivLu();
    const auto r = vr.fullPivLu();
    if (!f.isInvertible() || !r.isInvertible()) {
        fail_numerical("smoother-singular", "filtered or retrofiltered covariance is singular");
    }
    const Eigen::MatrixXd info = f.inverse() + r.inverse();
    const auto s = info.fullPivLu();
    if (!s.isInvertible()) {
        fail_numerical("smoother-singular", "information sum is singular");
    }
    return s.inverse();
}

/// [Vt_S]_{k,l} = (-1)^((k-l)/2) / (p sin(pi (k+l+1)/p)) for k-l even, else 0.
inline Eigen::MatrixXd smoother_covariance_closed_form(int p) {
    detail::require_riccati_p(p);
    const int d = p / 2;
    Eigen::MatrixXd vs = Eigen::MatrixXd::Zero(d, d);
    for (int k = 0; k < d; ++k) {
        for (int l = 0; l < d; ++l) {
            if ((k - l) % 2 != 0) continue;
            const double sign = ((k - l) / 2) % 2 == 0 ? 1.0 : -1.0;
            vs(k, l) = sign / (p * std::sin(std::numbers::pi * (k + l + 1) / p));
        }
    }
    return vs;
}

/// Physical covariance V_{k,l} = Vt_{k,l} mu^-(k+l+1)/p.
inline Eigen::MatrixXd scale_covariance(const Eigen::MatrixXd& v_tilde, int p, double mu) {
    require(mu > 0.0, "invalid-mu", "mu must be positive");
    Eigen::MatrixXd v = v_tilde;
    for (Eigen::Index k = 0; k < v.rows(); ++k) {
        for (Eigen::Index l = 0; l < v.cols(); ++l) {
            v(k, l) *= std::pow(mu, -static_cast<double>(k + l + 1) / p);
        }
    }
    return v;
}

/// Phase MSE kappa^(2n+1) V_{n,n} from a physical chain covariance.
inline double phase_mse(const Eigen::MatrixXd& v, const LgSystem& sys) {
    detail::require_square(v, sys.dimension(), "covariance");
    return std::pow(sys.kappa, 2 * sys.n + 1) * v(sys.n, sys.n);
}

struct CovarianceSet {
    Eigen::MatrixXd vf_tilde, vr_tilde, vs_tilde;
    Eigen::MatrixXd vf, vr, vs;
};

inline CovarianceSet covariance_set(const LgSystem& sys) {
    CovarianceSet c;
    const int p = sys.p();
    c.vf_tilde = solve_filter_covariance(p);
    c.vr_tilde = retro_covariance(c.vf_tilde);
    c.vs_tilde = smoother_covariance(c.vf_tilde, c.vr_tilde);
    c.vf = scale_covariance(c.vf_tilde, p, sys.mu);
    c.vr = scale_covariance(c.vr_tilde, p, sys.mu);
    c.vs = scale_covariance(c.vs_tilde, p, sys.mu);
    return c;
}

/// Closed-loop drift A - V C^T C of the steady-state filter.
inline Eigen::MatrixXd filter_closed_loop(const LgSystem& sys, const Eigen::MatrixXd& vf) {
    return sys.A - vf * sys.C.transpose() * sys.C;
}

/// Asymptotic filtered phase MSE from the Riccati solution,
/// Vt_F[n,n] (4N/kappa)^-(p-1)/p.
inline double lg_filter_mse(int p, double kappa, double photon_flux) {
    const LgSystem sys = build_lg_system(p, kappa, photon_flux);
    return phase_mse(scale_covariance(solve_filter_covariance(p), p, sys.mu), sys);
}

inline double lg_smoother_mse(int p, double kappa, double photon_flux) {
    const LgSystem sys = build_lg_system(p, kappa, photon_flux);
    return phase_mse(scale_covariance(smoother_covariance_closed_form(p), p, sys.mu), sys);
}

}  // namespace phasetrack
