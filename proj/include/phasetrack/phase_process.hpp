#pragma once

// Gaussian phase with a power-law spectrum kappa^(p-1)/|omega|^p, realized for
// even p = 2n+2 by a chain of n+1 integrators driven by white noise:
//
//   dx_0     = -lambda_0 x_0 dt + dW
//   dx_{k+1} = (x_k - lambda_{k+1} x_{k+1}) dt
//   phi      = kappa^(n+1/2) x_n
//
// Nonzero lambda_k add a low-frequency cutoff to stage k.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "phasetrack/error.hpp"
#include "phasetrack/random.hpp"

namespace phasetrack {

inline bool is_even_integer(double p) {
    return p >= 2.0 && std::floor(p) == p && std::fmod(p, 2.0) == 0.0;
}

struct PhaseModel {
    double p = 2.0;
    double kappa = 1.0;
    /// lambda_0..lambda_n; empty for non-even p. All zero means undamped.
    std::vector<double> dampings;

    static PhaseModel power_law(double p, double kappa) {
        PhaseModel m{p, kappa, {}};
        if (is_even_integer(p)) {
            m.dampings.assign(static_cast<std::size_t>(p / 2), 0.0);
        }
        m.validate();
        return m;
    }

    static PhaseModel damped(double p, double kappa, std::vector<double> dampings) {
        PhaseModel m{p, kappa, std::move(dampings)};
        m.validate();
        return m;
    }

    void validate() const {
        require(p > 1.0, "exponent-out-of-range", "p must exceed 1, got " + std::to_string(p));
        require(kappa > 0.0, "invalid-kappa", "kappa must be positive");
        if (is_even_integer(p)) {
            require(dampings.size() == static_cast<std::size_t>(p / 2), "invalid-dampings",
                    "expected " + std::to_string(static_cast<int>(p / 2)) + " damping rates");
        } else {
            require(dampings.empty(), "chain-requires-even-p", "dampings need an even integer p");
        }
        for (double l : dampings) {
            require(std::isfinite(l) && l >= 0.0, "invalid-dampings", "damping rates must be >= 0");
        }
    }

    bool undamped() const {
        return std::all_of(dampings.begin(), dampings.end(), [](double l) { return l == 0.0; });
    }

    bool fully_damped() const {
        return !dampings.empty() &&
               std::all_of(dampings.begin(), dampings.end(), [](double l) { return l > 0.0; });
    }

    /// n such that p = 2n+2.
    int chain_index() const {
        require(is_even_integer(p), "chain-requires-even-p",
                "integrator chain needs even integer p, got " + std::to_string(p));
        return static_cast<int>(p / 2) - 1;
    }

    /// kappa^(n+1/2), the factor mapping x_n to phi.
    double phase_scale() const { return std::pow(kappa, chain_index() + 0.5); }

    double max_damping() const {
        return dampings.empty() ? 0.0 : *std::max_element(dampings.begin(), dampings.end());
    }
};

/// Power spectral density of phi at angular frequency omega.
inline double spectrum(const PhaseModel& model, double omega) {
    const double scale = std::pow(model.kappa, model.p - 1.0);
    if (model.undamped()) {
        if (omega == 0.0) {
            throw Error(ErrorKind::validation, "spectrum-divergent-at-zero",
                        "undamped power-law spectrum is infinite at omega = 0");
        }
        return scale / std::pow(std::abs(omega), model.p);
    }
    const double w2 = omega * omega;
    double s = scale;
    for (double l : model.dampings) {
        const double d = w2 + l * l;
        if (d == 0.0) {
            throw Error(ErrorKind::validation, "spectrum-divergent-at-zero",
                        "undamped stage makes the spectrum infinite at omega = 0");
        }
        s /= d;
    }
    return s;
}

struct ChainState {
    Eigen::VectorXd x;
    double t = 0.0;
};

/// Explicit Euler-Maruyama stepper for the chain. Stateless apart from the
/// model; the caller owns the state vector and supplies each increment.
class IntegratorChain {
public:
    IntegratorChain(const PhaseModel& model, double dt)
        : n_(model.chain_index()), dt_(dt), dampings_(model.dampings), phase_scale_(model.phase_scale()) {
        require(dt > 0.0, "invalid-dt", "time step must be positive");
        require(dt * model.max_damping() < 0.1, "invalid-dt",
                "dt * max(lambda) must stay below 0.1 for the Euler scheme");
    }

    int dimension() const { return n_ + 1; }
    double dt() const { return dt_; }

    void step(Eigen::Ref<Eigen::VectorXd> x, double dW) const {
        for (int k = n_; k >= 1; --k) {
            x[k] += (x[k - 1] - dampings_[k] * x[k]) * dt_;
        }
        x[0] += -dampings_[0] * x[0] * dt_ + dW;
    }

    double phase(const Eigen::Ref<const Eigen::VectorXd>& x) const { return phase_scale_ * x[n_]; }

private:
    int n_;
    double dt_;
    std::vector<double> dampings_;
    double phase_scale_;
};

struct ChainTrajectory {
    std::vector<ChainState> states;  // n_steps + 1 entries, states[0] at t = 0
    std::vector<double> increments;  // dW_i driving states[i] -> states[i+1]
    double phase_scale = 1.0;

    double phase(std::size_t i) const { return phase_scale * states[i].x[states[i].x.size() - 1]; }
};

/// Integrates the chain from x = 0 with the given increments.
inline ChainTrajectory integrate_chain(const PhaseModel& model, double dt, std::span<const double> increments) {
    const IntegratorChain chain(model, dt);
    ChainTrajectory out;
    out.phase_scale = model.phase_scale();
    out.increments.assign(increments.begin(), increments.end());
    out.states.reserve(increments.size() + 1);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(chain.dimension());
    out.states.push_back({x, 0.0});
    for (std::size_t i = 0; i < increments.size(); ++i) {
        chain.step(x, increments[i]);
        out.states.push_back({x, static_cast<double>(i + 1) * dt});
    }
    return out;
}

inline ChainTrajectory sample_trajectory(const PhaseModel& model, double dt, std::size_t n_steps, std::uint64_t seed) {
    model.chain_index();
    require(dt > 0.0, "invalid-dt", "time step must be positive");
    WienerIncrements dW(seed, Stream::phase, dt);
    std::vector<double> increments(n_steps);
    for (double& w : increments) {
        w = dW();
    }
    return integrate_chain(model, dt, increments);
}

/// Drift matrix of the chain: lower shift minus diag(lambda).
inline Eigen::MatrixXd chain_drift(const PhaseModel& model) {
    const int dim = model.chain_index() + 1;
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(dim, dim);
    for (int k = 0; k < dim; ++k) {
        F(k, k) = -model.dampings[k];
        if (k > 0) {
            F(k, k - 1) = 1.0;
        }
    }
    return F;
}

/// Stationary covariance P solving F P + P F^T + E E^T = 0.
inline Eigen::MatrixXd stationary_chain_covariance(const PhaseModel& model) {
    require(model.fully_damped(), "autocorrelation-undefined",
            "the chain is nonstationary unless every stage is damped");
    const Eigen::MatrixXd F = chain_drift(model);
    const Eigen::Index d = F.rows();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    // vec(F P + P F^T) = (I kron F + F kron I) vec(P)
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(d * d, d * d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            L.block(i * d, j * d, d, d) = I(i, j) * F + F(i, j) * I;
        }
    }
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d * d);
    rhs(0) = -1.0;
    const Eigen::VectorXd vecP = L.partialPivLu().solve(rhs);
    Eigen::MatrixXd P = Eigen::Map<const Eigen::MatrixXd>(vecP.data(), d, d);
    return 0.5 * (P + P.transpose());
}

/// <phi(t+lag) phi(t)> for a fully damped chain.
inline double autocorrelation(const PhaseModel& model, double lag) {
    const Eigen::MatrixXd P = stationary_chain_covariance(model);
    const Eigen::MatrixXd F = chain_drift(model);
    const Eigen::MatrixXd prop = (F * std::abs(lag)).exp();
    const int n = model.chain_index();
    const double s = model.phase_scale();
    return s * s * (prop * P)(n, n);
}

}  // namespace phasetrack
