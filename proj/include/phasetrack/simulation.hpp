#pragma once

// Adaptive homodyne simulation. Per step of length dt, with theta the LO phase
// fed back from a causal estimate:
//
//   I dt = 2 sqrt(N) sin(phi - theta) dt + dB      (or phi - theta, linearized)
//   y    = I + 2 sqrt(N) theta
//
// The steady-state filter runs forward on y, the retrofilter runs backward
// from the final time, and the two combine into the smoothed estimate.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "phasetrack/error.hpp"
#include "phasetrack/lg_estimation.hpp"
#include "phasetrack/phase_process.hpp"
#include "phasetrack/random.hpp"

namespace phasetrack {

inline constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

struct HomodyneConfig {
    double photon_flux = 0.0;
    std::optional<double> dt;       // default 0.01 mu^(-1/p)
    double duration = 0.0;
    std::optional<double> burn_in;  // default 20 mu^(-1/p)
    std::uint64_t seed = 0;
    bool linearized = false;
};

/// Which causal estimate drives the LO.
enum class Feedback { filter, abc, abc_linear };

struct AbcOptions {
    double chi = 0.0;
    Feedback mode = Feedback::abc;
};

struct Timing {
    double dt = 0.0;
    double burn_in = 0.0;
    std::size_t steps = 0;
    std::size_t first = 0;  // first index at or after burn_in
};

/// Resolves defaults and checks the config against the system's timescale.
/// A positive `chi` tightens the default step to 0.01/chi when faster.
inline Timing resolve_timing(const LgSystem& sys, const HomodyneConfig& c, double chi = 0.0) {
    require(std::isfinite(c.photon_flux) && c.photon_flux >= 0.0, "invalid-flux", "photon flux must be >= 0");
    const double tau = sys.timescale();
    double fastest = tau;
    if (chi > 0.0) fastest = std::min(fastest, 1.0 / chi);
    Timing t;
    t.dt = c.dt.value_or(0.01 * fastest);
    t.burn_in = c.burn_in.value_or(20.0 * tau);
    require(t.dt > 0.0 && std::isfinite(t.dt), "invalid-dt", "time step must be positive");
    require(t.dt <= 0.01 * tau * (1.0 + 1e-12), "invalid-dt",
            "dt must resolve the filter timescale: dt <= 0.01 mu^(-1/p) = " + std::to_string(0.01 * tau));
    require(t.burn_in >= 20.0 * tau * (1.0 - 1e-12), "invalid-burn-in",
            "burn_in must be >= 20 mu^(-1/p) = " + std::to_string(20.0 * tau));
    require(std::isfinite(c.duration) && c.duration > 2.0 * t.burn_in, "invalid-duration",
            "duration must exceed twice the burn-in");
    t.steps = static_cast<std::size_t>(std::llround(c.duration / t.dt));
    t.first = static_cast<std::size_t>(std::ceil(t.burn_in / t.dt - 1e-9));
    return t;
}

/// Phase and shot-noise increments for one trial, from independent streams.
struct HomodyneNoise {
    std::vector<double> dW;
    std::vector<double> dB;

    static HomodyneNoise draw(std::uint64_t seed, std::size_t steps, double dt) {
        HomodyneNoise n{std::vector<double>(steps), std::vector<double>(steps)};
        WienerIncrements w(seed, Stream::phase, dt);
        WienerIncrements b(seed, Stream::measurement, dt);
        for (double& v : n.dW) v = w();
        for (double& v : n.dB) v = b();
        return n;
    }
};

struct SimulationRecord {
    std::vector<double> t;
    std::vector<double> phi;
    std::vector<double> theta;
    std::vector<double> current;  // I dt per step
    std::vector<double> y;        // I + 2 sqrt(N) theta
    Eigen::MatrixXd xf, xr, xs;   // one column per time
    std::vector<double> phi_f, phi_s, phi_abc;
    Timing timing;
    double duration = 0.0;
    std::uint64_t seed = 0;
    Feedback feedback = Feedback::filter;
    std::size_t abc_indeterminate = 0;

    std::size_t size() const { return t.size(); }
    /// Interior window shared by every estimate: [burn_in, duration - burn_in).
    std::size_t smoother_last() const { return size() - timing.first; }
};

/// Euler pass x <- x + drift x dt + gain (y dt) from x = 0. Returns
/// y.size() + 1 columns; column i uses y[0..i).
inline Eigen::MatrixXd linear_filter_pass(std::span<const double> y, const Eigen::MatrixXd& drift,
                                          const Eigen::VectorXd& gain, double dt) {
    require(drift.rows() == drift.cols() && gain.size() == drift.rows(), "dimension-mismatch",
            "drift and gain dimensions disagree");
    const Eigen::Index d = drift.rows();
    const Eigen::MatrixXd F = Eigen::MatrixXd::Identity(d, d) + drift * dt;
    const Eigen::VectorXd g = gain * dt;
    Eigen::MatrixXd out(d, static_cast<Eigen::Index>(y.size()) + 1);
    out.col(0).setZero();
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        out.col(k + 1).noalias() = F * out.col(k);
        out.col(k + 1) += g * y[i];
    }
    return out;
}

inline Eigen::MatrixXd run_filter_pass(std::span<const double> y, const LgSystem& sys, const Eigen::MatrixXd& vf,
                                       double dt) {
    detail::require_square(vf, sys.dimension(), "filtered covariance");
    return linear_filter_pass(y, filter_closed_loop(sys, vf), vf * sys.C.transpose(), dt);
}

/// Backward pass from x_R = 0 at the final time:
///   x_R[i] = x_R[i+1] + (-A - V_R C^T C) x_R[i+1] dt + V_R C^T y[i] dt.
/// Column i uses y[i..end); column y.size() is the zero start.
inline Eigen::MatrixXd run_retrofilter_pass(std::span<const double> y, const LgSystem& sys,
                                            const Eigen::MatrixXd& vr, double dt) {
    detail::require_square(vr, sys.dimension(), "retrofiltered covariance");
    const std::vector<double> reversed(y.rbegin(), y.rend());
    const Eigen::MatrixXd drift = -sys.A - vr * sys.C.transpose() * sys.C;
    const Eigen::MatrixXd z = linear_filter_pass(reversed, drift, vr * sys.C.transpose(), dt);
    return z.rowwise().reverse();
}

struct Smoothed {
    Eigen::MatrixXd xs;
    Eigen::MatrixXd vs;
};

/// x_S = V_S (V_F^-1 x_F + V_R^-1 x_R) column by column.
inline Smoothed combine_smoothed(const Eigen::MatrixXd& xf, const Eigen::MatrixXd& xr, const Eigen::MatrixXd& vf,
                                 const Eigen::MatrixXd& vr) {
    require(xf.rows() == xr.rows() && xf.cols() == xr.cols(), "dimension-mismatch",
            "filtered and retrofiltered trajectories differ in shape");
    detail::require_square(vf, xf.rows(), "filtered covariance");
    detail::require_square(vr, xf.rows(), "retrofiltered covariance");
    const Eigen::MatrixXd vs = smoother_covariance(vf, vr);
    const Eigen::MatrixXd wf = vs * vf.fullPivLu().inverse();
    const Eigen::MatrixXd wr = vs * vr.fullPivLu().inverse();
    return {wf * xf + wr * xr, vs};
}

/// Berry-Wiseman ABC estimator with exponential memory 1/chi.
class AbcEstimator {
public:
    explicit AbcEstimator(double chi, double dt) : chi_(chi), dt_(dt), decay_(std::exp(-chi * dt)) {
        require(chi > 0.0 && std::isfinite(chi), "invalid-chi", "chi must be positive");
        require(dt > 0.0, "invalid-dt", "time step must be positive");
    }

    /// Absorbs one current increment measured with LO phase theta and returns
    /// the next LO phase.
    double update(double theta, double current_increment) {
        const std::complex<double> e = std::polar(1.0, theta);
        a_ = a_ * decay_ + e * current_increment;
        b_ = b_ * decay_ - e * e * dt_;
        const std::complex<double> c = a_ + chi_ * b_ * std::conj(a_);
        if (std::abs(c) < 1e-12) {
            ++indeterminate_;
            return theta;
        }
        const double raw = std::arg(c);
        return raw + 2.0 * std::numbers::pi * std::round((theta - raw) / (2.0 * std::numbers::pi));
    }

    std::size_t indeterminate() const { return indeterminate_; }

private:
    double chi_, dt_, decay_;
    std::complex<double> a_{0.0, 0.0}, b_{0.0, 0.0};
    std::size_t indeterminate_ = 0;
};

/// Linearized ABC: phi = chi Int e^{chi(u-t)} [theta + I/(2 sqrt N)] du,
/// with the integrand held constant over each step so the DC gain is exactly 1.
/// (Weighting by chi dt instead leaves a gain error of chi dt / 2, which turns
/// into an unbounded bias when the phase itself wanders without bound.)
class ExponentialEstimator {
public:
    ExponentialEstimator(double chi, double dt, double photon_flux)
        : decay_(std::exp(-chi * dt)), dt_(dt), scale_(1.0 / (2.0 * std::sqrt(photon_flux))) {
        require(chi > 0.0 && std::isfinite(chi), "invalid-chi", "chi must be positive");
        require(photon_flux > 0.0, "invalid-flux", "the linearized ABC estimator needs N > 0");
    }

    double update(double theta, double current_increment) {
        s_ = s_ * decay_ + (1.0 - decay_) * (theta + current_increment * scale_ / dt_);
        return s_;
    }

private:
    double decay_, dt_, scale_;
    double s_ = 0.0;
};

namespace detail {

inline double phase_of(const Eigen::Ref<const Eigen::VectorXd>& x, const LgSystem& sys) {
    return std::pow(sys.kappa, sys.n + 0.5) * x[sys.n];
}

inline std::vector<double> phase_row(const Eigen::MatrixXd& x, const LgSystem& sys, std::size_t count) {
    const double s = std::pow(sys.kappa, sys.n + 0.5);
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = s * x(sys.n, static_cast<Eigen::Index>(i));
    }
    return out;
}

inline void check_model(const PhaseModel& model, const LgSystem& sys) {
    require(model.chain_index() == sys.n, "dimension-mismatch", "phase model and LG system disagree on p");
}

}  // namespace detail

/// Closed-loop simulation with the given noise. theta[i] depends only on
/// steps before i.
inline SimulationRecord simulate_record(const PhaseModel& model, const LgSystem& sys, const HomodyneConfig& config,
                                        const HomodyneNoise& noise, std::optional<AbcOptions> abc = std::nullopt) {
    detail::check_model(model, sys);
    const double chi = abc ? abc->chi : 0.0;
    const Timing timing = resolve_timing(sys, config, chi);
    const std::size_t n = timing.steps;
    require(noise.dW.size() >= n && noise.dB.size() >= n, "dimension-mismatch", "noise shorter than the run");
    const double dt = timing.dt;
    const double root_n = std::sqrt(config.photon_flux);

    const CovarianceSet cov = covariance_set(sys);
    const IntegratorChain chain(model, dt);
    const Eigen::Index d = sys.dimension();
    const Eigen::MatrixXd F = Eigen::MatrixXd::Identity(d, d) + filter_closed_loop(sys, cov.vf) * dt;
    const Eigen::VectorXd g = cov.vf * sys.C.transpose() * dt;

    SimulationRecord r;
    r.timing = timing;
    r.duration = config.duration;
    r.seed = config.seed;
    r.feedback = abc ? abc->mode : Feedback::filter;
    r.t.resize(n);
    r.phi.resize(n);
    r.theta.resize(n);
    r.current.resize(n);
    r.y.resize(n);
    r.xf.resize(d, static_cast<Eigen::Index>(n));

    std::optional<AbcEstimator> abc_est;
    std::optional<ExponentialEstimator> exp_est;
    if (abc && abc->mode == Feedback::abc) abc_est.emplace(abc->chi, dt);
    if (abc && abc->mode == Feedback::abc_linear) exp_est.emplace(abc->chi, dt, config.photon_flux);
    if (abc) r.phi_abc.resize(n);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd xf = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd tmp(d);
    double theta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        const double phi = chain.phase(x);
        const double err = phi - theta;
        const double I = 2.0 * root_n * (config.linearized ? err : std::sin(err)) * dt + noise.dB[i];
        const double y = I / dt + 2.0 * root_n * theta;
        r.t[i] = static_cast<double>(i) * dt;
        r.phi[i] = phi;
        r.theta[i] = theta;
        r.current[i] = I;
        r.y[i] = y;
        r.xf.col(k) = xf;

        tmp.noalias() = F * xf;
        xf = tmp + g * y;
        if (abc_est) {
            r.phi_abc[i] = theta;
            theta = abc_est->update(theta, I);
        } else if (exp_est) {
            r.phi_abc[i] = theta;
            theta = exp_est->update(theta, I);
        } else {
            theta = detail::phase_of(xf, sys);
        }
        chain.step(x, noise.dW[i]);
    }
    r.phi_f = detail::phase_row(r.xf, sys, n);
    if (abc_est) r.abc_indeterminate = abc_est->indeterminate();

    r.phi_s.assign(n, nan_value);
    if (!abc) {
        r.xr = run_retrofilter_pass(r.y, sys, cov.vr, dt).leftCols(static_cast<Eigen::Index>(n));
        r.xs = combine_smoothed(r.xf, r.xr, cov.vf, cov.vr).xs;
        for (std::size_t i = timing.first; i < r.smoother_last(); ++i) {
            r.phi_s[i] = detail::phase_of(r.xs.col(static_cast<Eigen::Index>(i)), sys);
        }
    }
    return r;
}

inline SimulationRecord simulate_record(const PhaseModel& model, const LgSystem& sys, const HomodyneConfig& config) {
    const Timing timing = resolve_timing(sys, config);
    return simulate_record(model, sys, config, HomodyneNoise::draw(config.seed, timing.steps, timing.dt));
}

/// Simulation with the ABC estimator (or its linearized form) in the loop.
/// The steady-state filter still runs on y for comparison.
inline SimulationRecord run_abc(const PhaseModel& model, const LgSystem& sys, const HomodyneConfig& config,
                                const AbcOptions& abc) {
    require(abc.mode != Feedback::filter, "invalid-estimator", "run_abc needs an ABC feedback mode");
    require(abc.chi > 0.0 && std::isfinite(abc.chi), "invalid-chi", "chi must be positive");
    const Timing timing = resolve_timing(sys, config, abc.chi);
    return simulate_record(model, sys, config, HomodyneNoise::draw(config.seed, timing.steps, timing.dt), abc);
}

// ---------------------------------------------------------------------------
// Statistics

/// Pairwise summation; the result does not depend on thread scheduling.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t h = v.size() / 2;
    return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

/// Phase error folded into (-pi, pi].
inline double wrapped_error(double estimate, double truth) {
    return std::remainder(estimate - truth, 2.0 * std::numbers::pi);
}

/// Time average of the squared wrapped error over [first, last).
inline double window_mse(std::span<const double> truth, std::span<const double> estimate, std::size_t first,
                         std::size_t last) {
    require(truth.size() == estimate.size(), "dimension-mismatch", "truth and estimate lengths differ");
    require(first < last && last <= truth.size(), "empty-window", "window empty after burn-in trimming");
    std::vector<double> sq(last - first);
    for (std::size_t i = first; i < last; ++i) {
        const double e = wrapped_error(estimate[i], truth[i]);
        sq[i - first] = e * e;
    }
    return pairwise_sum(sq) / static_cast<double>(sq.size());
}

struct MseSummary {
    double mse = 0.0;
    double std_error = 0.0;
    std::size_t n_trials = 0;
};

/// Ensemble mean of per-trial MSEs with standard error sd/sqrt(n).
inline MseSummary summarize_trials(std::span<const double> per_trial) {
    require(per_trial.size() >= 2, "too-few-trials", "need at least two trials for a standard error");
    const double n = static_cast<double>(per_trial.size());
    const double mean = pairwise_sum(per_trial) / n;
    std::vector<double> dev(per_trial.size());
    for (std::size_t i = 0; i < dev.size(); ++i) {
        dev[i] = (per_trial[i] - mean) * (per_trial[i] - mean);
    }
    const double var = pairwise_sum(dev) / (n - 1.0);
    return {mean, std::sqrt(var / n), per_trial.size()};
}

/// Time-averaged squared error per trial over [first, truth.size() - last_trim),
/// then the ensemble summary.
inline MseSummary mse_statistics(std::span<const std::vector<double>> truths,
                                 std::span<const std::vector<double>> estimates, std::size_t first,
                                 std::size_t last_trim = 0) {
    require(truths.size() == estimates.size(), "dimension-mismatch", "trial counts differ");
    std::vector<double> per_trial(truths.size());
    for (std::size_t k = 0; k < truths.size(); ++k) {
        const std::size_t len = truths[k].size();
        require(last_trim < len, "empty-window", "window empty after burn-in trimming");
        per_trial[k] = window_mse(truths[k], estimates[k], first, len - last_trim);
    }
    return summarize_trials(per_trial);
}

/// Squared unwrapped error averaged over geometric windows between burn_in and
/// the end. Used to detect estimators that never settle.
inline std::vector<double> windowed_mse(const SimulationRecord& r, std::span<const double> estimate,
                                        std::size_t windows) {
    require(windows >= 1, "invalid-windows", "need at least one window");
    const double t0 = std::max(r.timing.burn_in, r.timing.dt);
    const double t1 = static_cast<double>(r.size()) * r.timing.dt;
    const double ratio = std::pow(t1 / t0, 1.0 / static_cast<double>(windows));
    std::vector<double> out(windows);
    for (std::size_t w = 0; w < windows; ++w) {
        const double a = t0 * std::pow(ratio, static_cast<double>(w));
        const double b = t0 * std::pow(ratio, static_cast<double>(w + 1));
        const auto lo = static_cast<std::size_t>(a / r.timing.dt);
        const auto hi = std::min(r.size(), std::max(lo + 1, static_cast<std::size_t>(b / r.timing.dt)));
        std::vector<double> sq(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            const double e = estimate[i] - r.phi[i];
            sq[i - lo] = e * e;
        }
        out[w] = pairwise_sum(sq) / static_cast<double>(sq.size());
    }
    return out;
}

/// Divergence signature: strictly increasing across at least three windows
/// and the last window at least twice the first.
inline bool diverging(std::span<const double> windowed) {
    if (windowed.size() < 3) return false;
    for (std::size_t i = 1; i < windowed.size(); ++i) {
        if (!(windowed[i] > windowed[i - 1])) return false;
    }
    return windowed.back() >= 2.0 * windowed.front();
}

// ---------------------------------------------------------------------------
// Trial dispatch

/// Runs fn(trial_index) for every index on a small worker pool. Results land
/// by index, so the output is independent of scheduling.
template <class T>
std::vector<T> run_trials(std::size_t n_trials, const std::function<T(std::size_t)>& fn, unsigned workers = 0) {
    std::vector<std::optional<T>> slots(n_trials);
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n_trials, 1)));
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < n_trials; i += workers) {
                        slots[i].emplace(fn(i));
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    std::vector<T> out;
    out.reserve(n_trials);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

/// Per-trial MSEs of each estimator from one simulation.
struct TrialMse {
    double filter = nan_value;
    double smoother = nan_value;
    double abc = nan_value;
    std::vector<double> windows;  // unwrapped windowed MSE of the feedback estimate
    std::size_t abc_indeterminate = 0;
};

inline TrialMse trial_mse(const SimulationRecord& r, std::size_t windows = 0) {
    TrialMse m;
    const std::size_t first = r.timing.first;
    m.filter = window_mse(r.phi, r.phi_f, first, r.size());
    if (r.feedback == Feedback::filter) {
        m.smoother = window_mse(r.phi, r.phi_s, first, r.smoother_last());
        if (windows > 0) m.windows = windowed_mse(r, r.phi_f, windows);
    } else {
        m.abc = window_mse(r.phi, r.phi_abc, first, r.size());
        if (windows > 0) m.windows = windowed_mse(r, r.phi_abc, windows);
        m.abc_indeterminate = r.abc_indeterminate;
    }
    return m;
}

}  // namespace phasetrack
