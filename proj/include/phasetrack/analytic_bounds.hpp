#pragma once

// Error bounds for estimating a stationary Gaussian phase observed through
// white noise of density S_n = 1/(4N):
//
//   QCRB       (1/2pi) Int [1/S(w) + 4N]^-1 dw
//   filtering  S_n (1/2pi) Int ln[1 + S(w)/S_n] dw
//   smoothing  (1/2pi) Int [1/S(w) + 1/S_n]^-1 dw   (identical to the QCRB)
//
// The quadrature path works for any even spectrum; power-law closed forms
// are provided alongside.

#include <cmath>
#include <algorithm>
#include <functional>
#include <istream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "phasetrack/error.hpp"
#include "phasetrack/phase_process.hpp"

namespace phasetrack {

using SpectrumFn = std::function<double(double)>;

struct Estimate {
    double value = 0.0;
    double error = 0.0;  // absolute error estimate
};

struct BoundQuery {
    SpectrumFn spectrum;
    double photon_flux = 0.0;

    static BoundQuery from_model(const PhaseModel& model, double photon_flux) {
        return {[model](double w) { return phasetrack::spectrum(model, w); }, photon_flux};
    }

    double noise_density() const { return 1.0 / (4.0 * photon_flux); }
};

/// Spectrum known at sample frequencies; log-log interpolation inside the
/// table and power-law extrapolation from the end segments outside it.
class TabulatedSpectrum {
public:
    TabulatedSpectrum(std::vector<double> omega, std::vector<double> density) {
        require(omega.size() == density.size() && omega.size() >= 2, "invalid-spectrum-table",
                "need at least two (omega, S) rows");
        for (std::size_t i = 0; i < omega.size(); ++i) {
            require(omega[i] > 0.0 && density[i] > 0.0 && std::isfinite(omega[i]) && std::isfinite(density[i]),
                    "invalid-spectrum-table", "omega and S must be positive, row " + std::to_string(i + 1));
            require(i == 0 || omega[i] > omega[i - 1], "invalid-spectrum-table", "omega must increase");
            log_w_.push_back(std::log(omega[i]));
            log_s_.push_back(std::log(density[i]));
        }
    }

    /// Reads "omega,S" rows; a non-numeric first line is taken as a header.
    static TabulatedSpectrum read_csv(std::istream& in) {
        std::vector<double> w, s;
        std::string line;
        std::size_t row = 0;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty() || line[0] == '#') continue;
            std::replace(line.begin(), line.end(), ',', ' ');
            std::istringstream fields(line);
            double a = 0.0, b = 0.0;
            if (!(fields >> a >> b)) {
                require(w.empty() && row == 1, "invalid-spectrum-table",
                        "row " + std::to_string(row) + " is not two numbers");
                continue;
            }
            w.push_back(a);
            s.push_back(b);
        }
        return {std::move(w), std::move(s)};
    }

    double operator()(double omega) const {
        const double w = std::abs(omega);
        if (w == 0.0) {
            throw Error(ErrorKind::validation, "spectrum-divergent-at-zero", "tabulated spectrum needs omega > 0");
        }
        const double lw = std::log(w);
        std::size_t i = static_cast<std::size_t>(std::upper_bound(log_w_.begin(), log_w_.end(), lw) - log_w_.begin());
        i = std::clamp<std::size_t>(i, 1, log_w_.size() - 1);
        const double slope = (log_s_[i] - log_s_[i - 1]) / (log_w_[i] - log_w_[i - 1]);
        return std::exp(log_s_[i - 1] + slope * (lw - log_w_[i - 1]));
    }

private:
    std::vector<double> log_w_, log_s_;
};

namespace detail {

enum class Integrand { qcrb, filter };

// Relative target per GK panel; well inside the 1e-4 the bounds promise.
constexpr double panel_tolerance = 1e-10;

inline double integrand(Integrand kind, double s, double flux) {
    if (flux == 0.0) {
        return s;
    }
    if (kind == Integrand::qcrb) {
        return 1.0 / (1.0 / s + 4.0 * flux);
    }
    if (!std::isfinite(s)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const double sn = 1.0 / (4.0 * flux);
    return sn * std::log1p(s / sn);
}

// Frequency where S(w) falls to `level`, assuming S decreasing on (0, inf).
inline double level_crossing(const SpectrumFn& S, double level) {
    double lo = 1.0;
    double hi = 1.0;
    while (S(lo) < level) {
        lo *= 0.5;
        if (lo < 1e-150) {
            throw Error(ErrorKind::numerical, "bound-divergent", "spectrum never reaches the split level");
        }
    }
    while (S(hi) > level) {
        hi *= 2.0;
        if (hi > 1e150) {
            throw Error(ErrorKind::numerical, "bound-divergent", "spectrum never falls below the noise floor");
        }
    }
    for (int i = 0; i < 200 && hi / lo > 1.0 + 1e-14; ++i) {
        const double mid = std::sqrt(lo * hi);
        (S(mid) > level ? lo : hi) = mid;
    }
    return std::sqrt(lo * hi);
}

template <class F>
Estimate gauss_kronrod(F f, double a, double b) {
    double err = 0.0;
    const double v = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
        f, a, b, 20, panel_tolerance, &err);
    return {v, err};
}

// One-sided integral (0, inf) of the chosen integrand.
inline Estimate half_line_integral(const BoundQuery& q, Integrand kind) {
    const SpectrumFn& S = q.spectrum;
    const double flux = q.photon_flux;
    require(flux >= 0.0 && std::isfinite(flux), "invalid-flux", "photon flux must be >= 0");

    // Split point: where the spectrum meets the noise floor, or half its
    // low-frequency value when it never rises above that floor.
    const double s_small = S(1e-9);
    double level = 0.0;
    if (flux > 0.0) {
        level = q.noise_density();
        if (std::isfinite(s_small) && !(s_small > level)) {
            level = 0.5 * s_small;
        }
    } else {
        // No measurement: the bound is the prior variance, finite only if S is
        // integrable at the origin.
        const double s_larger = S(1e-8);
        if (!std::isfinite(s_small) || !std::isfinite(s_larger) || std::log10(s_small / s_larger) >= 0.999) {
            throw Error(ErrorKind::numerical, "bound-divergent",
                        "no measurement information and the prior variance diverges");
        }
        level = 0.5 * s_small;
    }
    const double knee = level_crossing(S, level);

    const auto f = [&](double w) { return integrand(kind, S(w), flux); };

    // (0, knee]: w = knee * e^-u over u in [0, 40]; the remainder beyond
    // u = 40 is below e^-40 relative for every integrable integrand here.
    Estimate low{};
    const double edges_low[] = {0.0, 1.0, 4.0, 12.0, 40.0};
    for (int i = 0; i + 1 < 5; ++i) {
        const auto g = [&](double u) {
            const double w = knee * std::exp(-u);
            const double v = f(w);
            return std::isfinite(v) ? v * w : 0.0;
        };
        const Estimate e = gauss_kronrod(g, edges_low[i], edges_low[i + 1]);
        low.value += e.value;
        low.error += e.error;
    }

    // [knee, 1000 knee]: log-spaced decades.
    const double cutoff = 1e3 * knee;
    Estimate mid{};
    for (int d = 0; d < 3; ++d) {
        const auto g = [&](double u) {
            const double w = knee * std::exp(u);
            return f(w) * w;
        };
        const double a = d * std::numbers::ln10;
        const Estimate e = gauss_kronrod(g, a, a + std::numbers::ln10);
        mid.value += e.value;
        mid.error += e.error;
    }

    // Tail beyond the cutoff: both integrands behave as S - c S^2 there.
    // Fit the local power law S ~ w^-q and integrate the first two terms.
    const double s_c = S(cutoff);
    const double s_2c = S(2.0 * cutoff);
    const double exponent = std::log2(s_c / s_2c);
    if (!(exponent > 1.0 + 1e-9)) {
        throw Error(ErrorKind::numerical, "bound-divergent",
                    "spectrum decays no faster than 1/|omega|; tail integral diverges");
    }
    const double c2 = (kind == Integrand::qcrb ? 4.0 : 2.0) * flux;
    const double lead = s_c * cutoff / (exponent - 1.0);
    const double second = c2 * s_c * s_c * cutoff / (2.0 * exponent - 1.0);
    const double curvature = std::abs(exponent - std::log2(s_2c / S(4.0 * cutoff)));
    const Estimate tail{lead - second, std::abs(second) * c2 * s_c + std::abs(lead) * curvature};

    return {low.value + mid.value + tail.value, low.error + mid.error + tail.error};
}

inline Estimate symmetric_bound(const BoundQuery& q, Integrand kind) {
    const Estimate half = half_line_integral(q, kind);
    // Even integrand: (1/2pi) * 2 * Int_0^inf.
    const Estimate out{half.value / std::numbers::pi, half.error / std::numbers::pi};
    if (!std::isfinite(out.value)) {
        throw Error(ErrorKind::numerical, "bound-divergent", "quadrature produced a non-finite value");
    }
    return out;
}

inline void require_power_law(double p, double kappa, double flux) {
    require(p > 1.0, "exponent-out-of-range", "p must exceed 1, got " + std::to_string(p));
    require(kappa > 0.0, "invalid-kappa", "kappa must be positive");
    require(flux > 0.0, "invalid-flux", "photon flux must be positive");
}

}  // namespace detail

/// Quantum Cramer-Rao bound on the phase MSE, by quadrature.
inline Estimate qcrb_quadrature(const BoundQuery& q) {
    return detail::symmetric_bound(q, detail::Integrand::qcrb);
}

/// Minimum MSE of causal (filtered) estimation, by quadrature.
inline Estimate filter_mse_quadrature(const BoundQuery& q) {
    return detail::symmetric_bound(q, detail::Integrand::filter);
}

/// Minimum MSE of smoothing. With S_n = 1/(4N) the integrand is the QCRB's.
inline Estimate smoother_mse_quadrature(const BoundQuery& q) {
    return detail::symmetric_bound(q, detail::Integrand::qcrb);
}

inline double qcrb_power_law(double p, double kappa, double flux) {
    detail::require_power_law(p, kappa, flux);
    return 1.0 / (p * std::sin(std::numbers::pi / p)) * std::pow(4.0 * flux / kappa, -(p - 1.0) / p);
}

inline double filter_mse_power_law(double p, double kappa, double flux) {
    detail::require_power_law(p, kappa, flux);
    return 1.0 / std::sin(std::numbers::pi / p) * std::pow(4.0 * flux / kappa, -(p - 1.0) / p);
}

/// MSE of the linearized ABC estimator for p = 4 with decay lambda on x_0,
/// as printed: kappa^3 / (2 lambda chi^3 (lambda + chi)) + 1/(2 chi).
inline double abc_linearized_mse(double kappa, double chi, double lambda) {
    require(kappa > 0.0, "invalid-kappa", "kappa must be positive");
    require(chi > 0.0, "invalid-chi", "chi must be positive");
    require(lambda >= 0.0, "invalid-damping", "lambda must be >= 0");
    if (lambda == 0.0) {
        throw Error(ErrorKind::numerical, "estimator-mse-divergent",
                    "without damping the exponential estimator's MSE diverges for p = 4");
    }
    return kappa * kappa * kappa / (2.0 * lambda * chi * chi * chi * (lambda + chi)) + 1.0 / (2.0 * chi);
}

/// Stationary MSE of the exponential estimator
///   phi_est(t) = chi/(2 sqrt N) Int e^{chi(u-t)} y(u) du
/// on the linearized record for p = 4 with decay lambda on x_0, computed
/// directly from the estimator with no normalization assumed:
///   kappa^3 / (2 lambda chi (lambda + chi)) + chi / (8 N).
/// It coincides with abc_linearized_mse only when chi = 1 and chi^2 = 4N.
inline double exponential_estimator_mse(double kappa, double chi, double lambda, double flux) {
    require(kappa > 0.0, "invalid-kappa", "kappa must be positive");
    require(chi > 0.0, "invalid-chi", "chi must be positive");
    require(flux > 0.0, "invalid-flux", "photon flux must be positive");
    require(lambda >= 0.0, "invalid-damping", "lambda must be >= 0");
    if (lambda == 0.0) {
        throw Error(ErrorKind::numerical, "estimator-mse-divergent",
                    "without damping the exponential estimator's MSE diverges for p = 4");
    }
    return kappa * kappa * kappa / (2.0 * lambda * chi * (lambda + chi)) + chi / (8.0 * flux);
}

}  // namespace phasetrack
