#pragma once

// Sweep specifications, sweep execution and CSV output for the command-line
// front end. A sweep spec is an INI file; comments take whole lines.
//
//   [sweep]
//   p = 2, 4
//   kappa = 1
//   ; values of (N/kappa)^((p-1)/p)
//   grid = 10, 100
//   estimators = filter, smoother
//   trials = 64
//   seed = 1
//   linearized = true
//   ; run length in units of mu^(-1/p)
//   duration = 1000
//   [abc]
//   ; default mu^(1/p)
//   chi = 5
//   ; damping on x_0, default none
//   cutoff = 0.5

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/core.h>

#include "phasetrack/analytic_bounds.hpp"
#include "phasetrack/error.hpp"
#include "phasetrack/lg_estimation.hpp"
#include "phasetrack/phase_process.hpp"
#include "phasetrack/simulation.hpp"

namespace phasetrack {

enum class Estimator { filter, smoother, abc, abc_linear };

inline std::string_view to_string(Estimator e) {
    switch (e) {
        case Estimator::filter: return "filter";
        case Estimator::smoother: return "smoother";
        case Estimator::abc: return "abc";
        case Estimator::abc_linear: return "abc_linear";
    }
    return "?";
}

/// The estimate that drives the LO when this estimator is simulated.
inline Feedback feedback_of(Estimator e) {
    if (e == Estimator::abc) return Feedback::abc;
    if (e == Estimator::abc_linear) return Feedback::abc_linear;
    return Feedback::filter;
}

inline Estimator parse_estimator(std::string_view s) {
    if (s == "filter") return Estimator::filter;
    if (s == "smoother") return Estimator::smoother;
    if (s == "abc") return Estimator::abc;
    if (s == "abc_linear") return Estimator::abc_linear;
    throw Error(ErrorKind::validation, "invalid-estimator",
                "estimators: unknown estimator '" + std::string(s) + "' (filter, smoother, abc, abc_linear)");
}

struct SweepSpec {
    std::vector<int> p_values;
    double kappa = 1.0;
    std::vector<double> grid;
    std::vector<Estimator> estimators;
    std::size_t trials = 64;
    std::uint64_t seed = 0;
    bool linearized = false;
    double duration_tau = 1000.0;
    std::optional<double> dt_tau;
    std::optional<double> abc_chi;
    std::optional<double> cutoff;
    unsigned workers = 0;

    void validate() const {
        require(!p_values.empty(), "invalid-spec", "p: need at least one value");
        for (int p : p_values) {
            require(p >= 2 && p % 2 == 0 && p <= max_riccati_p, "invalid-spec",
                    "p: simulation needs even p in [2, " + std::to_string(max_riccati_p) + "], got " +
                        std::to_string(p));
        }
        require(kappa > 0.0 && std::isfinite(kappa), "invalid-spec", "kappa: must be positive");
        require(!grid.empty(), "invalid-spec", "grid: need at least one value");
        for (double g : grid) require(g > 0.0 && std::isfinite(g), "invalid-spec", "grid: values must be > 0");
        require(!estimators.empty(), "invalid-spec", "estimators: need at least one estimator");
        require(trials >= 2, "invalid-spec", "trials: need at least 2");
        require(duration_tau > 40.0, "invalid-spec", "duration: must exceed 40 (twice the burn-in)");
        if (dt_tau) require(*dt_tau > 0.0 && *dt_tau <= 0.01, "invalid-spec", "dt: must be in (0, 0.01]");
        if (abc_chi) require(*abc_chi > 0.0 && std::isfinite(*abc_chi), "invalid-spec", "chi: must be positive");
        if (cutoff) require(*cutoff >= 0.0 && std::isfinite(*cutoff), "invalid-spec", "cutoff: must be >= 0");
    }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

template <class T>
T parse_value(const std::string& field, const std::string& text) {
    std::istringstream in(text);
    T v{};
    in >> v;
    char rest = 0;
    if (in.fail() || (in >> rest)) {
        throw Error(ErrorKind::validation, "invalid-spec", field + ": cannot parse '" + text + "'");
    }
    return v;
}

inline bool parse_bool(const std::string& field, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw Error(ErrorKind::validation, "invalid-spec", field + ": expected true or false, got '" + text + "'");
}

}  // namespace detail

inline SweepSpec parse_sweep_spec(std::istream& in) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorKind::validation, "invalid-spec", std::string("syntax: ") + e.what());
    }
    const std::map<std::string, std::set<std::string>> known{
        {"sweep",
         {"p", "kappa", "grid", "grid_min", "grid_max", "grid_points", "estimators", "trials", "seed", "linearized",
          "duration", "dt", "workers"}},
        {"abc", {"chi", "cutoff"}}};
    for (const auto& [section, body] : tree) {
        const auto it = known.find(section);
        require(it != known.end(), "invalid-spec", section + ": unknown section");
        for (const auto& [key, value] : body) {
            require(it->second.contains(key), "invalid-spec", key + ": unknown key in [" + section + "]");
        }
    }

    SweepSpec s;
    const auto get = [&](const char* path) { return tree.get_optional<std::string>(path); };
    const auto required = [&](const char* path, const char* field) {
        const auto v = get(path);
        require(v.has_value(), "invalid-spec", std::string(field) + ": missing");
        return *v;
    };

    for (const auto& item : detail::split_list(required("sweep.p", "p"))) {
        s.p_values.push_back(detail::parse_value<int>("p", item));
    }
    if (const auto v = get("sweep.kappa")) s.kappa = detail::parse_value<double>("kappa", *v);

    if (const auto v = get("sweep.grid")) {
        for (const auto& item : detail::split_list(*v)) s.grid.push_back(detail::parse_value<double>("grid", item));
    } else {
        const double lo = detail::parse_value<double>("grid_min", required("sweep.grid_min", "grid"));
        const double hi = detail::parse_value<double>("grid_max", required("sweep.grid_max", "grid_max"));
        const int count = detail::parse_value<int>("grid_points", required("sweep.grid_points", "grid_points"));
        require(lo > 0.0 && hi >= lo && count >= 1, "invalid-spec", "grid: need 0 < grid_min <= grid_max, grid_points >= 1");
        for (int i = 0; i < count; ++i) {
            const double f = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
            s.grid.push_back(lo * std::pow(hi / lo, f));
        }
    }

    for (const auto& item : detail::split_list(get("sweep.estimators").value_or(""))) {
        s.estimators.push_back(parse_estimator(item));
    }
    if (const auto v = get("sweep.trials")) s.trials = detail::parse_value<std::size_t>("trials", *v);
    if (const auto v = get("sweep.seed")) s.seed = detail::parse_value<std::uint64_t>("seed", *v);
    if (const auto v = get("sweep.linearized")) s.linearized = detail::parse_bool("linearized", *v);
    if (const auto v = get("sweep.duration")) s.duration_tau = detail::parse_value<double>("duration", *v);
    if (const auto v = get("sweep.dt")) s.dt_tau = detail::parse_value<double>("dt", *v);
    if (const auto v = get("sweep.workers")) s.workers = detail::parse_value<unsigned>("workers", *v);
    if (const auto v = get("abc.chi")) s.abc_chi = detail::parse_value<double>("chi", *v);
    if (const auto v = get("abc.cutoff")) s.cutoff = detail::parse_value<double>("cutoff", *v);
    s.validate();
    return s;
}

inline SweepSpec read_sweep_spec(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "unreadable-spec", "cannot open spec file " + path);
    return parse_sweep_spec(in);
}

// ---------------------------------------------------------------------------

/// Phase model for a simulation: undamped power law, or a cutoff on x_0.
inline PhaseModel sweep_model(int p, double kappa, std::optional<double> cutoff) {
    if (!cutoff || *cutoff == 0.0) return PhaseModel::power_law(p, kappa);
    std::vector<double> dampings(static_cast<std::size_t>(p / 2), 0.0);
    dampings[0] = *cutoff;
    return PhaseModel::damped(p, kappa, std::move(dampings));
}

/// N from the figure axis value (N/kappa)^((p-1)/p).
inline double flux_from_grid(int p, double kappa, double grid) {
    return kappa * std::pow(grid, static_cast<double>(p) / (p - 1));
}

inline double default_chi(const LgSystem& sys) { return std::pow(sys.mu, 1.0 / sys.p()); }

struct AnalyticColumns {
    double lg_filter_mse = 0.0;
    double qcrb = 0.0;
    double wiener_filter_mse = 0.0;
};

inline AnalyticColumns analytic_columns(int p, double kappa, double flux) {
    return {lg_filter_mse(p, kappa, flux), qcrb_power_law(p, kappa, flux), filter_mse_power_law(p, kappa, flux)};
}

struct SweepRow {
    int p = 0;
    double grid = 0.0;
    double n_over_kappa = 0.0;
    Estimator estimator = Estimator::filter;
    MseSummary mse;
    double dt = 0.0;
    double duration = 0.0;
    std::uint64_t seed = 0;
    AnalyticColumns analytic;
    bool diverged = false;
    std::size_t abc_indeterminate = 0;

    double ratio() const { return mse.mse / analytic.lg_filter_mse; }
};

inline constexpr std::string_view sweep_header =
    "p,N_over_kappa,estimator,mse,stderr,n_trials,dt,duration,seed,lg_filter_mse,qcrb,wiener_filter_mse";
inline constexpr std::string_view ratio_header = "p,grid,estimator,ratio,ratio_stderr,status,abc_indeterminate";

inline std::string csv_number(double v) { return std::isfinite(v) ? fmt::format("{:.12g}", v) : std::string(); }

inline std::string sweep_csv_line(const SweepRow& r) {
    return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}", r.p, csv_number(r.n_over_kappa), to_string(r.estimator),
                       csv_number(r.mse.mse), csv_number(r.mse.std_error), r.mse.n_trials, csv_number(r.dt),
                       csv_number(r.duration), r.seed, csv_number(r.analytic.lg_filter_mse),
                       csv_number(r.analytic.qcrb), csv_number(r.analytic.wiener_filter_mse));
}

inline std::string ratio_csv_line(const SweepRow& r) {
    return fmt::format("{},{},{},{},{},{},{}", r.p, csv_number(r.grid), to_string(r.estimator), csv_number(r.ratio()),
                       csv_number(r.mse.std_error / r.analytic.lg_filter_mse), r.diverged ? "diverged" : "ok",
                       r.abc_indeterminate);
}

namespace detail {

struct EnsembleResult {
    std::vector<TrialMse> trials;
    Timing timing;
};

inline std::vector<double> column(const std::vector<TrialMse>& t, const double TrialMse::*field) {
    std::vector<double> out;
    out.reserve(t.size());
    for (const auto& m : t) out.push_back(m.*field);
    return out;
}

inline bool ensemble_diverging(const std::vector<TrialMse>& t) {
    if (t.empty() || t.front().windows.empty()) return false;
    std::vector<double> mean(t.front().windows.size(), 0.0);
    for (const auto& m : t) {
        for (std::size_t w = 0; w < mean.size(); ++w) mean[w] += m.windows[w] / static_cast<double>(t.size());
    }
    return diverging(mean);
}

}  // namespace detail

inline constexpr std::size_t divergence_windows = 4;

/// All estimator rows for one (p, grid) point. Filter and smoother share the
/// filter-fed simulations; each ABC variant runs its own feedback loop.
inline std::vector<SweepRow> run_sweep_point(const SweepSpec& spec, int p, double grid, std::uint64_t point_seed) {
    const double flux = flux_from_grid(p, spec.kappa, grid);
    const PhaseModel model = sweep_model(p, spec.kappa, spec.cutoff);
    const LgSystem sys = build_lg_system(p, spec.kappa, flux);
    const double tau = sys.timescale();
    const AnalyticColumns analytic = analytic_columns(p, spec.kappa, flux);
    const double chi = spec.abc_chi.value_or(default_chi(sys));

    HomodyneConfig base;
    base.photon_flux = flux;
    base.duration = spec.duration_tau * tau;
    base.linearized = spec.linearized;
    if (spec.dt_tau) base.dt = *spec.dt_tau * tau;

    const auto ensemble = [&](std::optional<AbcOptions> abc, std::uint64_t stream) {
        const std::uint64_t seed = derive_seed(point_seed, stream);
        const Timing timing = resolve_timing(sys, base, abc ? abc->chi : 0.0);
        auto trials = run_trials<TrialMse>(
            spec.trials,
            [&](std::size_t i) {
                HomodyneConfig c = base;
                c.seed = derive_seed(seed, i);
                const SimulationRecord r = abc ? run_abc(model, sys, c, *abc) : simulate_record(model, sys, c);
                return trial_mse(r, divergence_windows);
            },
            spec.workers);
        return detail::EnsembleResult{std::move(trials), timing};
    };

    std::map<Feedback, detail::EnsembleResult> runs;
    for (Estimator e : spec.estimators) {
        const Feedback fb = feedback_of(e);
        if (runs.contains(fb)) continue;
        if (fb == Feedback::filter) {
            runs.emplace(fb, ensemble(std::nullopt, 0));
        } else {
            runs.emplace(fb, ensemble(AbcOptions{chi, fb}, fb == Feedback::abc ? 1 : 2));
        }
    }

    std::vector<SweepRow> rows;
    for (Estimator e : spec.estimators) {
        const Feedback fb = feedback_of(e);
        const auto& run = runs.at(fb);
        SweepRow r;
        r.p = p;
        r.grid = grid;
        r.n_over_kappa = flux / spec.kappa;
        r.estimator = e;
        const double TrialMse::*field = e == Estimator::filter     ? &TrialMse::filter
                                        : e == Estimator::smoother ? &TrialMse::smoother
                                                                   : &TrialMse::abc;
        r.mse = summarize_trials(detail::column(run.trials, field));
        r.dt = run.timing.dt;
        r.duration = base.duration;
        r.seed = spec.seed;
        r.analytic = analytic;
        r.diverged = detail::ensemble_diverging(run.trials);
        for (const auto& t : run.trials) r.abc_indeterminate += t.abc_indeterminate;
        rows.push_back(r);
    }
    return rows;
}

/// Runs every point in spec order, handing each point's rows to `sink` as
/// soon as they are complete.
template <class Sink>
void run_sweep(const SweepSpec& spec, Sink&& sink) {
    spec.validate();
    std::uint64_t index = 0;
    for (int p : spec.p_values) {
        for (double g : spec.grid) {
            sink(run_sweep_point(spec, p, g, derive_seed(spec.seed, index++)));
        }
    }
}

/// Companion file next to the main sweep CSV carrying ratios and status.
inline std::string ratio_path(const std::string& out) {
    const auto dot = out.rfind('.');
    const auto slash = out.find_last_of('/');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return out + ".ratios.csv";
    return out.substr(0, dot) + ".ratios" + out.substr(dot);
}

/// Per-step CSV of one record; empty fields where an estimate is undefined.
inline void write_record_csv(std::ostream& out, const SimulationRecord& r) {
    out << "t,phi,theta,y,phi_f,phi_s,phi_abc\n";
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double abc = r.phi_abc.empty() ? nan_value : r.phi_abc[i];
        out << fmt::format("{},{},{},{},{},{},{}\n", csv_number(r.t[i]), csv_number(r.phi[i]), csv_number(r.theta[i]),
                           csv_number(r.y[i]), csv_number(r.phi_f[i]), csv_number(r.phi_s[i]), csv_number(abc));
    }
}

}  // namespace phasetrack
