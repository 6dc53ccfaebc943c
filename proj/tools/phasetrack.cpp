// phasetrack: bounds, Riccati solutions, single simulations and sweeps.
//
// Exit codes: 0 success, 2 validation error, 3 numerical failure.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/ostream.h>

#include "phasetrack/analytic_bounds.hpp"
#include "phasetrack/error.hpp"
#include "phasetrack/experiment.hpp"
#include "phasetrack/lg_estimation.hpp"
#include "phasetrack/phase_process.hpp"
#include "phasetrack/simulation.hpp"

namespace pt = phasetrack;

namespace {

constexpr int exit_validation = 2;
constexpr int exit_numerical = 3;

void print_matrix(const char* name, const Eigen::MatrixXd& m) {
    fmt::print("{}\n", name);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::string line;
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            line += fmt::format("{:>16.10g}", m(r, c));
        }
        fmt::print("{}\n", line);
    }
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    pt::require(static_cast<bool>(out), "unwritable-path", "cannot write " + path);
    return out;
}

struct BoundsArgs {
    std::optional<double> p;
    double kappa = 1.0;
    double flux = 0.0;
    std::string spectrum_file;
};

void cmd_bounds(const BoundsArgs& a) {
    pt::require(a.flux > 0.0, "invalid-flux", "--flux must be positive");
    pt::BoundQuery q;
    q.photon_flux = a.flux;
    std::optional<double> p;
    if (!a.spectrum_file.empty()) {
        std::ifstream in(a.spectrum_file);
        pt::require(static_cast<bool>(in), "unreadable-spectrum", "cannot open " + a.spectrum_file);
        const auto table = pt::TabulatedSpectrum::read_csv(in);
        q.spectrum = table;
        fmt::print("spectrum {}  N = {:.12g}\n", a.spectrum_file, a.flux);
    } else {
        pt::require(a.p.has_value(), "missing-argument", "need --p or --spectrum-file");
        q = pt::BoundQuery::from_model(pt::PhaseModel::power_law(*a.p, a.kappa), a.flux);
        p = a.p;
        fmt::print("p = {:.12g}  kappa = {:.12g}  N = {:.12g}\n", *p, a.kappa, a.flux);
    }

    const pt::Estimate qcrb = pt::qcrb_quadrature(q);
    const pt::Estimate filter = pt::filter_mse_quadrature(q);
    const pt::Estimate smoother = pt::smoother_mse_quadrature(q);
    std::optional<double> qcrb_cf, filter_cf, ratio_cf;
    if (p) {
        qcrb_cf = pt::qcrb_power_law(*p, a.kappa, a.flux);
        filter_cf = pt::filter_mse_power_law(*p, a.kappa, a.flux);
        ratio_cf = *filter_cf / *qcrb_cf;
    }
    const auto cf = [](std::optional<double> v) { return v ? fmt::format("{:.12g}", *v) : std::string("-"); };
    fmt::print("{:<14}{:>20}{:>20}{:>14}\n", "quantity", "closed_form", "quadrature", "quad_error");
    fmt::print("{:<14}{:>20}{:>20.12g}{:>14.3g}\n", "qcrb", cf(qcrb_cf), qcrb.value, qcrb.error);
    fmt::print("{:<14}{:>20}{:>20.12g}{:>14.3g}\n", "filter_mse", cf(filter_cf), filter.value, filter.error);
    fmt::print("{:<14}{:>20}{:>20.12g}{:>14.3g}\n", "smoother_mse", cf(qcrb_cf), smoother.value, smoother.error);
    fmt::print("{:<14}{:>20}{:>20.12g}{:>14}\n", "filter/qcrb", cf(ratio_cf), filter.value / qcrb.value, "");
}

void cmd_riccati(int p) {
    pt::require(p >= 2 && p % 2 == 0 && p <= pt::max_riccati_p, "p-out-of-range",
                "--p must be an even integer in [2, " + std::to_string(pt::max_riccati_p) + "]");
    const Eigen::MatrixXd vf = pt::solve_filter_covariance(p);
    const Eigen::MatrixXd vr = pt::retro_covariance(vf);
    const Eigen::MatrixXd vs = pt::smoother_covariance(vf, vr);
    fmt::print("p = {}  n = {}\n", p, p / 2 - 1);
    print_matrix("Vt_F", vf);
    print_matrix("Vt_R", vr);
    print_matrix("Vt_S", vs);
    fmt::print("riccati_residual {:.3g}\n", pt::riccati_residual(vf, p / 2 - 1));
}

struct SimulateArgs {
    int p = 2;
    double kappa = 1.0;
    double flux = 0.0;
    std::optional<double> design_flux;
    std::string estimator = "filter";
    std::uint64_t seed = 0;
    std::string out;
    double duration_tau = 200.0;
    std::optional<double> dt_tau;
    bool linearized = false;
    std::optional<double> chi;
    std::optional<double> cutoff;
};

void cmd_simulate(const SimulateArgs& a) {
    const pt::Estimator est = pt::parse_estimator(a.estimator);
    const pt::PhaseModel model = pt::sweep_model(a.p, a.kappa, a.cutoff);
    // The filter is designed for design_flux; the beam may carry a different N.
    const pt::LgSystem sys = pt::build_lg_system(a.p, a.kappa, a.design_flux.value_or(a.flux));
    pt::HomodyneConfig c;
    c.photon_flux = a.flux;
    c.duration = a.duration_tau * sys.timescale();
    c.seed = a.seed;
    c.linearized = a.linearized;
    if (a.dt_tau) c.dt = *a.dt_tau * sys.timescale();

    const pt::Feedback fb = pt::feedback_of(est);
    const pt::SimulationRecord r =
        fb == pt::Feedback::filter ? pt::simulate_record(model, sys, c)
                                   : pt::run_abc(model, sys, c, {a.chi.value_or(pt::default_chi(sys)), fb});
    std::ofstream out = open_output(a.out);
    pt::write_record_csv(out, r);
    out.close();
    pt::require(!out.fail(), "unwritable-path", "failed writing " + a.out);

    const pt::TrialMse m = pt::trial_mse(r);
    const double mse = est == pt::Estimator::filter     ? m.filter
                       : est == pt::Estimator::smoother ? m.smoother
                                                        : m.abc;
    fmt::print("{} steps  dt = {:.6g}  {} mse = {:.6g}  lg_filter_mse = {:.6g}\n", r.size(), r.timing.dt,
               pt::to_string(est), mse, pt::lg_filter_mse(a.p, a.kappa, sys.photon_flux));
    if (fb == pt::Feedback::abc && r.abc_indeterminate > 0) {
        fmt::print("abc-indeterminate steps: {}\n", r.abc_indeterminate);
    }
}

void cmd_sweep(const std::string& spec_path, const std::string& out_path, std::optional<std::uint64_t> seed,
               std::optional<unsigned> workers) {
    pt::SweepSpec spec = pt::read_sweep_spec(spec_path);
    if (seed) spec.seed = *seed;
    if (workers) spec.workers = *workers;
    std::ofstream out = open_output(out_path);
    const std::string companion = pt::ratio_path(out_path);
    std::ofstream ratios = open_output(companion);
    out << pt::sweep_header << '\n';
    ratios << pt::ratio_header << '\n';
    out.flush();
    ratios.flush();
    pt::run_sweep(spec, [&](const std::vector<pt::SweepRow>& rows) {
        for (const auto& r : rows) {
            out << pt::sweep_csv_line(r) << '\n';
            ratios << pt::ratio_csv_line(r) << '\n';
            fmt::print("p={} grid={:.6g} {:<10} mse={:.6g} +- {:.2g}  ratio={:.4f}{}\n", r.p, r.grid,
                       pt::to_string(r.estimator), r.mse.mse, r.mse.std_error, r.ratio(),
                       r.diverged ? "  diverged" : "");
        }
        out.flush();
        ratios.flush();
    });
    pt::require(!out.fail() && !ratios.fail(), "unwritable-path", "failed writing sweep output");
    fmt::print("wrote {} and {}\n", out_path, companion);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive phase estimation: bounds, Riccati solutions and homodyne simulations"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;

    BoundsArgs bounds;
    auto* b = app.add_subcommand("bounds", "QCRB, filter and smoother MSE bounds");
    b->add_option("--p", bounds.p, "spectral exponent (> 1)");
    b->add_option("--kappa", bounds.kappa, "rate constant")->capture_default_str();
    b->add_option("--flux", bounds.flux, "photon flux N")->required();
    b->add_option("--spectrum-file", bounds.spectrum_file, "CSV of omega,S rows instead of a power law");
    b->add_option("--seed", seed, "accepted for uniformity; bounds are deterministic");

    int riccati_p = 2;
    auto* r = app.add_subcommand("riccati", "normalized filter, retrofilter and smoother covariances");
    r->add_option("--p", riccati_p, "even spectral exponent <= 20")->required();
    r->add_option("--seed", seed, "accepted for uniformity; the solution is deterministic");

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "one closed-loop trial written as per-step CSV");
    s->add_option("--p", sim.p, "even spectral exponent")->capture_default_str();
    s->add_option("--kappa", sim.kappa, "rate constant")->capture_default_str();
    s->add_option("--flux", sim.flux, "photon flux N of the beam")->required();
    s->add_option("--design-flux", sim.design_flux, "flux the filter is designed for (default --flux)");
    s->add_option("--estimator", sim.estimator, "filter, smoother, abc or abc_linear")->capture_default_str();
    s->add_option("--seed", sim.seed, "trial seed")->capture_default_str();
    s->add_option("--out", sim.out, "output CSV")->required();
    s->add_option("--duration", sim.duration_tau, "run length in units of mu^(-1/p)")->capture_default_str();
    s->add_option("--dt", sim.dt_tau, "time step in units of mu^(-1/p) (default 0.01)");
    s->add_flag("--linearized", sim.linearized, "use phi - theta instead of sin(phi - theta)");
    s->add_option("--chi", sim.chi, "ABC memory rate (default mu^(1/p))");
    s->add_option("--cutoff", sim.cutoff, "damping rate on x_0");

    std::string spec_path, out_path;
    std::optional<std::uint64_t> sweep_seed;
    std::optional<unsigned> workers;
    auto* w = app.add_subcommand("sweep", "parameter sweep from an INI spec");
    w->add_option("spec", spec_path, "sweep spec file")->required();
    w->add_option("--out", out_path, "output CSV; ratios go to <out>.ratios.csv")->required();
    w->add_option("--seed", sweep_seed, "override the spec seed");
    w->add_option("--workers", workers, "worker threads (default: hardware concurrency)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_validation;
    }

    try {
        if (*b) cmd_bounds(bounds);
        if (*r) cmd_riccati(riccati_p);
        if (*s) cmd_simulate(sim);
        if (*w) cmd_sweep(spec_path, out_path, sweep_seed, workers);
    } catch (const pt::Error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return e.kind() == pt::ErrorKind::validation ? exit_validation : exit_numerical;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return exit_numerical;
    }
    return 0;
}
