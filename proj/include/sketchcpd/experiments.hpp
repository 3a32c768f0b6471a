#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <functional>
#include <numeric>
#include <set>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sketchcpd/montecarlo.hpp"
#include "sketchcpd/theory.hpp"

// Scripted reproductions of the reference result tables and curves at desk
// scale, the multivariate-CUSUM baseline comparison, and the power-network
// failure scenario. Everything regenerates byte-identically from
// (name, seed, scale): simulated columns carry standard errors, theory
// columns never touch the seed, and report assembly is an ordered
// reduction (wall time is deliberately not serialized).

namespace sketchcpd {

enum class Scale { desk, paper };

struct ExperimentOptions {
    Scale scale = Scale::desk;
    std::uint64_t seed = 0;
    int threads = 0;
    int replicates = 0;              // 0: scale default (2000 desk, 10000 paper)
    int calibration_replicates = 0;  // 0: scale default (600 desk, 10000 paper)
    bool with_simulated_b = true;

    int effective_replicates() const {
        if (replicates > 0) return replicates;
        return scale == Scale::paper ? 10000 : 2000;
    }
    int effective_calibration_replicates() const {
        if (calibration_replicates > 0) return calibration_replicates;
        return scale == Scale::paper ? 10000 : 600;
    }
};

struct ExperimentReport {
    std::string name;
    std::vector<std::pair<std::string, std::string>> metadata;  // '# key = value' lines
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void meta(const std::string& key, const std::string& value) { metadata.emplace_back(key, value); }
    void meta(const std::string& key, double value) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.10g", value);
        metadata.emplace_back(key, buf);
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "# experiment = " << name << "\n";
        for (const auto& [k, v] : metadata) os << "# " << k << " = " << v << "\n";
        for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
        os << "\n";
        char buf[40];
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%.10g", row[i]);
                os << (i ? "," : "") << buf;
            }
            os << "\n";
        }
        return os.str();
    }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write report: " + path);
        out << to_csv();
    }
};

// ---------------------------------------------------------------------------
// small shared helpers

/// Least-squares line fit; returns (slope, intercept, R^2).
struct LineFit {
    double slope = 0.0, intercept = 0.0, r2 = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw std::invalid_argument("fit_line: need two matching samples");
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += e * e;
    }
    f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return f;
}

struct KsResult {
    int n = 0;
    double statistic = 0.0;
    double p_value = 0.0;
};

/// One-sample Kolmogorov-Smirnov test against a CDF (asymptotic p-value
/// with the small-sample scaling sqrt(n) + 0.12 + 0.11/sqrt(n)).
inline KsResult ks_test(std::vector<double> sample, const std::function<double(double)>& cdf) {
    if (sample.size() < 8) throw std::domain_error("ks_test: sample too small");
    std::sort(sample.begin(), sample.end());
    const int n = static_cast<int>(sample.size());
    double d = 0.0;
    for (int i = 0; i < n; ++i) {
        const double f = cdf(sample[i]);
        d = std::max(d, std::max(f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f));
    }
    const double sn = std::sqrt(static_cast<double>(n));
    return KsResult{n, d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d)};
}

inline KsResult ks_normality(std::vector<double> sample) {
    return ks_test(std::move(sample), [](double x) { return std_normal_cdf(x); });
}

/// 100p% randomly chosen entries set to `value`, the rest zero.
inline VectorXd sparse_mean(int n, double p, double value, RngStream& rng) {
    if (!(p > 0.0 && p <= 1.0)) throw std::domain_error("sparse_mean: p in (0,1] required");
    const int k = std::max(1, static_cast<int>(std::lround(p * n)));
    VectorXd mu = VectorXd::Zero(n);
    for (int idx : rng.sample_without_replacement(n, k)) mu(idx) = value;
    return mu;
}

// ---------------------------------------------------------------------------
// Gamma law sampling (used by the distribution checks and the acceptance
// suite): Gamma draws of a Gaussian sensing matrix against a fixed mean.

struct GammaSample {
    std::vector<double> values;
    double mean = 0.0;
    KsResult ks;  // against Beta(M/2, (N-M)/2)
};

inline GammaSample sample_gamma_law(int m, int n, int draws, std::uint64_t seed, int threads = 0) {
    const GammaLaw law = gamma_law_params(m, n);
    if (law.degenerate) throw std::domain_error("sample_gamma_law: M < N required");
    VectorXd mu = VectorXd::Ones(n);  // Gamma's law does not depend on mu
    std::vector<double> vals(draws);
    parallel_for_indexed(draws, threads, [&](int i) {
        RngStream rng(seed, streams::matrix(static_cast<std::uint64_t>(i)));
        const ProjectionMatrix a = gaussian_projection(m, n, 1.0 / n, rng);
        vals[i] = gamma_coefficient(a, mu).gamma;
    });
    GammaSample out;
    out.values = vals;
    out.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / draws;
    out.ks = ks_test(std::move(vals), [&](double x) { return ibeta(law.alpha, law.beta, x); });
    return out;
}

// ---------------------------------------------------------------------------
// Reference tables: fixed Gaussian sensing

/// Fixed-projection table: for each M, theoretical and simulated thresholds
/// at the target run length and theoretical/simulated delays under an
/// all-0.5 post-change mean. N = 100, w = 200, target 5000.
inline ExperimentReport run_table1(const ExperimentOptions& opts) {
    const int n = 100, w = 200;
    const double target = 5000.0;
    const double mu0 = 0.5;
    const std::vector<int> ms = {100, 70, 50, 30, 10};

    ExperimentReport rep;
    rep.name = "table1";
    rep.meta("scale", opts.scale == Scale::paper ? "paper" : "desk");
    rep.meta("seed", static_cast<double>(opts.seed));
    rep.meta("N", n);
    rep.meta("w", w);
    rep.meta("target_arl", target);
    rep.meta("mu0", mu0);
    rep.meta("replicates", opts.effective_replicates());
    rep.meta("calibration_replicates", opts.effective_calibration_replicates());
    rep.meta("edd_projection", "fresh per replicate");
    rep.columns = {"M", "b_theo", "b_simu", "edd_theo", "edd_simu", "edd_std"};

    int aux = 0;
    for (const int m : ms) {
        const double b_theo = calibrate_b(m, w, target);

        double b_simu = std::nan("");
        if (opts.with_simulated_b) {
            SimPlan cal;
            cal.det = {SensingKind::gaussian, m, n, 2, 0.0, false, w, 0.0};
            cal.data = {n, VectorXd(), false};
            cal.replicates = opts.effective_calibration_replicates();
            cal.horizon_cap = static_cast<long>(20 * target);
            cal.root_seed = opts.seed;
            b_simu = calibrate_b_mc(cal, target, 0.05, opts.threads).threshold;
        }

        RngStream corr_rng(opts.seed, streams::aux(static_cast<std::uint64_t>(aux++)));
        const double delta = std::sqrt(25.0 * m / n);
        const double edd_theo =
            edd_fixed(EddQuery{b_theo, m, delta, std::nullopt}, corr_rng);

        SimPlan plan;
        plan.det = {SensingKind::gaussian, m, n, 2, 0.0, true, w, b_theo};
        plan.data = {n, VectorXd::Constant(n, mu0), true};
        plan.replicates = opts.effective_replicates();
        plan.horizon_cap = 100000;
        plan.root_seed = opts.seed;
        const SimResult edd = simulate_edd(plan, opts.threads);

        rep.rows.push_back({static_cast<double>(m), b_theo, b_simu, edd_theo, edd.mean,
                            edd.stderr * std::sqrt(static_cast<double>(edd.replicates_used))});
    }
    return rep;
}

/// Time-varying (random M-of-N subsampling) tables: shared thresholds and
/// theoretical delays for two equal-energy mean profiles (all entries 0.5;
/// a random quarter of entries equal to 1).
inline ExperimentReport run_timevarying_tables(const ExperimentOptions& opts) {
    const int n = 100, w = 200;
    const double target = 5000.0;
    const std::vector<int> ms = {100, 70, 50, 30, 10};

    ExperimentReport rep;
    rep.name = "tables_timevarying";
    rep.meta("scale", opts.scale == Scale::paper ? "paper" : "desk");
    rep.meta("seed", static_cast<double>(opts.seed));
    rep.meta("N", n);
    rep.meta("w", w);
    rep.meta("target_arl", target);
    rep.meta("replicates", opts.effective_replicates());
    rep.meta("calibration_replicates", opts.effective_calibration_replicates());
    rep.meta("edd_theo_form", "first-order without the unit offset");
    rep.columns = {"M",        "b_theo",   "b_simu",          "edd_theo",
                   "edd_simu", "edd_std",  "edd_sparse_simu", "edd_sparse_std"};

    RngStream support_rng(opts.seed, streams::aux(1000));
    const VectorXd mu_dense = VectorXd::Constant(n, 0.5);       // energy 25
    const VectorXd mu_sparse = sparse_mean(n, 0.25, 1.0, support_rng);  // energy 25

    for (const int m : ms) {
        const double b_theo = calibrate_b_timevarying(n, m, w, target);
        const double energy = mu_dense.squaredNorm();
        const double edd_theo = edd_timevarying_without_offset(b_theo, n, m, energy);

        double b_simu = std::nan("");
        if (opts.with_simulated_b) {
            SimPlan cal;
            cal.det = {SensingKind::subsample, m, n, 2, 0.0, false, w, 0.0};
            cal.data = {n, VectorXd(), false};
            cal.replicates = opts.effective_calibration_replicates();
            cal.horizon_cap = static_cast<long>(20 * target);
            cal.root_seed = opts.seed;
            b_simu = calibrate_b_mc(cal, target, 0.05, opts.threads).threshold;
        }

        SimPlan plan;
        plan.det = {SensingKind::subsample, m, n, 2, 0.0, false, w, b_theo};
        plan.data = {n, mu_dense, true};
        plan.replicates = opts.effective_replicates();
        plan.horizon_cap = 100000;
        plan.root_seed = opts.seed;
        const SimResult dense = simulate_edd(plan, opts.threads);

        plan.data.mu = mu_sparse;
        plan.root_seed = opts.seed + 1;  // independent replicate noise, same support
        const SimResult sparse = simulate_edd(plan, opts.threads);

        const double scale = std::sqrt(static_cast<double>(dense.replicates_used));
        rep.rows.push_back({static_cast<double>(m), b_theo, b_simu, edd_theo, dense.mean,
                            dense.stderr * scale, sparse.mean, sparse.stderr * scale});
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Delay curves and minimum sketch size

enum class CurveKind { gaussian, expander, timevarying };
enum class SweepKind { mu0, sparsity };

inline const char* to_string(CurveKind k) {
    switch (k) {
        case CurveKind::gaussian: return "gaussian";
        case CurveKind::expander: return "expander";
        case CurveKind::timevarying: return "timevarying";
    }
    return "gaussian";
}

/// Delay versus signal strength (all entries mu0) or sparsity (100p%
/// entries equal to one) for a grid of sketch sizes plus the full-data
/// reference; extracts the smallest grid M whose delay is within one of
/// the reference.
inline ExperimentReport run_edd_curves(CurveKind kind, SweepKind sweep,
                                       const ExperimentOptions& opts) {
    const int n = 500, w = 200;
    const double target = 5000.0;
    const int d = 2;  // expander column degree; M grid keeps N*d/M integral

    std::vector<int> ms;
    if (kind == CurveKind::expander) {
        ms = opts.scale == Scale::paper ? std::vector<int>{20, 40, 50, 100, 125, 200, 250}
                                        : std::vector<int>{50, 100, 250};
    } else {
        ms = opts.scale == Scale::paper ? std::vector<int>{30, 50, 100, 150, 200, 250, 300}
                                        : std::vector<int>{50, 150, 300};
    }
    std::vector<double> sweep_values;
    if (sweep == SweepKind::mu0) {
        sweep_values = opts.scale == Scale::paper ? std::vector<double>{0.3, 0.5, 0.7, 1.0, 1.2}
                                                  : std::vector<double>{0.3, 0.5, 1.0};
    } else {
        sweep_values = opts.scale == Scale::paper
                           ? std::vector<double>{0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0}
                           : std::vector<double>{0.1, 0.3, 0.5};
    }

    ExperimentReport rep;
    rep.name = std::string("edd_curves_") + to_string(kind) + "_" +
               (sweep == SweepKind::mu0 ? "mu0" : "sparsity");
    rep.meta("scale", opts.scale == Scale::paper ? "paper" : "desk");
    rep.meta("seed", static_cast<double>(opts.seed));
    rep.meta("N", n);
    rep.meta("w", w);
    rep.meta("target_arl", target);
    rep.meta("replicates", opts.effective_replicates());
    if (kind == CurveKind::expander) rep.meta("column_degree", d);
    rep.columns = {"sweep_value", "edd_ref", "edd_ref_std"};
    for (const int m : ms) {
        rep.columns.push_back("edd_M" + std::to_string(m));
        rep.columns.push_back("edd_M" + std::to_string(m) + "_std");
    }
    rep.columns.push_back("m_star");

    const double b_ref = calibrate_b(n, w, target);
    int aux = 2000;
    for (const double sv : sweep_values) {
        VectorXd mu;
        if (sweep == SweepKind::mu0) {
            mu = VectorXd::Constant(n, sv);
        } else {
            RngStream support_rng(opts.seed, streams::aux(static_cast<std::uint64_t>(aux++)));
            mu = sparse_mean(n, sv, 1.0, support_rng);
        }

        SimPlan ref;
        ref.det = {SensingKind::identity, n, n, d, 0.0, false, w, b_ref};
        ref.data = {n, mu, true};
        ref.replicates = opts.effective_replicates();
        ref.horizon_cap = 100000;
        ref.root_seed = opts.seed;
        const SimResult edd_ref = simulate_edd(ref, opts.threads);

        std::vector<double> row = {sv, edd_ref.mean,
                                   edd_ref.stderr * std::sqrt(static_cast<double>(edd_ref.replicates_used))};
        double m_star = std::nan("");
        for (const int m : ms) {
            SimPlan plan;
            if (kind == CurveKind::timevarying) {
                plan.det = {SensingKind::subsample, m, n, d, 0.0, false, w,
                            calibrate_b_timevarying(n, m, w, target)};
            } else {
                const SensingKind sk =
                    kind == CurveKind::expander ? SensingKind::expander : SensingKind::gaussian;
                plan.det = {sk, m, n, d, 0.0, true, w, calibrate_b(m, w, target)};
            }
            plan.data = {n, mu, true};
            plan.replicates = opts.effective_replicates();
            plan.horizon_cap = 100000;
            plan.root_seed = opts.seed;
            const SimResult edd = simulate_edd(plan, opts.threads);
            row.push_back(edd.mean);
            row.push_back(edd.stderr * std::sqrt(static_cast<double>(edd.replicates_used)));
            if (std::isnan(m_star) && edd.mean <= edd_ref.mean + 1.0) m_star = m;
        }
        row.push_back(m_star);
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Baseline comparison: sketch GLR versus a per-coordinate CUSUM bank

namespace detail {

struct CusumPlanConfig {
    ProjectionMatrix a;
    int n;
    VectorXd mu;
    bool change_immediate;
    double threshold;
    long cap;
    std::uint64_t seed;
};

inline ReplicateOutcome run_cusum_replicate(const CusumPlanConfig& cfg, int replicate) {
    RngStream rng(cfg.seed, streams::data(static_cast<std::uint64_t>(replicate)));
    CusumBaseline det = CusumBaseline::all_ones(cfg.a.rows(), cfg.threshold);
    VectorXd x(cfg.n);
    for (long t = 1; t <= cfg.cap; ++t) {
        for (int j = 0; j < cfg.n; ++j) x(j) = rng.normal();
        if (cfg.change_immediate) x += cfg.mu;
        if (det.step(cfg.a.apply(x)).fired) return {static_cast<double>(t), false};
    }
    return {static_cast<double>(cfg.cap), true};
}

inline SimResult cusum_run_length(const CusumPlanConfig& cfg, int replicates, int threads) {
    std::vector<ReplicateOutcome> out(replicates);
    parallel_for_indexed(replicates, threads,
                         [&](int r) { out[r] = run_cusum_replicate(cfg, r); });
    double sum = 0.0, sumsq = 0.0;
    int capped = 0;
    for (const auto& o : out) {
        sum += o.time;
        sumsq += o.time * o.time;
        capped += o.capped ? 1 : 0;
    }
    SimResult res;
    res.replicates_used = replicates;
    res.capped_count = capped;
    res.mean = sum / replicates;
    const double var =
        replicates > 1 ? std::max(0.0, (sumsq - sum * sum / replicates) / (replicates - 1.0)) : 0.0;
    res.stderr = std::sqrt(var / replicates);
    return res;
}

}  // namespace detail

/// Sketch-GLR versus the covariance-blind per-coordinate CUSUM applied to
/// the same sketches, thresholds matched by Monte Carlo to a common run
/// length; reports the delay pairs per sketch size. Desk scale uses a
/// reduced target run length so matching stays cheap.
inline ExperimentReport run_baseline_comparison(const ExperimentOptions& opts,
                                                double mu0 = 0.2) {
    const int n = 100, w = 200;
    const double target = opts.scale == Scale::paper ? 5000.0 : 1000.0;
    const std::vector<int> ms = opts.scale == Scale::paper ? std::vector<int>{10, 30, 50, 70, 100}
                                                           : std::vector<int>{20, 50, 100};
    const int reps = opts.effective_replicates();
    const int cal_reps = opts.effective_calibration_replicates();

    ExperimentReport rep;
    rep.name = "baseline_comparison";
    rep.meta("scale", opts.scale == Scale::paper ? "paper" : "desk");
    rep.meta("seed", static_cast<double>(opts.seed));
    rep.meta("N", n);
    rep.meta("w", w);
    rep.meta("target_arl", target);
    rep.meta("mu0", mu0);
    rep.meta("replicates", reps);
    rep.meta("calibration_replicates", cal_reps);
    rep.columns = {"M",        "b_glr",      "arl_glr",  "arl_glr_se",  "thr_cusum",
                   "arl_cusum", "arl_cusum_se", "edd_glr", "edd_glr_std", "edd_cusum",
                   "edd_cusum_std"};

    const long cap = static_cast<long>(20 * target);
    for (const int m : ms) {
        RngStream a_rng(opts.seed, streams::shared);
        const ProjectionMatrix a = gaussian_projection(m, n, 1.0 / n, a_rng);

        const double b_glr = calibrate_b(m, w, target);
        SimPlan arl_plan;
        arl_plan.det = {SensingKind::gaussian, m, n, 2, 0.0, false, w, b_glr};
        arl_plan.data = {n, VectorXd(), false};
        arl_plan.replicates = cal_reps;
        arl_plan.horizon_cap = cap;
        arl_plan.root_seed = opts.seed;
        const SimResult arl_glr = simulate_arl(arl_plan, opts.threads);

        // match the baseline's run length to the GLR's measured one
        const auto estimate = [&](double thr) {
            detail::CusumPlanConfig cfg{a, n, VectorXd(), false, thr, cap, opts.seed};
            return detail::cusum_run_length(cfg, cal_reps, opts.threads);
        };
        const ThresholdCalibration cusum =
            calibrate_threshold_mc(estimate, arl_glr.mean, 0.02, 5.0);

        SimPlan edd_plan = arl_plan;
        edd_plan.data = {n, VectorXd::Constant(n, mu0), true};
        edd_plan.replicates = reps;
        edd_plan.root_seed = opts.seed + 1;
        const SimResult edd_glr = simulate_edd(edd_plan, opts.threads);

        detail::CusumPlanConfig cfg{a,   n,   VectorXd::Constant(n, mu0), true,
                                    cusum.threshold, cap, opts.seed + 1};
        const SimResult edd_cusum = detail::cusum_run_length(cfg, reps, opts.threads);

        const double scale = std::sqrt(static_cast<double>(reps));
        rep.rows.push_back({static_cast<double>(m), b_glr, arl_glr.mean, arl_glr.stderr,
                            cusum.threshold, cusum.estimate.mean, cusum.estimate.stderr,
                            edd_glr.mean, edd_glr.stderr * scale, edd_cusum.mean,
                            edd_cusum.stderr * scale});
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Power-network scenario: per-step node aggregation over a grid topology

/// Random connected topology with the rough shape of a transmission grid:
/// a random spanning tree plus extra distinct chords. Minimum degree 1 by
/// construction.
inline GridTopology synthetic_power_topology(int nodes, int edges, RngStream& rng) {
    if (nodes < 2) throw std::domain_error("synthetic_power_topology: need at least two nodes");
    if (edges < nodes - 1) throw std::domain_error("synthetic_power_topology: need at least nodes-1 edges");
    GridTopology topo;
    topo.node_count = nodes;
    std::set<std::pair<int, int>> seen;
    for (int v = 1; v < nodes; ++v) {
        const int u = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(v)));
        topo.edges.emplace_back(std::min(u, v), std::max(u, v));
        seen.insert(topo.edges.back());
    }
    int guard = 0;
    while (static_cast<int>(topo.edges.size()) < edges) {
        const int u = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(nodes)));
        const int v = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(nodes)));
        if (u == v) continue;
        const auto e = std::make_pair(std::min(u, v), std::max(u, v));
        if (seen.count(e)) {
            if (++guard > 100 * edges) throw std::runtime_error("synthetic_power_topology: too dense");
            continue;
        }
        seen.insert(e);
        topo.edges.push_back(e);
    }
    topo.validate();
    return topo;
}

struct FailureScenario {
    GridTopology topology;
    double affected_fraction = 0.05;  // fraction of edges shifted
    double mu0 = 1.0;                 // per-edge mean shift
    int sensing_m = 50;               // nodes measured per step
    std::uint64_t seed = 0;
};

namespace detail {

// Per-step node-sum sensing: scatter A^T (A A^T)^{-1} y into edge space and
// accumulate the diagonal of A^T (A A^T)^{-1} A as the information weights.
// With disjoint single-edge nodes this reduces exactly to the missing-data
// statistic; overlapping incidences make it a diagonal approximation.
class TopologySensingRun {
public:
    TopologySensingRun(const GridTopology& topo, int m, int w, double b)
        : topo_(topo), m_(m), det_(topo.edge_count(), w, b) {
        const auto deg = topo_.degrees();
        for (int v = 0; v < topo_.node_count; ++v) {
            if (deg[v] >= 1) eligible_.push_back(v);
        }
        if (m_ > static_cast<int>(eligible_.size())) {
            throw std::domain_error("TopologySensingRun: M exceeds connected node count");
        }
        incident_.resize(topo_.node_count);
        for (int e = 0; e < topo_.edge_count(); ++e) {
            incident_[topo_.edges[e].first].push_back(e);
            incident_[topo_.edges[e].second].push_back(e);
        }
    }

    Alarm step(const VectorXd& x, RngStream& rng) {
        const int n = topo_.edge_count();
        const auto pick = rng.sample_without_replacement(static_cast<int>(eligible_.size()), m_);
        std::vector<int> nodes(m_);
        for (int i = 0; i < m_; ++i) nodes[i] = eligible_[pick[i]];
        std::vector<int> pos(topo_.node_count, -1);
        for (int i = 0; i < m_; ++i) pos[nodes[i]] = i;

        // gram of the selected incidence rows
        MatrixXd gram = MatrixXd::Zero(m_, m_);
        VectorXd y = VectorXd::Zero(m_);
        for (int i = 0; i < m_; ++i) {
            gram(i, i) = static_cast<double>(incident_[nodes[i]].size());
            for (const int e : incident_[nodes[i]]) y(i) += x(e);
        }
        for (int e = 0; e < n; ++e) {
            const int ra = pos[topo_.edges[e].first];
            const int rb = pos[topo_.edges[e].second];
            if (ra >= 0 && rb >= 0) {
                gram(ra, rb) += 1.0;
                gram(rb, ra) += 1.0;
            }
        }
        const SpdFactor f = cholesky_spd(gram);
        MatrixXd inv = MatrixXd::Identity(m_, m_);
        for (int c = 0; c < m_; ++c) inv.col(c) = solve_spd(f, VectorXd(inv.col(c)));
        const VectorXd u = inv * y;

        VectorXd scatter = VectorXd::Zero(n);
        VectorXd weight = VectorXd::Zero(n);
        for (int i = 0; i < m_; ++i) {
            for (const int e : incident_[nodes[i]]) scatter(e) += u(i);
        }
        for (int e = 0; e < n; ++e) {
            const int ra = pos[topo_.edges[e].first];
            const int rb = pos[topo_.edges[e].second];
            double wgt = 0.0;
            if (ra >= 0) wgt += inv(ra, ra);
            if (rb >= 0) wgt += inv(rb, rb);
            if (ra >= 0 && rb >= 0) wgt += 2.0 * inv(ra, rb);
            weight(e) = wgt;
        }
        return det_.step_projected(scatter, weight);
    }

private:
    const GridTopology& topo_;
    int m_;
    MissingDataDetector det_;
    std::vector<int> eligible_;
    std::vector<std::vector<int>> incident_;
};

inline ReplicateOutcome run_grid_replicate(const GridTopology& topo, int m, int w, double b,
                                           const VectorXd& mu, bool change, long cap,
                                           std::uint64_t seed, int replicate) {
    RngStream rng(seed, streams::data(static_cast<std::uint64_t>(replicate)));
    TopologySensingRun run(topo, m, w, b);
    const int n = topo.edge_count();
    VectorXd x(n);
    for (long t = 1; t <= cap; ++t) {
        for (int j = 0; j < n; ++j) x(j) = rng.normal();
        if (change) x += mu;
        if (run.step(x, rng).fired) return {static_cast<double>(t), false};
    }
    return {static_cast<double>(cap), true};
}

inline SimResult grid_run_length(const GridTopology& topo, int m, int w, double b,
                                 const VectorXd& mu, bool change, long cap, std::uint64_t seed,
                                 int replicates, int threads) {
    std::vector<ReplicateOutcome> out(replicates);
    parallel_for_indexed(replicates, threads, [&](int r) {
        out[r] = run_grid_replicate(topo, m, w, b, mu, change, cap, seed, r);
    });
    double sum = 0.0, sumsq = 0.0;
    int capped = 0;
    for (const auto& o : out) {
        sum += o.time;
        sumsq += o.time * o.time;
        capped += o.capped ? 1 : 0;
    }
    SimResult res;
    res.replicates_used = replicates;
    res.capped_count = capped;
    res.mean = sum / replicates;
    const double var =
        replicates > 1 ? std::max(0.0, (sumsq - sum * sum / replicates) / (replicates - 1.0)) : 0.0;
    res.stderr = std::sqrt(var / replicates);
    return res;
}

}  // namespace detail

/// Failure detection over a grid topology with a fresh node subset sensed
/// each step. The threshold is Monte Carlo calibrated on the null at a desk
/// run-length target; the report sweeps the shift size at the scenario's
/// affected fraction. Affected edge sets are redrawn per replicate.
inline ExperimentReport run_power_grid(const FailureScenario& scenario,
                                       const std::vector<double>& mu0_sweep,
                                       const ExperimentOptions& opts,
                                       double target_arl = 500.0) {
    scenario.topology.validate();
    const int w = 200;
    const int n = scenario.topology.edge_count();
    const int m = scenario.sensing_m;
    const int reps = std::max(50, opts.effective_replicates() / 10);
    const int cal_reps = std::max(50, opts.effective_calibration_replicates() / 4);
    const long cap = static_cast<long>(20 * target_arl);

    ExperimentReport rep;
    rep.name = "power_grid";
    rep.meta("seed", static_cast<double>(opts.seed));
    rep.meta("nodes", scenario.topology.node_count);
    rep.meta("edges", n);
    rep.meta("M", m);
    rep.meta("w", w);
    rep.meta("target_arl", target_arl);
    rep.meta("affected_fraction", scenario.affected_fraction);
    rep.meta("replicates", reps);
    rep.meta("statistic", "diagonal information-weight approximation");
    rep.columns = {"mu0", "edd", "edd_std", "capped"};

    const auto estimate = [&](double b) {
        return detail::grid_run_length(scenario.topology, m, w, b, VectorXd(), false, cap,
                                       opts.seed, cal_reps, opts.threads);
    };
    const ThresholdCalibration cal =
        calibrate_threshold_mc(estimate, target_arl, 0.05, 0.5 * n);
    rep.meta("b", cal.threshold);
    rep.meta("arl_at_b", cal.estimate.mean);

    for (const double mu0 : mu0_sweep) {
        SimResult r;
        if (mu0 == 0.0) {
            r = detail::grid_run_length(scenario.topology, m, w, cal.threshold, VectorXd(), false,
                                        cap, opts.seed + 1, reps, opts.threads);
        } else {
            // per-replicate affected set: average over failure patterns
            std::vector<detail::ReplicateOutcome> out(reps);
            parallel_for_indexed(reps, opts.threads, [&](int rr) {
                RngStream support(opts.seed, streams::aux(3000 + static_cast<std::uint64_t>(rr)));
                const VectorXd mu = sparse_mean(n, scenario.affected_fraction, mu0, support);
                out[rr] = detail::run_grid_replicate(scenario.topology, m, w, cal.threshold, mu,
                                                     true, cap, opts.seed + 1, rr);
            });
            double sum = 0.0, sumsq = 0.0;
            int capped = 0;
            for (const auto& o : out) {
                sum += o.time;
                sumsq += o.time * o.time;
                capped += o.capped ? 1 : 0;
            }
            r.replicates_used = reps;
            r.capped_count = capped;
            r.mean = sum / reps;
            const double var =
                reps > 1 ? std::max(0.0, (sumsq - sum * sum / reps) / (reps - 1.0)) : 0.0;
            r.stderr = std::sqrt(var / reps);
        }
        rep.rows.push_back({mu0, r.mean,
                            r.stderr * std::sqrt(static_cast<double>(r.replicates_used)),
                            static_cast<double>(r.capped_count)});
    }
    return rep;
}

}  // namespace sketchcpd
