// Command-line surface: threshold calibration, run-length evaluation,
// streaming detection over CSV, projection generation, experiment
// reproduction, and a residual-normality check.
//
// Exit codes: 0 success (including a fired alarm), 2 usage or domain error,
// 3 stream ended without an alarm.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sketchcpd/experiments.hpp"
#include "sketchcpd/montecarlo.hpp"
#include "sketchcpd/theory.hpp"

namespace sc = sketchcpd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNoAlarm = 3;

struct CommonOpts {
    std::uint64_t seed = 0;
    int threads = 0;
};

void echo_kv(std::ostream& os, const std::string& key, const std::string& value) {
    os << "# " << key << " = " << value << "\n";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (const char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

int run_calibrate(int m, int w, double target, const std::string& method, const std::string& kind,
                  int n, int d, int replicates, double rel_tol, const CommonOpts& common) {
    echo_kv(std::cout, "command", "calibrate");
    echo_kv(std::cout, "M", std::to_string(m));
    echo_kv(std::cout, "w", std::to_string(w));
    echo_kv(std::cout, "arl", std::to_string(target));
    echo_kv(std::cout, "method", method);
    echo_kv(std::cout, "kind", kind);
    double b = 0.0;
    if (method == "theory") {
        b = kind == "subsample" ? sc::calibrate_b_timevarying(n, m, w, target)
                                : sc::calibrate_b(m, w, target);
    } else {
        sc::SimPlan plan;
        plan.det.kind = kind == "subsample"   ? sc::SensingKind::subsample
                        : kind == "expander"  ? sc::SensingKind::expander
                        : kind == "identity"  ? sc::SensingKind::identity
                                              : sc::SensingKind::gaussian;
        plan.det.m = m;
        plan.det.n = plan.det.kind == sc::SensingKind::identity ? m : n;
        plan.det.column_degree = d;
        plan.det.w = w;
        plan.data.n = plan.det.n;
        plan.replicates = replicates;
        plan.root_seed = common.seed;
        plan.horizon_cap = static_cast<long>(20 * target);
        const auto cal = sc::calibrate_b_mc(plan, target, rel_tol, common.threads);
        echo_kv(std::cout, "arl_at_b", std::to_string(cal.estimate.mean));
        echo_kv(std::cout, "arl_stderr", std::to_string(cal.estimate.stderr));
        b = cal.threshold;
    }
    std::printf("%.6f\n", b);
    return kExitOk;
}

int run_arl(int m, int n, double b, int w, const std::string& kind) {
    echo_kv(std::cout, "command", "arl");
    echo_kv(std::cout, "kind", kind);
    const double value =
        kind == "subsample" ? sc::arl_timevarying(n, m, b, w) : sc::arl_fixed(m, b, w);
    std::printf("%.6f\n", value);
    return kExitOk;
}

int run_detect(const std::string& input, bool use_stdin, const std::string& projection_file,
               int identity_n, double b, int w, const std::string& mode) {
    std::istream* in = &std::cin;
    std::ifstream file;
    if (!use_stdin) {
        file.open(input);
        if (!file) throw std::runtime_error("cannot open stream file: " + input);
        in = &file;
    }

    echo_kv(std::cout, "command", "detect");
    echo_kv(std::cout, "mode", mode);
    echo_kv(std::cout, "b", std::to_string(b));
    echo_kv(std::cout, "w", std::to_string(w));

    std::optional<sc::ProjectionMatrix> a;
    std::optional<sc::FixedSketchDetector> fixed;
    std::optional<sc::MissingDataDetector> missing;
    int dim = 0;
    if (mode == "fixed") {
        if (!projection_file.empty()) {
            a.emplace(sc::load_projection_file(projection_file));
        } else if (identity_n > 0) {
            a.emplace(sc::identity_projection(identity_n));
        } else {
            throw std::domain_error("detect: fixed mode needs --projection or --identity");
        }
        dim = a->rows();
        fixed.emplace(*a, w, b);
        echo_kv(std::cout, "M", std::to_string(dim));
    } else if (mode == "missing") {
        if (identity_n <= 0) throw std::domain_error("detect: missing mode needs --identity N");
        dim = identity_n;
        missing.emplace(dim, w, b);
        echo_kv(std::cout, "N", std::to_string(dim));
    } else {
        throw std::domain_error("detect: mode must be fixed or missing");
    }

    std::cout << "t,statistic,khat,fired\n";
    std::string line;
    long lineno = 0;
    while (std::getline(*in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_csv_line(line);
        if (static_cast<int>(fields.size()) != dim) {
            std::cerr << "line " << lineno << ": expected " << dim << " fields, got "
                      << fields.size() << "\n";
            return kExitUsage;
        }
        sc::Alarm alarm;
        try {
            if (fixed) {
                Eigen::VectorXd y(dim);
                for (int j = 0; j < dim; ++j) {
                    if (fields[j].empty()) {
                        std::cerr << "line " << lineno << ": empty field in fixed mode\n";
                        return kExitUsage;
                    }
                    y(j) = std::stod(fields[j]);
                }
                alarm = fixed->step(y);
            } else {
                std::vector<int> observed;
                std::vector<double> values;
                for (int j = 0; j < dim; ++j) {
                    if (!fields[j].empty()) {
                        observed.push_back(j);
                        values.push_back(std::stod(fields[j]));
                    }
                }
                const auto mask = sc::ObservationMask::of(dim, observed);
                Eigen::VectorXd v(static_cast<int>(values.size()));
                for (std::size_t j = 0; j < values.size(); ++j) v(static_cast<int>(j)) = values[j];
                alarm = missing->step(mask, v);
            }
        } catch (const std::invalid_argument& e) {
            std::cerr << "line " << lineno << ": " << e.what() << "\n";
            return kExitUsage;
        }
        std::printf("%ld,%.10g,%ld,%d\n", alarm.time, alarm.statistic, alarm.khat,
                    alarm.fired ? 1 : 0);
        if (alarm.fired) {
            std::cerr << "alarm t=" << alarm.time << " statistic=" << alarm.statistic
                      << " khat=" << alarm.khat << "\n";
            return kExitOk;
        }
    }
    std::cerr << "stream ended without alarm\n";
    return kExitNoAlarm;
}

int run_project(const std::string& kind, int m, int n, int d, double variance,
                const std::string& out, const CommonOpts& common) {
    sc::RngStream rng(common.seed, sc::streams::shared);
    std::optional<sc::ProjectionMatrix> a;
    if (kind == "gaussian") {
        a.emplace(sc::gaussian_projection(m, n, variance > 0 ? variance : 1.0 / n, rng));
    } else if (kind == "expander") {
        a.emplace(sc::expander_projection(m, n, d, rng));
    } else if (kind == "identity") {
        a.emplace(sc::identity_projection(n));
    } else {
        throw std::domain_error("project: kind must be gaussian, expander or identity");
    }
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out);
    sc::save_projection_csv(*a, f);
    std::cout << out << "\n";
    return kExitOk;
}

int run_experiment(const std::string& name, const std::string& scale, const std::string& out_dir,
                   int replicates, int cal_replicates, bool no_simulated_b,
                   const std::string& topology_file, int grid_m, double grid_arl,
                   double affected_fraction, const CommonOpts& common) {
    sc::ExperimentOptions opts;
    opts.scale = scale == "paper" ? sc::Scale::paper : sc::Scale::desk;
    opts.seed = common.seed;
    opts.threads = common.threads;
    opts.replicates = replicates;
    opts.calibration_replicates = cal_replicates;
    opts.with_simulated_b = !no_simulated_b;

    sc::ExperimentReport rep;
    if (name == "table1") {
        rep = sc::run_table1(opts);
    } else if (name == "tables_tv") {
        rep = sc::run_timevarying_tables(opts);
    } else if (name.rfind("curves_", 0) == 0) {
        const std::string rest = name.substr(7);
        const auto underscore = rest.find('_');
        if (underscore == std::string::npos) throw std::domain_error("unknown experiment: " + name);
        const std::string kind_s = rest.substr(0, underscore);
        const std::string sweep_s = rest.substr(underscore + 1);
        sc::CurveKind kind;
        if (kind_s == "gaussian") kind = sc::CurveKind::gaussian;
        else if (kind_s == "expander") kind = sc::CurveKind::expander;
        else if (kind_s == "timevarying") kind = sc::CurveKind::timevarying;
        else throw std::domain_error("unknown experiment: " + name);
        sc::SweepKind sweep;
        if (sweep_s == "mu0") sweep = sc::SweepKind::mu0;
        else if (sweep_s == "sparsity") sweep = sc::SweepKind::sparsity;
        else throw std::domain_error("unknown experiment: " + name);
        rep = sc::run_edd_curves(kind, sweep, opts);
    } else if (name == "baseline") {
        rep = sc::run_baseline_comparison(opts);
    } else if (name == "grid") {
        sc::FailureScenario scenario;
        if (!topology_file.empty()) {
            scenario.topology = sc::load_topology_file(topology_file);
        } else {
            sc::RngStream topo_rng(common.seed, sc::streams::aux(1));
            scenario.topology = sc::synthetic_power_topology(200, 260, topo_rng);
        }
        scenario.sensing_m = grid_m;
        scenario.affected_fraction = affected_fraction;
        scenario.seed = common.seed;
        rep = sc::run_power_grid(scenario, {0.0, 1.0, 2.0, 4.0}, opts, grid_arl);
    } else {
        throw std::domain_error("unknown experiment: " + name);
    }

    const std::string path = out_dir + "/" + rep.name + "_seed" + std::to_string(common.seed) +
                             (scale == "paper" ? "_paper" : "_desk") + ".csv";
    rep.write_file(path);
    std::cout << path << "\n";
    return kExitOk;
}

int run_normality(const std::string& input, bool use_stdin, long limit) {
    std::istream* in = &std::cin;
    std::ifstream file;
    if (!use_stdin) {
        file.open(input);
        if (!file) throw std::runtime_error("cannot open input: " + input);
        in = &file;
    }
    std::vector<double> values;
    std::string line;
    while (std::getline(*in, line) && (limit <= 0 || static_cast<long>(values.size()) < limit)) {
        if (line.empty() || line[0] == '#') continue;
        for (const auto& f : split_csv_line(line)) {
            if (!f.empty()) values.push_back(std::stod(f));
        }
    }
    const auto ks = sc::ks_normality(values);
    echo_kv(std::cout, "command", "normality");
    echo_kv(std::cout, "n", std::to_string(ks.n));
    std::printf("ks_statistic = %.6g\np_value = %.6g\n", ks.statistic, ks.p_value);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential change-point detection on sketched streams"};
    app.set_config("--config", "", "Plain-text 'key = value' config ('#' comments); flags override");
    app.require_subcommand(1);

    CommonOpts common;
    app.add_option("--seed", common.seed, "Root seed; all randomness derives from it");
    app.add_option("--threads", common.threads, "Worker threads (0 = hardware)")
        ->envname("SKETCHCPD_THREADS");

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "Find the threshold b for a target run length");
    int cal_m = 0, cal_w = 200, cal_n = 100, cal_d = 2, cal_reps = 2000;
    double cal_arl = 5000.0, cal_rel_tol = 0.05;
    std::string cal_method = "theory", cal_kind = "gaussian";
    cal->add_option("--M", cal_m, "Sketch dimension")->required();
    cal->add_option("--w", cal_w, "Window length");
    cal->add_option("--arl", cal_arl, "Target average run length")->required();
    cal->add_option("--method", cal_method)->check(CLI::IsMember({"theory", "montecarlo"}));
    cal->add_option("--kind", cal_kind)
        ->check(CLI::IsMember({"gaussian", "expander", "identity", "subsample"}));
    cal->add_option("--N", cal_n, "Signal dimension (montecarlo / subsample)");
    cal->add_option("--d", cal_d, "Expander column degree");
    cal->add_option("--replicates", cal_reps, "Monte Carlo replicates");
    cal->add_option("--rel-tol", cal_rel_tol, "Monte Carlo calibration tolerance");

    // arl
    auto* arl = app.add_subcommand("arl", "Evaluate the theoretical run length at b");
    int arl_m = 0, arl_w = 200, arl_n = 100;
    double arl_b = 0.0;
    std::string arl_kind = "gaussian";
    arl->add_option("--M", arl_m)->required();
    arl->add_option("--b", arl_b)->required();
    arl->add_option("--w", arl_w);
    arl->add_option("--N", arl_n);
    arl->add_option("--kind", arl_kind)
        ->check(CLI::IsMember({"gaussian", "expander", "identity", "subsample"}));

    // detect
    auto* det = app.add_subcommand("detect", "Stream CSV rows through a detector");
    std::string det_input, det_projection, det_mode = "fixed";
    bool det_stdin = false;
    int det_identity = 0, det_w = 200;
    double det_b = 0.0;
    det->add_option("--input", det_input, "CSV stream, one row per step");
    det->add_flag("--stdin", det_stdin, "Read the stream from stdin");
    det->add_option("--projection", det_projection, "Projection CSV (fixed mode)");
    det->add_option("--identity", det_identity, "Identity sensing of this dimension");
    det->add_option("--b", det_b, "Threshold")->required();
    det->add_option("--w", det_w, "Window length");
    det->add_option("--mode", det_mode)->check(CLI::IsMember({"fixed", "missing"}));

    // project
    auto* proj = app.add_subcommand("project", "Generate a projection and write it as CSV");
    std::string proj_kind = "gaussian", proj_out;
    int proj_m = 0, proj_n = 0, proj_d = 2;
    double proj_var = 0.0;
    proj->add_option("--kind", proj_kind)
        ->check(CLI::IsMember({"gaussian", "expander", "identity"}));
    proj->add_option("--M", proj_m)->required();
    proj->add_option("--N", proj_n)->required();
    proj->add_option("--d", proj_d);
    proj->add_option("--variance", proj_var, "Gaussian entry variance (default 1/N)");
    proj->add_option("--out", proj_out)->required();

    // experiment
    auto* exp = app.add_subcommand("experiment", "Reproduce a result table or curve as CSV");
    std::string exp_name, exp_scale = "desk", exp_out = ".", exp_topology;
    int exp_replicates = 0, exp_cal_replicates = 0, exp_grid_m = 20;
    double exp_grid_arl = 500.0, exp_affected = 0.05;
    bool exp_no_sim_b = false;
    exp->add_option("name", exp_name,
                    "table1 | tables_tv | curves_{gaussian,expander,timevarying}_{mu0,sparsity} | "
                    "baseline | grid")
        ->required();
    exp->add_option("--scale", exp_scale)->check(CLI::IsMember({"desk", "paper"}));
    exp->add_option("--out", exp_out, "Output directory");
    exp->add_option("--replicates", exp_replicates, "Override simulation replicates");
    exp->add_option("--calibration-replicates", exp_cal_replicates,
                    "Override calibration replicates");
    exp->add_flag("--no-simulated-b", exp_no_sim_b, "Skip Monte Carlo threshold columns");
    exp->add_option("--topology", exp_topology, "Edge-list file for the grid experiment");
    exp->add_option("--M", exp_grid_m, "Sensed nodes per step (grid experiment)");
    exp->add_option("--arl", exp_grid_arl, "Run-length target (grid experiment)");
    exp->add_option("--affected-fraction", exp_affected, "Fraction of shifted edges (grid)");

    // normality
    auto* norm = app.add_subcommand("normality", "KS check of pooled CSV values against N(0,1)");
    std::string norm_input;
    bool norm_stdin = false;
    long norm_limit = 0;
    norm->add_option("--input", norm_input);
    norm->add_flag("--stdin", norm_stdin);
    norm->add_option("--limit", norm_limit, "Stop after this many values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (cal->parsed()) {
            return run_calibrate(cal_m, cal_w, cal_arl, cal_method, cal_kind, cal_n, cal_d,
                                 cal_reps, cal_rel_tol, common);
        }
        if (arl->parsed()) return run_arl(arl_m, arl_n, arl_b, arl_w, arl_kind);
        if (det->parsed()) {
            if (!det_stdin && det_input.empty()) {
                throw std::domain_error("detect: need --input or --stdin");
            }
            return run_detect(det_input, det_stdin, det_projection, det_identity, det_b, det_w,
                              det_mode);
        }
        if (proj->parsed()) {
            return run_project(proj_kind, proj_m, proj_n, proj_d, proj_var, proj_out, common);
        }
        if (exp->parsed()) {
            return run_experiment(exp_name, exp_scale, exp_out, exp_replicates,
                                  exp_cal_replicates, exp_no_sim_b, exp_topology, exp_grid_m,
                                  exp_grid_arl, exp_affected, common);
        }
        if (norm->parsed()) {
            if (!norm_stdin && norm_input.empty()) {
                throw std::domain_error("normality: need --input or --stdin");
            }
            return run_normality(norm_input, norm_stdin, norm_limit);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
