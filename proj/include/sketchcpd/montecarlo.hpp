#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sketchcpd/detector.hpp"
#include "sketchcpd/projection.hpp"
#include "sketchcpd/rng.hpp"

// Replicate-parallel Monte Carlo estimation of run lengths and detection
// delays, and simulation-based threshold calibration with common random
// numbers. Every replicate owns RngStream(root_seed, stream) state, so
// results are independent of the thread count; aggregation is an ordered
// reduction over replicate indices.

namespace sketchcpd {

/// Work-sharing loop; body(i) must only touch slot i of its output.
inline void parallel_for_indexed(int count, int threads, const std::function<void(int)>& body) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    if (threads == 1 || count <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    const int workers = std::min(threads, count);
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

enum class SensingKind { gaussian, expander, identity, subsample };

inline const char* to_string(SensingKind k) {
    switch (k) {
        case SensingKind::gaussian: return "gaussian";
        case SensingKind::expander: return "expander";
        case SensingKind::identity: return "identity";
        case SensingKind::subsample: return "subsample";
    }
    return "gaussian";
}

struct DetectorSpec {
    SensingKind kind = SensingKind::gaussian;
    int m = 0;
    int n = 0;
    int column_degree = 2;        // expander only
    double entry_variance = 0.0;  // gaussian; 0 means the 1/N default
    bool fresh_projection = false;  // redraw the matrix per replicate
    int w = 0;
    double b = 0.0;
};

struct DataSpec {
    int n = 0;
    VectorXd mu;                // post-change mean (ignored under the null)
    bool change_immediate = false;  // true: change at kappa = 0; false: null
};

struct SimPlan {
    DetectorSpec det;
    DataSpec data;
    int replicates = 2000;
    long horizon_cap = 0;
    std::uint64_t root_seed = 0;

    void validate() const {
        if (det.m < 1 || det.n < det.m) throw std::domain_error("SimPlan: need 1 <= M <= N");
        if (data.n != det.n) throw std::domain_error("SimPlan: detector/data dimension mismatch");
        if (det.w < 1) throw std::domain_error("SimPlan: window must be positive");
        if (replicates < 1) throw std::domain_error("SimPlan: replicates must be positive");
        if (horizon_cap < 1) throw std::domain_error("SimPlan: horizon cap must be positive");
        if (data.change_immediate && data.mu.size() != data.n) {
            throw std::domain_error("SimPlan: mu dimension mismatch");
        }
    }
};

struct SimResult {
    double mean = 0.0;
    double stderr = 0.0;
    int replicates_used = 0;
    int capped_count = 0;
};

/// Serialize a plan as "key = value" lines (the CLI config grammar).
inline std::string to_config_string(const SimPlan& p) {
    std::ostringstream os;
    os << "kind = " << to_string(p.det.kind) << "\n"
       << "M = " << p.det.m << "\nN = " << p.det.n << "\n"
       << "d = " << p.det.column_degree << "\n"
       << "entry_variance = " << (p.det.entry_variance > 0 ? p.det.entry_variance : 1.0 / p.det.n)
       << "\n"
       << "fresh_projection = " << (p.det.fresh_projection ? 1 : 0) << "\n"
       << "w = " << p.det.w << "\nb = " << p.det.b << "\n"
       << "kappa = " << (p.data.change_immediate ? "0" : "inf") << "\n"
       << "replicates = " << p.replicates << "\n"
       << "horizon_cap = " << p.horizon_cap << "\n"
       << "seed = " << p.root_seed << "\n";
    return os.str();
}

namespace detail {

inline ProjectionMatrix build_projection(const DetectorSpec& det, RngStream& rng) {
    const double var = det.entry_variance > 0.0 ? det.entry_variance : 1.0 / det.n;
    switch (det.kind) {
        case SensingKind::gaussian: return gaussian_projection(det.m, det.n, var, rng);
        case SensingKind::expander: return expander_projection(det.m, det.n, det.column_degree, rng);
        case SensingKind::identity: return identity_projection(det.n);
        case SensingKind::subsample:
            throw std::logic_error("build_projection: subsample sensing has no fixed matrix");
    }
    throw std::logic_error("build_projection: unreachable");
}

struct ReplicateOutcome {
    double time = 0.0;
    bool capped = false;
};

// One replicate: fresh data stream, optional fresh matrix stream, run to
// first alarm or to the horizon cap.
inline ReplicateOutcome run_replicate(const SimPlan& plan, const ProjectionMatrix* shared_a,
                                      int replicate) {
    RngStream data_rng(plan.root_seed, streams::data(static_cast<std::uint64_t>(replicate)));
    const int n = plan.data.n;
    VectorXd x(n);
    const bool post_change = plan.data.change_immediate;

    const auto draw_x = [&]() {
        for (int j = 0; j < n; ++j) x(j) = data_rng.normal();
        if (post_change) x += plan.data.mu;
    };

    if (plan.det.kind == SensingKind::subsample) {
        MissingDataDetector det(n, plan.det.w, plan.det.b);
        for (long t = 1; t <= plan.horizon_cap; ++t) {
            const ObservationMask mask = subsample_mask(n, plan.det.m, data_rng);
            draw_x();
            VectorXd values(mask.size());
            for (int i = 0; i < mask.size(); ++i) values(i) = x(mask.observed[i]);
            if (det.step(mask, values).fired) return {static_cast<double>(t), false};
        }
        return {static_cast<double>(plan.horizon_cap), true};
    }

    std::optional<ProjectionMatrix> own;
    const ProjectionMatrix* a = shared_a;
    if (plan.det.fresh_projection) {
        RngStream matrix_rng(plan.root_seed, streams::matrix(static_cast<std::uint64_t>(replicate)));
        own.emplace(build_projection(plan.det, matrix_rng));
        a = &*own;
    }
    FixedSketchDetector det(*a, plan.det.w, plan.det.b);
    for (long t = 1; t <= plan.horizon_cap; ++t) {
        draw_x();
        if (det.step(a->apply(x)).fired) return {static_cast<double>(t), false};
    }
    return {static_cast<double>(plan.horizon_cap), true};
}

inline SimResult simulate_impl(const SimPlan& plan, int threads) {
    plan.validate();
    std::optional<ProjectionMatrix> shared;
    if (plan.det.kind != SensingKind::subsample && !plan.det.fresh_projection) {
        RngStream matrix_rng(plan.root_seed, streams::shared);
        shared.emplace(build_projection(plan.det, matrix_rng));
    }
    std::vector<ReplicateOutcome> out(plan.replicates);
    parallel_for_indexed(plan.replicates, threads, [&](int r) {
        out[r] = run_replicate(plan, shared ? &*shared : nullptr, r);
    });
    // ordered reduction: independent of scheduling
    double sum = 0.0, sumsq = 0.0;
    int capped = 0;
    for (const auto& o : out) {
        sum += o.time;
        sumsq += o.time * o.time;
        capped += o.capped ? 1 : 0;
    }
    SimResult res;
    res.replicates_used = plan.replicates;
    res.capped_count = capped;
    res.mean = sum / plan.replicates;
    const double var =
        plan.replicates > 1
            ? std::max(0.0, (sumsq - sum * sum / plan.replicates) / (plan.replicates - 1.0))
            : 0.0;
    res.stderr = std::sqrt(var / plan.replicates);
    return res;
}

}  // namespace detail

/// Mean time to false alarm under the null. Replicates that reach the
/// horizon cap are counted at the cap and flagged; an estimate with every
/// replicate capped is an error.
inline SimResult simulate_arl(SimPlan plan, int threads = 0) {
    plan.data.change_immediate = false;
    const SimResult res = detail::simulate_impl(plan, threads);
    if (res.capped_count == res.replicates_used) {
        throw std::runtime_error("simulate_arl: every replicate hit the horizon cap");
    }
    return res;
}

/// Mean first-alarm time with the change active from the first sample.
inline SimResult simulate_edd(SimPlan plan, int threads = 0) {
    plan.data.change_immediate = true;
    if (plan.data.mu.size() != plan.data.n) throw std::domain_error("simulate_edd: mu dimension mismatch");
    return detail::simulate_impl(plan, threads);
}

struct ThresholdCalibration {
    double threshold = 0.0;
    SimResult estimate;  // run-length estimate at the returned threshold
    int evaluations = 0;
};

/// Generic monotone threshold search against a mean-run-length oracle.
/// `estimate(b)` must be pathwise nondecreasing in b (use common random
/// numbers); terminates when the estimate is within rel_tol of the target
/// or within one standard error (noise floor).
inline ThresholdCalibration calibrate_threshold_mc(const std::function<SimResult(double)>& estimate,
                                                   double target, double rel_tol,
                                                   double initial_hi, int max_iterations = 40) {
    if (!(target > 1.0)) throw std::domain_error("calibrate_threshold_mc: target must exceed 1");
    if (!(rel_tol >= 0.01)) throw std::domain_error("calibrate_threshold_mc: rel_tol must be >= 0.01");
    ThresholdCalibration out;
    double lo = 0.0;
    double hi = initial_hi > 0.0 ? initial_hi : 1.0;
    SimResult at_hi = estimate(hi);
    ++out.evaluations;
    int expansions = 0;
    while (at_hi.mean < target) {
        lo = hi;
        hi *= 2.0;
        at_hi = estimate(hi);
        ++out.evaluations;
        if (++expansions > 60) throw std::runtime_error("calibrate_threshold_mc: bracket expansion failed");
    }
    double best_b = hi;
    SimResult best = at_hi;
    for (int it = 0; it < max_iterations; ++it) {
        if (std::fabs(best.mean - target) <= std::max(rel_tol * target, best.stderr)) break;
        const double mid = 0.5 * (lo + hi);
        const SimResult at_mid = estimate(mid);
        ++out.evaluations;
        if (std::fabs(at_mid.mean - target) < std::fabs(best.mean - target)) {
            best = at_mid;
            best_b = mid;
        }
        (at_mid.mean < target ? lo : hi) = mid;
    }
    out.threshold = best_b;
    out.estimate = best;
    return out;
}

/// Simulation-based threshold calibration for a detector plan (the plan's
/// own b is ignored); common random numbers across candidate thresholds.
inline ThresholdCalibration calibrate_b_mc(SimPlan plan, double target_arl, double rel_tol = 0.05,
                                           int threads = 0) {
    plan.data.change_immediate = false;
    if (plan.horizon_cap < 1) plan.horizon_cap = static_cast<long>(20 * target_arl);
    const auto estimate = [&](double b) {
        SimPlan p = plan;
        p.det.b = b;
        return detail::simulate_impl(p, threads);  // capped replicates allowed mid-search
    };
    return calibrate_threshold_mc(estimate, target_arl, rel_tol, std::max(1.0, 0.75 * plan.det.m));
}

}  // namespace sketchcpd
