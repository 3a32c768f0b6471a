#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>

#include "sketchcpd/rng.hpp"
#include "sketchcpd/special.hpp"

// Closed-form performance approximations for the sketch detector: the
// average run length under the null, threshold calibration by bisection,
// the expected detection delay with its random-walk correction terms, and
// the time-varying (subsampled) counterparts.

namespace sketchcpd {

struct ArlQuery {
    int m = 0;       // sketch dimension
    double b = 0.0;  // threshold, must exceed m/2
    int w = 0;       // window length

    void validate() const {
        if (m < 1) throw std::domain_error("ArlQuery: M must be positive");
        if (!(b > 0.5 * m)) throw std::domain_error("ArlQuery: threshold must exceed M/2");
        if (w < 2) throw std::domain_error("ArlQuery: window too small (degenerate quadrature interval)");
    }
};

/// log of the run-length approximation
///   E{T} = 2 sqrt(pi)/c(M,b,w) * 1/(1 - M/2b) * 1/sqrt(M)
///          * (M/2b)^{M/2} * e^{b - M/2}
/// with c(M,b,w) the integral of u nu^2(u) between
/// sqrt(2b/w)(1 - M/2b) and sqrt(2b)(1 - M/2b). Everything is summed in
/// log space so M and b in the thousands stay finite.
inline double log_arl_fixed(const ArlQuery& q) {
    q.validate();
    const double m = q.m, b = q.b;
    const double shrink = 1.0 - m / (2.0 * b);
    const double lo = std::sqrt(2.0 * b / q.w) * shrink;
    const double hi = std::sqrt(2.0 * b) * shrink;
    const double c = integrate_u_nu2(lo, hi);
    if (!(c > 0.0)) throw std::domain_error("log_arl_fixed: degenerate window constant");
    return std::log(2.0 * std::sqrt(M_PI)) - std::log(c) - std::log(shrink) - 0.5 * std::log(m) +
           0.5 * m * (std::log(m) - std::log(2.0 * b)) + (b - 0.5 * m);
}

inline double arl_fixed(const ArlQuery& q) { return std::exp(log_arl_fixed(q)); }
inline double arl_fixed(int m, double b, int w) { return arl_fixed(ArlQuery{m, b, w}); }

namespace detail {

// The approximation diverges at both ends of (M/2, inf): it blows up as
// b -> M/2 (outside its asymptotic regime) and grows exponentially for
// large b. Calibration must bracket from the interior minimum, found here
// by golden-section (log_arl is unimodal on the interval).
inline double arl_branch_minimum(int m, int w) {
    const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
    double lo = 0.5 * m * (1.0 + 1e-6) + 1e-9;
    double hi = 3.0 * m + 120.0;
    double x1 = hi - golden * (hi - lo);
    double x2 = lo + golden * (hi - lo);
    double f1 = log_arl_fixed({m, x1, w});
    double f2 = log_arl_fixed({m, x2, w});
    for (int it = 0; it < 200 && (hi - lo) > 1e-9 * (1.0 + hi); ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - golden * (hi - lo);
            f1 = log_arl_fixed({m, x1, w});
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + golden * (hi - lo);
            f2 = log_arl_fixed({m, x2, w});
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// Threshold with theoretical run length `target_arl`: bisection on the
/// increasing branch of arl_fixed, terminating at 1e-6 relative error.
inline double calibrate_b(int m, int w, double target_arl) {
    if (!(target_arl > 1.0)) throw std::domain_error("calibrate_b: target ARL must exceed 1");
    const double log_target = std::log(target_arl);
    double lo = detail::arl_branch_minimum(m, w);
    if (log_arl_fixed({m, lo, w}) >= log_target) {
        throw std::domain_error("calibrate_b: target below the approximation's reachable range");
    }
    double hi = lo;
    int doublings = 0;
    do {
        hi = lo + (hi - lo + 1.0) * 2.0;
        if (++doublings > 200) throw std::runtime_error("calibrate_b: bracket expansion failed");
    } while (log_arl_fixed({m, hi, w}) < log_target);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f = log_arl_fixed({m, mid, w});
        if (std::fabs(f - log_target) <= 1e-7) return mid;
        (f < log_target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Run length of the time-varying (rate r = M/N subsampled) procedure.
/// Matches the reference threshold tables: the N-stream fixed formula at
/// the procedure's own threshold, scaled by 1/r,
///   E{T_2'} = (N/M) * arl_fixed(N, b, w).
/// Reduces to arl_fixed(N, b, w) identically at M = N.
inline double log_arl_timevarying(int n, int m, double b, int w) {
    if (m < 1 || m > n) throw std::domain_error("arl_timevarying: need 1 <= M <= N");
    return std::log(static_cast<double>(n) / m) + log_arl_fixed({n, b, w});
}

inline double arl_timevarying(int n, int m, double b, int w) {
    return std::exp(log_arl_timevarying(n, m, b, w));
}

/// Threshold for the time-varying procedure at a target run length;
/// inverts arl_timevarying via the fixed calibration at target * M/N.
inline double calibrate_b_timevarying(int n, int m, int w, double target_arl) {
    if (m < 1 || m > n) throw std::domain_error("calibrate_b_timevarying: need 1 <= M <= N");
    return calibrate_b(n, w, target_arl * static_cast<double>(m) / n);
}

struct WalkCorrections {
    double rho = 0.0;        // expected overshoot over a high threshold, >= 0
    double emin = 0.0;       // E{min_t walk} <= 0
    double mc_stderr = 0.0;  // Monte Carlo error of rho
};

/// Correction terms for the delay expansion. The driving random walk has
/// i.i.d. Gaussian increments with mean delta^2/2 and variance delta^2
/// (the log-likelihood-ratio increments of the underlying model).
///
/// emin comes from the exact series E{min} = -sum_i E{walk_i^-} with
///   E{walk_i^-} = sigma_i phi(m_i/sigma_i) - m_i Phi(-m_i/sigma_i),
/// truncated once terms drop below 1e-12; rho is the Monte Carlo mean
/// overshoot of the walk over the level 50 delta^2.
inline WalkCorrections walk_corrections(double delta, RngStream& rng, int replicates = 100000) {
    if (!(delta > 0.0)) throw std::domain_error("walk_corrections: delta must be positive");
    WalkCorrections out;

    double series = 0.0;
    const double half_d2 = 0.5 * delta * delta;
    for (long i = 1; i <= 10000000L; ++i) {
        const double mean = half_d2 * static_cast<double>(i);
        const double sd = delta * std::sqrt(static_cast<double>(i));
        const double r = mean / sd;
        const double term = sd * std_normal_pdf(r) - mean * std_normal_cdf(-r);
        series += term;
        if (term < 1e-12) break;
    }
    out.emin = -series;

    if (replicates < 1) throw std::domain_error("walk_corrections: replicates must be positive");
    const double threshold = 50.0 * delta * delta;
    double sum = 0.0, sumsq = 0.0;
    for (int rep = 0; rep < replicates; ++rep) {
        double s = 0.0;
        do {
            s += rng.normal(half_d2, delta);
        } while (s <= threshold);
        const double over = s - threshold;
        sum += over;
        sumsq += over * over;
    }
    out.rho = sum / replicates;
    const double var = std::max(0.0, (sumsq - sum * sum / replicates) / (replicates - 1.0));
    out.mc_stderr = std::sqrt(var / replicates);
    return out;
}

struct EddQuery {
    double b = 0.0;
    int m = 0;
    double delta = 0.0;  // ||V^T mu||, must be positive
    std::optional<WalkCorrections> corrections;

    void validate() const {
        if (m < 1) throw std::domain_error("EddQuery: M must be positive");
        if (!(delta > 0.0)) throw std::domain_error("EddQuery: delta must be positive");
    }
};

/// First-order delay approximation b / (delta^2 / 2).
inline double edd_first_order(double b, double delta) {
    if (!(delta > 0.0)) throw std::domain_error("edd_first_order: delta must be positive");
    return 2.0 * b / (delta * delta);
}

/// Delay expansion
///   E{T} = (b + rho - M/2 - E{min walk}) / (delta^2 / 2).
inline double edd_fixed(const EddQuery& q) {
    q.validate();
    if (!q.corrections.has_value()) {
        throw std::invalid_argument("edd_fixed: corrections missing; supply them or pass an RngStream");
    }
    const WalkCorrections& c = *q.corrections;
    const double numerator = q.b + c.rho - 0.5 * q.m - c.emin;
    if (!(numerator > 0.0)) throw std::domain_error("edd_fixed: non-positive numerator (b too small)");
    return numerator / (0.5 * q.delta * q.delta);
}

inline double edd_fixed(EddQuery q, RngStream& rng, int replicates = 100000) {
    q.validate();
    if (!q.corrections.has_value()) q.corrections = walk_corrections(q.delta, rng, replicates);
    return edd_fixed(q);
}

/// Time-varying first-order delay, formula as printed:
///   ((2b - N)/energy - 1) * N/M.
inline double edd_timevarying(double b, int n, int m, double signal_energy) {
    if (m < 1 || n < m) throw std::domain_error("edd_timevarying: need 1 <= M <= N");
    if (!(signal_energy > 0.0)) throw std::domain_error("edd_timevarying: signal energy must be positive");
    if (!(2.0 * b > n)) throw std::domain_error("edd_timevarying: need 2b > N");
    return ((2.0 * b - n) / signal_energy - 1.0) * static_cast<double>(n) / m;
}

/// Same expansion without the subtracted unit term; this variant is the one
/// that matches the reference threshold/EDD tables at moderate M.
inline double edd_timevarying_without_offset(double b, int n, int m, double signal_energy) {
    if (m < 1 || n < m) throw std::domain_error("edd_timevarying: need 1 <= M <= N");
    if (!(signal_energy > 0.0)) throw std::domain_error("edd_timevarying: signal energy must be positive");
    if (!(2.0 * b > n)) throw std::domain_error("edd_timevarying: need 2b > N");
    return (2.0 * b - n) / signal_energy * static_cast<double>(n) / m;
}

/// Delay ratio (full data over sketched) heuristic: (N/M) * Gamma.
inline double edd_ratio(int n, int m, double gamma) {
    if (m < 1) throw std::domain_error("edd_ratio: M must be positive");
    return static_cast<double>(n) / m * gamma;
}

}  // namespace sketchcpd
