#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "sketchcpd/projection.hpp"

// Streaming change-point detectors. The fixed-projection detector monitors
// whitened sketches z_i = L^{-1} y_i (L the Cholesky factor of A A^T) and
// alarms when
//
//     max_{t-w <= k < t}  || S_t - S_k ||^2 / (2 (t-k))  >  b,
//
// S_k the cumulative sum of the z_i. The time-varying detector accumulates
// per-coordinate observed sums against observation counts. Both keep a ring
// of the last w+1 cumulative states, so a step costs O(w * dim).

namespace sketchcpd {

struct Alarm {
    long time = 0;        // step index at which the statistic was evaluated
    double statistic = 0.0;
    long khat = 0;        // arg-max window start, in [time - w, time)
    bool fired = false;
};

/// Fixed-projection windowed GLR detector in whitened coordinates.
class FixedSketchDetector {
public:
    FixedSketchDetector(SpdFactor whitener, int window, double threshold)
        : whitener_(std::move(whitener)), w_(window), b_(threshold) {
        if (w_ < 1) throw std::domain_error("FixedSketchDetector: window must be positive");
        const int m = whitener_.dim();
        ring_ = MatrixXd::Zero(m, w_ + 1);  // ring_[.., k % (w+1)] = S_k
        cum_ = VectorXd::Zero(m);
    }

    FixedSketchDetector(const ProjectionMatrix& a, int window, double threshold)
        : FixedSketchDetector(a.gram_factor(), window, threshold) {}

    int dim() const { return whitener_.dim(); }
    int window() const { return w_; }
    double threshold() const { return b_; }
    long time() const { return t_; }

    /// Consumes the sketch for step t+1 and returns the statistic and alarm.
    Alarm step(const VectorXd& y) {
        if (y.size() != dim()) throw std::invalid_argument("FixedSketchDetector::step: dimension mismatch");
        cum_ += solve_lower(whitener_, y);
        ++t_;
        double best = 0.0;
        long khat = t_ - 1;
        const long klo = std::max<long>(0, t_ - w_);
        for (long k = t_ - 1; k >= klo; --k) {
            const double stat =
                (cum_ - ring_.col(k % (w_ + 1))).squaredNorm() / (2.0 * static_cast<double>(t_ - k));
            if (stat > best) {
                best = stat;
                khat = k;
            }
        }
        ring_.col(t_ % (w_ + 1)) = cum_;
        return Alarm{t_, best, khat, best > b_};
    }

private:
    SpdFactor whitener_;
    int w_;
    double b_;
    MatrixXd ring_;
    VectorXd cum_;
    long t_ = 0;
};

/// Direct evaluation of the windowed GLR from raw sketches,
///   (t-k)/2 * ybar^T (A A^T)^{-1} ybar,
/// used as an oracle against the whitened recursion.
inline double glr_direct(const ProjectionMatrix& a, const std::vector<VectorXd>& window, int k) {
    const int t = static_cast<int>(window.size());
    if (t == 0) throw std::invalid_argument("glr_direct: empty window");
    if (k < 0 || k >= t) throw std::invalid_argument("glr_direct: k out of range");
    VectorXd ybar = VectorXd::Zero(a.rows());
    for (int i = k; i < t; ++i) {
        if (window[i].size() != a.rows()) throw std::invalid_argument("glr_direct: dimension mismatch");
        ybar += window[i];
    }
    const double span = static_cast<double>(t - k);
    ybar /= span;
    const VectorXd z = solve_lower(a.gram_factor(), ybar);
    return 0.5 * span * z.squaredNorm();
}

/// Time-varying 0-1 projection detector ("missing data" procedure):
///   max_k  1/2 sum_n [sum_{i in (k,t]} P(x_i)]_n^2 / V_n(k,t)
/// with the 0/0 -> 0 convention for never-observed coordinates.
class MissingDataDetector {
public:
    MissingDataDetector(int n, int window, double threshold) : n_(n), w_(window), b_(threshold) {
        if (n_ < 1) throw std::domain_error("MissingDataDetector: N must be positive");
        if (w_ < 1) throw std::domain_error("MissingDataDetector: window must be positive");
        sum_ring_ = MatrixXd::Zero(n_, w_ + 1);
        weight_ring_ = MatrixXd::Zero(n_, w_ + 1);
        cum_sum_ = VectorXd::Zero(n_);
        cum_weight_ = VectorXd::Zero(n_);
    }

    int dim() const { return n_; }
    int window() const { return w_; }
    double threshold() const { return b_; }
    long time() const { return t_; }

    /// Step with the observed coordinate subset and the observed values
    /// (aligned with mask.observed).
    Alarm step(const ObservationMask& mask, const VectorXd& values) {
        if (mask.n != n_) throw std::invalid_argument("MissingDataDetector::step: mask dimension mismatch");
        if (values.size() != mask.size()) {
            throw std::invalid_argument("MissingDataDetector::step: values not aligned with mask");
        }
        VectorXd scatter = VectorXd::Zero(n_);
        VectorXd weight = VectorXd::Zero(n_);
        for (int i = 0; i < mask.size(); ++i) {
            scatter(mask.observed[i]) = values(i);
            weight(mask.observed[i]) = 1.0;
        }
        return step_projected(scatter, weight);
    }

    /// Generalized step: `scatter` is this step's contribution to the
    /// per-coordinate accumulated signal and `weight` its contribution to
    /// the per-coordinate information count. Row-selection sensing gives
    /// scatter = observed values, weight = 0/1 indicators; aggregated 0-1
    /// sensing supplies fractional weights.
    Alarm step_projected(const VectorXd& scatter, const VectorXd& weight) {
        if (scatter.size() != n_ || weight.size() != n_) {
            throw std::invalid_argument("MissingDataDetector::step_projected: dimension mismatch");
        }
        cum_sum_ += scatter;
        cum_weight_ += weight;
        ++t_;
        double best = 0.0;
        long khat = t_ - 1;
        const long klo = std::max<long>(0, t_ - w_);
        for (long k = t_ - 1; k >= klo; --k) {
            const int col = static_cast<int>(k % (w_ + 1));
            double acc = 0.0;
            for (int j = 0; j < n_; ++j) {
                const double v = cum_weight_(j) - weight_ring_(j, col);
                if (v > 0.0) {
                    const double d = cum_sum_(j) - sum_ring_(j, col);
                    acc += d * d / v;
                }
            }
            const double stat = 0.5 * acc;
            if (stat > best) {
                best = stat;
                khat = k;
            }
        }
        sum_ring_.col(t_ % (w_ + 1)) = cum_sum_;
        weight_ring_.col(t_ % (w_ + 1)) = cum_weight_;
        return Alarm{t_, best, khat, best > b_};
    }

private:
    int n_;
    int w_;
    double b_;
    MatrixXd sum_ring_, weight_ring_;
    VectorXd cum_sum_, cum_weight_;
    long t_ = 0;
};

/// Oracle for the time-varying GLR with arbitrary per-step operators:
///   1/2 G^T B G,  G = sum_i A_i^T (A_i A_i^T)^{-1} y_i,
/// B the pseudo-inverse of sum_i A_i^T (A_i A_i^T)^{-1} A_i (eigenvalues
/// below 1e-10 of the largest treated as zero). Small instances only.
inline double glr_timevarying_pinv(const std::vector<ProjectionMatrix>& a_list,
                                   const std::vector<VectorXd>& y_list) {
    if (a_list.empty() || a_list.size() != y_list.size()) {
        throw std::invalid_argument("glr_timevarying_pinv: operator/sample lists mismatch");
    }
    const int n = a_list.front().cols();
    VectorXd g = VectorXd::Zero(n);
    MatrixXd bracket = MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < a_list.size(); ++i) {
        const auto& a = a_list[i];
        if (a.cols() != n) throw std::invalid_argument("glr_timevarying_pinv: inconsistent N");
        if (y_list[i].size() != a.rows()) {
            throw std::invalid_argument("glr_timevarying_pinv: sample dimension mismatch");
        }
        const VectorXd u = solve_spd(a.gram_factor(), y_list[i]);
        g += a.entries().transpose() * u;
        MatrixXd w(a.rows(), n);
        for (int col = 0; col < n; ++col) {
            w.col(col) = solve_spd(a.gram_factor(), VectorXd(a.entries().col(col)));
        }
        bracket += a.entries().transpose() * w;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (bracket + bracket.transpose()));
    const VectorXd& lam = eig.eigenvalues();
    const double cut = 1e-10 * std::max(lam.cwiseAbs().maxCoeff(), 0.0);
    VectorXd proj = eig.eigenvectors().transpose() * g;
    double quad = 0.0;
    for (int i = 0; i < lam.size(); ++i) {
        if (lam(i) > cut) quad += proj(i) * proj(i) / lam(i);
    }
    return 0.5 * quad;
}

/// Per-coordinate one-sided CUSUM bank run directly on sketches against a
/// prescribed post-change mean (default all ones); alarms on the summed
/// states. Deliberately ignores the sketch covariance.
class CusumBaseline {
public:
    CusumBaseline(VectorXd reference_mean, double threshold)
        : ref_(std::move(reference_mean)), b_(threshold), state_(VectorXd::Zero(ref_.size())) {
        if (ref_.size() == 0) throw std::domain_error("CusumBaseline: empty reference mean");
    }

    static CusumBaseline all_ones(int dim, double threshold) {
        return CusumBaseline(VectorXd::Ones(dim), threshold);
    }

    int dim() const { return static_cast<int>(ref_.size()); }
    double threshold() const { return b_; }
    long time() const { return t_; }
    const VectorXd& states() const { return state_; }

    Alarm step(const VectorXd& y) {
        if (y.size() != ref_.size()) throw std::invalid_argument("CusumBaseline::step: dimension mismatch");
        ++t_;
        state_ = (state_ + (y - 0.5 * ref_).cwiseProduct(ref_)).cwiseMax(0.0);
        const double stat = state_.sum();
        return Alarm{t_, stat, t_ - 1, stat > b_};
    }

private:
    VectorXd ref_;
    double b_;
    VectorXd state_;
    long t_ = 0;
};

enum class StopReason { alarm, horizon_cap, source_exhausted };

struct RunResult {
    Alarm alarm;
    StopReason reason = StopReason::horizon_cap;
};

/// Drives one detector until it fires, the source dries up, or the horizon
/// cap is reached. `next` advances the detector by one step and returns the
/// step's Alarm, or nothing when the source is exhausted.
template <class StepFn>
RunResult run_to_alarm(StepFn&& next, long horizon_cap) {
    if (horizon_cap < 1) throw std::domain_error("run_to_alarm: horizon cap must be >= 1");
    Alarm last{};
    for (long t = 1; t <= horizon_cap; ++t) {
        std::optional<Alarm> a = next();
        if (!a.has_value()) return RunResult{last, StopReason::source_exhausted};
        last = *a;
        if (last.fired) return RunResult{last, StopReason::alarm};
    }
    return RunResult{last, StopReason::horizon_cap};
}

}  // namespace sketchcpd
