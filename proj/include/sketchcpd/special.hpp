#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

// Scalar special functions and quadrature used by the run-length theory:
// standard normal cdf/pdf, the boundary-crossing function nu(u), the
// integral constant of the run-length formula, a regularized incomplete
// beta function and the Kolmogorov tail (both needed by distribution tests).

namespace sketchcpd {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

/// Standard normal CDF via erfc; absolute error below 1e-13 everywhere,
/// saturates cleanly in the far tails.
inline double std_normal_cdf(double x) {
    if (!std::isfinite(x)) throw std::domain_error("std_normal_cdf: x must be finite");
    return 0.5 * std::erfc(-x * kInvSqrt2);
}

/// Standard normal density exp(-x^2/2)/sqrt(2 pi).
inline double std_normal_pdf(double x) {
    if (!std::isfinite(x)) throw std::domain_error("std_normal_pdf: x must be finite");
    return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

/// Overshoot correction nu(u) in its closed rational form
///   nu(u) ~ (2/u)[Phi(u/2) - 1/2] / ((u/2) Phi(u/2) + phi(u/2)).
/// Continuous and in (0,1] for u > 0, -> 1 as u -> 0+.
inline double nu_approx(double u) {
    if (!(u > 0.0)) throw std::domain_error("nu_approx: u must be positive");
    const double h = 0.5 * u;
    const double cdf = std_normal_cdf(h);
    const double pdf = std_normal_pdf(h);
    const double num = (2.0 / u) * (cdf - 0.5);
    const double den = h * cdf + pdf;
    return num / den;
}

namespace detail {

// Adaptive Simpson with interval bisection. The integrands here are smooth,
// so plain bisection with the classical 15-point error estimate suffices.
template <class F>
double adaptive_simpson_rec(const F& f, double a, double b, double fa, double fm, double fb,
                            double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::fabs(delta) <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol, int max_depth) {
    if (a == b) return 0.0;
    const double m = 0.5 * (a + b);
    const double fa = f(a);
    const double fm = f(m);
    const double fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

}  // namespace detail

/// Integral of u * nu(u)^2 over [lo, hi]; the window constant of the
/// run-length approximation. Absolute tolerance 1e-9, max depth 60.
inline double integrate_u_nu2(double lo, double hi) {
    if (!(lo > 0.0)) throw std::domain_error("integrate_u_nu2: lower limit must be positive");
    if (hi < lo) throw std::domain_error("integrate_u_nu2: upper limit below lower limit");
    if (hi == lo) return 0.0;
    const auto f = [](double u) {
        const double nv = nu_approx(u);
        return u * nv * nv;
    };
    double v = detail::adaptive_simpson(f, lo, hi, 1e-9, 60);
    return v < 0.0 ? 0.0 : v;
}

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double ibeta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 400;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw std::runtime_error("ibeta: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b); the Beta(a,b) CDF at x.
inline double ibeta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("ibeta: a, b must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * detail::ibeta_cf(a, b, x) / a;
    }
    return 1.0 - front * detail::ibeta_cf(b, a, 1.0 - x) / b;
}

/// Kolmogorov tail Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_tail(double lambda) {
    if (lambda <= 0.0) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    const double e = -2.0 * lambda * lambda;
    for (int k = 1; k <= 200; ++k) {
        const double term = std::exp(e * k * k);
        sum += sign * term;
        if (term < 1e-14) break;
        sign = -sign;
    }
    const double q = 2.0 * sum;
    return q < 0.0 ? 0.0 : (q > 1.0 ? 1.0 : q);
}

}  // namespace sketchcpd
