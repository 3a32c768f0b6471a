#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace sketchcpd {

/// Deterministic random stream addressed by (root_seed, stream_id).
///
/// The generator is PCG64 (128-bit LCG state, XSL-RR output). Seed mixing
/// follows the generator's own stream mechanism: the root seed initialises
/// the state and the stream id selects the increment,
///
///     inc   = 2 * stream_id + 1
///     state = pcg_step(root_seed + pcg_step(0))
///
/// so equal (root_seed, stream_id) pairs replay the exact same sequence on
/// any machine/thread schedule, and distinct stream ids walk statistically
/// independent orbits of the same LCG.
class RngStream {
public:
    RngStream(std::uint64_t root_seed, std::uint64_t stream_id)
        : state_(0), inc_((static_cast<u128>(stream_id) << 1u) | 1u) {
        next_raw();
        state_ += static_cast<u128>(root_seed);
        next_raw();
    }

    /// Raw 64-bit draw.
    std::uint64_t next_u64() { return next_raw(); }

    /// Uniform double in [0, 1), 53 random bits.
    double uniform01() {
        return static_cast<double>(next_raw() >> 11u) * 0x1.0p-53;
    }

    /// Uniform double in (0, 1]; never returns 0 (safe under log()).
    double uniform01_open_zero() {
        return (static_cast<double>(next_raw() >> 11u) + 1.0) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). Rejection sampling, exact.
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw std::domain_error("uniform_below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_raw();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal draw (Marsaglia polar method, pair-cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// First k entries of a uniformly random permutation of {0,...,n-1}.
    std::vector<int> sample_without_replacement(int n, int k) {
        if (k < 0 || k > n) throw std::domain_error("sample_without_replacement: need 0 <= k <= n");
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < k; ++i) {
            const int j = i + static_cast<int>(uniform_below(static_cast<std::uint64_t>(n - i)));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    using u128 = unsigned __int128;

    std::uint64_t next_raw() {
        const u128 mul = (static_cast<u128>(2549297995355413924ULL) << 64u) |
                         4865540595714422341ULL;
        state_ = state_ * mul + inc_;
        const std::uint64_t xored = static_cast<std::uint64_t>(state_ >> 64u) ^
                                    static_cast<std::uint64_t>(state_);
        const unsigned rot = static_cast<unsigned>(state_ >> 122u);
        return (xored >> rot) | (xored << ((64u - rot) & 63u));
    }

    u128 state_;
    u128 inc_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Stream-id allocation used by the Monte Carlo layer. Replicate r draws its
/// data from stream 1+2r and (when a fresh projection per replicate is
/// requested) its matrix from stream 2+2r; stream 0 is reserved for shared
/// one-off draws such as a fixed projection.
namespace streams {
inline constexpr std::uint64_t shared = 0;
inline constexpr std::uint64_t data(std::uint64_t replicate) { return 1 + 2 * replicate; }
inline constexpr std::uint64_t matrix(std::uint64_t replicate) { return 2 + 2 * replicate; }
// auxiliary draws (correction estimators, sparse-support picks, ...) live in
// a disjoint range so they can never collide with replicate streams
inline constexpr std::uint64_t aux(std::uint64_t k) { return (1ULL << 62) + k; }
}  // namespace streams

}  // namespace sketchcpd
