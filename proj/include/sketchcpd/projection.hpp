#pragma once

#include <algorithm>
#include <cstdio>
#include <istream>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sketchcpd/linalg.hpp"
#include "sketchcpd/rng.hpp"

// Sketching operators: Gaussian matrices, biregular 0-1 (expander-style)
// matrices, row-selection masks and topology-constrained node aggregators,
// plus the retained-signal-power ratio Gamma and its distribution law.

namespace sketchcpd {

enum class ProjectionKind { gaussian, expander, identity, row_selection, topology, custom };

inline const char* to_string(ProjectionKind k) {
    switch (k) {
        case ProjectionKind::gaussian: return "gaussian";
        case ProjectionKind::expander: return "expander";
        case ProjectionKind::identity: return "identity";
        case ProjectionKind::row_selection: return "row_selection";
        case ProjectionKind::topology: return "topology";
        case ProjectionKind::custom: return "custom";
    }
    return "custom";
}

inline ProjectionKind projection_kind_from_string(const std::string& s) {
    if (s == "gaussian") return ProjectionKind::gaussian;
    if (s == "expander") return ProjectionKind::expander;
    if (s == "identity") return ProjectionKind::identity;
    if (s == "row_selection") return ProjectionKind::row_selection;
    if (s == "topology") return ProjectionKind::topology;
    if (s == "custom") return ProjectionKind::custom;
    throw std::invalid_argument("unknown projection kind: " + s);
}

struct ProjectionMeta {
    int column_degree = 0;  // expander: exact per-column sum d
    int row_degree = 0;     // expander: exact per-row sum c
    std::uint64_t seed = 0;
    int retries = 0;  // resamples needed before the rank/degree checks passed
};

/// An M x N sensing operator with full row rank. A A^T is factored once at
/// construction; the factor doubles as the rank check and as the whitener
/// used by the detectors.
class ProjectionMatrix {
public:
    ProjectionMatrix(MatrixXd entries, ProjectionKind kind, ProjectionMeta meta = {})
        : entries_(std::move(entries)), kind_(kind), meta_(meta) {
        if (rows() < 1 || cols() < rows()) {
            throw std::domain_error("ProjectionMatrix: need 1 <= M <= N");
        }
        gram_factor_ = cholesky_spd(entries_ * entries_.transpose());
    }

    int rows() const { return static_cast<int>(entries_.rows()); }
    int cols() const { return static_cast<int>(entries_.cols()); }
    const MatrixXd& entries() const { return entries_; }
    ProjectionKind kind() const { return kind_; }
    const ProjectionMeta& meta() const { return meta_; }

    /// Cholesky factor of A A^T (the sketch-whitening operator).
    const SpdFactor& gram_factor() const { return gram_factor_; }

    VectorXd apply(const VectorXd& x) const {
        if (x.size() != cols()) throw std::invalid_argument("ProjectionMatrix::apply: dimension mismatch");
        return entries_ * x;
    }

private:
    MatrixXd entries_;
    ProjectionKind kind_;
    ProjectionMeta meta_;
    SpdFactor gram_factor_;
};

/// Indices observed at one time step; equivalent to a row-selection matrix.
struct ObservationMask {
    int n = 0;
    std::vector<int> observed;  // sorted, distinct, values in [0, n)

    static ObservationMask of(int n, std::vector<int> idx) {
        if (n < 1) throw std::domain_error("ObservationMask: N must be positive");
        std::sort(idx.begin(), idx.end());
        if (!idx.empty()) {
            if (idx.front() < 0 || idx.back() >= n) {
                throw std::domain_error("ObservationMask: index out of range");
            }
            if (std::adjacent_find(idx.begin(), idx.end()) != idx.end()) {
                throw std::domain_error("ObservationMask: duplicate index");
            }
        }
        return ObservationMask{n, std::move(idx)};
    }

    int size() const { return static_cast<int>(observed.size()); }
};

/// Undirected graph; edge index = position in the edge list.
struct GridTopology {
    int node_count = 0;
    std::vector<std::pair<int, int>> edges;

    int edge_count() const { return static_cast<int>(edges.size()); }

    void validate() const {
        if (node_count < 1) throw std::domain_error("GridTopology: empty node set");
        if (edges.empty()) throw std::domain_error("GridTopology: empty edge list");
        for (const auto& [a, b] : edges) {
            if (a == b) throw std::domain_error("GridTopology: self-loop");
            if (a < 0 || b < 0 || a >= node_count || b >= node_count) {
                throw std::domain_error("GridTopology: node index out of range");
            }
        }
    }

    std::vector<int> degrees() const {
        std::vector<int> deg(node_count, 0);
        for (const auto& [a, b] : edges) {
            ++deg[a];
            ++deg[b];
        }
        return deg;
    }
};

struct GammaValue {
    double gamma = 0.0;  // in [0, 1]
};

// ---------------------------------------------------------------------------
// Constructors

/// Gaussian sensing matrix with i.i.d. N(0, entry_variance) entries.
/// Redraws (fresh sample, bounded retries) if A A^T fails the SPD check.
inline ProjectionMatrix gaussian_projection(int m, int n, double entry_variance, RngStream& rng) {
    if (m < 1 || m > n) throw std::domain_error("gaussian_projection: need 1 <= M <= N");
    if (!(entry_variance > 0.0)) throw std::domain_error("gaussian_projection: variance must be positive");
    const double sd = std::sqrt(entry_variance);
    for (int attempt = 0; attempt < 100; ++attempt) {
        MatrixXd a(m, n);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) a(i, j) = sd * rng.normal();
        }
        try {
            ProjectionMeta meta;
            meta.retries = attempt;
            return ProjectionMatrix(std::move(a), ProjectionKind::gaussian, meta);
        } catch (const not_positive_definite&) {
            continue;  // rank-deficient draw happens with probability zero
        }
    }
    throw std::runtime_error("gaussian_projection: repeated rank-deficient draws");
}

inline ProjectionMatrix identity_projection(int n) {
    return ProjectionMatrix(MatrixXd::Identity(n, n), ProjectionKind::identity);
}

/// Biregular 0-1 matrix: every column sums to exactly d, every row to
/// exactly c = N d / M. Sampled with the configuration model (column and
/// row stubs matched uniformly); any duplicate edge rejects the whole draw.
inline ProjectionMatrix expander_projection(int m, int n, int d, RngStream& rng,
                                            int max_retries = 1000) {
    if (m < 1 || m > n) throw std::domain_error("expander_projection: need 1 <= M <= N");
    if (d < 1 || d > m) throw std::domain_error("expander_projection: need 1 <= d <= M");
    if ((static_cast<long long>(n) * d) % m != 0) {
        throw std::domain_error("expander_projection: N*d must be divisible by M");
    }
    const int c = static_cast<int>(static_cast<long long>(n) * d / m);
    if (c > n) throw std::domain_error("expander_projection: row degree exceeds N");

    std::vector<int> row_stubs;
    row_stubs.reserve(static_cast<std::size_t>(m) * c);
    for (int i = 0; i < m; ++i) {
        for (int k = 0; k < c; ++k) row_stubs.push_back(i);
    }
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        rng.shuffle(row_stubs);
        MatrixXd a = MatrixXd::Zero(m, n);
        bool duplicate = false;
        std::size_t pos = 0;
        for (int j = 0; j < n && !duplicate; ++j) {
            for (int k = 0; k < d; ++k) {
                const int i = row_stubs[pos++];
                if (a(i, j) != 0.0) {
                    duplicate = true;
                    break;
                }
                a(i, j) = 1.0;
            }
        }
        if (duplicate) continue;
        try {
            ProjectionMeta meta;
            meta.column_degree = d;
            meta.row_degree = c;
            meta.retries = attempt;
            return ProjectionMatrix(std::move(a), ProjectionKind::expander, meta);
        } catch (const not_positive_definite&) {
            continue;  // degenerate pairing (identical rows); resample
        }
    }
    throw std::runtime_error("expander_projection: no simple biregular graph found after " +
                             std::to_string(max_retries) + " retries");
}

/// Uniform draw of M_t of the N coordinates, without replacement.
inline ObservationMask subsample_mask(int n, int m_t, RngStream& rng) {
    if (m_t < 1 || m_t > n) throw std::domain_error("subsample_mask: need 1 <= M_t <= N");
    return ObservationMask::of(n, rng.sample_without_replacement(n, m_t));
}

inline ProjectionMatrix row_selection_projection(const ObservationMask& mask) {
    if (mask.size() < 1) throw std::domain_error("row_selection_projection: empty mask");
    MatrixXd a = MatrixXd::Zero(mask.size(), mask.n);
    for (int i = 0; i < mask.size(); ++i) a(i, mask.observed[i]) = 1.0;
    return ProjectionMatrix(std::move(a), ProjectionKind::row_selection);
}

/// Incidence rows of M selected nodes: entry (i, e) = 1 iff edge e touches
/// node i. N = edge count. Nodes resampled (bounded retries) if the selected
/// incidence rows are rank deficient.
inline ProjectionMatrix topology_projection(const GridTopology& topo, int m, RngStream& rng,
                                            int max_retries = 200) {
    topo.validate();
    const auto deg = topo.degrees();
    std::vector<int> eligible;
    for (int v = 0; v < topo.node_count; ++v) {
        if (deg[v] >= 1) eligible.push_back(v);
    }
    if (m < 1 || m > static_cast<int>(eligible.size())) {
        throw std::domain_error("topology_projection: M exceeds number of connected nodes");
    }
    const int n = topo.edge_count();
    if (m > n) throw std::domain_error("topology_projection: M exceeds edge count");
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        const auto pick = rng.sample_without_replacement(static_cast<int>(eligible.size()), m);
        MatrixXd a = MatrixXd::Zero(m, n);
        for (int i = 0; i < m; ++i) {
            const int node = eligible[pick[i]];
            for (int e = 0; e < n; ++e) {
                if (topo.edges[e].first == node || topo.edges[e].second == node) a(i, e) = 1.0;
            }
        }
        try {
            ProjectionMeta meta;
            meta.retries = attempt;
            return ProjectionMatrix(std::move(a), ProjectionKind::topology, meta);
        } catch (const not_positive_definite&) {
            continue;  // e.g. two selected nodes with identical incidence
        }
    }
    throw std::runtime_error("topology_projection: selected nodes rank deficient after retries");
}

inline ProjectionMatrix custom_projection(MatrixXd entries) {
    return ProjectionMatrix(std::move(entries), ProjectionKind::custom);
}

// ---------------------------------------------------------------------------
// Gamma

/// Retained signal power Gamma = mu^T A^T (A A^T)^{-1} A mu / ||mu||^2,
/// in [0,1], invariant under rescaling of A, equal to 1 for square
/// invertible A.
inline GammaValue gamma_coefficient(const ProjectionMatrix& a, const VectorXd& mu) {
    if (mu.size() != a.cols()) throw std::invalid_argument("gamma_coefficient: dimension mismatch");
    const double mu2 = mu.squaredNorm();
    if (mu2 == 0.0) throw std::domain_error("gamma_coefficient: mu must be nonzero");
    const VectorXd z = solve_lower(a.gram_factor(), a.apply(mu));
    double g = z.squaredNorm() / mu2;
    if (g > 1.0 + 1e-8) throw std::runtime_error("gamma_coefficient: value above 1 beyond tolerance");
    return GammaValue{std::clamp(g, 0.0, 1.0)};
}

struct GammaLaw {
    double alpha = 0.0;  // M/2
    double beta = 0.0;   // (N-M)/2
    double mean = 0.0;   // M/N
    bool degenerate = false;  // M >= N: Gamma is identically 1
};

/// Beta(M/2, (N-M)/2) law of Gamma under a Gaussian sensing matrix.
inline GammaLaw gamma_law_params(int m, int n) {
    if (m < 1 || n < 1) throw std::domain_error("gamma_law_params: need positive dimensions");
    if (m >= n) return GammaLaw{0.0, 0.0, 1.0, true};
    return GammaLaw{0.5 * m, 0.5 * (n - m), static_cast<double>(m) / n, false};
}

/// Lower bound M(1-eps)/(dN) on Gamma for a column-regular 0-1 matrix.
inline double expander_gamma_lower_bound(int m, int n, int d, double epsilon) {
    if (d < 1) throw std::domain_error("expander_gamma_lower_bound: d >= 1 required");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) {
        throw std::domain_error("expander_gamma_lower_bound: need 0 <= eps < 1");
    }
    return static_cast<double>(m) * (1.0 - epsilon) / (static_cast<double>(d) * n);
}

// ---------------------------------------------------------------------------
// File formats

/// Edge-list format: one "node_a node_b" pair per line, 1-based indices,
/// '#' starts a comment.
inline GridTopology load_topology(std::istream& in) {
    GridTopology topo;
    std::string line;
    int max_node = 0;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        long a = 0, b = 0;
        if (!(ls >> a)) continue;  // blank or comment-only line
        if (!(ls >> b)) {
            throw std::runtime_error("topology line " + std::to_string(lineno) +
                                     ": expected two node indices");
        }
        if (a < 1 || b < 1) {
            throw std::runtime_error("topology line " + std::to_string(lineno) +
                                     ": indices are 1-based positive integers");
        }
        topo.edges.emplace_back(static_cast<int>(a - 1), static_cast<int>(b - 1));
        max_node = std::max(max_node, static_cast<int>(std::max(a, b)));
    }
    topo.node_count = max_node;
    topo.validate();
    return topo;
}

inline GridTopology load_topology_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open topology file: " + path);
    return load_topology(in);
}

/// Projection CSV: header line "kind,M,N,d,c,seed", one line of header
/// values, then M rows of N comma-separated entries.
inline void save_projection_csv(const ProjectionMatrix& a, std::ostream& out) {
    out << "kind,M,N,d,c,seed\n";
    out << to_string(a.kind()) << ',' << a.rows() << ',' << a.cols() << ','
        << a.meta().column_degree << ',' << a.meta().row_degree << ',' << a.meta().seed << '\n';
    char buf[32];
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", a.entries()(i, j));
            out << (j ? "," : "") << buf;
        }
        out << '\n';
    }
}

inline ProjectionMatrix load_projection_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("kind,M,N,d,c,seed", 0) != 0) {
        throw std::runtime_error("projection csv: missing header line");
    }
    if (!std::getline(in, line)) throw std::runtime_error("projection csv: missing value line");
    std::istringstream hs(line);
    std::string kind_s, field;
    std::getline(hs, kind_s, ',');
    int m = 0, n = 0, d = 0, c = 0;
    std::uint64_t seed = 0;
    std::getline(hs, field, ',');
    m = std::stoi(field);
    std::getline(hs, field, ',');
    n = std::stoi(field);
    std::getline(hs, field, ',');
    d = std::stoi(field);
    std::getline(hs, field, ',');
    c = std::stoi(field);
    if (std::getline(hs, field, ',')) seed = std::stoull(field);
    MatrixXd a(m, n);
    for (int i = 0; i < m; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("projection csv: truncated entries");
        std::istringstream ls(line);
        for (int j = 0; j < n; ++j) {
            if (!std::getline(ls, field, ',')) {
                throw std::runtime_error("projection csv: short row " + std::to_string(i + 1));
            }
            a(i, j) = std::stod(field);
        }
    }
    ProjectionMeta meta;
    meta.column_degree = d;
    meta.row_degree = c;
    meta.seed = seed;
    return ProjectionMatrix(std::move(a), projection_kind_from_string(kind_s), meta);
}

inline ProjectionMatrix load_projection_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open projection file: " + path);
    return load_projection_csv(in);
}

}  // namespace sketchcpd
