#pragma once

// Test-only oracles, independent of the library implementation paths they
// check: naive matrix products, a textbook DBSCAN, an exhaustive cluster
// validator, adjusted Rand index, and a gradient-descent ridge solver.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "sdc/clustering.hpp"
#include "sdc/matrix.hpp"
#include "sdc/rng.hpp"

namespace testutil {

inline sdc::MatrixF32 random_matrix(std::size_t rows, std::size_t cols, sdc::Rng& rng,
                                    float scale = 1.0f) {
    sdc::MatrixF32 m(rows, cols);
    for (float& v : m.data) v = scale * rng.normal_f();
    return m;
}

// Triple-loop reference product, double accumulation.
inline sdc::MatrixF32 naive_matmul(const sdc::MatrixF32& a, const sdc::MatrixF32& b) {
    sdc::MatrixF32 out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += static_cast<double>(a.at(i, k)) * b.at(k, j);
            }
            out.at(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

inline double max_abs_diff(const sdc::MatrixF32& a, const sdc::MatrixF32& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    }
    return m;
}

// Adjusted Rand index between two labelings (any integer labels; -1 is a
// label like any other, matching the usual noise-as-one-class convention).
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size();
    std::map<std::pair<int, int>, double> cells;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < n; ++i) {
        cells[{a[i], b[i]}] += 1.0;
        ra[a[i]] += 1.0;
        rb[b[i]] += 1.0;
    }
    auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
    double index = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [k, v] : cells) index += comb2(v);
    for (const auto& [k, v] : ra) sum_a += comb2(v);
    for (const auto& [k, v] : rb) sum_b += comb2(v);
    const double total = comb2(static_cast<double>(n));
    const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

// Classic DBSCAN: minPts counts the point itself; core-core edges < eps; the
// border rule is the deterministic nearest-core variant the artifact fixes.
// Labels are canonicalized by smallest member index, like the library.
struct TextbookResult {
    std::vector<int> labels; // -1 = noise
    std::vector<char> core;
};

inline TextbookResult textbook_dbscan(const std::vector<std::vector<float>>& pts, double eps,
                                      int min_pts) {
    const std::size_t n = pts.size();
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double dot = 0.0, ni = 0.0, nj = 0.0;
            for (std::size_t k = 0; k < pts[i].size(); ++k) {
                dot += static_cast<double>(pts[i][k]) * pts[j][k];
                ni += static_cast<double>(pts[i][k]) * pts[i][k];
                nj += static_cast<double>(pts[j][k]) * pts[j][k];
            }
            dist[i][j] = 1.0 - dot / (std::sqrt(ni) * std::sqrt(nj));
        }
    }

    TextbookResult res;
    res.core.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        int count = 1; // the point itself
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && dist[i][j] < eps) ++count;
        }
        res.core[i] = count >= min_pts;
    }

    res.labels.assign(n, -1);
    int next = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (!res.core[s] || res.labels[s] >= 0) continue;
        std::vector<std::size_t> queue{s};
        res.labels[s] = next;
        while (!queue.empty()) {
            const std::size_t p = queue.back();
            queue.pop_back();
            for (std::size_t q = 0; q < n; ++q) {
                if (q != p && res.core[q] && res.labels[q] < 0 && dist[p][q] < eps) {
                    res.labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        ++next;
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (res.core[p]) continue;
        double best = 0.0;
        int cluster = -1;
        for (std::size_t q = 0; q < n; ++q) {
            if (q == p || !res.core[q] || dist[p][q] >= eps) continue;
            if (cluster < 0 || dist[p][q] < best ||
                (dist[p][q] == best && res.labels[q] < cluster)) {
                best = dist[p][q];
                cluster = res.labels[q];
            }
        }
        res.labels[p] = cluster;
    }

    // canonical renumbering by smallest member index
    std::map<int, int> remap;
    int fresh = 0;
    for (std::size_t p = 0; p < n; ++p) {
        const int l = res.labels[p];
        if (l >= 0 && remap.find(l) == remap.end()) remap[l] = fresh++;
    }
    for (int& l : res.labels) {
        if (l >= 0) l = remap[l];
    }
    return res;
}

// Exhaustive validator for every structural invariant of a ClusterResult.
// Recomputes all distances from scratch. Returns the number of violations
// (0 = clean) and appends human-readable notes.
inline int validate_cluster_result(const sdc::ConceptPointSet& points, const sdc::DbscanConfig& cfg,
                                   const sdc::ClusterResult& res,
                                   std::vector<std::string>* notes = nullptr) {
    int violations = 0;
    auto fail = [&](const std::string& msg) {
        ++violations;
        if (notes) notes->push_back(msg);
    };
    const std::size_t n = points.size();
    if (res.labels.size() != n || res.kinds.size() != n) {
        fail("result size mismatch");
        return violations;
    }

    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) dist[i][j] = sdc::cosine_distance(points[i].vector, points[j].vector);
        }
    }

    // label/kind/membership consistency
    for (std::size_t p = 0; p < n; ++p) {
        const bool outlier = res.kinds[p] == sdc::PointKind::Outlier;
        if (outlier != (res.labels[p] == sdc::kOutlierLabel)) fail("label/kind disagree");
        if (!outlier) {
            const int c = res.labels[p];
            if (c < 0 || c >= static_cast<int>(res.clusters.size())) {
                fail("label out of range");
                continue;
            }
            const auto& members = res.clusters[static_cast<std::size_t>(c)];
            if (!std::binary_search(members.begin(), members.end(), p)) {
                fail("member list misses point");
            }
        }
    }
    for (std::size_t c = 0; c < res.clusters.size(); ++c) {
        if (!std::is_sorted(res.clusters[c].begin(), res.clusters[c].end())) {
            fail("member list not ascending");
        }
        for (std::size_t p : res.clusters[c]) {
            if (res.labels[p] != static_cast<int>(c)) fail("member list label mismatch");
        }
        if (c + 1 < res.clusters.size() && !res.clusters[c].empty() &&
            !res.clusters[c + 1].empty() && res.clusters[c].front() > res.clusters[c + 1].front()) {
            fail("cluster ids not ordered by smallest member");
        }
    }

    // core rule
    std::vector<char> expect_core(n, 0);
    for (std::size_t p = 0; p < n; ++p) {
        std::set<int> others;
        for (std::size_t q = 0; q < n; ++q) {
            if (q != p && dist[p][q] < cfg.epsilon &&
                points[q].participant_id != points[p].participant_id) {
                others.insert(points[q].participant_id);
            }
        }
        expect_core[p] = static_cast<int>(others.size()) >= cfg.min_neighbors;
        if (expect_core[p] != (res.kinds[p] == sdc::PointKind::Core)) {
            fail("core flag mismatch at point " + std::to_string(p));
        }
    }

    // core components must match labels
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) {
            if (p < q && expect_core[p] && expect_core[q] && dist[p][q] < cfg.epsilon &&
                res.labels[p] != res.labels[q]) {
                fail("connected cores in different clusters");
            }
        }
    }

    // per-cluster: >= 1 core, and the high-density region backing the
    // cluster (its core points plus their epsilon-neighborhoods) must span
    // min_neighbors + 1 participants. Cluster *membership* can span fewer
    // when a neighboring cluster wins shared border points under the
    // deterministic nearest-core rule.
    for (std::size_t c = 0; c < res.clusters.size(); ++c) {
        std::set<int> region_pids;
        bool has_core = false;
        for (std::size_t p : res.clusters[c]) {
            if (res.kinds[p] != sdc::PointKind::Core) continue;
            has_core = true;
            region_pids.insert(points[p].participant_id);
            for (std::size_t q = 0; q < n; ++q) {
                if (q != p && dist[p][q] < cfg.epsilon) {
                    region_pids.insert(points[q].participant_id);
                }
            }
        }
        if (!has_core) fail("cluster without core point");
        if (static_cast<int>(region_pids.size()) < cfg.min_neighbors + 1) {
            fail("cluster region spans fewer than min_neighbors + 1 participants");
        }
    }

    // border / outlier / expanded rules
    const auto nearest_core_cluster = [&](std::size_t p) {
        double best = 0.0;
        int cluster = -1;
        for (std::size_t q = 0; q < n; ++q) {
            if (q == p || !expect_core[q] || dist[p][q] >= cfg.epsilon) continue;
            if (cluster < 0 || dist[p][q] < best || (dist[p][q] == best && res.labels[q] < cluster)) {
                best = dist[p][q];
                cluster = res.labels[q];
            }
        }
        return cluster;
    };
    // pre-expansion membership = core or border
    std::vector<char> pre_member(n, 0);
    for (std::size_t p = 0; p < n; ++p) {
        pre_member[p] =
            res.kinds[p] == sdc::PointKind::Core || res.kinds[p] == sdc::PointKind::Border;
    }
    for (std::size_t p = 0; p < n; ++p) {
        switch (res.kinds[p]) {
            case sdc::PointKind::Core: break;
            case sdc::PointKind::Border: {
                if (nearest_core_cluster(p) != res.labels[p]) fail("border rule violated");
                break;
            }
            case sdc::PointKind::Expanded: {
                if (nearest_core_cluster(p) != -1) fail("expanded point should be border");
                double best = 0.0;
                int cluster = -1;
                for (std::size_t q = 0; q < n; ++q) {
                    if (q == p || !pre_member[q] || dist[p][q] >= cfg.epsilon_expansion) continue;
                    if (points[q].participant_id != points[p].participant_id) continue;
                    if (cluster < 0 || dist[p][q] < best ||
                        (dist[p][q] == best && res.labels[q] < cluster)) {
                        best = dist[p][q];
                        cluster = res.labels[q];
                    }
                }
                if (cluster != res.labels[p]) fail("expansion rule violated");
                break;
            }
            case sdc::PointKind::Outlier: {
                if (nearest_core_cluster(p) != -1) fail("outlier has a core within epsilon");
                for (std::size_t q = 0; q < n; ++q) {
                    if (q != p && pre_member[q] && dist[p][q] < cfg.epsilon_expansion &&
                        points[q].participant_id == points[p].participant_id) {
                        fail("outlier should have been expanded");
                        break;
                    }
                }
                break;
            }
        }
    }
    return violations;
}

// Randomized clustering instances: a mix of planted directional clusters and
// scattered points over 3..8 participants, with varied dimensions and radii.
struct ClusterInstance {
    sdc::ConceptPointSet points;
    sdc::DbscanConfig cfg;
};

inline ClusterInstance make_cluster_instance(std::uint64_t seed, std::size_t max_points = 100) {
    sdc::Rng rng(seed);
    ClusterInstance inst;
    const int participants = 3 + static_cast<int>(rng.uniform_index(6)); // 3..8
    const std::size_t dims[] = {4, 8, 16, 512};
    const std::size_t dim = dims[rng.uniform_index(rng.uniform() < 0.9 ? 3 : 4)];
    const std::size_t n = 1 + rng.uniform_index(max_points);

    const std::size_t n_centers = 1 + rng.uniform_index(4);
    std::vector<std::vector<double>> centers(n_centers, std::vector<double>(dim));
    for (auto& c : centers) {
        double norm = 0.0;
        for (double& x : c) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (double& x : c) x /= norm;
    }

    for (std::size_t i = 0; i < n; ++i) {
        sdc::ConceptPoint p;
        p.participant_id = 1 + static_cast<int>(rng.uniform_index(participants));
        p.voxel_id = static_cast<sdc::VoxelId>(i);
        p.vector.resize(dim);
        const double mode = rng.uniform();
        if (mode < 0.6) {
            // scatter around a planted center
            const auto& c = centers[rng.uniform_index(n_centers)];
            const double spread = 0.05 + 0.6 * rng.uniform();
            for (std::size_t j = 0; j < dim; ++j) {
                p.vector[j] = static_cast<float>(c[j] + spread * rng.normal());
            }
        } else {
            for (std::size_t j = 0; j < dim; ++j) p.vector[j] = rng.normal_f();
        }
        // guard against the (never observed) zero vector
        double norm = 0.0;
        for (float x : p.vector) norm += static_cast<double>(x) * x;
        if (norm == 0.0) p.vector[0] = 1.0f;
        inst.points.push_back(std::move(p));
    }

    inst.cfg.epsilon = 0.2 + 0.9 * rng.uniform();
    inst.cfg.min_neighbors = 1 + static_cast<int>(rng.uniform_index(participants - 1));
    inst.cfg.epsilon_expansion =
        std::min(1.99, inst.cfg.epsilon + 0.5 * rng.uniform());
    return inst;
}

// Plain gradient descent on ||XW - Y||^2 + lambda ||W||^2 with a safe fixed
// step (1 / L, L from power iteration); the independent route for checking
// the closed-form ridge solution.
inline sdc::MatrixF32 ridge_by_gradient_descent(const sdc::MatrixF32& X, const sdc::MatrixF32& Y,
                                                double lambda, int max_iters = 200000,
                                                double grad_tol = 1e-10) {
    const std::size_t v = X.cols, e = Y.cols, n = X.rows;
    std::vector<std::vector<double>> xtx(v, std::vector<double>(v, 0.0));
    std::vector<std::vector<double>> xty(v, std::vector<double>(e, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < v; ++a) {
            const double xa = X.at(i, a);
            for (std::size_t b = 0; b < v; ++b) xtx[a][b] += xa * X.at(i, b);
            for (std::size_t b = 0; b < e; ++b) xty[a][b] += xa * Y.at(i, b);
        }
    }
    // largest eigenvalue of XtX + lambda I via power iteration
    std::vector<double> u(v, 1.0 / std::sqrt(static_cast<double>(v))), tmp(v);
    double L = lambda + 1.0;
    for (int it = 0; it < 200; ++it) {
        for (std::size_t a = 0; a < v; ++a) {
            double s = lambda * u[a];
            for (std::size_t b = 0; b < v; ++b) s += xtx[a][b] * u[b];
            tmp[a] = s;
        }
        double norm = 0.0;
        for (double x : tmp) norm += x * x;
        norm = std::sqrt(norm);
        L = norm;
        for (std::size_t a = 0; a < v; ++a) u[a] = tmp[a] / norm;
    }
    const double step = 1.0 / (1.05 * L);

    std::vector<std::vector<double>> W(v, std::vector<double>(e, 0.0));
    std::vector<std::vector<double>> G(v, std::vector<double>(e, 0.0));
    for (int it = 0; it < max_iters; ++it) {
        double gnorm = 0.0;
        for (std::size_t a = 0; a < v; ++a) {
            for (std::size_t b = 0; b < e; ++b) {
                double g = lambda * W[a][b] - xty[a][b];
                for (std::size_t c = 0; c < v; ++c) g += xtx[a][c] * W[c][b];
                G[a][b] = 2.0 * g;
                gnorm += G[a][b] * G[a][b];
            }
        }
        if (std::sqrt(gnorm) < grad_tol) break;
        for (std::size_t a = 0; a < v; ++a) {
            for (std::size_t b = 0; b < e; ++b) W[a][b] -= step * G[a][b];
        }
    }
    sdc::MatrixF32 out(v, e);
    for (std::size_t a = 0; a < v; ++a) {
        for (std::size_t b = 0; b < e; ++b) out.at(a, b) = static_cast<float>(W[a][b]);
    }
    return out;
}

} // namespace testutil
