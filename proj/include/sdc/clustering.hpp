#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sdc/decoder.hpp"
#include "sdc/errors.hpp"

namespace sdc {

// One decoder weight row, tagged with where it came from.
struct ConceptPoint {
    int participant_id = 0;
    VoxelId voxel_id = 0;
    std::vector<float> vector;
};

using ConceptPointSet = std::vector<ConceptPoint>;

struct DbscanConfig {
    double epsilon = 0.5;            // cosine distance
    int min_neighbors = 3;           // distinct *other* participants required for core status
    double epsilon_expansion = 0.55; // same-participant expansion radius

    void validate() const {
        if (!(epsilon > 0.0) || epsilon > 2.0) throw ConfigInvalid("dbscan: epsilon must be in (0, 2]");
        if (epsilon_expansion < epsilon) throw ConfigInvalid("dbscan: epsilon_expansion must be >= epsilon");
        if (min_neighbors < 1) throw ConfigInvalid("dbscan: min_neighbors must be >= 1");
    }
};

enum class PointKind { Core, Border, Expanded, Outlier };

inline const char* point_kind_name(PointKind k) {
    switch (k) {
        case PointKind::Core: return "core";
        case PointKind::Border: return "border";
        case PointKind::Expanded: return "expanded";
        case PointKind::Outlier: return "outlier";
    }
    return "?";
}

inline constexpr int kOutlierLabel = -1;

struct ClusterResult {
    std::vector<int> labels;                      // cluster id per point, -1 for outliers
    std::vector<PointKind> kinds;                 // per point
    std::vector<std::vector<std::size_t>> clusters; // membership index sets, ascending

    std::size_t n_clusters() const { return clusters.size(); }
};

// 1 - cos(u, v); accumulates in double. Symmetric, in [0, 2].
inline double cosine_distance(const std::vector<float>& u, const std::vector<float>& v) {
    if (u.size() != v.size()) throw DimensionMismatch("cosine_distance: dimension mismatch");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw ZeroVector("cosine_distance: zero-norm vector");
    return 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
}

namespace detail {

struct Neighbor {
    std::uint32_t index;
    double dist;
};

// Shared by the fast path and the brute-force reference: given per-point
// core flags and neighbor access, runs steps (2)-(5) and canonicalizes ids.
//
//  (2) graph over core points, edges where distance < epsilon
//  (3) clusters = connected components of that graph
//  (4) non-core points within epsilon of a core point join the nearest such
//      core's cluster as border points (ties -> lowest cluster id)
//  (5) one expansion pass: an outlier within epsilon_expansion of a cluster
//      member from the *same participant* joins that cluster as expanded
//      (nearest qualifying member; ties -> lowest cluster id)
//
// Cluster ids are renumbered by each cluster's smallest member index, so the
// labeling is independent of input traversal order.
template <typename NeighborsFn>
ClusterResult assemble_clusters(const ConceptPointSet& points, const DbscanConfig& cfg,
                                const std::vector<char>& is_core, NeighborsFn&& neighbors_of) {
    const std::size_t n = points.size();
    ClusterResult res;
    res.labels.assign(n, kOutlierLabel);
    res.kinds.assign(n, PointKind::Outlier);

    // Connected components of the core-core graph (BFS).
    std::vector<int> comp(n, -1);
    int n_comp = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < n; ++s) {
        if (!is_core[s] || comp[s] >= 0) continue;
        comp[s] = n_comp;
        stack.assign(1, s);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            for (const Neighbor& nb : neighbors_of(p)) {
                if (nb.dist < cfg.epsilon && is_core[nb.index] && comp[nb.index] < 0) {
                    comp[nb.index] = n_comp;
                    stack.push_back(nb.index);
                }
            }
        }
        ++n_comp;
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (is_core[p]) {
            res.labels[p] = comp[p];
            res.kinds[p] = PointKind::Core;
        }
    }

    // Border assignment: nearest core neighbor within epsilon.
    for (std::size_t p = 0; p < n; ++p) {
        if (is_core[p]) continue;
        double best_dist = 0.0;
        int best_cluster = -1;
        for (const Neighbor& nb : neighbors_of(p)) {
            if (nb.dist >= cfg.epsilon || !is_core[nb.index]) continue;
            const int c = comp[nb.index];
            if (best_cluster < 0 || nb.dist < best_dist ||
                (nb.dist == best_dist && c < best_cluster)) {
                best_dist = nb.dist;
                best_cluster = c;
            }
        }
        if (best_cluster >= 0) {
            res.labels[p] = best_cluster;
            res.kinds[p] = PointKind::Border;
        }
    }

    // Expansion: single pass against the pre-expansion membership snapshot.
    const std::vector<int> snapshot = res.labels;
    for (std::size_t p = 0; p < n; ++p) {
        if (snapshot[p] != kOutlierLabel) continue;
        double best_dist = 0.0;
        int best_cluster = -1;
        for (const Neighbor& nb : neighbors_of(p)) {
            if (nb.dist >= cfg.epsilon_expansion) continue;
            if (snapshot[nb.index] == kOutlierLabel) continue;
            if (points[nb.index].participant_id != points[p].participant_id) continue;
            const int c = snapshot[nb.index];
            if (best_cluster < 0 || nb.dist < best_dist ||
                (nb.dist == best_dist && c < best_cluster)) {
                best_dist = nb.dist;
                best_cluster = c;
            }
        }
        if (best_cluster >= 0) {
            res.labels[p] = best_cluster;
            res.kinds[p] = PointKind::Expanded;
        }
    }

    // Canonical ids: clusters ordered by smallest contained point index.
    std::vector<std::size_t> first_member(n_comp, n);
    for (std::size_t p = 0; p < n; ++p) {
        if (res.labels[p] >= 0) {
            first_member[res.labels[p]] = std::min(first_member[res.labels[p]], p);
        }
    }
    std::vector<int> order(n_comp);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return first_member[a] < first_member[b]; });
    std::vector<int> remap(n_comp, -1);
    int next = 0;
    for (int c : order) {
        if (first_member[c] < n) remap[c] = next++;
    }
    res.clusters.assign(next, {});
    for (std::size_t p = 0; p < n; ++p) {
        if (res.labels[p] >= 0) {
            res.labels[p] = remap[res.labels[p]];
            res.clusters[res.labels[p]].push_back(p);
        }
    }
    return res;
}

// A point set whose participants cannot satisfy the core rule (fewer than
// min_neighbors + 1 of them) simply yields no clusters; the pipeline stage
// rejects such inputs up front with TooFewParticipants.
inline void check_point_set(const ConceptPointSet& points, const DbscanConfig& cfg) {
    cfg.validate();
    const std::size_t dim = points.empty() ? 0 : points.front().vector.size();
    if (!points.empty() && dim == 0) throw DimensionMismatch("concept points have zero dimension");
    for (const ConceptPoint& p : points) {
        if (p.vector.size() != dim) throw DimensionMismatch("concept points disagree on dimension");
    }
}

} // namespace detail

inline int distinct_participants(const ConceptPointSet& points) {
    std::vector<int> pids;
    for (const ConceptPoint& p : points) pids.push_back(p.participant_id);
    std::sort(pids.begin(), pids.end());
    pids.erase(std::unique(pids.begin(), pids.end()), pids.end());
    return static_cast<int>(pids.size());
}

// Cross-participant DBSCAN over concept vectors under cosine distance.
//
// Core rule (step 1): a point is core when its epsilon-neighborhood contains
// points from at least min_neighbors *other* participants; neighbors from the
// point's own participant never count. All comparisons are strict (< epsilon).
// Steps (2)-(5) as documented on detail::assemble_clusters.
inline ClusterResult run_sdc_dbscan(const ConceptPointSet& points, const DbscanConfig& cfg) {
    detail::check_point_set(points, cfg);
    const std::size_t n = points.size();
    if (n == 0) return {};

    const std::size_t dim = points.front().vector.size();

    // Dense participant ids for cheap distinct-participant counting.
    std::vector<int> pid_list;
    for (const ConceptPoint& p : points) pid_list.push_back(p.participant_id);
    std::sort(pid_list.begin(), pid_list.end());
    pid_list.erase(std::unique(pid_list.begin(), pid_list.end()), pid_list.end());
    std::vector<int> dense_pid(n);
    for (std::size_t i = 0; i < n; ++i) {
        dense_pid[i] = static_cast<int>(
            std::lower_bound(pid_list.begin(), pid_list.end(), points[i].participant_id) -
            pid_list.begin());
    }

    // Row-normalized point matrix; neighbor lists from blocked Gram products
    // so memory stays bounded at large point counts. Everything within the
    // expansion radius is kept, the epsilon tests filter per use.
    Eigen::MatrixXd V(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            norm2 += static_cast<double>(points[i].vector[j]) * points[i].vector[j];
        }
        if (norm2 == 0.0) {
            throw ZeroVector("run_sdc_dbscan: zero-norm concept vector at index " +
                             std::to_string(i));
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t j = 0; j < dim; ++j) {
            V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                points[i].vector[j] * inv;
        }
    }

    std::vector<std::vector<detail::Neighbor>> neigh(n);
    const std::size_t block = 1024;
    Eigen::MatrixXd G;
    for (std::size_t b0 = 0; b0 < n; b0 += block) {
        const std::size_t bn = std::min(block, n - b0);
        G.noalias() = V.middleRows(static_cast<Eigen::Index>(b0), static_cast<Eigen::Index>(bn)) *
                      V.transpose();
        for (std::size_t i = 0; i < bn; ++i) {
            const std::size_t gi = b0 + i;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == gi) continue;
                const double d =
                    1.0 - G(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (d < cfg.epsilon_expansion) {
                    neigh[gi].push_back({static_cast<std::uint32_t>(j), d});
                }
            }
        }
    }

    // Step (1): cross-participant core rule.
    std::vector<char> is_core(n, 0);
    std::vector<char> seen(pid_list.size(), 0);
    for (std::size_t p = 0; p < n; ++p) {
        std::fill(seen.begin(), seen.end(), 0);
        int distinct = 0;
        for (const detail::Neighbor& nb : neigh[p]) {
            if (nb.dist >= cfg.epsilon) continue;
            const int q = dense_pid[nb.index];
            if (q == dense_pid[p] || seen[q]) continue;
            seen[q] = 1;
            if (++distinct >= cfg.min_neighbors) break;
        }
        is_core[p] = distinct >= cfg.min_neighbors;
    }

    return detail::assemble_clusters(points, cfg, is_core,
                                     [&](std::size_t p) -> const std::vector<detail::Neighbor>& {
                                         return neigh[p];
                                     });
}

// Exhaustive O(n^2) reference implementing steps (1)-(5) from scratch: full
// distance matrix, union-find components, its own border/expansion passes and
// renumbering. Shares nothing with run_sdc_dbscan beyond the data types, so
// it can serve as an independent oracle at small point counts.
inline ClusterResult bruteforce_reference(const ConceptPointSet& points, const DbscanConfig& cfg) {
    detail::check_point_set(points, cfg);
    const std::size_t n = points.size();
    if (n == 0) return {};

    const std::size_t dim = points.front().vector.size();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            s += static_cast<double>(points[i].vector[j]) * points[i].vector[j];
        }
        if (s == 0.0) {
            throw ZeroVector("bruteforce_reference: zero-norm concept vector at index " +
                             std::to_string(i));
        }
        norms[i] = std::sqrt(s);
    }
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            if (a == b) continue;
            double dot = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                dot += static_cast<double>(points[a].vector[j]) * points[b].vector[j];
            }
            dist[a][b] = 1.0 - dot / (norms[a] * norms[b]);
        }
    }

    // (1) cross-participant core rule
    std::vector<char> is_core(n, 0);
    for (std::size_t p = 0; p < n; ++p) {
        std::vector<int> others;
        for (std::size_t q = 0; q < n; ++q) {
            if (q != p && dist[p][q] < cfg.epsilon &&
                points[q].participant_id != points[p].participant_id) {
                others.push_back(points[q].participant_id);
            }
        }
        std::sort(others.begin(), others.end());
        others.erase(std::unique(others.begin(), others.end()), others.end());
        is_core[p] = static_cast<int>(others.size()) >= cfg.min_neighbors;
    }

    // (2)+(3) core components via union-find
    std::vector<std::size_t> parent(n);
    for (std::size_t i = 0; i < n; ++i) parent[i] = i;
    std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            if (is_core[a] && is_core[b] && dist[a][b] < cfg.epsilon) {
                parent[find(a)] = find(b);
            }
        }
    }
    // provisional cluster ids ordered by smallest core index per component
    std::map<std::size_t, int> root_to_id;
    for (std::size_t p = 0; p < n; ++p) {
        if (is_core[p]) {
            const std::size_t r = find(p);
            if (root_to_id.find(r) == root_to_id.end()) {
                root_to_id[r] = static_cast<int>(root_to_id.size());
            }
        }
    }

    ClusterResult res;
    res.labels.assign(n, kOutlierLabel);
    res.kinds.assign(n, PointKind::Outlier);
    for (std::size_t p = 0; p < n; ++p) {
        if (is_core[p]) {
            res.labels[p] = root_to_id[find(p)];
            res.kinds[p] = PointKind::Core;
        }
    }

    // (4) border: nearest core within epsilon, ties to the lowest cluster id
    for (std::size_t p = 0; p < n; ++p) {
        if (is_core[p]) continue;
        double best = 0.0;
        int cluster = -1;
        for (std::size_t q = 0; q < n; ++q) {
            if (q == p || !is_core[q] || dist[p][q] >= cfg.epsilon) continue;
            const int c = res.labels[q];
            if (cluster < 0 || dist[p][q] < best || (dist[p][q] == best && c < cluster)) {
                best = dist[p][q];
                cluster = c;
            }
        }
        if (cluster >= 0) {
            res.labels[p] = cluster;
            res.kinds[p] = PointKind::Border;
        }
    }

    // (5) same-participant expansion, one pass over the pre-expansion snapshot
    const std::vector<int> snapshot = res.labels;
    for (std::size_t p = 0; p < n; ++p) {
        if (snapshot[p] != kOutlierLabel) continue;
        double best = 0.0;
        int cluster = -1;
        for (std::size_t q = 0; q < n; ++q) {
            if (q == p || snapshot[q] == kOutlierLabel) continue;
            if (dist[p][q] >= cfg.epsilon_expansion) continue;
            if (points[q].participant_id != points[p].participant_id) continue;
            const int c = snapshot[q];
            if (cluster < 0 || dist[p][q] < best || (dist[p][q] == best && c < cluster)) {
                best = dist[p][q];
                cluster = c;
            }
        }
        if (cluster >= 0) {
            res.labels[p] = cluster;
            res.kinds[p] = PointKind::Expanded;
        }
    }

    // canonical ids by smallest contained point index
    const int n_comp = static_cast<int>(root_to_id.size());
    std::vector<std::size_t> first_member(static_cast<std::size_t>(n_comp), n);
    for (std::size_t p = 0; p < n; ++p) {
        if (res.labels[p] >= 0) {
            auto& fm = first_member[static_cast<std::size_t>(res.labels[p])];
            fm = std::min(fm, p);
        }
    }
    std::vector<int> order(static_cast<std::size_t>(n_comp));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return first_member[static_cast<std::size_t>(a)] < first_member[static_cast<std::size_t>(b)];
    });
    std::vector<int> remap(static_cast<std::size_t>(n_comp), -1);
    int next = 0;
    for (int c : order) {
        if (first_member[static_cast<std::size_t>(c)] < n) remap[static_cast<std::size_t>(c)] = next++;
    }
    res.clusters.assign(static_cast<std::size_t>(next), {});
    for (std::size_t p = 0; p < n; ++p) {
        if (res.labels[p] >= 0) {
            res.labels[p] = remap[static_cast<std::size_t>(res.labels[p])];
            res.clusters[static_cast<std::size_t>(res.labels[p])].push_back(p);
        }
    }
    return res;
}

// Pools decoder weight rows into participant-tagged concept points.
inline ConceptPointSet concept_points_from_decoders(const std::vector<LinearDecoder>& decoders) {
    ConceptPointSet points;
    for (const LinearDecoder& d : decoders) {
        for (std::size_t r = 0; r < d.weights.rows; ++r) {
            ConceptPoint p;
            p.participant_id = d.participant_id;
            p.voxel_id = d.voxel_index_map[r];
            p.vector.assign(&d.weights.data[r * d.weights.cols],
                            &d.weights.data[(r + 1) * d.weights.cols]);
            points.push_back(std::move(p));
        }
    }
    return points;
}

inline void save_clusters_csv(const ConceptPointSet& points, const ClusterResult& res,
                              const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write cluster csv: " + path.string());
    out << "participant_id,voxel_id,cluster_id,point_kind\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        out << points[i].participant_id << ',' << points[i].voxel_id << ',' << res.labels[i]
            << ',' << point_kind_name(res.kinds[i]) << '\n';
    }
}

// Reads a cluster CSV back; rows must be in the same order as the point set
// they were written from (participant-sorted decoder rows).
inline ClusterResult load_clusters_csv(const std::filesystem::path& path,
                                       const ConceptPointSet& points) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open cluster csv: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error("empty cluster csv: " + path.string());

    ClusterResult res;
    std::size_t idx = 0;
    int max_label = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string pid_s, voxel_s, label_s, kind_s;
        if (!std::getline(ss, pid_s, ',') || !std::getline(ss, voxel_s, ',') ||
            !std::getline(ss, label_s, ',') || !std::getline(ss, kind_s)) {
            throw Error("bad cluster csv row: " + line);
        }
        if (idx >= points.size() || std::stoi(pid_s) != points[idx].participant_id ||
            std::stoll(voxel_s) != points[idx].voxel_id) {
            throw Error("cluster csv does not match the point set: " + path.string());
        }
        const int label = std::stoi(label_s);
        res.labels.push_back(label);
        max_label = std::max(max_label, label);
        if (kind_s == "core") res.kinds.push_back(PointKind::Core);
        else if (kind_s == "border") res.kinds.push_back(PointKind::Border);
        else if (kind_s == "expanded") res.kinds.push_back(PointKind::Expanded);
        else if (kind_s == "outlier") res.kinds.push_back(PointKind::Outlier);
        else throw Error("unknown point kind in cluster csv: " + kind_s);
        ++idx;
    }
    if (idx != points.size()) throw Error("cluster csv row count mismatch: " + path.string());
    res.clusters.assign(static_cast<std::size_t>(max_label + 1), {});
    for (std::size_t p = 0; p < res.labels.size(); ++p) {
        if (res.labels[p] >= 0) res.clusters[static_cast<std::size_t>(res.labels[p])].push_back(p);
    }
    return res;
}

inline nlohmann::json cluster_summary(const ConceptPointSet& points, const ClusterResult& res,
                                      const DbscanConfig& cfg) {
    nlohmann::json clusters = nlohmann::json::array();
    for (std::size_t c = 0; c < res.clusters.size(); ++c) {
        std::map<int, int> per_participant;
        int core_count = 0;
        for (std::size_t p : res.clusters[c]) {
            per_participant[points[p].participant_id]++;
            if (res.kinds[p] == PointKind::Core) ++core_count;
        }
        nlohmann::json pp = nlohmann::json::object();
        for (const auto& [pid, cnt] : per_participant) pp[std::to_string(pid)] = cnt;
        clusters.push_back({{"cluster_id", c},
                            {"size", res.clusters[c].size()},
                            {"core_points", core_count},
                            {"participants", per_participant.size()},
                            {"per_participant_counts", pp}});
    }
    std::size_t outliers = 0;
    for (int l : res.labels) {
        if (l == kOutlierLabel) ++outliers;
    }
    return {{"epsilon", cfg.epsilon},
            {"min_neighbors", cfg.min_neighbors},
            {"epsilon_expansion", cfg.epsilon_expansion},
            {"n_points", points.size()},
            {"n_clusters", res.n_clusters()},
            {"n_outliers", outliers},
            {"clusters", clusters}};
}

} // namespace sdc
