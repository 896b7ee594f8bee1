#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdc/clustering.hpp"
#include "sdc/datamodel.hpp"
#include "sdc/errors.hpp"
#include "sdc/matrix.hpp"

namespace sdc {

struct ConceptCentroid {
    int cluster_id = 0;
    std::vector<float> vector;
    std::size_t member_count = 0;
    bool degenerate = false; // near-zero norm; not usable for retrieval
};

// Mean of the cluster's concept vectors.
inline ConceptCentroid cluster_centroid(const ConceptPointSet& points,
                                        const std::vector<std::size_t>& members, int cluster_id) {
    if (members.empty()) throw EmptyCluster("cluster_centroid: empty member set");
    const std::size_t dim = points[members.front()].vector.size();
    std::vector<double> acc(dim, 0.0);
    for (std::size_t m : members) {
        if (points[m].vector.size() != dim) {
            throw DimensionMismatch("cluster_centroid: member dimension mismatch");
        }
        for (std::size_t j = 0; j < dim; ++j) acc[j] += points[m].vector[j];
    }
    ConceptCentroid c;
    c.cluster_id = cluster_id;
    c.member_count = members.size();
    c.vector.resize(dim);
    double norm2 = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
        const double v = acc[j] / static_cast<double>(members.size());
        c.vector[j] = static_cast<float>(v);
        norm2 += v * v;
    }
    c.degenerate = std::sqrt(norm2) < 1e-8;
    return c;
}

// Brain-decoded test embeddings averaged over repeats within each participant
// and then over participants, restricted to the shared item pool. Rows ascend
// by item id. Each prediction matrix is per-trial and positionally aligned
// with its trial table.
inline MatrixF32 averaged_decoded_embeddings(const std::vector<const MatrixF32*>& predictions,
                                             const std::vector<const TrialTable*>& trial_tables,
                                             const std::vector<ItemId>& shared_items) {
    if (predictions.empty() || predictions.size() != trial_tables.size()) {
        throw DimensionMismatch("averaged_decoded_embeddings: participant count mismatch");
    }
    if (shared_items.empty()) throw MissingItem("averaged_decoded_embeddings: empty shared pool");
    const std::size_t dim = predictions.front()->cols;

    std::vector<ItemId> pool = shared_items;
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());

    MatrixF32 out(pool.size(), dim);
    std::vector<double> across(dim), within(dim);
    for (std::size_t r = 0; r < pool.size(); ++r) {
        const ItemId item = pool[r];
        std::fill(across.begin(), across.end(), 0.0);
        for (std::size_t k = 0; k < predictions.size(); ++k) {
            const MatrixF32& pred = *predictions[k];
            const TrialTable& tt = *trial_tables[k];
            if (pred.rows != tt.size() || pred.cols != dim) {
                throw DimensionMismatch("averaged_decoded_embeddings: prediction shape mismatch");
            }
            std::fill(within.begin(), within.end(), 0.0);
            std::size_t repeats = 0;
            for (std::size_t t = 0; t < tt.size(); ++t) {
                if (tt.rows[t].item_id != item) continue;
                const float* row = &pred.data[t * dim];
                for (std::size_t j = 0; j < dim; ++j) within[j] += row[j];
                ++repeats;
            }
            if (repeats == 0) {
                throw MissingItem("averaged_decoded_embeddings: participant " +
                                  std::to_string(k) + " lacks item " + std::to_string(item));
            }
            for (std::size_t j = 0; j < dim; ++j) {
                across[j] += within[j] / static_cast<double>(repeats);
            }
        }
        float* dst = &out.data[r * dim];
        for (std::size_t j = 0; j < dim; ++j) {
            dst[j] = static_cast<float>(across[j] / static_cast<double>(predictions.size()));
        }
    }
    return out;
}

struct RepresentativeSet {
    int cluster_id = 0;
    std::vector<std::pair<ItemId, double>> positives; // ascending by d(w, y)
    std::vector<std::pair<ItemId, double>> negatives; // ascending by d(-w, y)

    nlohmann::json to_json() const {
        auto list = [](const std::vector<std::pair<ItemId, double>>& v) {
            nlohmann::json a = nlohmann::json::array();
            for (const auto& [id, dist] : v) a.push_back({{"item_id", id}, {"distance", dist}});
            return a;
        };
        return {{"cluster_id", cluster_id}, {"positives", list(positives)},
                {"negatives", list(negatives)}};
    }
};

namespace detail {

// Distances from a direction to every pool row, as (distance, item_id) pairs.
inline std::vector<std::pair<double, ItemId>> distance_set(const std::vector<float>& w,
                                                           const MatrixF32& pool,
                                                           const std::vector<ItemId>& pool_items) {
    std::vector<std::pair<double, ItemId>> d;
    d.reserve(pool.rows);
    std::vector<float> row(pool.cols);
    for (std::size_t r = 0; r < pool.rows; ++r) {
        row.assign(&pool.data[r * pool.cols], &pool.data[(r + 1) * pool.cols]);
        d.emplace_back(cosine_distance(w, row), pool_items[r]);
    }
    return d;
}

} // namespace detail

// Positive representatives: items whose pooled decoded embeddings are nearest
// the centroid. Negatives: nearest the negated centroid. Ties break by
// ascending item id.
inline RepresentativeSet representative_items(const ConceptCentroid& centroid,
                                              const MatrixF32& pool,
                                              const std::vector<ItemId>& pool_items,
                                              std::size_t count) {
    if (centroid.degenerate) {
        throw DegenerateCentroid("representative_items: centroid has near-zero norm");
    }
    if (pool.rows != pool_items.size()) {
        throw DimensionMismatch("representative_items: pool/item id size mismatch");
    }
    if (pool.rows == 0) throw MissingItem("representative_items: empty pool");
    count = std::min(count, pool.rows);

    auto pos = detail::distance_set(centroid.vector, pool, pool_items);
    std::sort(pos.begin(), pos.end());

    RepresentativeSet out;
    out.cluster_id = centroid.cluster_id;
    for (std::size_t i = 0; i < count; ++i) out.positives.emplace_back(pos[i].second, pos[i].first);
    // d(-w, y) = 2 - d(w, y): the negative ranking is the positive one reversed.
    std::vector<std::pair<double, ItemId>> neg;
    neg.reserve(pos.size());
    for (const auto& [dist, id] : pos) neg.emplace_back(2.0 - dist, id);
    std::sort(neg.begin(), neg.end());
    for (std::size_t i = 0; i < count; ++i) out.negatives.emplace_back(neg[i].second, neg[i].first);
    return out;
}

// Fixed stop-word list, version 1. Frozen so word tables are reproducible
// across releases; do not reorder or grow without bumping the version.
inline constexpr int kStopWordsVersion = 1;
inline constexpr std::array<std::string_view, 50> kStopWords = {
    "a",     "an",    "the",  "and",   "or",    "but",  "of",    "to",    "in",    "on",
    "at",    "by",    "for",  "with",  "from",  "up",   "down",  "out",   "off",   "over",
    "under", "is",    "are",  "was",   "were",  "be",   "been",  "being", "am",    "it",
    "its",   "this",  "that", "these", "those", "there", "here", "as",    "if",    "then",
    "than",  "so",    "not",  "no",    "very",  "can",  "will",  "just",  "near",  "next"};

inline bool is_stop_word(std::string_view w) {
    return std::find(kStopWords.begin(), kStopWords.end(), w) != kStopWords.end();
}

// Lowercased alphabetic tokens; anything non-alphabetic is a separator.
inline std::vector<std::string> tokenize_caption(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isalpha(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

struct WordCount {
    std::string word;
    int count = 0;
};

struct WordTables {
    std::vector<WordCount> positive; // descending count, ties by word
    std::vector<WordCount> negative;
};

namespace detail {

inline std::vector<WordCount> count_words(const std::vector<std::size_t>& caption_rows,
                                          const std::vector<std::string>& texts) {
    std::map<std::string, int> counts;
    for (std::size_t r : caption_rows) {
        for (const std::string& w : tokenize_caption(texts[r])) {
            if (!is_stop_word(w)) counts[w]++;
        }
    }
    std::vector<WordCount> out;
    for (const auto& [w, c] : counts) out.push_back({w, c});
    std::sort(out.begin(), out.end(), [](const WordCount& a, const WordCount& b) {
        return a.count != b.count ? a.count > b.count : a.word < b.word;
    });
    return out;
}

inline std::vector<std::size_t> nearest_captions(const std::vector<float>& w,
                                                 const MatrixF32& embeddings, std::size_t top_n) {
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(embeddings.rows);
    std::vector<float> row(embeddings.cols);
    for (std::size_t r = 0; r < embeddings.rows; ++r) {
        row.assign(&embeddings.data[r * embeddings.cols],
                   &embeddings.data[(r + 1) * embeddings.cols]);
        d.emplace_back(cosine_distance(w, row), r);
    }
    std::sort(d.begin(), d.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < top_n; ++i) out.push_back(d[i].second);
    return out;
}

} // namespace detail

// Word-frequency tables over the top_n captions nearest the centroid (positive
// table) and nearest the negated centroid (negative table).
inline WordTables caption_word_counts(const ConceptCentroid& centroid,
                                      const MatrixF32& caption_embeddings,
                                      const std::vector<std::string>& caption_texts,
                                      std::size_t top_n) {
    if (centroid.degenerate) {
        throw DegenerateCentroid("caption_word_counts: centroid has near-zero norm");
    }
    if (caption_embeddings.rows == 0) throw EmptyCorpus("caption_word_counts: no captions");
    if (caption_embeddings.rows != caption_texts.size()) {
        throw DimensionMismatch("caption_word_counts: embeddings/texts size mismatch");
    }
    if (top_n > caption_embeddings.rows) {
        throw Error("caption_word_counts: top_n exceeds caption count");
    }

    std::vector<float> neg(centroid.vector.size());
    for (std::size_t j = 0; j < neg.size(); ++j) neg[j] = -centroid.vector[j];

    WordTables out;
    out.positive = detail::count_words(
        detail::nearest_captions(centroid.vector, caption_embeddings, top_n), caption_texts);
    out.negative = detail::count_words(
        detail::nearest_captions(neg, caption_embeddings, top_n), caption_texts);
    return out;
}

inline void save_word_tables_csv(const std::vector<std::pair<int, WordTables>>& per_cluster,
                                 const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write word table csv: " + path.string());
    out << "cluster_id,word,count,polarity\n";
    for (const auto& [cluster_id, tables] : per_cluster) {
        for (const WordCount& w : tables.positive) {
            out << cluster_id << ',' << w.word << ',' << w.count << ",positive\n";
        }
        for (const WordCount& w : tables.negative) {
            out << cluster_id << ',' << w.word << ',' << w.count << ",negative\n";
        }
    }
}

} // namespace sdc
