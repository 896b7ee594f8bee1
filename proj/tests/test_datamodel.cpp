#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "sdc/datamodel.hpp"
#include "sdc/rng.hpp"

using sdc::Fold;
using sdc::ItemId;
using sdc::MatrixF32;
using sdc::TrialTable;

namespace {

// items [0, n_full) get 3 repeats, the next n_partial items get 1-2.
TrialTable make_table(int n_full, int n_partial, int sessions = 4) {
    TrialTable t;
    std::int64_t trial = 0;
    for (int r = 0; r < 3; ++r) {
        for (int i = 0; i < n_full; ++i) {
            t.rows.push_back({trial, i, static_cast<int>(trial % sessions), r});
            ++trial;
        }
    }
    for (int i = 0; i < n_partial; ++i) {
        const int reps = 1 + i % 2;
        for (int r = 0; r < reps; ++r) {
            t.rows.push_back({trial, n_full + i, static_cast<int>(trial % sessions), r});
            ++trial;
        }
    }
    return t;
}

} // namespace

TEST_CASE("split_folds forces fully-repeated shared items into test", "[datamodel]") {
    // 413 shared + 1587 other full items + 500 partial items
    const TrialTable t = make_table(2000, 500);
    std::set<ItemId> shared;
    for (ItemId i = 0; i < 413; ++i) shared.insert(i);

    const sdc::FoldAssignment fa = sdc::split_folds(t, shared, 99);

    std::size_t test_n = 0, val_n = 0, train_n = 0, shared_in_test = 0;
    for (const auto& [id, f] : fa.fold) {
        if (f == Fold::Test) {
            ++test_n;
            if (shared.count(id)) ++shared_in_test;
        } else if (f == Fold::Val) {
            ++val_n;
        } else {
            ++train_n;
        }
    }
    CHECK(test_n == 1000);
    CHECK(val_n == 1000);
    CHECK(shared_in_test == 413);
    CHECK(train_n == 2500 - 2000); // 500 partials plus any leftover full items
    // partial items always train; val/test only hold 3-repeat items
    for (ItemId i = 2000; i < 2500; ++i) CHECK(fa.fold_of(i) == Fold::Train);
}

TEST_CASE("split_folds is deterministic and fold-disjoint", "[datamodel]") {
    const TrialTable t = make_table(2600, 100);
    std::set<ItemId> shared;
    for (ItemId i = 0; i < 413; ++i) shared.insert(i);

    const auto a = sdc::split_folds(t, shared, 1234);
    const auto b = sdc::split_folds(t, shared, 1234);
    REQUIRE(a.fold == b.fold);
    REQUIRE(a.shared == b.shared);

    const auto c = sdc::split_folds(t, shared, 1235);
    CHECK(a.fold != c.fold); // different seed reshuffles the free slots

    // disjointness: each item id appears exactly once in the map by
    // construction; verify the per-fold sets are disjoint and cover all items
    std::set<ItemId> seen;
    for (Fold f : {Fold::Train, Fold::Val, Fold::Test}) {
        for (ItemId id : a.items_in_fold(f)) {
            CHECK(seen.insert(id).second);
        }
    }
    CHECK(seen.size() == t.distinct_items_ascending().size());
}

TEST_CASE("split_folds needs enough fully-repeated items", "[datamodel]") {
    TrialTable t;
    std::int64_t trial = 0;
    for (int i = 0; i < 3000; ++i) { // only 2 repeats each
        for (int r = 0; r < 2; ++r) t.rows.push_back({trial++, i, 0, r});
    }
    CHECK_THROWS_AS(sdc::split_folds(t, {}, 1), sdc::InsufficientRepeats);
}

namespace {

// signal drawn once per item, noise fresh per repeat
MatrixF32 repeats_matrix(int n_items, double signal_sd, double noise_sd, sdc::Rng& rng,
                         TrialTable& table_out) {
    table_out.rows.clear();
    MatrixF32 m(static_cast<std::size_t>(n_items) * 3, 1);
    std::vector<double> signal(n_items);
    for (int i = 0; i < n_items; ++i) signal[i] = signal_sd * rng.normal();
    std::int64_t trial = 0;
    for (int r = 0; r < 3; ++r) {
        for (int i = 0; i < n_items; ++i) {
            m.data[static_cast<std::size_t>(trial)] =
                static_cast<float>(signal[i] + noise_sd * rng.normal());
            table_out.rows.push_back({trial, i, 0, r});
            ++trial;
        }
    }
    return m;
}

} // namespace

TEST_CASE("noise ceiling hits 100 for noiseless repeats", "[datamodel]") {
    sdc::Rng rng(11);
    TrialTable t;
    const MatrixF32 m = repeats_matrix(200, 1.0, 0.0, rng, t);
    const auto nc = sdc::compute_noise_ceiling(m, t);
    REQUIRE(nc.size() == 1);
    CHECK(nc[0] == Catch::Approx(100.0).margin(1e-4));
}

TEST_CASE("noise ceiling is near zero for pure noise", "[datamodel]") {
    // Monte-Carlo oracle: item-independent responses should explain ~nothing
    sdc::Rng rng(12);
    TrialTable t;
    const MatrixF32 m = repeats_matrix(1000, 0.0, 1.0, rng, t);
    const auto nc = sdc::compute_noise_ceiling(m, t);
    CHECK(nc[0] < 2.0f);
}

TEST_CASE("noise ceiling matches the analytic value for a planted ratio", "[datamodel]") {
    // signal:noise variance ratio 0.25 -> NC = 100 * 0.25 / (0.25 + 1/3)
    const double expected = 100.0 * 0.25 / (0.25 + 1.0 / 3.0);
    sdc::Rng rng(13);
    TrialTable t;
    const MatrixF32 m = repeats_matrix(4000, 0.5, 1.0, rng, t);
    const auto nc = sdc::compute_noise_ceiling(m, t);
    CHECK(nc[0] == Catch::Approx(expected).margin(3.0));
}

TEST_CASE("noise ceiling ignores per-voxel constant offsets", "[datamodel]") {
    sdc::Rng rng(14);
    TrialTable t;
    MatrixF32 m = repeats_matrix(500, 1.0, 0.7, rng, t);
    const auto base = sdc::compute_noise_ceiling(m, t);
    for (float& v : m.data) v += 42.5f;
    const auto shifted = sdc::compute_noise_ceiling(m, t);
    CHECK(shifted[0] == Catch::Approx(base[0]).margin(1e-3));
}

TEST_CASE("noise ceiling requires repeats", "[datamodel]") {
    TrialTable t;
    MatrixF32 m(3, 1);
    for (int i = 0; i < 3; ++i) t.rows.push_back({i, i, 0, 0}); // three distinct items
    CHECK_THROWS_AS(sdc::compute_noise_ceiling(m, t), sdc::NoRepeats);
}

TEST_CASE("voxel selection is strictly greater-than", "[datamodel]") {
    const std::vector<float> nc = {10.0f, 5.0f, 8.0f, 8.1f};
    const auto sel = sdc::select_voxels(nc, 8.0);
    REQUIRE(sel == std::vector<sdc::VoxelId>{0, 3});

    CHECK_THROWS_AS(sdc::select_voxels(std::vector<float>(4, 0.0f), 8.0), sdc::EmptySelection);
}

TEST_CASE("raising the threshold never adds voxels", "[datamodel]") {
    sdc::Rng rng(15);
    std::vector<float> nc(200);
    for (float& v : nc) v = static_cast<float>(100.0 * rng.uniform());
    std::vector<sdc::VoxelId> prev = sdc::select_voxels(nc, 0.0);
    for (double thr : {5.0, 20.0, 50.0, 80.0}) {
        std::vector<sdc::VoxelId> cur;
        try {
            cur = sdc::select_voxels(nc, thr);
        } catch (const sdc::EmptySelection&) {
            cur.clear();
        }
        CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
        prev = cur;
    }
}

TEST_CASE("session normalization matches the hand-computed case", "[datamodel]") {
    TrialTable t;
    t.rows = {{0, 0, 0, 0}, {1, 1, 0, 0}, {2, 2, 0, 0}};
    MatrixF32 m(3, 1);
    m.data = {1.0f, 2.0f, 3.0f};
    const MatrixF32 out = sdc::normalize_by_session(m, t);
    CHECK(out.data[0] == Catch::Approx(-1.224745).margin(1e-5));
    CHECK(out.data[1] == Catch::Approx(0.0).margin(1e-6));
    CHECK(out.data[2] == Catch::Approx(1.224745).margin(1e-5));
}

TEST_CASE("constant voxels normalize to zero", "[datamodel]") {
    TrialTable t;
    t.rows = {{0, 0, 0, 0}, {1, 1, 0, 0}, {2, 2, 0, 0}};
    MatrixF32 m(3, 1);
    m.data = {5.0f, 5.0f, 5.0f};
    const MatrixF32 out = sdc::normalize_by_session(m, t);
    for (float v : out.data) CHECK(v == 0.0f);
}

TEST_CASE("sessions normalize independently", "[datamodel]") {
    sdc::Rng rng(16);
    TrialTable t;
    MatrixF32 m(40, 3);
    for (int i = 0; i < 40; ++i) {
        const int session = i < 20 ? 0 : 1;
        t.rows.push_back({i, i, session, 0});
        for (int c = 0; c < 3; ++c) {
            m.at(i, c) = static_cast<float>(rng.normal() + (session == 0 ? 10.0 : -3.0));
        }
    }
    const MatrixF32 out = sdc::normalize_by_session(m, t);
    for (int session = 0; session < 2; ++session) {
        for (int c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (int i = 0; i < 20; ++i) mean += out.at(session * 20 + i, c);
            mean /= 20.0;
            CHECK(std::abs(mean) < 1e-6);
        }
    }
}

TEST_CASE("session normalization is idempotent", "[datamodel]") {
    sdc::Rng rng(17);
    TrialTable t;
    MatrixF32 m(60, 4);
    for (int i = 0; i < 60; ++i) {
        t.rows.push_back({i, i, i % 3, 0});
        for (int c = 0; c < 4; ++c) m.at(i, c) = rng.normal_f() * 3.0f + 1.0f;
    }
    const MatrixF32 once = sdc::normalize_by_session(m, t);
    const MatrixF32 twice = sdc::normalize_by_session(once, t);
    CHECK(testutil::max_abs_diff(once, twice) < 1e-5);
}

TEST_CASE("sessions with fewer than two trials are rejected", "[datamodel]") {
    TrialTable t;
    t.rows = {{0, 0, 0, 0}, {1, 1, 0, 0}, {2, 2, 1, 0}}; // session 1 has one trial
    MatrixF32 m(3, 1);
    CHECK_THROWS_AS(sdc::normalize_by_session(m, t), sdc::SessionTooSmall);
}

TEST_CASE("average_repeats means each item's rows", "[datamodel]") {
    SECTION("single trial is unchanged") {
        TrialTable t;
        t.rows = {{0, 7, 0, 0}};
        MatrixF32 m(1, 3);
        m.data = {1.0f, -2.0f, 0.5f};
        const MatrixF32 out = sdc::average_repeats(m, t);
        REQUIRE(out.rows == 1);
        CHECK(out.data == m.data);
    }
    SECTION("r and -r cancel") {
        TrialTable t;
        t.rows = {{0, 3, 0, 0}, {1, 3, 0, 1}};
        MatrixF32 m(2, 2);
        m.data = {1.5f, -0.5f, -1.5f, 0.5f};
        const MatrixF32 out = sdc::average_repeats(m, t);
        CHECK(out.data[0] == 0.0f);
        CHECK(out.data[1] == 0.0f);
    }
    SECTION("three rows match a direct summation oracle, rows ascend by item") {
        sdc::Rng rng(18);
        TrialTable t;
        MatrixF32 m(9, 5);
        // items deliberately unsorted in the table
        const ItemId items[] = {5, 2, 9};
        int trial = 0;
        for (int r = 0; r < 3; ++r) {
            for (ItemId id : items) {
                t.rows.push_back({trial, id, 0, r});
                for (int c = 0; c < 5; ++c) m.at(trial, c) = rng.normal_f();
                ++trial;
            }
        }
        const MatrixF32 out = sdc::average_repeats(m, t);
        REQUIRE(out.rows == 3);
        const ItemId sorted_items[] = {2, 5, 9};
        for (int k = 0; k < 3; ++k) {
            for (int c = 0; c < 5; ++c) {
                double acc = 0.0;
                int used = 0;
                for (std::size_t row = 0; row < t.size(); ++row) {
                    if (t.rows[row].item_id == sorted_items[k]) {
                        acc += m.at(row, c);
                        ++used;
                    }
                }
                REQUIRE(used == 3);
                CHECK(out.at(k, c) == Catch::Approx(acc / 3.0).margin(1e-6));
            }
        }
    }
}

TEST_CASE("trial table validation catches duplicates and bad ids", "[datamodel]") {
    TrialTable t;
    t.rows = {{0, 1, 0, 0}, {1, 1, 0, 0}};
    CHECK_THROWS_AS(t.validate(2), sdc::Error); // duplicate (item, repeat)

    TrialTable t2;
    t2.rows = {{0, 1, 0, 3}};
    CHECK_THROWS_AS(t2.validate(1), sdc::Error); // repeat_index >= 3

    TrialTable t3;
    t3.rows = {{5, 1, 0, 0}};
    CHECK_THROWS_AS(t3.validate(3), sdc::Error); // trial_id out of range
}
