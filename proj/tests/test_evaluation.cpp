#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "sdc/evaluation.hpp"

using sdc::MatrixF32;

TEST_CASE("exact predictions retrieve perfectly", "[evaluation]") {
    sdc::Rng rng(50);
    const MatrixF32 t = testutil::random_matrix(40, 16, rng);
    const auto rep = sdc::topk_accuracy(t, t, {1, 5, 10});
    for (double a : rep.accuracy) CHECK(a == 1.0);
    CHECK(rep.chance[0] == Catch::Approx(1.0 / 40.0));
    CHECK(rep.chance[2] == Catch::Approx(10.0 / 40.0));
}

TEST_CASE("accuracy is monotone in k and hits 1 at k = N", "[evaluation]") {
    sdc::Rng rng(51);
    const MatrixF32 pred = testutil::random_matrix(60, 8, rng);
    const MatrixF32 targ = testutil::random_matrix(60, 8, rng);
    const auto rep = sdc::topk_accuracy(pred, targ, {1, 2, 5, 10, 30, 60});
    for (std::size_t i = 1; i < rep.accuracy.size(); ++i) {
        CHECK(rep.accuracy[i] >= rep.accuracy[i - 1]);
    }
    CHECK(rep.accuracy.back() == 1.0);
}

TEST_CASE("jointly permuting rows leaves accuracy unchanged", "[evaluation]") {
    sdc::Rng rng(52);
    const MatrixF32 pred = testutil::random_matrix(30, 12, rng);
    const MatrixF32 targ = testutil::random_matrix(30, 12, rng);
    const auto base = sdc::topk_accuracy(pred, targ, {1, 3, 7});

    std::vector<std::size_t> perm(30);
    for (std::size_t i = 0; i < 30; ++i) perm[i] = i;
    rng.shuffle(perm);
    MatrixF32 p2(30, 12), t2(30, 12);
    for (std::size_t i = 0; i < 30; ++i) {
        for (std::size_t c = 0; c < 12; ++c) {
            p2.at(i, c) = pred.at(perm[i], c);
            t2.at(i, c) = targ.at(perm[i], c);
        }
    }
    const auto permuted = sdc::topk_accuracy(p2, t2, {1, 3, 7});
    CHECK(permuted.accuracy == base.accuracy);
}

TEST_CASE("positive row scaling never changes ranks", "[evaluation]") {
    sdc::Rng rng(53);
    const MatrixF32 pred = testutil::random_matrix(25, 10, rng);
    const MatrixF32 targ = testutil::random_matrix(25, 10, rng);
    const auto base = sdc::topk_accuracy(pred, targ, {1, 5});
    MatrixF32 scaled = pred;
    for (std::size_t i = 0; i < 25; ++i) {
        const float s = static_cast<float>(0.01 + 50.0 * rng.uniform());
        for (std::size_t c = 0; c < 10; ++c) scaled.at(i, c) *= s;
    }
    const auto after = sdc::topk_accuracy(scaled, targ, {1, 5});
    CHECK(after.accuracy == base.accuracy);
}

TEST_CASE("ties break by ascending candidate index", "[evaluation]") {
    // two identical candidate targets: the true one only survives the cut
    // when its index is the smaller of the tie
    MatrixF32 targ(3, 2);
    targ.at(0, 0) = 1.0f; targ.at(0, 1) = 0.0f;
    targ.at(1, 0) = 1.0f; targ.at(1, 1) = 0.0f; // duplicate of row 0
    targ.at(2, 0) = 0.0f; targ.at(2, 1) = 1.0f;
    MatrixF32 pred = targ;

    const auto rep = sdc::topk_accuracy(pred, targ, {1, 2});
    // row 0: tie with candidate 1, index 0 < 1 wins -> hit at k=1
    // row 1: tie with candidate 0, which sorts first -> row 1 misses k=1
    CHECK(rep.accuracy[0] == Catch::Approx(2.0 / 3.0));
    CHECK(rep.accuracy[1] == 1.0);
}

TEST_CASE("random predictions score near chance", "[evaluation]") {
    // small Monte-Carlo version of the chance calibration (the acceptance
    // suite runs the full N = 413 construction)
    sdc::Rng rng(54);
    const std::size_t n = 101;
    const std::vector<int> ks = {1, 5, 10};
    std::vector<double> acc_sum(ks.size(), 0.0);
    const int trials = 40;
    for (int t = 0; t < trials; ++t) {
        const MatrixF32 pred = testutil::random_matrix(n, 8, rng);
        const MatrixF32 targ = testutil::random_matrix(n, 8, rng);
        const auto rep = sdc::topk_accuracy(pred, targ, ks);
        for (std::size_t i = 0; i < ks.size(); ++i) acc_sum[i] += rep.accuracy[i];
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const double p = static_cast<double>(ks[i]) / static_cast<double>(n);
        const double mean = acc_sum[i] / trials;
        const double sigma = std::sqrt(p * (1.0 - p) / (trials * n));
        CHECK(std::abs(mean - p) < 4.0 * sigma);
    }
}

TEST_CASE("degenerate rows are rejected", "[evaluation]") {
    MatrixF32 pred(2, 3), targ(2, 3);
    pred.at(0, 0) = 1.0f;
    targ.at(0, 0) = 1.0f;
    targ.at(1, 1) = 1.0f; // pred row 1 is all zero
    CHECK_THROWS_AS(sdc::topk_accuracy(pred, targ, {1}), sdc::DegenerateRow);
}

TEST_CASE("k outside [1, N] is rejected", "[evaluation]") {
    sdc::Rng rng(55);
    const MatrixF32 m = testutil::random_matrix(5, 4, rng);
    CHECK_THROWS_AS(sdc::topk_accuracy(m, m, {0}), sdc::Error);
    CHECK_THROWS_AS(sdc::topk_accuracy(m, m, {6}), sdc::Error);
}

TEST_CASE("reports serialize to json and back", "[evaluation]") {
    sdc::Rng rng(56);
    const MatrixF32 t = testutil::random_matrix(20, 6, rng);
    auto rep = sdc::topk_accuracy(t, t, {1, 4});
    rep.participant_id = 5;
    const auto path = std::filesystem::temp_directory_path() / "sdc_eval_test.json";
    sdc::save_report(rep, path);
    const auto back = sdc::load_report(path);
    CHECK(back.participant_id == 5);
    CHECK(back.k_values == rep.k_values);
    CHECK(back.accuracy == rep.accuracy);
    CHECK(back.chance == rep.chance);
    CHECK(back.candidate_count == rep.candidate_count);
}
