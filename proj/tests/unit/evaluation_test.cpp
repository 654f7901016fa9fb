#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "sentinel/evaluation.hpp"
#include "support/utest_reference.hpp"

using namespace sentinel;
using sentinel::testing::brute_force_u;

TEST(Mae, Examples) {
    std::vector<double> y{1.0, 2.0, 3.0};
    EXPECT_EQ(mae(y, y), 0.0);
    std::vector<double> p2{0.0, 0.0}, t2{1.0, -1.0};
    EXPECT_DOUBLE_EQ(mae(p2, t2), 1.0);
    std::vector<double> p3{0.0, 0.0, 0.0}, t3{0.1, -0.3, 0.2};
    EXPECT_NEAR(mae(p3, t3), 0.2, 1e-15);
}

TEST(Mae, OriginalUnitsAndTranslation) {
    std::vector<double> p{0.1, 0.5, 0.9}, t{0.2, 0.4, 1.2};
    const ScalingPair s{10.0, 30.0};
    EXPECT_NEAR(mae(p, t, s), 20.0 * mae(p, t), 1e-12);
    std::vector<double> ps = p, ts = t;
    for (auto &v : ps) v += 7.0;
    for (auto &v : ts) v += 7.0;
    EXPECT_NEAR(mae(ps, ts), mae(p, t), 1e-12);
}

TEST(Mae, Errors) {
    std::vector<double> a{1.0}, b{1.0, 2.0}, empty;
    EXPECT_THROW(mae(a, b), ShapeError);
    EXPECT_THROW(mae(empty, empty), InvalidArgument);
}

TEST(Mae, AggregatesMatchDirectComputation) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0, 1);
    std::vector<MaeRow> rows;
    std::vector<double> all_abs;
    for (int m = 0; m < 4; ++m) {
        std::vector<double> p(50 + 10 * m), t(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = g(rng);
            t[i] = g(rng) * (m + 1);
            all_abs.push_back(std::abs(t[i] - p[i]));
        }
        rows.push_back(mae_row("m" + std::to_string(m), p, t, {0, 1}));
    }
    MaeAggregate a = aggregate_mae(rows);
    double mean = 0;
    for (double v : all_abs) mean += v;
    mean /= all_abs.size();
    double ss = 0;
    for (double v : all_abs) ss += (v - mean) * (v - mean);
    EXPECT_NEAR(a.pooled_mae, mean, 1e-12);
    EXPECT_NEAR(a.pooled_abs_error_std, std::sqrt(ss / (all_abs.size() - 1)), 1e-10);
    EXPECT_NEAR(a.per_model_mean, (rows[0].mae + rows[1].mae + rows[2].mae + rows[3].mae) / 4, 1e-12);
}

TEST(MannWhitney, SeparatedSamples) {
    std::vector<double> a{1, 2, 3}, b{4, 5, 6};
    UTestResult r = mann_whitney(a, b);
    EXPECT_EQ(r.u_statistic, 0.0);
    EXPECT_EQ(mann_whitney(b, a).u_statistic, 9.0);
    EXPECT_TRUE(r.exact);
    EXPECT_NEAR(r.p_value, 2.0 / 20.0, 1e-15); // one of C(6,3) arrangements per tail
}

TEST(MannWhitney, IdenticalSamples) {
    std::vector<double> a{1.5, 2.5, 0.5, 4.0};
    UTestResult r = mann_whitney(a, a);
    EXPECT_EQ(r.mean_first, r.mean_second);
    EXPECT_NEAR(r.p_value, 1.0, 1e-12);
    std::vector<double> c{2.0, 2.0}, d{2.0, 2.0, 2.0};
    UTestResult deg = mann_whitney(c, d);
    EXPECT_TRUE(deg.degenerate);
    EXPECT_EQ(deg.p_value, 1.0);
}

TEST(MannWhitney, LargeShiftIsSignificant) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0, 1);
    std::vector<double> a(20), b(20);
    for (auto &v : a) v = g(rng);
    for (auto &v : b) v = g(rng) + 3.0;
    EXPECT_LT(mann_whitney(a, b).p_value, 1e-6);
    EXPECT_LT(mann_whitney(a, b, false).p_value, 1e-6);
}

TEST(MannWhitney, StatisticEqualsPairCounting) {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> size(1, 100), val(0, 30);
    for (int trial = 0; trial < 3000; ++trial) {
        const int n1 = size(rng);
        const int n2 = std::min(size(rng), 10000 / n1);
        std::vector<double> a(n1), b(n2);
        for (auto &v : a) v = val(rng) / 3.0;
        for (auto &v : b) v = val(rng) / 3.0 + (trial % 3);
        ASSERT_EQ(mann_whitney(a, b, false).u_statistic, brute_force_u(a, b)) << trial;
    }
}

TEST(MannWhitney, ExactMatchesPermutationEnumeration) {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> val(0, 4);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n1 = 1 + trial % 4, n2 = 2 + trial % 5, N = n1 + n2;
        std::vector<double> pooled(N);
        for (auto &v : pooled) v = val(rng);
        std::vector<double> a(pooled.begin(), pooled.begin() + n1), b(pooled.begin() + n1, pooled.end());
        UTestResult r = mann_whitney(a, b);
        if (r.degenerate) continue;
        ASSERT_TRUE(r.exact);
        // enumerate every relabelling with n1 members in the first group
        std::size_t total = 0, le = 0, ge = 0;
        for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
            if (static_cast<std::size_t>(__builtin_popcount(mask)) != n1) continue;
            std::vector<double> x, y;
            for (std::size_t i = 0; i < N; ++i) (mask >> i & 1 ? x : y).push_back(pooled[i]);
            const double u = brute_force_u(x, y);
            ++total;
            le += u <= r.u_statistic;
            ge += u >= r.u_statistic;
        }
        const double p = std::min(1.0, 2.0 * std::min(le, ge) / static_cast<double>(total));
        ASSERT_NEAR(r.p_value, p, 1e-12) << trial;
    }
}

TEST(MannWhitney, MatchesReferenceImplementation) {
    auto refs = sentinel::testing::load_utest_reference(SENTINEL_TEST_DATA "/utest_reference.txt");
    ASSERT_GT(refs.size(), 1000u);
    std::size_t approx = 0, exact = 0;
    for (const auto &ref : refs) {
        if (ref.method == "asymptotic") {
            UTestResult r = mann_whitney(ref.first, ref.second, false);
            ASSERT_EQ(r.u_statistic, ref.u);
            ASSERT_NEAR(r.p_value, ref.p, 1e-9);
            ++approx;
        } else {
            UTestResult r = mann_whitney(ref.first, ref.second);
            ASSERT_TRUE(r.exact);
            ASSERT_EQ(r.u_statistic, ref.u);
            ASSERT_NEAR(r.p_value, ref.p, 1e-9);
            ++exact;
        }
    }
    EXPECT_EQ(approx, 1000u);
    EXPECT_GT(exact, 20u);
}

TEST(HalfRun, OddLengthsPutMiddleInFirstHalf) {
    std::vector<MsedSeries> runs{MsedSeries::from_values({1, 2, 3}), MsedSeries::from_values({10, 20})};
    UTestResult r = half_run_comparison(runs);
    EXPECT_EQ(r.n1, 3u);
    EXPECT_EQ(r.n2, 2u);
    EXPECT_DOUBLE_EQ(r.mean_first, (1 + 2 + 10) / 3.0);
    EXPECT_DOUBLE_EQ(r.mean_second, (3 + 20) / 2.0);
    std::vector<MsedSeries> bad{MsedSeries::from_values({1})};
    EXPECT_THROW(half_run_comparison(bad), InvalidArgument);
}

TEST(MsedByPosition, ConstantAndMonotone) {
    std::vector<MsedSeries> constant{MsedSeries::from_values(std::vector<double>(101, 2.5))};
    for (const auto &b : msed_by_position(constant, 10)) EXPECT_EQ(b.mean, 2.5);

    std::vector<double> ramp(1000);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = i / 999.0;
    std::vector<MsedSeries> mono{MsedSeries::from_values(ramp)};
    auto bins = msed_by_position(mono, 8);
    for (std::size_t b = 1; b < bins.size(); ++b) EXPECT_GT(bins[b].mean, bins[b - 1].mean);
    EXPECT_LE(bins[3].q1, bins[3].median);
    EXPECT_LE(bins[3].median, bins[3].q3);
    std::size_t total = 0;
    for (const auto &b : bins) total += b.count;
    EXPECT_EQ(total, 1000u);
}

TEST(MsedByPosition, Errors) {
    std::vector<MsedSeries> none;
    EXPECT_THROW(msed_by_position(none, 4), InvalidArgument);
    std::vector<MsedSeries> one{MsedSeries::from_values({1, 2})};
    EXPECT_THROW(msed_by_position(one, 1), InvalidArgument);
}

TEST(DurationHistogram, EqualDurations) {
    std::vector<RunRecord> recs(100);
    for (auto &r : recs) r.duration_us = 250.0;
    DurationSummary s = duration_histogram(recs);
    ASSERT_EQ(s.bins.size(), 1u);
    EXPECT_EQ(s.bins[0].count, 100u);
    EXPECT_DOUBLE_EQ(s.max_rate_hz, 1e6 / 250.0);
    EXPECT_EQ(s.modes, 1u);
}

TEST(DurationHistogram, FullCutIncludesAll) {
    std::vector<RunRecord> recs(100);
    for (std::size_t i = 0; i < recs.size(); ++i) recs[i].duration_us = 1.0 + i;
    EXPECT_EQ(duration_histogram(recs, 1.0).included, 100u);
    EXPECT_EQ(duration_histogram(recs, 0.95).included, 95u);
    EXPECT_THROW(duration_histogram(recs, 0.0), InvalidArgument);
}

TEST(DurationHistogram, DetectsTwoClusters) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> fast(100, 4), slow(160, 6);
    std::vector<RunRecord> recs(20000);
    for (std::size_t i = 0; i < recs.size(); ++i) recs[i].duration_us = i % 4 == 0 ? fast(rng) : slow(rng);
    EXPECT_EQ(duration_histogram(recs, 1.0, 40).modes, 2u);
    std::vector<RunRecord> uni(20000);
    for (auto &r : uni) r.duration_us = slow(rng);
    EXPECT_EQ(duration_histogram(uni, 1.0, 40).modes, 1u);
}

TEST(DurationHistogram, IgnoresRejectedRuns) {
    std::vector<RunRecord> recs(10);
    for (auto &r : recs) r.duration_us = 5.0;
    recs[3].rejected = true;
    recs[3].duration_us = 1000.0;
    EXPECT_EQ(duration_histogram(recs).records, 9u);
}

TEST(LogHistogram, CountsPositiveValues) {
    std::vector<double> v{0.0, 0.01, 0.1, 1.0, 10.0, 100.0};
    LogHistogram h = log_histogram(v, 4);
    ASSERT_EQ(h.bins.size(), 4u);
    EXPECT_EQ(h.non_positive, 1u);
    std::size_t total = 0;
    for (const auto &b : h.bins) total += b.count;
    EXPECT_EQ(total, 5u);
    EXPECT_NEAR(h.bins[0].lo, 0.01, 1e-15);
    EXPECT_NEAR(h.bins[3].hi, 100.0, 1e-9);
}

TEST(Reports, StableColumns) {
    std::ostringstream a, b;
    write_utest_csv(a, UTestResult{});
    EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "n1,n2,u_statistic,z,p_value,mean_first,mean_second,exact,degenerate");
    write_mae_csv(b, {MaeRow{"s2", 3, 0.5, 0.1, 2.0}});
    EXPECT_EQ(b.str(), "model,n,mae_scaled,abs_error_std_scaled,mae_original\ns2,3,0.5,0.1,2\n");
}
