#include "dsv/errors.hpp"
#include "dsv/rng.hpp"
#include "dsv/scores.hpp"
#include "dsv/synth.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

using namespace dsv;

namespace {

EnsembleField one_cell_ensemble(const std::vector<double>& members) {
    EnsembleField e;
    e.grid = Grid(0, 1, 1, 0, 1, 1);
    e.inits = {Date(18000)};
    e.n_lead = 1;
    e.n_member = std::uint32_t(members.size());
    e.units = "m/s";
    e.values = members;
    return e;
}

LeadAlignedField one_cell_truth(double v) {
    LeadAlignedField y(1, 1, 1);
    y.values = {v};
    return y;
}

} // namespace

TEST_CASE("deterministic mse examples") {
    std::vector<double> y = {1.0, 2.0, 3.0, 4.0};
    auto r = mse_deterministic(y, y, 2, 2);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.0);
    std::vector<double> shifted = {3.0, 4.0, 5.0, 6.0}; // constant error 2
    r = mse_deterministic(y, shifted, 2, 2);
    CHECK(r[0] == doctest::Approx(4.0));
    CHECK(r[1] == doctest::Approx(4.0));
    CHECK_THROWS_AS(mse_deterministic(y, y, 3, 2), DimensionError);
}

TEST_CASE("ensemble-mean mse examples") {
    // members symmetric about the truth
    const EnsembleField sym = one_cell_ensemble({-1.0, 1.0});
    CHECK(mse_ensemble_mean(one_cell_truth(0.0), sym).values[0] == doctest::Approx(0.0));

    // single member reduces to the deterministic error
    const EnsembleField single = one_cell_ensemble({2.5});
    CHECK(mse_ensemble_mean(one_cell_truth(1.0), single).values[0] == doctest::Approx(2.25));

    // random case equals the loop oracle
    const Grid g = testutil::small_grid();
    const EnsembleField ens = testutil::make_ensemble(g, 4, 2, 5, 61);
    const LeadAlignedField y = testutil::make_truth(g, 4, 2, 62);
    const ScoreTable t = mse_ensemble_mean(y, ens);
    const auto o = oracle::mse_ens_mean(y, ens);
    for (std::size_t i = 0; i < t.values.size(); ++i)
        CHECK(testutil::close(t.values[i], o[i]));
}

TEST_CASE("discrete crps examples") {
    // single member: mean absolute error
    const EnsembleField single = one_cell_ensemble({3.0});
    CHECK(crps_discrete(one_cell_truth(1.0), single).values[0] == doctest::Approx(2.0));

    // members {0, 2} against observation 1: 1 - 0.5 = 0.5
    const EnsembleField pair = one_cell_ensemble({0.0, 2.0});
    CHECK(crps_discrete(one_cell_truth(1.0), pair).values[0] == doctest::Approx(0.5));

    // members equal to the observation
    const EnsembleField exact = one_cell_ensemble({1.0, 1.0, 1.0});
    CHECK(crps_discrete(one_cell_truth(1.0), exact).values[0] == doctest::Approx(0.0));
}

TEST_CASE("crps identities: nonnegative, MAE at M=1, permutation invariant") {
    const Grid g = testutil::small_grid();
    for (std::uint64_t trial = 0; trial < 25; ++trial) {
        const std::size_t M = 1 + uniform_index(4, Substream(StreamTag::subsample, trial), 6);
        const EnsembleField ens =
            testutil::make_ensemble(g, 3, 2, std::uint32_t(M), 70 + trial);
        const LeadAlignedField y = testutil::make_truth(g, 3, 2, 170 + trial);
        const ScoreTable t = crps_discrete(y, ens);
        for (double v : t.values) CHECK(v >= -1e-15);

        if (M == 1) {
            // equals the mean absolute error
            for (std::size_t l = 0; l < 2; ++l)
                for (std::size_t gg = 0; gg < g.size(); ++gg) {
                    double mae = 0.0;
                    for (std::size_t tt = 0; tt < 3; ++tt)
                        mae += std::fabs(ens.at(tt, l, 0, gg) - y.at(tt, l, gg));
                    CHECK(t.at(l, gg) == doctest::Approx(mae / 3.0));
                }
        }

        // reverse the member order
        EnsembleField rev = ens;
        for (std::size_t tt = 0; tt < 3; ++tt)
            for (std::size_t l = 0; l < 2; ++l)
                for (std::size_t m = 0; m < M; ++m) {
                    const auto src = ens.member_slice(tt, l, M - 1 - m);
                    auto dst = rev.member_slice(tt, l, m);
                    std::copy(src.begin(), src.end(), dst.begin());
                }
        const ScoreTable tr = crps_discrete(y, rev);
        for (std::size_t i = 0; i < t.values.size(); ++i)
            CHECK(t.values[i] == doctest::Approx(tr.values[i]).epsilon(1e-13));
    }
}

TEST_CASE("quantile downsample examples") {
    // matched sizes return the sorted members
    const EnsembleField e = one_cell_ensemble({3.0, 1.0, 2.0});
    const EnsembleField q = quantile_downsample(e, 3);
    CHECK(q.at(0, 0, 0, 0) == doctest::Approx(1.0));
    CHECK(q.at(0, 0, 1, 0) == doctest::Approx(2.0));
    CHECK(q.at(0, 0, 2, 0) == doctest::Approx(3.0));

    // members 1..200 downsampled to 10: 10.5, 30.5, ..., 190.5
    std::vector<double> big(200);
    for (std::size_t i = 0; i < 200; ++i) big[i] = double(200 - i); // unsorted on purpose
    const EnsembleField q10 = quantile_downsample(one_cell_ensemble(big), 10);
    for (std::size_t i = 0; i < 10; ++i)
        CHECK(q10.at(0, 0, i, 0) == doctest::Approx(10.5 + 20.0 * double(i)));

    // constant ensembles stay constant
    const EnsembleField qc = quantile_downsample(one_cell_ensemble({2.0, 2.0, 2.0, 2.0}), 2);
    CHECK(qc.at(0, 0, 0, 0) == doctest::Approx(2.0));
    CHECK(qc.at(0, 0, 1, 0) == doctest::Approx(2.0));

    CHECK_THROWS_AS(quantile_downsample(e, 4), ValidationError);
}

TEST_CASE("quantile downsample preserves the empirical cdf within 1/m") {
    const std::size_t M_big = 200, M_small = 10;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        std::vector<double> members(M_big);
        for (std::size_t i = 0; i < M_big; ++i)
            members[i] = normal_draw(500 + trial, Substream(StreamTag::synth_field, i, 51));
        const EnsembleField small =
            quantile_downsample(one_cell_ensemble(members), M_small);
        std::sort(members.begin(), members.end());
        // Kolmogorov-Smirnov distance between the two empirical CDFs.
        double ks = 0.0;
        for (double x : members) {
            const double f_big =
                double(std::upper_bound(members.begin(), members.end(), x) - members.begin()) /
                double(M_big);
            std::size_t below = 0;
            for (std::size_t m = 0; m < M_small; ++m)
                if (small.at(0, 0, m, 0) <= x) ++below;
            ks = std::max(ks, std::fabs(f_big - double(below) / double(M_small)));
        }
        CHECK(ks <= 1.0 / double(M_small) + 1e-12);
    }
}

TEST_CASE("ssr examples") {
    // zero-spread ensemble
    const EnsembleField flat = one_cell_ensemble({1.0, 1.0, 1.0});
    const ScoreTable t = ssr(one_cell_truth(2.0), flat);
    CHECK(t.values[0] == doctest::Approx(0.0));

    // zero RMSE flags the cell with an infinity sentinel
    EnsembleField spread = one_cell_ensemble({0.5, 1.5});
    const ScoreTable tf = ssr(one_cell_truth(1.0), spread);
    CHECK(std::isinf(tf.values[0]));
    CHECK(tf.flagged[0] == 1);

    // fewer than 2 members is an error
    CHECK_THROWS_AS(ssr(one_cell_truth(0.0), one_cell_ensemble({1.0})), ValidationError);

    // i.i.d. obs and members converge to sqrt(M/(M+1))
    const std::size_t T = 4000, M = 10;
    EnsembleField big;
    big.grid = Grid(0, 1, 1, 0, 1, 1);
    big.n_lead = 1;
    big.n_member = M;
    big.units = "m/s";
    LeadAlignedField obs(T, 1, 1);
    big.values.resize(T * M);
    for (std::size_t t2 = 0; t2 < T; ++t2) {
        big.inits.push_back(Date(int(18000 + 7 * t2)));
        obs.at(t2, 0, 0) = normal_draw(600, Substream(StreamTag::synth_field, t2, 52));
        for (std::size_t m = 0; m < M; ++m)
            big.values[t2 * M + m] =
                normal_draw(600, Substream(StreamTag::synth_field, t2, 53, m));
    }
    const ScoreTable ts = ssr(obs, big);
    CHECK(ts.values[0] == doctest::Approx(std::sqrt(double(M) / double(M + 1))).epsilon(0.05));

    // literal reading squares the variance inside the time mean
    SsrOptions literal;
    literal.literal = true;
    const ScoreTable tl = ssr(obs, big, literal);
    CHECK(tl.score == "ssr_literal");
    CHECK(tl.values[0] != doctest::Approx(ts.values[0]).epsilon(1e-6));
}

TEST_CASE("skill score formula and flagged reference cells") {
    const Grid g(0, 1, 1, 0, 1, 1);
    ScoreTable ens("mse", g, 1), ref("mse", g, 1);
    ens.values[0] = 2.0;
    ref.values[0] = 2.0;
    CHECK(skill_score(ens, ref, "msss").values[0] == doctest::Approx(0.0));
    ens.values[0] = 0.0;
    CHECK(skill_score(ens, ref, "msss").values[0] == doctest::Approx(1.0));
    ens.values[0] = 4.0;
    CHECK(skill_score(ens, ref, "msss").values[0] == doctest::Approx(-1.0));
    ref.values[0] = 0.0;
    const ScoreTable flagged = skill_score(ens, ref, "msss");
    CHECK(flagged.flagged[0] == 1);
}

TEST_CASE("skill scores satisfy the reciprocal antisymmetry identity") {
    const Grid g = testutil::small_grid();
    const EnsembleField a = testutil::make_ensemble(g, 5, 2, 4, 63);
    const EnsembleField b = testutil::make_ensemble(g, 5, 2, 4, 64);
    const LeadAlignedField y = testutil::make_truth(g, 5, 2, 65);
    const ScoreTable sa = crps_discrete(y, a);
    const ScoreTable sb = crps_discrete(y, b);
    const ScoreTable ab = skill_score(sa, sb, "s");
    const ScoreTable ba = skill_score(sb, sa, "s");
    for (std::size_t i = 0; i < ab.values.size(); ++i) {
        if (ab.flagged[i] || ba.flagged[i]) continue;
        // skill(a,b) = 1 - 1 / (1 - skill(b,a))
        CHECK(ab.values[i] ==
              doctest::Approx(1.0 - 1.0 / (1.0 - ba.values[i])).epsilon(1e-10));
    }
}

TEST_CASE("ssim examples") {
    const Grid g = testutil::small_grid(3, 4);
    // identical member and verifying field (nonzero mean)
    LeadAlignedField y(1, 1, g.size());
    for (std::size_t k = 0; k < g.size(); ++k) y.values[k] = 2.0 + double(k % 3);
    EnsembleField e;
    e.grid = g;
    e.inits = {Date(18000)};
    e.n_lead = 1;
    e.n_member = 1;
    e.units = "m/s";
    e.values = y.values;
    SsimResult r = ssim(y, e);
    CHECK(r.luminance[0] == doctest::Approx(1.0));
    CHECK(r.contrast[0] == doctest::Approx(1.0));
    CHECK(r.structure[0] == doctest::Approx(1.0));
    CHECK(r.ssim[0] == doctest::Approx(1.0));

    // member = -(verifying anomalies), zero spatial mean -> structure -1
    LeadAlignedField ya(1, 1, g.size());
    double mean = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        ya.values[k] = double(k) - 5.5;
        mean += ya.values[k];
    }
    REQUIRE(std::fabs(mean) < 1e-12);
    EnsembleField neg = e;
    for (std::size_t k = 0; k < g.size(); ++k) neg.values[k] = -ya.values[k];
    r = ssim(ya, neg);
    CHECK(r.structure[0] == doctest::Approx(-1.0));

    // member = 2x anomalies -> contrast 4/5, structure 1
    EnsembleField twice = e;
    for (std::size_t k = 0; k < g.size(); ++k) twice.values[k] = 2.0 * ya.values[k];
    r = ssim(ya, twice);
    CHECK(r.contrast[0] == doctest::Approx(0.8));
    CHECK(r.structure[0] == doctest::Approx(1.0));

    // product identity with identical accumulation
    CHECK(r.ssim[0] == r.luminance[0] * r.contrast[0] * r.structure[0]);
}

TEST_CASE("spatial aggregation examples") {
    const Grid g(0, 60, 2, 0, 1, 1); // weights 1 and 0.5
    ScoreTable t("mse", g, 1);
    t.values = {1.0, 2.0};
    CHECK(aggregate_spatial(t)[0] == doctest::Approx(4.0 / 3.0));

    // uniform score
    ScoreTable u("mse", g, 1);
    u.values = {3.5, 3.5};
    CHECK(aggregate_spatial(u)[0] == doctest::Approx(3.5));

    // single-cell table
    ScoreTable s("mse", Grid(10, 1, 1, 0, 1, 1), 1);
    s.values = {7.25};
    CHECK(aggregate_spatial(s)[0] == doctest::Approx(7.25));

    // flagged cells are excluded
    ScoreTable fl("ssr", g, 1);
    fl.values = {1.0, std::numeric_limits<double>::infinity()};
    fl.flagged = {0, 1};
    CHECK(aggregate_spatial(fl)[0] == doctest::Approx(1.0));
}

TEST_CASE("ensemble scores are invariant under member relabeling") {
    const Grid g = testutil::small_grid();
    const EnsembleField ens = testutil::make_ensemble(g, 3, 2, 6, 66);
    const LeadAlignedField y = testutil::make_truth(g, 3, 2, 67);
    EnsembleField shuffled = ens;
    const std::size_t perm[6] = {4, 2, 0, 5, 1, 3};
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t l = 0; l < 2; ++l)
            for (std::size_t m = 0; m < 6; ++m) {
                const auto src = ens.member_slice(t, l, perm[m]);
                auto dst = shuffled.member_slice(t, l, m);
                std::copy(src.begin(), src.end(), dst.begin());
            }
    const auto c1 = crps_discrete(y, ens).values;
    const auto c2 = crps_discrete(y, shuffled).values;
    const auto m1 = mse_ensemble_mean(y, ens).values;
    const auto m2 = mse_ensemble_mean(y, shuffled).values;
    const auto s1 = ssr(y, ens).values;
    const auto s2 = ssr(y, shuffled).values;
    for (std::size_t i = 0; i < s1.size(); ++i) {
        CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-13));
        CHECK(m1[i] == doctest::Approx(m2[i]).epsilon(1e-13));
        CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-13));
    }
}

TEST_CASE("align_verifying picks the valid dates and names missing ones") {
    const Grid g = testutil::small_grid();
    const Field truth = testutil::make_field(g, 6, 68); // weekly from day 18000
    const std::vector<Date> inits = {Date(18000), Date(18007)};
    const LeadAlignedField y = align_verifying(truth, inits, 3);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t l = 0; l < 3; ++l)
            for (std::size_t k = 0; k < g.size(); ++k)
                CHECK(y.at(t, l, k) == truth.at(t + l, k));
    CHECK_THROWS_AS(align_verifying(truth, {Date(18001)}, 1), ValidationError);
}

TEST_CASE("climatology reference uses prior same-calendar-date values") {
    const Grid g(0, 1, 1, 0, 1, 1);
    Field truth;
    truth.grid = g;
    truth.units = "m/s";
    for (int y = 2000; y <= 2005; ++y) {
        truth.times.push_back(Date::from_ymd(y, 1, 10));
        truth.values.push_back(double(y - 2000));
    }
    const EnsembleField ref =
        climatology_reference(truth, {Date::from_ymd(2005, 1, 10)}, 1, 3);
    REQUIRE(ref.n_member == 3);
    // years 2004, 2003, 2002 -> values 4, 3, 2
    CHECK(ref.at(0, 0, 0, 0) == doctest::Approx(4.0));
    CHECK(ref.at(0, 0, 1, 0) == doctest::Approx(3.0));
    CHECK(ref.at(0, 0, 2, 0) == doctest::Approx(2.0));
    CHECK_THROWS_AS(climatology_reference(truth, {Date::from_ymd(2002, 1, 10)}, 1, 3),
                    ValidationError);
}
