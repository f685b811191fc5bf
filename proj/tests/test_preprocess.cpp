#include "dsv/errors.hpp"
#include "dsv/preprocess.hpp"
#include "dsv/rng.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace dsv;

namespace {

Field field_from_fn(const Grid& g, std::size_t T, double (*fn)(double lat, double lon),
                    int first_day = 18000) {
    Field f;
    f.grid = g;
    f.units = "m";
    for (std::size_t t = 0; t < T; ++t) f.times.push_back(Date(int(first_day + int(t))));
    f.values.resize(T * g.size());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < g.n_lat; ++i)
            for (std::size_t j = 0; j < g.n_lon; ++j)
                f.at(t, i * g.n_lon + j) = fn(g.lat(i), g.lon(j));
    return f;
}

double linear_fn(double lat, double lon) { return 2.0 * lat + 3.0 * lon; }
double const_fn(double, double) { return 4.25; }

} // namespace

TEST_CASE("bilinear regrid is exact on linear fields") {
    const Grid src(30, 2, 8, -10, 2, 10);
    const Grid dst(31, 1.5, 6, -9, 1.7, 8);
    const Field f = field_from_fn(src, 2, linear_fn);
    const Field r = regrid_bilinear(f, dst);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t i = 0; i < dst.n_lat; ++i)
            for (std::size_t j = 0; j < dst.n_lon; ++j)
                CHECK(r.at(t, i * dst.n_lon + j) ==
                      doctest::Approx(linear_fn(dst.lat(i), dst.lon(j))).epsilon(1e-12));
}

TEST_CASE("regrid to the identical grid is the identity") {
    const Grid src(30, 2, 5, -10, 2, 6);
    const Field f = testutil::make_field(src, 3, 4);
    const Field r = regrid_bilinear(f, src);
    for (std::size_t i = 0; i < f.values.size(); ++i)
        CHECK(r.values[i] == doctest::Approx(f.values[i]).epsilon(1e-14));
}

TEST_CASE("regrid of a constant field is constant and min/max envelope holds") {
    const Grid src(30, 2, 6, -10, 2, 6);
    const Grid dst(31, 1, 8, -9, 1, 9);
    const Field fc = field_from_fn(src, 1, const_fn);
    const Field rc = regrid_bilinear(fc, dst);
    for (double v : rc.values) CHECK(v == doctest::Approx(4.25).epsilon(1e-14));

    const Field f = testutil::make_field(src, 1, 17);
    const Field r = regrid_bilinear(f, dst);
    double lo = f.values[0], hi = f.values[0];
    for (double v : f.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : r.values) {
        CHECK(v >= lo - 1e-12);
        CHECK(v <= hi + 1e-12);
    }
}

TEST_CASE("regrid outside the source bounds is a domain error") {
    const Grid src(30, 2, 5, -10, 2, 5);
    const Field f = testutil::make_field(src, 1, 3);
    CHECK_THROWS_AS(regrid_bilinear(f, Grid(20, 2, 5, -10, 2, 5)), DomainError);
    CHECK_THROWS_AS(regrid_bilinear(f, Grid(30, 2, 5, -20, 2, 5)), DomainError);
}

TEST_CASE("weekly average examples") {
    const Grid g(0, 1, 1, 0, 1, 1);
    Field daily;
    daily.grid = g;
    daily.units = "m";
    for (int d = 0; d < 14; ++d) {
        daily.times.push_back(Date(18000 + d));
        daily.values.push_back(double(d + 1)); // days valued 1..14
    }
    const EnsembleField weekly = weekly_average(daily, {Date(18000)}, 2);
    CHECK(weekly.at(0, 0, 0, 0) == doctest::Approx(4.0));  // mean of 1..7
    CHECK(weekly.at(0, 1, 0, 0) == doctest::Approx(11.0)); // mean of 8..14
    CHECK(weekly.n_member == 1);

    // constant series stays constant
    Field constant = daily;
    for (double& v : constant.values) v = 3.5;
    const EnsembleField wc = weekly_average(constant, {Date(18000)}, 2);
    CHECK(wc.at(0, 0, 0, 0) == doctest::Approx(3.5));
    CHECK(wc.at(0, 1, 0, 0) == doctest::Approx(3.5));

    // missing day is named in the error
    try {
        weekly_average(daily, {Date(18001)}, 2); // needs day 18014
        FAIL("expected error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find(Date(18014).iso()) != std::string::npos);
    }
}

namespace {

// One value per calendar date over several years, spatially constant.
Field yearly_history(const Grid& g, int first_year, int n_years,
                     double (*value)(int year)) {
    Field f;
    f.grid = g;
    f.units = "m";
    for (int y = first_year; y < first_year + n_years; ++y)
        for (int d = 0; d < 5; ++d) {
            f.times.push_back(Date::from_ymd(y, 1, 10 + d));
            for (std::size_t k = 0; k < g.size(); ++k) f.values.push_back(value(y));
        }
    return f;
}

} // namespace

TEST_CASE("climatology examples") {
    const Grid g = testutil::small_grid();
    // constant history -> constant climatology
    const Field hist = yearly_history(g, 1990, 4, [](int) { return 7.5; });
    const ClimatologyModel clim = fit_climatology(hist, 3);
    CHECK(clim.value_at(Date::from_ymd(1994, 1, 12)) == doctest::Approx(7.5));

    // two-year window over spatial means 10 then 20 -> 15
    const Field hist2 = yearly_history(g, 2000, 2, [](int y) { return y == 2000 ? 10.0 : 20.0; });
    const ClimatologyModel clim2 = fit_climatology(hist2, 2);
    CHECK(clim2.value_at(Date::from_ymd(2002, 1, 11)) == doctest::Approx(15.0));

    // date absent from history
    CHECK_THROWS_AS(clim2.value_at(Date::from_ymd(2002, 7, 1)), ValidationError);
    // insufficient window
    CHECK_THROWS_AS(fit_climatology(hist2, 3).latest_table(), ValidationError);
}

TEST_CASE("deseasonalize_detrend removes its own fitted trend") {
    const Grid g = testutil::small_grid();
    const Field hist = yearly_history(g, 1992, 3, [](int) { return 0.0; });
    const ClimatologyModel clim = fit_climatology(hist, 3);

    Field f;
    f.grid = g;
    f.units = "m";
    for (int t = 0; t < 5; ++t) {
        f.times.push_back(Date::from_ymd(1995, 1, 10 + t));
        for (std::size_t k = 0; k < g.size(); ++k)
            f.values.push_back(0.1 * double(t)); // pure linear trend, slope 0.1/day
    }
    const Field out = deseasonalize_detrend(f, clim);
    const TrendLine residual_trend = fit_trend(out);
    CHECK(std::fabs(residual_trend.slope) < 1e-10);

    // zero-anomaly input stays zero
    Field zero = f;
    for (double& v : zero.values) v = 0.0;
    const Field outz = deseasonalize_detrend(zero, clim);
    for (double v : outz.values) CHECK(std::fabs(v) < 1e-12);

    // idempotence up to numerical tolerance
    const Field once = deseasonalize_detrend(f, clim);
    Field shifted = once; // second pass needs a climatology for the same dates; reuse zero clim
    const Field twice = deseasonalize_detrend(shifted, clim);
    for (std::size_t i = 0; i < once.values.size(); ++i)
        CHECK(std::fabs(once.values[i] - twice.values[i]) < 1e-9);
}

TEST_CASE("synthetic decomposition: injected noise variance is recovered") {
    const Grid g = testutil::small_grid(3, 4);
    const int n_years = 6;
    // climatology years: rolling windows reach back three years per date
    Field hist = yearly_history(g, 1992, 9, [](int) { return 5.0; });
    const ClimatologyModel clim = fit_climatology(hist, 3);

    Field f;
    f.grid = g;
    f.units = "m";
    const double noise_std = 0.7;
    double injected_ss = 0.0;
    std::size_t n_vals = 0;
    for (int y = 0; y < n_years; ++y)
        for (int d = 0; d < 5; ++d) {
            const Date date = Date::from_ymd(1995 + y, 1, 10 + d);
            f.times.push_back(date);
            for (std::size_t k = 0; k < g.size(); ++k) {
                const double eps =
                    noise_std * normal_draw(99, Substream(StreamTag::synth_field,
                                                          std::uint64_t(date.epoch_day), 0, 0,
                                                          0, k));
                injected_ss += eps * eps;
                ++n_vals;
                f.values.push_back(5.0 + 0.05 * double(y * 5 + d) + eps);
            }
        }
    const Field out = deseasonalize_detrend(f, clim);
    double out_ss = 0.0;
    for (double v : out.values) out_ss += v * v;
    const double recovered = out_ss / double(n_vals);
    const double target = injected_ss / double(n_vals);
    CHECK(recovered == doctest::Approx(target).epsilon(0.05));
}

TEST_CASE("normalization examples and round trip") {
    const Grid g(0, 1, 1, 0, 1, 1);
    // constant training column -> sigma floored, normalized value 0
    Field constant;
    constant.grid = g;
    constant.units = "m";
    constant.times = {Date(0), Date(1), Date(2)};
    constant.values = {2.0, 2.0, 2.0};
    const NormStats s1 = fit_normalization(constant);
    CHECK(s1.sigma[0] == s1.sigma_floor);
    CHECK(normalize(constant, s1).values[0] == doctest::Approx(0.0));

    // train column {-1, 1}: mu 0, sigma 1 (population), identity map
    Field pm;
    pm.grid = g;
    pm.units = "m";
    pm.times = {Date(0), Date(1)};
    pm.values = {-1.0, 1.0};
    const NormStats s2 = fit_normalization(pm);
    CHECK(s2.mu[0] == doctest::Approx(0.0));
    CHECK(s2.sigma[0] == doctest::Approx(1.0));
    const Field n2 = normalize(pm, s2);
    CHECK(n2.values[0] == doctest::Approx(-1.0));
    CHECK(n2.values[1] == doctest::Approx(1.0));

    // round trip on a random field
    const Grid g2 = testutil::small_grid(3, 3);
    const Field f = testutil::make_field(g2, 20, 8, 2.5);
    const NormStats s = fit_normalization(f);
    const Field back = denormalize(normalize(f, s), s);
    for (std::size_t i = 0; i < f.values.size(); ++i)
        CHECK(testutil::close(back.values[i], f.values[i], 1e-12));

    // normalized training stats: mean 0, std 1 per gridpoint
    const Field n = normalize(f, s);
    const NormStats check = fit_normalization(n);
    for (std::size_t k = 0; k < g2.size(); ++k) {
        CHECK(std::fabs(check.mu[k]) < 1e-10);
        CHECK(check.sigma[k] == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("chain applied to an ensemble equals the member-wise chain") {
    const Grid g = testutil::small_grid(2, 2);
    Field hist;
    hist.grid = g;
    hist.units = "m";
    for (int y = 0; y < 3; ++y)
        for (int d = 0; d < 21; ++d) {
            hist.times.push_back(Date::from_ymd(1990 + y, 1, 5 + d));
            for (std::size_t k = 0; k < g.size(); ++k)
                hist.values.push_back(1.0 + 0.1 * double(k));
        }
    Field train;
    train.grid = g;
    train.units = "m";
    for (int t = 0; t < 12; ++t) {
        train.times.push_back(Date::from_ymd(1995, 1, 5 + t));
        for (std::size_t k = 0; k < g.size(); ++k)
            train.values.push_back(
                normal_draw(5, Substream(StreamTag::synth_field, t, 5, 0, 0, k)));
    }
    const PreprocessChain chain = PreprocessChain::fit(hist, train, 3);

    EnsembleField ens;
    ens.grid = g;
    ens.n_lead = 2;
    ens.n_member = 3;
    ens.units = "m";
    ens.inits = {Date::from_ymd(1996, 1, 5), Date::from_ymd(1996, 1, 12)};
    ens.values.resize(2 * 2 * 3 * g.size());
    for (std::size_t i = 0; i < ens.values.size(); ++i)
        ens.values[i] = normal_draw(6, Substream(StreamTag::synth_field, i, 6, 6));

    const EnsembleField out = chain.transform(ens);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t l = 0; l < 2; ++l)
            for (std::size_t m = 0; m < 3; ++m) {
                // member-wise: one-sample field at the valid date
                Field single;
                single.grid = g;
                single.units = "m";
                single.times = {lead_valid_date(ens.inits[t], l)};
                const auto src = ens.member_slice(t, l, m);
                single.values.assign(src.begin(), src.end());
                const Field tf = chain.transform(single);
                const auto got = out.member_slice(t, l, m);
                for (std::size_t k = 0; k < g.size(); ++k)
                    CHECK(got[k] == doctest::Approx(tf.values[k]).epsilon(1e-14));
            }
}

TEST_CASE("inverse_sample undoes the chain transform") {
    const Grid g = testutil::small_grid(2, 2);
    Field hist;
    hist.grid = g;
    hist.units = "m";
    for (int y = 0; y < 2; ++y)
        for (int d = 0; d < 6; ++d) {
            hist.times.push_back(Date::from_ymd(1992 + y, 1, 8 + d));
            for (std::size_t k = 0; k < g.size(); ++k) hist.values.push_back(0.5);
        }
    const Field train = [&] {
        Field f;
        f.grid = g;
        f.units = "m";
        for (int t = 0; t < 8; ++t) {
            f.times.push_back(Date::from_ymd(1995, 1, 8 + t));
            for (std::size_t k = 0; k < g.size(); ++k)
                f.values.push_back(
                    normal_draw(9, Substream(StreamTag::synth_field, t, 9, 0, 0, k)));
        }
        return f;
    }();
    const PreprocessChain chain = PreprocessChain::fit(hist, train, 2);
    const Field norm = chain.transform(train);
    for (std::size_t t = 0; t < train.n_time(); ++t) {
        std::vector<double> sample(norm.row(t).begin(), norm.row(t).end());
        chain.inverse_sample(sample, train.times[t]);
        for (std::size_t k = 0; k < g.size(); ++k)
            CHECK(testutil::close(sample[k], train.at(t, k), 1e-12));
    }
}
