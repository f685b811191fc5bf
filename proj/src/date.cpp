#include "dsv/date.hpp"

#include "dsv/errors.hpp"

#include <cstdio>

namespace dsv {

namespace {

// Civil-calendar conversions (proleptic Gregorian), valid far beyond any
// date this library will ever see.
std::int32_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097 + static_cast<std::int32_t>(doe) - 719468;
}

void civil_from_days(std::int32_t z, int& y, int& m, int& d) {
    z += 719468;
    const int era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int yr = static_cast<int>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = yr + (m <= 2);
}

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
    static const int n[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return n[m - 1];
}

} // namespace

Date Date::from_ymd(int year, int month, int day) {
    if (month < 1 || month > 12)
        throw ValidationError("month out of range: " + std::to_string(month));
    if (day < 1 || day > days_in_month(year, month))
        throw ValidationError("day out of range: " + std::to_string(year) + "-" +
                              std::to_string(month) + "-" + std::to_string(day));
    return Date(days_from_civil(year, month, day));
}

Date Date::parse_iso(const std::string& s) {
    int y = 0, m = 0, d = 0;
    char extra = 0;
    if (std::sscanf(s.c_str(), "%d-%d-%d%c", &y, &m, &d, &extra) != 3)
        throw ValidationError("unparseable date: '" + s + "' (expected YYYY-MM-DD)");
    return from_ymd(y, m, d);
}

int Date::year() const {
    int y, m, d;
    civil_from_days(epoch_day, y, m, d);
    return y;
}

int Date::month() const {
    int y, m, d;
    civil_from_days(epoch_day, y, m, d);
    return m;
}

int Date::day() const {
    int y, m, d;
    civil_from_days(epoch_day, y, m, d);
    return d;
}

int Date::mmdd_key() const {
    int y, m, d;
    civil_from_days(epoch_day, y, m, d);
    if (m == 2 && d == 29) d = 28;
    return m * 100 + d;
}

std::string Date::iso() const {
    int y, m, d;
    civil_from_days(epoch_day, y, m, d);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
    return buf;
}

int season_year(Date d, const std::vector<int>& season_months) {
    auto has = [&](int m) {
        for (int x : season_months)
            if (x == m) return true;
        return false;
    };
    if (!(has(12) && has(1))) return d.year();
    // The contiguous block of months ending in December belongs to the next
    // year's season.
    int cut = 12;
    while (cut > 1 && has(cut - 1)) --cut;
    return d.month() >= cut ? d.year() + 1 : d.year();
}

} // namespace dsv
