#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dsv {

// Calendar date at daily resolution, stored as days since 1970-01-01.
// Weekly arithmetic on epoch days stays integer-exact.
struct Date {
    std::int32_t epoch_day = 0;

    constexpr Date() = default;
    constexpr explicit Date(std::int32_t days) : epoch_day(days) {}
    static Date from_ymd(int year, int month, int day);
    static Date parse_iso(const std::string& s); // "YYYY-MM-DD"

    int year() const;
    int month() const;
    int day() const;

    // Calendar-date key mmdd with Feb 29 mapped to Feb 28.
    int mmdd_key() const;

    std::string iso() const;

    Date operator+(int days) const { return Date(epoch_day + days); }
    Date operator-(int days) const { return Date(epoch_day - days); }
    auto operator<=>(const Date&) const = default;
};

// Season-year of a date: for seasons crossing the new year (e.g. DJF), the
// months at the tail of the calendar year count toward the following year.
int season_year(Date d, const std::vector<int>& season_months);

} // namespace dsv
