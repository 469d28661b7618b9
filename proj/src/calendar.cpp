#include "stdf/calendar.hpp"

#include <cstdio>

#include "stdf/error.hpp"

namespace stdf {

// Howard Hinnant's algorithms: http://howardhinnant.github.io/date_algorithms.html
int64_t days_from_civil(int64_t y, int64_t m, int64_t d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const int64_t yoe = y - era * 400;
    const int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

static void civil_from_days(int64_t z, int64_t& y, int64_t& m, int64_t& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const int64_t doe = z - era * 146097;
    const int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = yoe + era * 400;
    const int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const int64_t mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y += m <= 2;
}

int64_t parse_timestamp_minutes(const std::string& text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    int n = std::sscanf(text.c_str(), "%d-%d-%d%*1[ T]%d:%d:%d", &y, &mo, &d, &h, &mi, &s);
    if (n < 3) throw DataError("cannot parse timestamp '" + text + "'");
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s != 0) {
        throw DataError("timestamp out of range: '" + text + "'");
    }
    return days_from_civil(y, mo, d) * 1440 + h * 60 + mi;
}

std::string format_timestamp_minutes(int64_t minutes) {
    int64_t days = minutes / 1440;
    int64_t rem = minutes - days * 1440;
    if (rem < 0) {
        rem += 1440;
        days -= 1;
    }
    int64_t y, m, d;
    civil_from_days(days, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04lld-%02lld-%02lld %02lld:%02lld",
                  static_cast<long long>(y), static_cast<long long>(m),
                  static_cast<long long>(d), static_cast<long long>(rem / 60),
                  static_cast<long long>(rem % 60));
    return buf;
}

int day_of_week(int64_t minutes) {
    int64_t days = minutes / 1440;
    if (minutes < 0 && days * 1440 != minutes) days -= 1;
    // 1970-01-01 was a Thursday; 0 = Monday
    return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

int64_t slot_of_day(int64_t minutes, int64_t granularity_min) {
    if (granularity_min <= 0 || 1440 % granularity_min != 0) {
        throw ConfigError("granularity must divide 1440 minutes, got " +
                          std::to_string(granularity_min));
    }
    int64_t of_day = ((minutes % 1440) + 1440) % 1440;
    return of_day / granularity_min;
}

}  // namespace stdf
