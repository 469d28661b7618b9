#pragma once

#include <cstdint>
#include <string>

namespace stdf {

// Proleptic Gregorian civil-date arithmetic, minutes since 1970-01-01 00:00.

int64_t days_from_civil(int64_t y, int64_t m, int64_t d);

// Accepts "YYYY-MM-DD HH:MM", "YYYY-MM-DDTHH:MM", optional ":SS" (seconds
// must be zero), or a bare "YYYY-MM-DD".
int64_t parse_timestamp_minutes(const std::string& text);

std::string format_timestamp_minutes(int64_t minutes);

// 0 = Monday ... 6 = Sunday
int day_of_week(int64_t minutes);

// index of the granularity-sized slot within the day
int64_t slot_of_day(int64_t minutes, int64_t granularity_min);

}  // namespace stdf
