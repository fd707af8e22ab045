#pragma once

#include <array>
#include <string>
#include <string_view>

namespace capmfg::units {

/// Exponents over the base dimensions ($, MW, year, hour). Hours and years
/// are kept apart: production hours are counted per year, so hours/year is
/// a genuine rate and never converted to a pure number.
struct Dimension {
    std::array<double, 4> exponent{};  // money, power, time, hour

    friend bool operator==(const Dimension&, const Dimension&) = default;

    Dimension operator*(const Dimension& o) const;
    Dimension operator/(const Dimension& o) const;
    Dimension pow(double p) const;

    std::string describe() const;
};

/// A unit expression reduced to a factor against base units.
struct Quantity {
    double scale = 1.0;
    Dimension dim{};
};

inline constexpr Dimension kNone{};
inline constexpr Dimension kMoney{{1, 0, 0, 0}};
inline constexpr Dimension kPower{{0, 1, 0, 0}};
inline constexpr Dimension kYear{{0, 0, 1, 0}};
inline constexpr Dimension kHour{{0, 0, 0, 1}};

/// Parses expressions such as "$/kW", "MW^2/($*year)", "$/(MW*MWh)",
/// "1/sqrt(year)" or "hours/year". Throws Error{validation} on unknown
/// tokens or malformed syntax.
Quantity parse(std::string_view expr);

}  // namespace capmfg::units
