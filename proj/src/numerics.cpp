#include "capmfg/numerics.hpp"

#include <algorithm>
#include <string>

namespace capmfg {

UniformGrid::UniformGrid(double lo, double hi, std::size_t points)
    : lo_(lo), hi_(hi), points_(points) {
    if (points < 2 || !(hi > lo)) {
        fail(ErrorKind::validation, "uniform grid needs >= 2 points and hi > lo (got " +
                                        std::to_string(points) + " points on [" + std::to_string(lo) +
                                        ", " + std::to_string(hi) + "])");
    }
    step_ = (hi - lo) / static_cast<double>(points - 1);
}

std::vector<double> UniformGrid::nodes() const {
    std::vector<double> out(points_);
    for (std::size_t i = 0; i < points_; ++i) out[i] = (*this)[i];
    return out;
}

std::pair<std::size_t, double> UniformGrid::locate(double s) const {
    if (s <= lo_) return {0, 0.0};
    if (s >= hi_) return {points_ - 2, 1.0};
    const double pos = (s - lo_) / step_;
    auto i = static_cast<std::size_t>(pos);
    if (i >= points_ - 1) i = points_ - 2;
    return {i, pos - static_cast<double>(i)};
}

double interpolate(const UniformGrid& grid, std::span<const double> values, double s) {
    auto [i, f] = grid.locate(s);
    return values[i] + f * (values[i + 1] - values[i]);
}

double trapezoid(std::span<const double> values, double step) {
    if (values.size() < 2) return 0.0;
    double sum = 0.5 * (values.front() + values.back());
    for (std::size_t i = 1; i + 1 < values.size(); ++i) sum += values[i];
    return sum * step;
}

}  // namespace capmfg
