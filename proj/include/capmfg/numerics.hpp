#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "capmfg/error.hpp"

namespace capmfg {

/// Uniform grid with `points` nodes on [lo, hi].
class UniformGrid {
public:
    UniformGrid() = default;
    UniformGrid(double lo, double hi, std::size_t points);

    std::size_t size() const noexcept { return points_; }
    std::size_t intervals() const noexcept { return points_ - 1; }
    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }
    double step() const noexcept { return step_; }
    double operator[](std::size_t i) const noexcept {
        return i + 1 == points_ ? hi_ : lo_ + static_cast<double>(i) * step_;
    }
    std::vector<double> nodes() const;

    /// Index of the cell containing s (clamped) and the fractional offset in it.
    std::pair<std::size_t, double> locate(double s) const;

    friend bool operator==(const UniformGrid&, const UniformGrid&) = default;

private:
    double lo_ = 0.0;
    double hi_ = 0.0;
    std::size_t points_ = 0;
    double step_ = 0.0;
};

/// Piecewise-linear interpolation of nodal values on a uniform grid.
double interpolate(const UniformGrid& grid, std::span<const double> values, double s);

/// Composite trapezoid rule of nodal values over the whole grid.
double trapezoid(std::span<const double> values, double step);

/// Classical fourth-order Runge-Kutta step for a fixed-size state.
/// `rhs(t, y, dydt)` fills the derivative.
template <typename Scalar, std::size_t Dim, typename Rhs>
void rk4_step(Rhs&& rhs, Scalar t, std::array<Scalar, Dim>& y, Scalar dt) {
    using State = std::array<Scalar, Dim>;
    State k1, k2, k3, k4, tmp;
    const Scalar half = dt / 2;
    rhs(t, y, k1);
    for (std::size_t i = 0; i < Dim; ++i) tmp[i] = y[i] + half * k1[i];
    rhs(t + half, tmp, k2);
    for (std::size_t i = 0; i < Dim; ++i) tmp[i] = y[i] + half * k2[i];
    rhs(t + half, tmp, k3);
    for (std::size_t i = 0; i < Dim; ++i) tmp[i] = y[i] + dt * k3[i];
    rhs(t + dt, tmp, k4);
    for (std::size_t i = 0; i < Dim; ++i)
        y[i] += dt / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
}

/// Scalar RK4 step, y' = f(t, y).
template <typename F>
double rk4_step_scalar(F&& f, double t, double y, double dt) {
    const double k1 = f(t, y);
    const double k2 = f(t + dt / 2, y + dt / 2 * k1);
    const double k3 = f(t + dt / 2, y + dt / 2 * k2);
    const double k4 = f(t + dt, y + dt * k3);
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
}

struct BisectionResult {
    double root = 0.0;
    double residual = 0.0;
    int iterations = 0;
};

/// Bisection for a sign change of f on [lo, hi]. Stops when the bracket
/// stops shrinking in floating point or |f| <= ftol.
template <typename F>
BisectionResult bisect(F&& f, double lo, double hi, double ftol = 0.0, int max_iter = 200) {
    double flo = f(lo);
    double fhi = f(hi);
    if (flo == 0.0) return {lo, 0.0, 0};
    if (fhi == 0.0) return {hi, 0.0, 0};
    if ((flo > 0) == (fhi > 0)) {
        fail(ErrorKind::bracketing, "bisection: no sign change on [" + std::to_string(lo) + ", " +
                                        std::to_string(hi) + "]");
    }
    BisectionResult out;
    for (int it = 1; it <= max_iter; ++it) {
        const double mid = lo + (hi - lo) / 2;
        const double fm = f(mid);
        out = {mid, fm, it};
        if (std::abs(fm) <= ftol || mid == lo || mid == hi) return out;
        if ((fm > 0) == (flo > 0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return out;
}

}  // namespace capmfg
