#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capmfg/model.hpp"
#include "capmfg/numerics.hpp"

namespace capmfg {

/// Row-major (time x capacity) array.
class Field {
public:
    Field() = default;
    Field(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
    const std::vector<double>& data() const noexcept { return data_; }

    friend bool operator==(const Field&, const Field&) = default;

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

struct Grids {
    UniformGrid t;  ///< years
    UniformGrid x;  ///< MW, per producer
};

/// n_t time points on [0, T]; n_x capacity points on [0, inflation * x_max].
Grids make_grids(const ModelParams& params, const PriceFunction& pf, std::size_t n_t = 2001,
                 std::size_t n_x = 401, double inflation = 1.0);

/// How a producer's own capacity enters the price. `homogeneous_reduction`
/// prices at P((N+1) xbar), dropping the individual impact.
enum class PriceCoupling { individual, homogeneous_reduction };

// ---------------------------------------------------------------------------
// Initial density

struct InitialDensitySpec {
    enum class Kind { truncated_exponential, dirac, custom };
    Kind kind = Kind::truncated_exponential;
    int n_levels = 10;
    double x_end = 0.0;  ///< MW; 0 means X0
    double x0 = 0.0;     ///< MW, dirac location; 0 means X0 / (N + 1)
    std::vector<std::pair<double, double>> table;  ///< (capacity MW, mass)

    friend bool operator==(const InitialDensitySpec&, const InitialDensitySpec&) = default;
};

struct InitialDensity {
    std::vector<double> m;  ///< 1/MW on the capacity grid; dx * sum(m) = 1
    double mean = 0.0;      ///< MW
    double scale = 1.0;     ///< factor applied to the nominal levels
    std::string convention;
};

/// Mass is registered on the grid by linear two-node binning, which keeps
/// both mass and mean. Truncated-exponential levels are rescaled so the mean
/// per-producer capacity is X0 / (N + 1), i.e. total capacity X0.
InitialDensity build_initial_density(const ModelParams& params, const Grids& grids, const InitialDensitySpec& spec);

// ---------------------------------------------------------------------------
// Non-installation region

/// a_t (closed form) and b_t (backward trapezoid) with V = a x^2 + b x.
/// `sigma` lowers the decay rate of a to r + 2 delta - sigma^2.
struct NonInstallCoeffs {
    std::vector<double> a;  ///< $/MW^2
    std::vector<double> b;  ///< $/MW
};
NonInstallCoeffs noninstall_value_linear(const ModelParams& params, const LinearPrice& price,
                                         std::span<const double> xbar, const UniformGrid& t_grid,
                                         PriceCoupling coupling = PriceCoupling::individual, double sigma = 0.0);

struct ValueSlope {
    double value = 0.0;  ///< $
    double slope = 0.0;  ///< $/MW
};
/// V(t_n, x) and dV/dx(t_n, x) for P = p/x by trapezoid quadrature on t_grid.
ValueSlope noninstall_value_inverse(const ModelParams& params, const InversePrice& price, std::span<const double> xbar,
                                    const UniformGrid& t_grid, std::size_t n, double x);

/// x*(t) = max((alpha + beta N nubar - b) / (2 a), 0), and 0 at T. Under the
/// homogeneous reduction a vanishes and the threshold is all-or-nothing:
/// x_max while b > alpha + beta N nubar. Otherwise a vanishing a before T is
/// a degenerate-coefficient error.
std::vector<double> threshold_curve_linear(const ModelParams& params, std::span<const double> a,
                                           std::span<const double> b, std::span<const double> nubar, double x_max,
                                           PriceCoupling coupling = PriceCoupling::individual);

/// Bisection on [0, x_max] for dV/dx = alpha + beta N nubar with the inverse
/// non-installation slope as oracle.
std::vector<double> threshold_curve_inverse(const ModelParams& params, const InversePrice& price,
                                            std::span<const double> xbar, std::span<const double> nubar,
                                            const Grids& grids);

/// Last time at which `gap` (marginal value at x = 0 minus alpha + beta N nubar)
/// is positive, interpolated to its zero. 0 when it is never positive.
double stopping_time(const UniformGrid& t_grid, std::span<const double> gap);

// ---------------------------------------------------------------------------
// Installation region, quadratic ansatz V = A x^2 + B x + C

struct AnsatzCoefficients {
    std::vector<double> a, b;   ///< non-installation region
    std::vector<double> A, B, Cq;  ///< installation region; A = 0, B = b, C = 0 after t_star
    double lambda1 = 0.0, lambda2 = 0.0;  ///< 1/year
    double RA = 0.0;  ///< Riccati constant, infinite when the forcing vanishes
    double RB = 0.0;  ///< B at t_star
    double t_star = 0.0;
};

/// A from the Riccati closed form with A(t_star) = 0; B and C by backward RK4
/// from B(t_star) = b(t_star), C(t_star) = 0.
AnsatzCoefficients ansatz_install_coeffs(const ModelParams& params, const LinearPrice& price,
                                         std::span<const double> xbar, std::span<const double> nubar,
                                         const NonInstallCoeffs& noninstall, const UniformGrid& t_grid,
                                         double t_star, PriceCoupling coupling = PriceCoupling::individual,
                                         double sigma = 0.0);

/// Riccati solution A at time t for A(t_star) = 0 with decay rate `rate`.
double riccati_A(double beta, double rate, double forcing, double t_star, double t);

// ---------------------------------------------------------------------------
// Finite differences

struct ValueSurface {
    Field V;   ///< $
    Field Vx;  ///< $/MW
    int max_layer_iterations = 0;
    double max_layer_residual = 0.0;
};

/// Dirichlet data per time layer. An empty `left` column makes x = 0 an
/// unknown, closed by the PDE with a one-sided slope. An empty `right` column
/// does the same at x_max without installation there; it needs the upwind
/// scheme and sigma = 0, where the stencil only looks down the grid.
struct HjbBoundary {
    std::vector<double> left;
    std::vector<double> right;
};

/// Spatial differencing of the HJB. `central` uses (V_{j+1} - V_{j-1}) / 2dx
/// in both the drift and the control term; `upwind` takes the backward
/// difference for the depreciation drift and the forward difference for the
/// installation term, which makes each layer a monotone scheme.
enum class HjbScheme { central, upwind };

struct HjbOptions {
    HjbScheme scheme = HjbScheme::central;
    double layer_tol = 1e-9;  ///< relative to the layer scale
    int max_iterations = 500;
    PriceCoupling coupling = PriceCoupling::individual;

    friend bool operator==(const HjbOptions&, const HjbOptions&) = default;
};

/// Backward implicit layers, differenced per `options.scheme`. Each layer's
/// nonlinear system is solved by Newton on the tridiagonal Jacobian with
/// step halving, to the residual tolerance.
ValueSurface hjb_backward_fd(const ModelParams& params, const PriceFunction& pf, std::span<const double> xbar,
                             std::span<const double> nubar, const Grids& grids, const HjbBoundary& boundary,
                             const HjbOptions& options = {}, double sigma = 0.0);

/// Sup-norm of the discrete HJB residual over the unknowns of one layer.
/// `left_dirichlet` and `right_dirichlet` exclude the end nodes from the unknowns.
double hjb_layer_residual(const ModelParams& params, const PriceFunction& pf, double xbar, double nubar,
                          const Grids& grids, std::span<const double> next, std::span<const double> layer,
                          bool left_dirichlet = true, bool right_dirichlet = true, const HjbOptions& options = {},
                          double sigma = 0.0);

struct FpOptions {
    /// Split each time step into enough explicit sub-steps to satisfy the
    /// CFL bound instead of failing.
    bool substep = false;
    /// Lower bound on the per-step split. The outer solver raises it
    /// monotonically so that the discrete map does not switch schemes
    /// between iterates.
    int min_substeps = 1;
};

struct Density {
    Field m;                   ///< 1/MW
    std::vector<double> mass;  ///< dx * sum_j m_j per time
    int substeps = 1;          ///< largest per-step split used
};

/// Explicit upwind finite-volume transport of m0 under velocity
/// -delta x + nu(t, x), split per time step from an implicit step for the
/// sigma^2 x^2 m / 2 diffusion in flux form. Zero flux at both ends.
Density fp_forward(const ModelParams& params, const Field& nu_star, const Grids& grids, std::span<const double> m0,
                   const FpOptions& options = {}, double sigma = 0.0);

/// Time steps needed on [0, T] for the explicit advection to be stable.
std::size_t fp_required_steps(const ModelParams& params, const Field& nu_star, const Grids& grids,
                              double sigma = 0.0);

/// (int_A (Vx - alpha) m) / (2 beta + beta N int_A m) with A = {Vx > alpha + beta N nubar_in},
/// trapezoid on the nodes of A.
double mean_rate_update(const ModelParams& params, std::span<const double> vx, std::span<const double> m, double dx,
                        double nubar_in);

/// Root of nubar = int (Vx - alpha - beta N nubar)^+ m / (2 beta), the same
/// fixed-point condition with the installation set made self-consistent.
double mean_rate_local(const ModelParams& params, std::span<const double> vx, std::span<const double> m, double dx);

/// nu*(x) = (Vx - alpha - beta N nubar)^+ / (2 beta).
void optimal_rate_row(const ModelParams& params, std::span<const double> vx, double nubar, std::span<double> out);

// ---------------------------------------------------------------------------
// Equilibrium

enum class MfgMethod { ansatz, fd };
enum class RateUpdate { incoming, local };

/// Outer solver on g(nubar) = F(nubar) - nubar. `picard` is the damped (or
/// Anderson-mixed) fixed point. `newton_krylov` takes inexact Newton steps
/// with matrix-free GMRES on finite-difference Jacobian products. When the
/// line search fails it takes a damped Picard step, halving the damping up
/// to three times until the residual drops and otherwise keeping the best
/// trial. The fixed points and the stopping rule are the same.
enum class OuterSolver { picard, newton_krylov };

struct MfgOptions {
    MfgMethod method = MfgMethod::ansatz;
    PriceCoupling coupling = PriceCoupling::individual;
    InitialDensitySpec m0;
    std::size_t n_t = 2001;
    std::size_t n_x = 401;
    double x_inflation = 1.0;
    double outer_tol = 1e-6;
    int max_outer = 500;
    double damping = 0.5;
    int anderson_depth = 0;  ///< 0 disables Anderson mixing
    OuterSolver outer = OuterSolver::newton_krylov;
    int krylov_max = 60;      ///< GMRES iterations per Newton step
    double krylov_tol = 1e-2;  ///< GMRES relative residual per Newton step
    RateUpdate rate_update = RateUpdate::incoming;
    bool fp_substep = true;
    HjbOptions hjb;
    std::vector<double> initial_nubar;  ///< warm start on the t grid; empty means xbar0 (1 - t/T)
    /// fd with a linear price and no initial_nubar starts from the ansatz
    /// equilibrium on the same grids. The fixed points do not change; the
    /// fd map has a narrow basin when producers ride the threshold.
    bool ansatz_warm_start = true;

    friend bool operator==(const MfgOptions&, const MfgOptions&) = default;
};

struct MeanFieldEquilibrium {
    Grids grids;
    Field V, Vx;   ///< fd method; empty for ansatz
    Field m;
    Field nu_star;
    std::vector<double> mass;
    std::vector<double> xbar, nubar, x_star;
    std::vector<double> nubar_update;  ///< F(nubar) at the returned iterate
    AnsatzCoefficients coeffs;  ///< the ansatz stage, also used for fd boundaries
    InitialDensity m0;
    double t_star = 0.0;
    int iterations = 0;                   ///< outer steps
    int evaluations = 0;                  ///< F evaluations, Jacobian products included
    std::vector<double> residual_history;  ///< sup |F(nubar) - nubar| per outer step
    bool converged = false;
    int fp_substeps = 1;
    double sigma = 0.0;
    MfgMethod method = MfgMethod::ansatz;
};

/// Fixed point on nubar: xbar -> value stage -> FP -> nubar update.
/// Throws Error{convergence} after max_outer iterations; the message carries
/// the last residuals. solve_mfg_partial returns the last iterate instead.
MeanFieldEquilibrium solve_mfg(const ModelParams& params, const PriceFunction& pf, const MfgOptions& options = {});
MeanFieldEquilibrium solve_mfg_partial(const ModelParams& params, const PriceFunction& pf, const MfgOptions& options,
                                       double sigma);
/// Throws Error{convergence} with the last residuals unless eq.converged.
void require_converged(const MeanFieldEquilibrium& eq);

struct EquilibriumReport {
    int monotonicity_violations = 0;  ///< nu*(t, .) increasing steps beyond tolerance
    int concavity_violations = 0;     ///< V second differences above tolerance (fd only)
    double max_mass_drift = 0.0;
    double min_density = 0.0;
    double x_star_at_T = 0.0;
    bool x_star_zero_after_t_star = false;
    double pasting_gap = 0.0;  ///< |2A x* + B - (2a x* + b)| max over t < t_star, ansatz only
    std::vector<double> X_total;  ///< (N+1) xbar
    std::vector<double> K_total;  ///< (N+1) nubar
};

EquilibriumReport equilibrium_diagnostics(const MeanFieldEquilibrium& eq, const ModelParams& params,
                                          const PriceFunction& pf);

/// Mean capacity path from xbar' = -delta xbar + nubar by RK4 on the time grid
/// (nubar linear between nodes).
std::vector<double> mean_capacity_path(const ModelParams& params, const UniformGrid& t_grid,
                                       std::span<const double> nubar, double xbar0);

}  // namespace capmfg
