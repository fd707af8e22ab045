#pragma once

#include "capmfg/mfg.hpp"

// Multiplicative capacity noise dx = (-delta x + nu) dt + sigma x dW, treated
// at the PDE level only. Every entry point reads sigma from ModelParams and
// forwards to the deterministic machinery, so sigma = 0 runs the same code.

namespace capmfg {

/// Throws Error{validation} unless 0 <= sigma and sigma^2 < r + 2 delta.
void check_sigma(const ModelParams& params);

ValueSurface hjb_backward_fd_sigma(const ModelParams& params, const PriceFunction& pf, std::span<const double> xbar,
                                   std::span<const double> nubar, const Grids& grids, const HjbBoundary& boundary,
                                   const HjbOptions& options = {});

/// Explicit advection, implicit diffusion; fails with Error{stability} naming
/// the required n_t unless `options.substep` is set.
Density fp_forward_sigma(const ModelParams& params, const Field& nu_star, const Grids& grids,
                         std::span<const double> m0, const FpOptions& options = {});

/// a and A decay at r + 2 delta - sigma^2; b, B, C keep their form.
AnsatzCoefficients ansatz_coeffs_sigma(const ModelParams& params, const LinearPrice& price,
                                       std::span<const double> xbar, std::span<const double> nubar,
                                       const UniformGrid& t_grid, double t_star);

/// solve_mfg with the sigma variants; throws Error{convergence} like solve_mfg.
MeanFieldEquilibrium solve_mfg_stochastic(const ModelParams& params, const PriceFunction& pf,
                                          const MfgOptions& options = {});

}  // namespace capmfg
