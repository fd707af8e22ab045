#include "capmfg/stochastic.hpp"

#include "capmfg/error.hpp"

namespace capmfg {

void check_sigma(const ModelParams& p) {
    if (!(p.sigma >= 0) || (p.sigma > 0 && p.sigma * p.sigma >= p.r + 2 * p.delta)) {
        fail(ErrorKind::validation, "sigma must satisfy 0 <= sigma^2 < r + 2 delta");
    }
}

ValueSurface hjb_backward_fd_sigma(const ModelParams& p, const PriceFunction& pf, std::span<const double> xbar,
                                   std::span<const double> nubar, const Grids& g, const HjbBoundary& bc,
                                   const HjbOptions& options) {
    check_sigma(p);
    return hjb_backward_fd(p, pf, xbar, nubar, g, bc, options, p.sigma);
}

Density fp_forward_sigma(const ModelParams& p, const Field& nu_star, const Grids& g, std::span<const double> m0,
                         const FpOptions& options) {
    check_sigma(p);
    return fp_forward(p, nu_star, g, m0, options, p.sigma);
}

AnsatzCoefficients ansatz_coeffs_sigma(const ModelParams& p, const LinearPrice& price, std::span<const double> xbar,
                                       std::span<const double> nubar, const UniformGrid& t_grid, double t_star) {
    check_sigma(p);
    const NonInstallCoeffs ni = noninstall_value_linear(p, price, xbar, t_grid, PriceCoupling::individual, p.sigma);
    return ansatz_install_coeffs(p, price, xbar, nubar, ni, t_grid, t_star, PriceCoupling::individual, p.sigma);
}

MeanFieldEquilibrium solve_mfg_stochastic(const ModelParams& p, const PriceFunction& pf, const MfgOptions& options) {
    check_sigma(p);
    MeanFieldEquilibrium eq = solve_mfg_partial(p, pf, options, p.sigma);
    require_converged(eq);
    return eq;
}

}  // namespace capmfg
