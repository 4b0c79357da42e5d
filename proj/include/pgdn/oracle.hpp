#pragma once
/// Ground-truth solvers for the model problem: a banded high-order
/// finite-difference solver for the per-frequency boundary value problem
/// on (0, T), a closed-form complex-Airy oracle for the linear potential
/// m = c t, a 2-d solver coupling y-modes through the quantized
/// potential, and randomized operator-norm estimation.
///
/// Conventions: the model ODE is -h^2 u'' + (eta1 - i mu + m(t)) u = 0
/// with u(0) given and the artificial Dirichlet closure u(T) = 0; DN
/// values are D_t u at t = 0, computed as -i h u'(0).

#include <complex>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgdn/eikonal.hpp"
#include "pgdn/quantize.hpp"

namespace pgdn::oracle {

/// Error from oracle solvers: invalid problems, singular or
/// under-resolved discretizations, failed iterations.
class oracle_error : public std::runtime_error {
 public:
  explicit oracle_error(const std::string& what) : std::runtime_error(what) {}
};

/// Airy function value and derivative at one complex point.
struct AiryValue {
  std::complex<double> ai;
  std::complex<double> aip;
};

/// Evaluates Ai(z) and Ai'(z) for complex z.  Uses an extended-precision
/// Maclaurin series for |z| <= 9, the large-argument expansion for
/// |arg z| <= 2pi/3 beyond, and the rotation identity
/// Ai(z) = -w Ai(w z) - conj(w) Ai(conj(w) z) with w = e^{2 pi i / 3}
/// in the remaining sector, where both rotated arguments fall in the
/// expansion's validity sector.
AiryValue airy_ai(std::complex<double> z);

/// DN value for the potential m = c t: -i h w'(0)/w(0) where
/// w(t) = Ai(s (eta1 - i mu + c t)), s is the cube root of (h c)^{-2}
/// that makes w decay as t -> +infinity: real positive for c > 0,
/// rotated by e^{2 pi i sign(mu) / 3} for c < 0.
std::complex<double> airy_dn(double eta1, double mu, double c, double h);

/// Model potential along one frequency: t -> m(t, eta) at fixed eta.
using Profile = std::function<std::complex<double>(double)>;

/// Fornberg finite-difference weights for derivatives 0..m at x0 from
/// the given nodes; W[j * (m + 1) + d] multiplies f(x[j]) in the
/// approximation of the d-th derivative.
std::vector<double> fd_weights(double x0, const std::vector<double>& x,
                               int m);

/// Grid on [0, T] clustered near t = 0: uniform spacing h/(fine_per_h *
/// refine) out to min(T, 35 h / im_rho), then geometrically growing
/// steps (ratio 1.05^{1/refine}) up to T.
std::vector<double> stretched_t_grid(double h, double im_rho, double T = 1.0,
                                     int refine = 1,
                                     double fine_per_h = 100.0);

/// One frequency of the model problem together with its t-grid.
struct ModeODEProblem {
  double eta1 = 0.0;
  double mu = 0.25;
  double h = 0.1;
  Profile m_profile;
  std::vector<double> t_grid;

  /// Builds the problem with a stretched grid sized from Im rho(eta1; mu).
  /// refine = 2 halves every step (grid-convergence checks); T extends
  /// the artificial domain.
  static ModeODEProblem create(double eta1, double mu, double h,
                               Profile m_profile, double T = 1.0,
                               int refine = 1);

  std::size_t n_points() const { return t_grid.size(); }

  /// Throws oracle_error on mu = 0, bad h, missing profile, a grid that
  /// violates the first-step rule, or m(0) far from 0.
  void validate() const;
};

/// Discrete solution of one mode problem.
struct ModeSolution {
  std::vector<double> t;
  std::vector<std::complex<double>> u;
  std::complex<double> dn_value;
};

/// Solves the mode ODE with u(0) = boundary_value, u(T) = 0 by 7-node
/// interior stencils and a banded LU factorization; dn_value is
/// -i h u'(0) from a one-sided high-order stencil.
ModeSolution solve_mode_ode(const ModeODEProblem& p,
                            std::complex<double> boundary_value);

/// Sampled model symbol m(t, y, eta) for the 2-d solver.
using SampledSymbol =
    std::function<std::complex<double>(double t, double y, double eta)>;

/// Wraps a d = 2 model table as a sampled symbol: sums t^k h^j m_{k,j}
/// evaluated at (y, eta).
SampledSymbol sampled_symbol(const eikonal::ModelSpec& model, double h);

/// Result of the 2-d boundary value solve.
struct BVPSolution {
  quantize::GridFn dn;
  int iterations = 0;
  bool converged = false;
};

/// Solves -h^2 u_tt + (D_{y1} - i mu + Op(m(t))) u = 0 on the torus grid
/// with u(0, .) = f and u(T, .) = 0.  The y-averaged part of m is folded
/// into decoupled banded mode solves; the remainder is applied per
/// t-layer through op_apply and resolved by fixed-point iteration.
/// Returns D_t u at t = 0 on the y-grid.  t_points, when positive,
/// requests at least that many t-nodes.
BVPSolution solve_bvp_2d(const SampledSymbol& m,
                         const quantize::TorusGrid& grid,
                         const quantize::GridFn& f, double mu, double h,
                         int t_points = 0, double T = 1.0);

/// Model-table entry point for the same solve.
BVPSolution solve_bvp_2d(const eikonal::ModelSpec& model,
                         const quantize::TorusGrid& grid,
                         const quantize::GridFn& f, double h,
                         int t_points = 0, double T = 1.0);

/// Linear map on grid functions.
using OpApply = std::function<quantize::GridFn(const quantize::GridFn&)>;

/// Operator-norm estimate from power iteration.
struct NormEstimate {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Largest singular value of the map via seeded power iteration on the
/// normal operator adjoint(apply(.)); apply_adjoint must implement the
/// adjoint with respect to the grid inner product.
NormEstimate op_norm_estimate(const OpApply& apply,
                              const OpApply& apply_adjoint,
                              const quantize::TorusGrid& grid, int iters,
                              unsigned seed);

/// One sweep data point: measured error against the reference decay rate
/// h^{s+1} |mu|^{-(3s+2-k)/2}.
struct DNMeasurement {
  double h = 0.0;
  double mu = 0.0;
  int s = 0;
  int k = 0;
  double error_norm = 0.0;
  double bound_value = 0.0;

  /// Validates ranges and fills bound_value from (h, mu, s, k).
  static DNMeasurement create(double h, double mu, int s, int k,
                              double error_norm);
};

}  // namespace pgdn::oracle
