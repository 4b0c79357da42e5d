#pragma once

/// Numeric quantization on a periodic model domain.
///
/// Grid functions live on the torus [0, 2pi)^dims with nodes
/// y_j = 2 pi j / n_modes per axis and integer frequencies
/// k in [-n_modes/2, n_modes/2).  The quantization is
///   (Op f)(y) = sum_k e^{i<y,k>} symbol(y, h k) fhat(k),
/// with fhat the discrete Fourier coefficients of f, so a symbol
/// that does not depend on y is an exact Fourier multiplier.
///
/// All cutoffs are built from one fixed bump: with g(x) = exp(-1/x)
/// for x > 0 and 0 otherwise,
///   bump(sigma) = g(2-|sigma|) / (g(2-|sigma|) + g(|sigma|-1)),
/// which is smooth, equals 1 on [-1,1], and vanishes outside [-2,2].

#include <complex>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pgdn/eikonal.hpp"
#include "pgdn/symring.hpp"
#include "pgdn/transport.hpp"

namespace pgdn::quantize {

using eikonal::PhaseJet;
using transport::AmplitudeJet;

class quantize_error : public std::runtime_error {
 public:
  explicit quantize_error(const std::string& what)
      : std::runtime_error(what) {}
};

/// Uniform periodic grid, n_modes (a power of two) nodes per axis.
/// The frequency window must cover the eta-cutoff support |eta1| <= 2
/// with a factor-two margin: h * (n_modes / 2) >= 4.  That margin is
/// the aliasing guard for every cutoff-based symbol in this module.
struct TorusGrid {
  int dims = 1;
  int n_modes = 256;
  double h = 0.25;

  /// Validates and returns the grid; throws quantize_error on dims < 1,
  /// n_modes not a power of two, h <= 0, or h * (n_modes / 2) < 4.
  static TorusGrid create(int dims, int n_modes, double h);
  void validate() const;

  /// Total number of nodes (= number of modes), n_modes^dims.
  std::size_t size() const;
  /// Node coordinates y in [0, 2pi)^dims at a row-major linear index.
  std::vector<double> node(std::size_t idx) const;
  /// Signed integer frequency vector at a row-major linear index.
  std::vector<int> freq(std::size_t idx) const;
  /// Scaled frequency eta = h * freq(idx).
  std::vector<double> eta(std::size_t idx) const;
};

/// Complex grid function (values at nodes) or mode table (values at
/// frequencies), stored row-major in the grid's linear index order.
using GridFn = std::vector<std::complex<double>>;

/// Symbol sampled pointwise at a node y and a scaled frequency eta.
using SymbolFn = std::function<std::complex<double>(
    const std::vector<double>& y, const std::vector<double>& eta)>;

/// Discrete Fourier coefficients fhat(k), normalized so that
/// f(y) = sum_k fhat(k) e^{i<y,k>}; result indexed like freq().
GridFn fft_forward(const TorusGrid& grid, const GridFn& f);
/// Synthesis sum_k fhat(k) e^{i<y,k>} back to node values.
GridFn fft_backward(const TorusGrid& grid, const GridFn& fhat);

/// (Op f)(y) = sum_k e^{i<y,k>} symbol(y, h k) fhat(k); symbol == 1 is
/// the identity to machine precision.
GridFn op_apply(const TorusGrid& grid, const SymbolFn& symbol,
                const GridFn& f);
/// Fourier-multiplier fast path: mode_values holds symbol(h k) at the
/// grid frequencies; exact pointwise product in frequency.
GridFn op_apply_freq(const TorusGrid& grid, const GridFn& mode_values,
                     const GridFn& f);

/// Cutoff parameters: eps in (0, 2/3) scales the h^eps normal-window,
/// delta > 0 scales the |rho|^2 window.  The bump itself is fixed.
struct CutoffSpec {
  double eps = 0.1;
  double delta = 0.5;

  /// Validates and returns the spec; throws quantize_error on
  /// eps outside (0, 2/3) or delta <= 0.
  static CutoffSpec create(double eps, double delta);

  /// The fixed bump: 1 on [-1,1], 0 outside [-2,2], values in [0,1].
  static double bump(double sigma);
  /// First derivative of the bump (identically 0 off (1, 2) in |sigma|).
  static double bump_d1(double sigma);
  /// Second derivative of the bump.
  static double bump_d2(double sigma);
};

/// Phi_{eps,delta}(t) = bump(t / h^eps) * bump(t / (delta |rho|^2)),
/// with |rho|^2 = sqrt(eta1^2 + mu^2); equals 1 for
/// t <= min(h^eps, delta |rho|^2).  Requires h > 0 and mu != 0.
double cutoff_Phi(double t, double eta1, double h, double mu,
                  const CutoffSpec& spec);

/// Symbol of the parametrix at normal coordinate t:
///   e^{i phi(t,y,eta)/h} * Phi_{eps,delta}(t, eta1) * bump(eta1)
///     * sum_{k,j} t^k h^j a_{k,j}(y, eta),
/// all factors evaluated numerically from the jets.
SymbolFn parametrix_symbol(const PhaseJet& phase, const AmplitudeJet& amps,
                           const CutoffSpec& spec, double t, double h);

/// Parametrix field u~(t, .) applied to boundary data f via op_apply.
/// At t = 0 this reproduces bump(D_{y1}) f.  Uses the multiplier fast
/// path whenever every jet coefficient is y-independent.
GridFn evaluate_parametrix(const PhaseJet& phase, const AmplitudeJet& amps,
                           const CutoffSpec& spec, const TorusGrid& grid,
                           const GridFn& f, double t);

/// Frequency field of the truncated boundary symbol
///   bump(eta1) * (rho^{k+1} - i sum_{j=0}^{s-1} h^{j+1} rho^k a_{1,j}),
/// the analytic D_t of the parametrix at t = 0 weighted by rho^k.
struct DNSymbol {
  TorusGrid grid;
  int s = 0;
  int k = 0;
  GridFn field;
};

/// Samples the order-(s, k) boundary symbol at the grid frequencies.
/// Requires k <= 3 s + 2, amplitude rows solved to depth s - 1 <= M,
/// and y-independent a_{1,j}; throws quantize_error otherwise.
DNSymbol dn_symbol(const PhaseJet& phase, const AmplitudeJet& amps, int s,
                   int k, const TorusGrid& grid);

/// Debug dump: one text header line "pgdn-grid dims n_modes h" followed
/// by the raw row-major (re, im) doubles.
void write_grid_fn(std::ostream& out, const TorusGrid& grid,
                   const GridFn& f);
/// Reads a dump written by write_grid_fn; validates the grid header.
std::pair<TorusGrid, GridFn> read_grid_fn(std::istream& in);

}  // namespace pgdn::quantize
