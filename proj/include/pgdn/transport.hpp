#pragma once

/// Transport layer: the G-table of exponential-derivative polynomials,
/// the E-table rows feeding each transport equation, and the amplitude
/// jet a_{k,j}.
///
/// Conventions.  d_y^beta e^{i phi/h} = e^{i phi/h} i^{|beta|} |beta|! *
/// sum_k h^{-k} G_k^{(beta)}(phi), with
///   G_k^{(beta+e_i)} = (d_{y_i} phi * G_{k-1}^{(beta)}
///                       - i d_{y_i} G_k^{(beta)}) / (|beta| + 1),
/// G_0^{(0)} = 1.  The row E_j collects the h^{j+1} coefficient of
/// e^{-i phi/h} E(m, e^{i phi/h} a) minus the g-diagonal part, via
///   a_nu^{(alpha)} = sum_{nu'=max(0,nu-|alpha|)}^{nu-1}
///                    sum_{beta <= alpha, |beta| <= nu-nu'}
///       c_{alpha,beta} G_{|alpha|-nu+nu'}^{(alpha-beta)} d_y^beta a_{nu'},
///   c_{alpha,beta} = binom(alpha,beta) (-i)^{|beta|} |alpha-beta|!/|alpha|!.

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "pgdn/eikonal.hpp"
#include "pgdn/symring.hpp"

namespace pgdn::transport {

using eikonal::GradingReport;
using eikonal::ModelSpec;
using eikonal::PhaseJet;
using eikonal::model_error;
using symring::CRat;
using symring::JetSeries;
using symring::MultiIndex;
using symring::SymExpr;

/// G_k^{(beta)} entries as t-series mod t^{t_trunc}, for |beta| <= beta_max
/// and 0 <= k <= |beta|.
struct GTable {
  int d = 2;
  int beta_max = 0;
  int t_trunc = 0;
  std::map<std::pair<int, MultiIndex>, JetSeries> entries;

  /// G_k^{(beta)}; the zero series for k outside [0, |beta|].
  const JetSeries& at(int k, const MultiIndex& beta) const;
};

GTable build_G(const PhaseJet& phase, int beta_max, int t_trunc);

/// Multi-indices alpha, |alpha| <= max_order, with d_eta^alpha m not
/// identically zero.  Zero is upward closed, so the returned set is a
/// lower set; its maximal order bounds the G-table any composition with
/// m can touch (rho-free tables die after deg_eta many derivatives).
std::vector<MultiIndex> eta_support(const JetSeries& m, int max_order);

/// Row j of the E-table: entries[k] = E_{k,j}, present for every k whose
/// value is determined by the amplitudes supplied at build time.
struct ETable {
  int j = 0;
  int known_t = 0;
  JetSeries series = JetSeries::zero(2, 0, 0);

  /// E_{k,j}; throws model_error when k >= known_t (the entry would need
  /// amplitude data that was not available).
  SymExpr at(int k) const;
};

/// Amplitude jet a_{k,j} for 0 <= k, j <= M over a solved phase.
struct AmplitudeJet {
  PhaseJet phase;
  std::map<std::pair<int, int>, SymExpr> amps;

  SymExpr a(int k, int j) const;
  /// Row sum_k t^k a_{k,j}, exact in t up to order M.
  JetSeries a_row(int j) const;
  /// Full a = sum_{k,j<=M} t^k h^j a_{k,j}.
  JetSeries a_series() const;
};

/// E-table row j from amplitude rows 0..j (row j may be partial: pass via
/// partial_amps only the entries already known).
ETable build_E_table(const ModelSpec& model, const PhaseJet& phase,
                     const AmplitudeJet& partial_amps, int j, int M);

AmplitudeJet solve_transport(const ModelSpec& model, const PhaseJet& phase);

/// Left-hand side of transport equation j as a t-series mod t^M;
/// identically zero for a correctly solved jet.
JetSeries transport_residual(const ModelSpec& model, const PhaseJet& phase,
                             const AmplitudeJet& amps, int j);

/// All rows at once against one shared derivative table; entry j equals
/// transport_residual(model, phase, amps, j).
std::vector<JetSeries> transport_residuals(const ModelSpec& model,
                                           const PhaseJet& phase,
                                           const AmplitudeJet& amps);

/// a_{k,j} = O(|rho|^{-2k-3j}) monomial-wise: rho_valuation(a_{k,j})
/// >= -2k - 3j for all stored entries.
GradingReport check_amp_grading(const AmplitudeJet& amps);

struct AmpResponse {
  bool pass = true;
  std::vector<std::string> failures;
};

/// Perturbs m_{k+j,0} by delta (k >= 1, k+j >= 1), re-solves, and checks
///   delta a_{k,j} = -((k+j)!/k!) delta / (-2 i rho)^{j+2}
/// together with zero response at all lower total orders.
AmpResponse check_amp_structure(const ModelSpec& model, int k, int j,
                                const SymExpr& delta);

struct AmpScalingEntry {
  int k = 0, j = 0;
  double fitted_exponent = 0.0;
  double c_min = 0.0, c_max = 0.0;
  bool pass = true;
};

struct AmpScalingReport {
  bool pass = true;
  std::vector<AmpScalingEntry> entries;
};

/// Log-log fit of max_y |a_{k,j}(y, rho(0; mu))| against mu over a
/// geometric mu-grid; passes when the fitted exponent is >= -(k + 3j/2)
/// - slack and the scaled constant stays within a bounded band.
AmpScalingReport check_amp_scaling_numeric(const AmplitudeJet& amps,
                                           int n_mu, std::uint64_t seed);

}  // namespace pgdn::transport
