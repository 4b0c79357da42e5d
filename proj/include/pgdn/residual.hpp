#pragma once

#include <string>
#include <vector>

#include "pgdn/transport.hpp"

namespace pgdn::residual {

using eikonal::ModelSpec;
using eikonal::PhaseJet;
using eikonal::model_error;
using symring::JetSeries;
using symring::SymExpr;
using transport::AmplitudeJet;

/// Truncated symbol composition
///   sum_{0 <= |alpha| <= M} ((-ih)^{|alpha|} / |alpha|!)
///     d_eta^alpha a * d_y^alpha b.
struct CompositionExpansion {
  JetSeries result;
  int M = 0;
};

/// Exact truncated composition of two symbol jets; the eta_1 derivative
/// acts through the rho chain rule.
CompositionExpansion compose_EM(const JetSeries& a, const JetSeries& b, int M);
CompositionExpansion compose_EM(const SymExpr& a, const JetSeries& b, int M);

/// Conjugated operator jet
///   ((d_t phi)^2 + d_y1 phi - rho^2 - ih d_t^2 phi) a - 2ih d_t phi d_t a
///     - ih d_y1 a - h^2 d_t^2 a + e^{-i phi/h} E_M(m, e^{i phi/h} a),
/// with the last term expanded through the phase derivative table so no
/// exponential remains; reported on the window t-order < M, h-order < M + 2.
/// M must be the truncation order the jets were solved at.
JetSeries assemble_AM(const ModelSpec& model, const PhaseJet& phase,
                      const AmplitudeJet& amps, int M);

/// The same window assembled from the eikonal residual and the transport
/// residual rows; equality with assemble_AM cross-checks the row-by-row
/// regrouping against the composition definition.
JetSeries assemble_AM_regrouped(const ModelSpec& model, const PhaseJet& phase,
                                const AmplitudeJet& amps, int M);

/// Nonzero coefficients found outside the ideal (t^M, h^{M+2}).
struct ResidualReport {
  std::string model_id;
  int max_t_order = 0;
  int max_h_order = 0;
  std::vector<std::string> forbidden;

  bool pass() const { return forbidden.empty(); }
};

/// Checks that every nonzero coefficient of AM has t-order >= M or
/// h-order >= M + 2.
ResidualReport verify_AM_structure(const JetSeries& AM, int M);

}  // namespace pgdn::residual
