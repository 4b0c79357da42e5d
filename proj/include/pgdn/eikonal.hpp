#pragma once

/// Eikonal layer: model data and the phase jet phi = sum_{k=1}^M t^k phi_k.
///
/// The recursion solves, for each K, the K-th t-coefficient of
///   (d_t phi)^2 + d_{y1} phi - rho^2 + g_M(m_0, phi) = O(t^M),
/// an exact division by 2(K+1) rho in the Laurent ring.  g_M is read off
/// the transport module's G-table so that both equations share one code
/// path for the exponential-derivative combinatorics.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pgdn/symring.hpp"

namespace pgdn::eikonal {

using symring::CRat;
using symring::JetSeries;
using symring::SymExpr;

class model_error : public std::runtime_error {
 public:
  explicit model_error(const std::string& what) : std::runtime_error(what) {}
};

/// Model data: dimension, exact rational mu != 0, truncation order M, and
/// the finitely supported coefficient table m_{k,j}.
struct ModelSpec {
  int d = 2;
  mpq_class mu = 1;
  int M = 2;
  std::map<std::pair<int, int>, SymExpr> m_table;
  std::string id;

  /// Validates and returns the model; throws model_error on
  /// m_{0,0} != 0, mu = 0, M < 2, or entries with rho_degree > 0.
  static ModelSpec create(int d, mpq_class mu, int M,
                          std::map<std::pair<int, int>, SymExpr> m_table,
                          std::string id = "");

  /// m_{k,j}; the zero expression for absent entries.
  SymExpr m(int k, int j) const;
  /// m_j = sum_k t^k m_{k,j} as an exact polynomial series.
  JetSeries m_row(int j) const;
  /// Full m = sum_{k,j} t^k h^j m_{k,j}.
  JetSeries m_series() const;
  /// Largest j with a nonzero m_{k,j}; -1 when m = 0.
  int max_h_order() const;

  void validate() const;
};

/// Solved phase jet; phis[k-1] holds phi_k for k = 1..M.
struct PhaseJet {
  ModelSpec model;
  std::vector<SymExpr> phis;

  SymExpr phi(int k) const;
  /// sum_{k=1}^{limit} t^k phi_k (limit defaults to M).
  JetSeries phi_series(int limit = -1) const;
};

struct GradingViolation {
  int k;
  std::string what;
};

struct GradingReport {
  bool pass = true;
  std::vector<GradingViolation> violations;
};

struct ImPhaseSample {
  double t, eta1, mu;
  std::vector<double> y;
  double im_phi, threshold;
};

struct ImPhaseReport {
  bool pass = true;
  long n_samples = 0;
  long n_violations = 0;
  std::optional<ImPhaseSample> first_violation;
};

PhaseJet solve_eikonal(const ModelSpec& model);

/// Left-hand side of the eikonal equation as a t-series mod t^M
/// (h-order 0); identically zero for a correctly solved jet.
JetSeries eikonal_residual(const PhaseJet& phase);

/// phi_k = O(|rho|^{3-2k}) monomial-wise: rho_valuation(d_y^alpha phi_k)
/// >= 3 - 2k for all k and |alpha| <= 3.
GradingReport check_phase_grading(const PhaseJet& phase);

/// Samples Im phi >= t Im rho / 2 over 0 < t <= 2 delta |rho|^2 with
/// y in [-1,1]^{d-1}, eta1 in [-1/2,1/2], mu log-uniform in [0.05,1].
ImPhaseReport check_im_phase(const PhaseJet& phase, double delta,
                             int n_samples, std::uint64_t seed);

/// Largest delta from a fixed ladder for which check_im_phase passes.
double largest_passing_delta(const PhaseJet& phase, int n_samples,
                             std::uint64_t seed);

/// New model with m_{k,0} += delta_m; k = 0 is rejected.
ModelSpec perturb_m_k0(const ModelSpec& model, int k, const SymExpr& delta_m);

}  // namespace pgdn::eikonal
