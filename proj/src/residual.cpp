#include "pgdn/residual.hpp"

#include <algorithm>
#include <utility>

namespace pgdn::residual {

using symring::CRat;
using symring::MultiIndex;
using symring::factorial;
using symring::mi_binom;
using symring::mi_leq;
using symring::mi_order;
using symring::mi_sub;
using symring::multi_indices_up_to;
using transport::GTable;

namespace {

JetSeries diff_y_multi(const JetSeries& w, const MultiIndex& beta) {
  JetSeries r = w;
  for (int axis = 1; axis <= static_cast<int>(beta.size()); ++axis)
    for (int rep = 0; rep < beta[axis - 1]; ++rep) r = r.diff_y(axis);
  return r;
}

JetSeries diff_eta_multi(const JetSeries& w, const MultiIndex& alpha) {
  JetSeries r = w;
  for (int axis = 1; axis <= static_cast<int>(alpha.size()); ++axis)
    for (int rep = 0; rep < alpha[axis - 1]; ++rep) r = r.diff_eta(axis);
  return r;
}

/// e^{-i phi/h} E_M(m, e^{i phi/h} a) expanded through the derivative table:
/// the alpha term contributes
///   binom(alpha, beta) (-i)^{|beta|} (|alpha - beta|! / |alpha|!)
///     h^{|alpha| - k} d_eta^alpha m G_k^{(alpha - beta)} d_y^beta a
/// over beta <= alpha and 0 <= k <= |alpha - beta|.
JetSeries conjugated_composition(const ModelSpec& model, const PhaseJet& phase,
                                 const JetSeries& a, int M, int T, int H) {
  const int d = model.d;
  JetSeries m = model.m_series().truncated(T + 2, H);
  int alpha_max = 0;
  for (const auto& alpha : transport::eta_support(m, M))
    alpha_max = std::max(alpha_max, mi_order(alpha));
  JetSeries r = m * a;
  if (alpha_max < 1) return r;
  GTable G = transport::build_G(phase, alpha_max, T + 2);
  for (const auto& alpha : multi_indices_up_to(d - 1, alpha_max)) {
    const int n = mi_order(alpha);
    if (n == 0) continue;
    JetSeries dm = diff_eta_multi(m, alpha);
    if (dm.is_zero()) continue;
    for (const auto& beta : multi_indices_up_to(d - 1, n)) {
      if (!mi_leq(beta, alpha)) continue;
      const int nb = mi_order(beta);
      JetSeries db = diff_y_multi(a, beta);
      if (db.is_zero()) continue;
      mpq_class q(mi_binom(alpha, beta) * factorial(n - nb), factorial(n));
      q.canonicalize();
      const CRat c = CRat(q) * CRat(0, -1).pow(nb);
      const MultiIndex gamma = mi_sub(alpha, beta);
      for (int k = 0; k <= n - nb; ++k) {
        const JetSeries& g = G.at(k, gamma);
        if (g.is_zero()) continue;
        r += ((dm * g) * db).scaled(c).shifted(0, n - k);
      }
    }
  }
  return r;
}

}  // namespace

CompositionExpansion compose_EM(const JetSeries& a, const JetSeries& b,
                                int M) {
  if (a.dim() != b.dim()) throw model_error("composition dimension mismatch");
  if (M < 1) throw model_error("composition order must be at least 1");
  const int d = a.dim();
  JetSeries r = a * b;
  for (const auto& alpha : multi_indices_up_to(d - 1, M)) {
    const int n = mi_order(alpha);
    if (n == 0) continue;
    JetSeries da = diff_eta_multi(a, alpha);
    if (da.is_zero()) continue;
    JetSeries db = diff_y_multi(b, alpha);
    if (db.is_zero()) continue;
    mpq_class q(1, factorial(n));
    q.canonicalize();
    const CRat c = CRat(q) * CRat(0, -1).pow(n);
    r += (da * db).scaled(c).shifted(0, n);
  }
  CompositionExpansion out;
  out.result = std::move(r);
  out.M = M;
  return out;
}

CompositionExpansion compose_EM(const SymExpr& a, const JetSeries& b, int M) {
  return compose_EM(JetSeries::from_sym(a), b, M);
}

JetSeries assemble_AM(const ModelSpec& model, const PhaseJet& phase,
                      const AmplitudeJet& amps, int M) {
  model.validate();
  if (M != model.M)
    throw model_error("assembly order must match the solved jets");
  const int d = model.d;
  const int T = M, H = M + 2;
  JetSeries ph = phase.phi_series().truncated(T + 2, JetSeries::kExactOrder);
  JetSeries a = amps.a_series().truncated(T + 2, H);
  JetSeries dph = ph.diff_t();
  JetSeries sym = dph * dph;
  sym += ph.diff_y(1);
  sym = sym - JetSeries::from_sym(SymExpr::rho_pow(d, 2));
  sym += dph.diff_t().scaled(CRat(0, -1)).shifted(0, 1);
  JetSeries AM = sym * a;
  AM += (dph * a.diff_t()).scaled(CRat(0, -2)).shifted(0, 1);
  AM += a.diff_y(1).scaled(CRat(0, -1)).shifted(0, 1);
  AM = AM - a.diff_t().diff_t().shifted(0, 2);
  AM += conjugated_composition(model, phase, a, M, T, H);
  return AM.truncated(T, H);
}

JetSeries assemble_AM_regrouped(const ModelSpec& model, const PhaseJet& phase,
                                const AmplitudeJet& amps, int M) {
  model.validate();
  if (M != model.M)
    throw model_error("assembly order must match the solved jets");
  const int T = M, H = M + 2;
  JetSeries a = amps.a_series().truncated(T + 2, H);
  JetSeries AM = eikonal::eikonal_residual(phase) * a;
  const std::vector<JetSeries> rs =
      transport::transport_residuals(model, phase, amps);
  for (int j = 0; j < static_cast<int>(rs.size()); ++j)
    AM = AM - rs[j].shifted(0, j + 1);
  return AM.truncated(T, H);
}

ResidualReport verify_AM_structure(const JetSeries& AM, int M) {
  ResidualReport rep;
  rep.max_t_order = std::min(AM.t_trunc(), M) - 1;
  rep.max_h_order = std::min(AM.h_trunc(), M + 2) - 1;
  for (int t = 0; t <= rep.max_t_order; ++t) {
    for (int h = 0; h <= rep.max_h_order; ++h) {
      SymExpr c = AM.coeff(t, h);
      if (!c.is_zero())
        rep.forbidden.push_back("t^" + std::to_string(t) + " h^" +
                                std::to_string(h) + ": " + c.str());
    }
  }
  return rep;
}

}  // namespace pgdn::residual
