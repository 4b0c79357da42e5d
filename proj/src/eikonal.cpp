#include "pgdn/eikonal.hpp"

#include <cmath>
#include <random>

#include "pgdn/transport.hpp"

namespace pgdn::eikonal {

namespace {

using symring::EvalPoint;
using symring::eval_numeric;
using symring::rho_value;

const SymExpr& zero_expr(int d) {
  static const SymExpr z2 = SymExpr::zero(2);
  static const SymExpr z3 = SymExpr::zero(3);
  static const SymExpr z4 = SymExpr::zero(4);
  if (d == 2) return z2;
  if (d == 3) return z3;
  if (d == 4) return z4;
  throw model_error("unsupported dimension");
}

/// g(m_0, phi) = sum_{|alpha| <= M} d_eta^alpha m_0 * G_{|alpha|}^{(alpha)}
/// as a t-series mod t^{t_cap}; only |alpha| with 2|alpha| < t_cap can
/// contribute, so the enumeration stops there.
JetSeries g_series(const ModelSpec& model, const PhaseJet& phase, int t_cap) {
  const int d = model.d;
  JetSeries g = model.m_row(0).truncated(t_cap, JetSeries::kExactOrder);
  int alpha_max = std::min(model.M, t_cap / 2);
  int support_max = 0;
  for (const auto& alpha : transport::eta_support(g, alpha_max))
    support_max = std::max(support_max, symring::mi_order(alpha));
  alpha_max = std::min(alpha_max, support_max);
  if (alpha_max < 1) return g;
  transport::GTable G = transport::build_G(phase, alpha_max, t_cap);
  for (const auto& alpha : symring::multi_indices_up_to(d - 1, alpha_max)) {
    int n = symring::mi_order(alpha);
    if (n == 0) continue;
    JetSeries dm = model.m_row(0).truncated(t_cap, JetSeries::kExactOrder);
    for (int axis = 1; axis < d; ++axis)
      for (int rep = 0; rep < alpha[axis - 1]; ++rep) dm = dm.diff_eta(axis);
    if (dm.is_zero()) continue;
    g += dm * G.at(n, alpha);
  }
  return g;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

ModelSpec ModelSpec::create(int d, mpq_class mu, int M,
                            std::map<std::pair<int, int>, SymExpr> m_table,
                            std::string id) {
  ModelSpec m;
  m.d = d;
  m.mu = std::move(mu);
  m.mu.canonicalize();
  m.M = M;
  for (auto& [kj, expr] : m_table)
    if (!expr.is_zero()) m.m_table.emplace(kj, std::move(expr));
  m.id = std::move(id);
  m.validate();
  return m;
}

void ModelSpec::validate() const {
  if (d < 2 || d > 4) throw model_error("dimension must be 2, 3, or 4");
  if (mu == 0) throw model_error("mu must be nonzero");
  if (M < 2) throw model_error("truncation order M must be at least 2");
  for (const auto& [kj, expr] : m_table) {
    if (kj.first < 0 || kj.second < 0)
      throw model_error("m table indices must be nonnegative");
    if (kj.first == 0 && kj.second == 0 && !expr.is_zero())
      throw model_error("m_{0,0} must vanish");
    if (expr.dim() != d) throw model_error("m entry dimension mismatch");
    auto deg = symring::rho_degree(expr);
    if (deg && *deg > 0)
      throw model_error("m entries must have rho degree <= 0");
    if (expr.mu() && *expr.mu() != mu)
      throw model_error("m entry pinned to a different mu");
  }
}

SymExpr ModelSpec::m(int k, int j) const {
  auto it = m_table.find({k, j});
  return it == m_table.end() ? zero_expr(d) : it->second;
}

JetSeries ModelSpec::m_row(int j) const {
  JetSeries r = JetSeries::zero(d);
  for (const auto& [kj, expr] : m_table)
    if (kj.second == j) r.set_coeff(kj.first, 0, expr);
  return r;
}

JetSeries ModelSpec::m_series() const {
  JetSeries r = JetSeries::zero(d);
  for (const auto& [kj, expr] : m_table)
    r.set_coeff(kj.first, kj.second, expr);
  return r;
}

int ModelSpec::max_h_order() const {
  int j = -1;
  for (const auto& [kj, expr] : m_table) j = std::max(j, kj.second);
  return j;
}

SymExpr PhaseJet::phi(int k) const {
  if (k < 1 || k > static_cast<int>(phis.size())) return zero_expr(model.d);
  return phis[k - 1];
}

JetSeries PhaseJet::phi_series(int limit) const {
  if (limit < 0) limit = static_cast<int>(phis.size());
  JetSeries r = JetSeries::zero(model.d);
  for (int k = 1; k <= limit && k <= static_cast<int>(phis.size()); ++k)
    r.set_coeff(k, 0, phis[k - 1]);
  return r;
}

PhaseJet solve_eikonal(const ModelSpec& model) {
  model.validate();
  const int d = model.d, M = model.M;
  PhaseJet phase;
  phase.model = model;
  phase.phis.push_back(SymExpr::rho_pow(d, 1));
  for (int K = 1; K < M; ++K) {
    JetSeries g = g_series(model, phase, K + 1);
    SymExpr rhs = g.coeff(K, 0);
    for (int k = 2; k <= K; ++k)
      rhs += (phase.phis[k - 1] * phase.phis[K + 1 - k])
                 .scaled(CRat(k * (K + 2 - k)));
    rhs += symring::diff_y(phase.phis[K - 1], 1);
    phase.phis.push_back(
        (-rhs).rho_shifted(-1).scaled(CRat(mpq_class(1, 2 * (K + 1)))));
  }
  return phase;
}

JetSeries eikonal_residual(const PhaseJet& phase) {
  const ModelSpec& model = phase.model;
  const int d = model.d, M = model.M;
  JetSeries ph = phase.phi_series().truncated(M + 1, JetSeries::kExactOrder);
  JetSeries dph = ph.diff_t();
  JetSeries r = dph * dph;
  r += ph.diff_y(1).truncated(M, JetSeries::kExactOrder);
  r = r - JetSeries::from_sym(SymExpr::rho_pow(d, 2))
              .truncated(M, JetSeries::kExactOrder);
  r += g_series(model, phase, M);
  return r.truncated(M, JetSeries::kExactOrder);
}

GradingReport check_phase_grading(const PhaseJet& phase) {
  GradingReport rep;
  const int d = phase.model.d;
  for (int k = 1; k <= static_cast<int>(phase.phis.size()); ++k) {
    const int target = 3 - 2 * k;
    for (const auto& alpha : symring::multi_indices_up_to(d - 1, 3)) {
      SymExpr e = phase.phi(k);
      for (int axis = 1; axis < d; ++axis)
        for (int rep2 = 0; rep2 < alpha[axis - 1]; ++rep2)
          e = symring::diff_y(e, axis);
      auto val = symring::rho_valuation(e);
      if (val && *val < target) {
        rep.pass = false;
        std::string axes;
        for (int v : alpha) axes += std::to_string(v);
        rep.violations.push_back(
            {k, "rho valuation " + std::to_string(*val) + " < " +
                    std::to_string(target) + " for d_y^(" + axes + ") phi_" +
                    std::to_string(k)});
      }
    }
  }
  return rep;
}

ImPhaseReport check_im_phase(const PhaseJet& phase, double delta,
                             int n_samples, std::uint64_t seed) {
  ImPhaseReport rep;
  const int d = phase.model.d;
  std::mt19937_64 rng(seed);
  std::optional<double> pinned;
  for (const auto& p : phase.phis)
    if (p.mu()) pinned = p.mu()->get_d();
  for (int s = 0; s < n_samples; ++s) {
    EvalPoint pt;
    pt.y.resize(d - 1);
    for (auto& v : pt.y) v = -1.0 + 2.0 * uniform01(rng);
    pt.eta1 = -0.5 + uniform01(rng);
    pt.eta_tail.resize(d - 2);
    for (auto& v : pt.eta_tail) v = -0.5 + uniform01(rng);
    double u_mu = uniform01(rng);
    pt.mu = pinned ? *pinned : 0.05 * std::exp(u_mu * std::log(20.0));
    std::complex<double> rho = rho_value(pt.eta1, pt.mu);
    double rho_sq = std::abs(rho) * std::abs(rho);
    double t = (1.0 - uniform01(rng)) * 2.0 * delta * rho_sq;
    std::complex<double> phi_t = 0.0;
    double tp = 1.0;
    for (const auto& p : phase.phis) {
      tp *= t;
      phi_t += tp * eval_numeric(p, pt);
    }
    double threshold = 0.5 * t * rho.imag();
    ++rep.n_samples;
    if (phi_t.imag() < threshold) {
      ++rep.n_violations;
      rep.pass = false;
      if (!rep.first_violation)
        rep.first_violation =
            ImPhaseSample{t, pt.eta1, pt.mu, pt.y, phi_t.imag(), threshold};
    }
  }
  return rep;
}

double largest_passing_delta(const PhaseJet& phase, int n_samples,
                             std::uint64_t seed) {
  double best = 0.0;
  double delta = 0.0125;
  for (int i = 0; i < 10; ++i, delta *= 2.0) {
    ImPhaseReport r = check_im_phase(phase, delta, n_samples, seed + i);
    if (r.pass) best = delta;
  }
  return best;
}

ModelSpec perturb_m_k0(const ModelSpec& model, int k, const SymExpr& delta_m) {
  if (k < 1) throw model_error("perturbation index k must be positive");
  auto table = model.m_table;
  auto it = table.find({k, 0});
  if (it == table.end())
    table.emplace(std::make_pair(k, 0), delta_m);
  else
    it->second = it->second + delta_m;
  return ModelSpec::create(model.d, model.mu, model.M, std::move(table),
                           model.id);
}

}  // namespace pgdn::eikonal
