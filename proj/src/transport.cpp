#include "pgdn/transport.hpp"

#include <cmath>
#include <random>

namespace pgdn::transport {

namespace {

using symring::EvalPoint;
using symring::eval_numeric;
using symring::factorial;
using symring::mi_binom;
using symring::mi_leq;
using symring::mi_order;
using symring::mi_sub;
using symring::multi_indices_up_to;

const JetSeries& zero_series(int d) {
  static const JetSeries z2 = JetSeries::zero(2);
  static const JetSeries z3 = JetSeries::zero(3);
  static const JetSeries z4 = JetSeries::zero(4);
  if (d == 2) return z2;
  if (d == 3) return z3;
  if (d == 4) return z4;
  throw model_error("unsupported dimension");
}

CRat neg_i_pow(int n) {
  switch (((n % 4) + 4) % 4) {
    case 0: return CRat(1);
    case 1: return CRat(0, -1);
    case 2: return CRat(-1);
    default: return CRat(0, 1);
  }
}

/// binom(alpha,beta) (-i)^{|beta|} |alpha-beta|! / |alpha|!
CRat leibniz_coeff(const MultiIndex& alpha, const MultiIndex& beta) {
  mpq_class q(mi_binom(alpha, beta) * factorial(mi_order(alpha) - mi_order(beta)),
              factorial(mi_order(alpha)));
  return CRat(q) * neg_i_pow(mi_order(beta));
}

JetSeries diff_y_multi(const JetSeries& s, const MultiIndex& beta) {
  JetSeries r = s;
  for (int axis = 1; axis <= static_cast<int>(beta.size()); ++axis)
    for (int rep = 0; rep < beta[axis - 1]; ++rep) r = r.diff_y(axis);
  return r;
}

JetSeries diff_eta_multi(const JetSeries& s, const MultiIndex& alpha) {
  JetSeries r = s;
  for (int axis = 1; axis <= static_cast<int>(alpha.size()); ++axis)
    for (int rep = 0; rep < alpha[axis - 1]; ++rep) r = r.diff_eta(axis);
  return r;
}

/// The part of the E-row that is linear in the current amplitude row:
/// the l = 1 diagonal terms and the nu' = nu - 1 slice of a^{(alpha)}.
/// Both are j-independent, so one table serves every row.
struct RowLinOp {
  int d = 2;
  std::vector<std::pair<JetSeries, MultiIndex>> terms;

  JetSeries apply(const JetSeries& w) const {
    JetSeries r = zero_series(d);
    for (const auto& [coeff, beta] : terms)
      r += coeff * diff_y_multi(w, beta);
    return r;
  }
};

RowLinOp build_row_lin(const ModelSpec& model, const GTable& G, int t_cap) {
  const int d = model.d;
  RowLinOp lin;
  lin.d = d;
  JetSeries m0 = model.m_row(0).truncated(t_cap, JetSeries::kExactOrder);
  JetSeries m1 = model.m_row(1).truncated(t_cap, JetSeries::kExactOrder);
  for (const auto& alpha : multi_indices_up_to(d - 1, model.M)) {
    const int n = mi_order(alpha);
    JetSeries dm1 = diff_eta_multi(m1, alpha);
    if (!dm1.is_zero()) {
      JetSeries c = dm1 * G.at(n, alpha);
      if (!c.is_zero()) lin.terms.push_back({c, MultiIndex(d - 1, 0)});
    }
    if (n < 1) continue;
    JetSeries dm0 = diff_eta_multi(m0, alpha);
    if (dm0.is_zero()) continue;
    for (const auto& beta : multi_indices_up_to(d - 1, 1)) {
      if (!mi_leq(beta, alpha)) continue;
      const JetSeries& g = G.at(n - 1, mi_sub(alpha, beta));
      if (g.is_zero()) continue;
      JetSeries c = (dm0 * g).scaled(leibniz_coeff(alpha, beta));
      if (!c.is_zero()) lin.terms.push_back({c, beta});
    }
  }
  return lin;
}

/// Lazily computed y-derivatives of completed amplitude rows, shared across
/// the E-row assemblies of one solve or residual pass.
struct DerivCache {
  std::vector<std::map<MultiIndex, JetSeries>> by_row;

  const JetSeries& get(const std::vector<JetSeries>& rows, int idx,
                       const MultiIndex& beta) {
    if (mi_order(beta) == 0) return rows[idx];
    if (by_row.size() < rows.size()) by_row.resize(rows.size());
    auto& m = by_row[static_cast<size_t>(idx)];
    auto it = m.find(beta);
    if (it == m.end()) it = m.emplace(beta, diff_y_multi(rows[idx], beta)).first;
    return it->second;
  }
};

/// sum over nu' <= nu_hi of the a^{(alpha)}_nu slices built from the
/// given completed rows.
JetSeries a_alpha_part(const GTable& G, const std::vector<JetSeries>& rows,
                       const MultiIndex& alpha, int nu, int nu_hi, int d,
                       DerivCache& dy) {
  JetSeries r = zero_series(d);
  const int n = mi_order(alpha);
  for (int nup = std::max(0, nu - n); nup <= nu_hi && nup <= nu - 1; ++nup) {
    const int p = n - (nu - nup);
    if (p < 0) continue;
    for (const auto& beta : multi_indices_up_to(
             static_cast<int>(alpha.size()), std::min(nu - nup, n))) {
      if (!mi_leq(beta, alpha)) continue;
      const JetSeries& g = G.at(p, mi_sub(alpha, beta));
      if (g.is_zero()) continue;
      r += (g * dy.get(rows, nup, beta)).scaled(leibniz_coeff(alpha, beta));
    }
  }
  return r;
}

/// E-row j minus its dependence on row j itself; rows 0..j-1 must be
/// supplied complete.
JetSeries base_e_row(const ModelSpec& model, const GTable& G,
                     const std::vector<JetSeries>& rows, int j, int t_cap,
                     DerivCache& dy) {
  const int d = model.d;
  JetSeries r = JetSeries::zero(d, t_cap, JetSeries::kExactOrder);
  for (const auto& alpha : multi_indices_up_to(d - 1, model.M)) {
    const int n = mi_order(alpha);
    for (int l = 0; l <= j + 1; ++l) {
      JetSeries dm =
          diff_eta_multi(model.m_row(l).truncated(t_cap, JetSeries::kExactOrder),
                         alpha);
      if (dm.is_zero()) continue;
      if (l <= j && n >= 1) {
        const int nu = j + 1 - l;
        const int nu_hi = (l == 0) ? j - 1 : nu - 1;
        JetSeries part = a_alpha_part(G, rows, alpha, nu, nu_hi, d, dy);
        if (!part.is_zero()) r += dm * part;
      }
      if (l >= 2) r += (dm * G.at(n, alpha)) * rows[j + 1 - l];
    }
  }
  return r;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

std::vector<MultiIndex> eta_support(const JetSeries& m, int max_order) {
  std::vector<MultiIndex> out, zeros;
  for (const auto& alpha :
       multi_indices_up_to(m.dim() - 1, max_order)) {
    bool dominated = false;
    for (const auto& z : zeros)
      if (mi_leq(z, alpha)) {
        dominated = true;
        break;
      }
    if (dominated) continue;
    if (diff_eta_multi(m, alpha).is_zero())
      zeros.push_back(alpha);
    else
      out.push_back(alpha);
  }
  return out;
}

const JetSeries& GTable::at(int k, const MultiIndex& beta) const {
  if (k < 0 || k > mi_order(beta)) return zero_series(d);
  auto it = entries.find({k, beta});
  if (it == entries.end()) throw model_error("G table entry out of range");
  return it->second;
}

GTable build_G(const PhaseJet& phase, int beta_max, int t_trunc) {
  const int d = phase.model.d;
  GTable T;
  T.d = d;
  T.beta_max = beta_max;
  T.t_trunc = t_trunc;
  JetSeries w =
      phase.phi_series().truncated(t_trunc, JetSeries::kExactOrder);
  std::vector<JetSeries> dphi(d, zero_series(d));
  for (int axis = 1; axis < d; ++axis) dphi[axis] = w.diff_y(axis);

  for (const auto& beta : multi_indices_up_to(d - 1, beta_max)) {
    const int n = mi_order(beta);
    if (n == 0) {
      T.entries[{0, beta}] =
          JetSeries::from_sym(SymExpr::one(d))
              .truncated(t_trunc, JetSeries::kExactOrder);
      continue;
    }
    int axis = 1;
    while (beta[axis - 1] == 0) ++axis;
    MultiIndex bm = beta;
    --bm[axis - 1];
    const CRat inv(mpq_class(1, n));
    for (int k = 0; k <= n; ++k) {
      JetSeries e = (dphi[axis] * T.at(k - 1, bm) -
                     T.at(k, bm).diff_y(axis).scaled(CRat::i()))
                        .scaled(inv);
      T.entries[{k, beta}] = std::move(e);
    }
  }
  return T;
}

SymExpr ETable::at(int k) const {
  if (k < 0) throw model_error("negative E table index");
  if (k >= known_t)
    throw model_error("E table entry needs amplitude data beyond those given");
  return series.coeff(k, 0);
}

SymExpr AmplitudeJet::a(int k, int j) const {
  auto it = amps.find({k, j});
  if (it == amps.end()) return SymExpr::zero(phase.model.d);
  return it->second;
}

JetSeries AmplitudeJet::a_row(int j) const {
  JetSeries r = JetSeries::zero(phase.model.d);
  for (const auto& [kj, expr] : amps)
    if (kj.second == j && !expr.is_zero()) r.set_coeff(kj.first, 0, expr);
  return r;
}

JetSeries AmplitudeJet::a_series() const {
  JetSeries r = JetSeries::zero(phase.model.d);
  for (const auto& [kj, expr] : amps)
    if (!expr.is_zero()) r.set_coeff(kj.first, kj.second, expr);
  return r;
}

namespace {

int eta_order_bound(const ModelSpec& model) {
  int b = 0;
  for (const auto& alpha : eta_support(model.m_series(), model.M))
    b = std::max(b, mi_order(alpha));
  return b;
}

}  // namespace

ETable build_E_table(const ModelSpec& model, const PhaseJet& phase,
                     const AmplitudeJet& partial_amps, int j, int M) {
  model.validate();
  if (j < 0 || j > M) throw model_error("E table row out of range");
  const int d = model.d;
  const int t_cap = M + 1;
  GTable G = build_G(phase, eta_order_bound(model), t_cap);
  RowLinOp lin = build_row_lin(model, G, t_cap);
  std::vector<JetSeries> rows;
  for (int jj = 0; jj < j; ++jj) {
    for (int k = 0; k <= M; ++k)
      if (!partial_amps.amps.count({k, jj}))
        throw model_error("E table row " + std::to_string(j) +
                          " needs complete amplitude row " +
                          std::to_string(jj));
    rows.push_back(partial_amps.a_row(jj));
  }
  int prefix = 0;
  while (prefix <= M && partial_amps.amps.count({prefix, j})) ++prefix;
  JetSeries row_j = JetSeries::zero(d, prefix, JetSeries::kExactOrder);
  for (int k = 0; k < prefix; ++k) {
    SymExpr e = partial_amps.a(k, j);
    if (!e.is_zero()) row_j.set_coeff(k, 0, e);
  }
  DerivCache dy;
  ETable t;
  t.j = j;
  t.series = base_e_row(model, G, rows, j, t_cap, dy) + lin.apply(row_j);
  t.known_t = std::min(t.series.t_trunc(), t_cap);
  return t;
}

AmplitudeJet solve_transport(const ModelSpec& model, const PhaseJet& phase) {
  model.validate();
  const int d = model.d, M = model.M;
  const int t_cap = M + 1;
  GTable G = build_G(phase, eta_order_bound(model), t_cap);
  RowLinOp lin = build_row_lin(model, G, t_cap);

  AmplitudeJet out;
  out.phase = phase;
  std::vector<JetSeries> rows;
  std::vector<std::vector<SymExpr>> all(M + 1);
  DerivCache dy;

  for (int j = 0; j <= M; ++j) {
    std::vector<SymExpr>& aj = all[j];
    aj.push_back(j == 0 ? SymExpr::one(d) : SymExpr::zero(d));
    JetSeries e_acc = base_e_row(model, G, rows, j, t_cap, dy);
    auto fold = [&](int k) {
      if (aj[k].is_zero()) return;
      JetSeries single = JetSeries::zero(d, t_cap, JetSeries::kExactOrder);
      single.set_coeff(k, 0, aj[k]);
      e_acc += lin.apply(single);
    };
    fold(0);
    for (int k = 0; k + 1 <= M; ++k) {
      if (e_acc.t_trunc() <= k)
        throw model_error("transport recursion lost track of order " +
                          std::to_string(k));
      SymExpr acc = e_acc.coeff(k, 0);
      for (int nu = 0; nu + 1 <= k; ++nu)
        acc = acc - (phase.phi(k - nu + 1) * aj[nu + 1])
                        .scaled(CRat(0, 2 * (k - nu + 1) * (nu + 1)));
      for (int nu = 0; nu <= k; ++nu)
        acc = acc - (phase.phi(k - nu + 2) * aj[nu])
                        .scaled(CRat(0, (k - nu + 1) * (k - nu + 2)));
      acc = acc - symring::diff_y(aj[k], 1).scaled(CRat::i());
      if (j >= 1 && k + 2 <= M)
        acc = acc - all[j - 1][k + 2].scaled(CRat((k + 1) * (k + 2)));
      aj.push_back(acc.rho_shifted(-1).scaled(
          CRat(mpq_class(0), mpq_class(-1, 2 * (k + 1)))));
      fold(k + 1);
    }
    JetSeries row = JetSeries::zero(d);
    for (int k = 0; k <= M; ++k) {
      out.amps[{k, j}] = aj[k];
      if (!aj[k].is_zero()) row.set_coeff(k, 0, aj[k]);
    }
    rows.push_back(std::move(row));
  }
  return out;
}

JetSeries transport_residual(const ModelSpec& model, const PhaseJet& phase,
                             const AmplitudeJet& amps, int j) {
  model.validate();
  const int M = model.M;
  if (j < 0 || j > M) throw model_error("transport row out of range");
  GTable G = build_G(phase, eta_order_bound(model), M);
  RowLinOp lin = build_row_lin(model, G, M);
  std::vector<JetSeries> rows;
  for (int jj = 0; jj <= j; ++jj) {
    for (int k = 0; k <= M; ++k)
      if (!amps.amps.count({k, jj}))
        throw model_error("transport residual needs complete rows");
    rows.push_back(amps.a_row(jj));
  }
  DerivCache dy;
  JetSeries e = base_e_row(model, G, rows, j, M, dy) + lin.apply(rows[j]);
  JetSeries ph = phase.phi_series().truncated(M + 2, JetSeries::kExactOrder);
  JetSeries row = rows[j].truncated(M + 2, JetSeries::kExactOrder);
  JetSeries r = (ph.diff_t() * row.diff_t()).scaled(CRat(0, 2));
  r += row.diff_y(1).scaled(CRat::i());
  r += (ph.diff_t().diff_t() * row).scaled(CRat::i());
  if (j >= 1) r += amps.a_row(j - 1).diff_t().diff_t();
  r = r - e;
  return r.truncated(M, JetSeries::kExactOrder);
}

std::vector<JetSeries> transport_residuals(const ModelSpec& model,
                                           const PhaseJet& phase,
                                           const AmplitudeJet& amps) {
  model.validate();
  const int M = model.M;
  GTable G = build_G(phase, eta_order_bound(model), M);
  RowLinOp lin = build_row_lin(model, G, M);
  std::vector<JetSeries> rows;
  for (int j = 0; j <= M; ++j) {
    for (int k = 0; k <= M; ++k)
      if (!amps.amps.count({k, j}))
        throw model_error("transport residual needs complete rows");
    rows.push_back(amps.a_row(j));
  }
  DerivCache dy;
  JetSeries ph = phase.phi_series().truncated(M + 2, JetSeries::kExactOrder);
  JetSeries dph = ph.diff_t();
  JetSeries ddph = dph.diff_t();
  std::vector<JetSeries> out;
  for (int j = 0; j <= M; ++j) {
    JetSeries e = base_e_row(model, G, rows, j, M, dy) + lin.apply(rows[j]);
    JetSeries row = rows[j].truncated(M + 2, JetSeries::kExactOrder);
    JetSeries r = (dph * row.diff_t()).scaled(CRat(0, 2));
    r += row.diff_y(1).scaled(CRat::i());
    r += (ddph * row).scaled(CRat::i());
    if (j >= 1) r += rows[j - 1].diff_t().diff_t();
    r = r - e;
    out.push_back(r.truncated(M, JetSeries::kExactOrder));
  }
  return out;
}

GradingReport check_amp_grading(const AmplitudeJet& amps) {
  GradingReport rep;
  for (const auto& [kj, expr] : amps.amps) {
    auto val = symring::rho_valuation(expr);
    const int target = -2 * kj.first - 3 * kj.second;
    if (val && *val < target) {
      rep.pass = false;
      rep.violations.push_back(
          {kj.first, "rho valuation " + std::to_string(*val) + " < " +
                         std::to_string(target) + " for a_{" +
                         std::to_string(kj.first) + "," +
                         std::to_string(kj.second) + "}"});
    }
  }
  return rep;
}

AmpResponse check_amp_structure(const ModelSpec& model, int k, int j,
                                const SymExpr& delta) {
  if (k < 1 || j < 0) throw model_error("response indices need k >= 1, j >= 0");
  AmpResponse rep;
  const int d = model.d;
  PhaseJet base_phase = solve_eikonal(model);
  AmplitudeJet base = solve_transport(model, base_phase);
  ModelSpec pert_model = eikonal::perturb_m_k0(model, k + j, delta);
  PhaseJet pert_phase = solve_eikonal(pert_model);
  AmplitudeJet pert = solve_transport(pert_model, pert_phase);

  for (int kk = 0; kk <= model.M; ++kk)
    for (int jj = 0; jj <= model.M; ++jj) {
      if (kk + jj >= k + j) continue;
      if (pert.a(kk, jj) != base.a(kk, jj)) {
        rep.pass = false;
        rep.failures.push_back("unexpected response at a_{" +
                               std::to_string(kk) + "," + std::to_string(jj) +
                               "}");
      }
    }
  CRat c = CRat(mpq_class(factorial(k + j), factorial(k))) *
           CRat(0, -2).pow(-(j + 2));
  SymExpr expected =
      (delta * SymExpr::rho_pow(d, -(j + 2))).scaled(-c);
  if (pert.a(k, j) - base.a(k, j) != expected) {
    rep.pass = false;
    rep.failures.push_back("wrong response at a_{" + std::to_string(k) + "," +
                           std::to_string(j) + "}");
  }
  return rep;
}

AmpScalingReport check_amp_scaling_numeric(const AmplitudeJet& amps, int n_mu,
                                           std::uint64_t seed) {
  AmpScalingReport rep;
  const int d = amps.phase.model.d;
  n_mu = std::max(n_mu, 5);
  std::mt19937_64 rng(seed);
  std::vector<EvalPoint> pts(8);
  for (auto& pt : pts) {
    pt.y.resize(d - 1);
    for (auto& v : pt.y) v = -1.0 + 2.0 * uniform01(rng);
    pt.eta1 = 0.0;
    pt.eta_tail.resize(d - 2);
    for (auto& v : pt.eta_tail) v = -0.5 + uniform01(rng);
  }
  for (const auto& [kj, expr] : amps.amps) {
    if (expr.is_zero() || expr.mu()) continue;
    const double target = -(kj.first + 1.5 * kj.second);
    std::vector<double> lx, ly;
    double c_min = 0.0, c_max = 0.0;
    for (int i = 0; i < n_mu; ++i) {
      double mu = 0.05 * std::pow(20.0, i / static_cast<double>(n_mu - 1));
      double v = 0.0;
      for (auto pt : pts) {
        pt.mu = mu;
        v = std::max(v, std::abs(eval_numeric(expr, pt)));
      }
      if (v == 0.0) continue;
      lx.push_back(std::log(mu));
      ly.push_back(std::log(v));
      double c = v * std::pow(mu, -target);
      if (lx.size() == 1) c_min = c_max = c;
      c_min = std::min(c_min, c);
      c_max = std::max(c_max, c);
    }
    if (lx.size() < 2) continue;
    double n = static_cast<double>(lx.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < lx.size(); ++i) {
      sx += lx[i];
      sy += ly[i];
      sxx += lx[i] * lx[i];
      sxy += lx[i] * ly[i];
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    AmpScalingEntry ent;
    ent.k = kj.first;
    ent.j = kj.second;
    ent.fitted_exponent = slope;
    ent.c_min = c_min;
    ent.c_max = c_max;
    ent.pass = slope >= target - 0.1;
    if (!ent.pass) rep.pass = false;
    rep.entries.push_back(ent);
  }
  return rep;
}

}  // namespace pgdn::transport
