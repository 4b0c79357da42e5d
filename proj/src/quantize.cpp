#include "pgdn/quantize.hpp"

#include <fftw3.h>

#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>

namespace pgdn::quantize {

namespace {

constexpr std::complex<double> kI{0.0, 1.0};

int axis_index(const TorusGrid& g, std::size_t idx, int axis) {
  std::size_t stride = 1;
  for (int a = g.dims - 1; a > axis; --a) stride *= g.n_modes;
  return static_cast<int>((idx / stride) % g.n_modes);
}

struct PlanKey {
  int dims, n, sign;
  auto operator<=>(const PlanKey&) const = default;
};

/// Plans are cached per (dims, n_modes, direction) and created with
/// FFTW_UNALIGNED so they execute on any caller buffer; creation is
/// serialized, execution on distinct buffers is concurrency-safe.
fftw_plan acquire_plan(int dims, int n, int sign) {
  static std::mutex mutex;
  static std::map<PlanKey, fftw_plan> cache;
  std::scoped_lock lock(mutex);
  auto it = cache.find(PlanKey{dims, n, sign});
  if (it != cache.end()) return it->second;
  std::size_t total = 1;
  for (int a = 0; a < dims; ++a) total *= static_cast<std::size_t>(n);
  GridFn in(total), out(total);
  std::vector<int> ns(static_cast<std::size_t>(dims), n);
  fftw_plan plan = fftw_plan_dft(
      dims, ns.data(), reinterpret_cast<fftw_complex*>(in.data()),
      reinterpret_cast<fftw_complex*>(out.data()), sign,
      FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (plan == nullptr) throw quantize_error("fft planning failed");
  cache.emplace(PlanKey{dims, n, sign}, plan);
  return plan;
}

GridFn run_dft(const TorusGrid& grid, int sign, const GridFn& in) {
  fftw_plan plan = acquire_plan(grid.dims, grid.n_modes, sign);
  GridFn src = in;
  GridFn out(in.size());
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(src.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

void check_sizes(const TorusGrid& grid, const GridFn& f, const char* where) {
  grid.validate();
  if (f.size() != grid.size())
    throw quantize_error(std::string(where) +
                         ": grid function size does not match the grid");
}

double bump_g(double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; }

struct BandDerivs {
  double d1 = 0.0, d2 = 0.0;
};

/// Derivatives of the bump on the transition band 1 < s < 2, in the
/// variable s = |sigma|.  There bump = 1/(1 + r) with r = exp(z),
/// z = 1/(2-s) - 1/(s-1), and the derivatives close under
/// q = z' = (2-s)^{-2} + (s-1)^{-2}, q' = 2(2-s)^{-3} - 2(s-1)^{-3}.
BandDerivs band_derivs(double s) {
  const double u = 2.0 - s, v = s - 1.0;
  const double z = 1.0 / u - 1.0 / v;
  if (std::abs(z) > 700.0) return {};
  const double r = std::exp(z);
  const double w = 1.0 / (1.0 + r);
  const double q = 1.0 / (u * u) + 1.0 / (v * v);
  const double qp = 2.0 / (u * u * u) - 2.0 / (v * v * v);
  BandDerivs d;
  d.d1 = -r * q * w * w;
  d.d2 = -r * (q * q + qp) * w * w + 2.0 * r * r * q * q * w * w * w;
  return d;
}

void check_model_pair(const PhaseJet& phase, const AmplitudeJet& amps,
                      const char* where) {
  const eikonal::ModelSpec& pm = phase.model;
  const eikonal::ModelSpec& am = amps.phase.model;
  if (pm.d != am.d || pm.M != am.M || pm.mu != am.mu)
    throw quantize_error(std::string(where) +
                         ": phase and amplitude jets solve different models");
}

}  // namespace

TorusGrid TorusGrid::create(int dims, int n_modes, double h) {
  TorusGrid g;
  g.dims = dims;
  g.n_modes = n_modes;
  g.h = h;
  g.validate();
  return g;
}

void TorusGrid::validate() const {
  if (dims < 1) throw quantize_error("TorusGrid: dims must be >= 1");
  if (n_modes < 2 || (n_modes & (n_modes - 1)) != 0)
    throw quantize_error("TorusGrid: n_modes must be a power of two >= 2");
  if (!(h > 0.0) || !std::isfinite(h))
    throw quantize_error("TorusGrid: h must be positive");
  if (0.5 * h * n_modes < 4.0)
    throw quantize_error(
        "TorusGrid: frequency window too small, need h * (n_modes/2) >= 4");
}

std::size_t TorusGrid::size() const {
  std::size_t total = 1;
  for (int a = 0; a < dims; ++a) total *= static_cast<std::size_t>(n_modes);
  return total;
}

std::vector<double> TorusGrid::node(std::size_t idx) const {
  std::vector<double> y(static_cast<std::size_t>(dims));
  const double step = 2.0 * std::numbers::pi / n_modes;
  for (int a = 0; a < dims; ++a) y[a] = step * axis_index(*this, idx, a);
  return y;
}

std::vector<int> TorusGrid::freq(std::size_t idx) const {
  std::vector<int> k(static_cast<std::size_t>(dims));
  for (int a = 0; a < dims; ++a) {
    int i = axis_index(*this, idx, a);
    k[a] = i < n_modes / 2 ? i : i - n_modes;
  }
  return k;
}

std::vector<double> TorusGrid::eta(std::size_t idx) const {
  std::vector<int> k = freq(idx);
  std::vector<double> e(k.size());
  for (std::size_t a = 0; a < k.size(); ++a) e[a] = h * k[a];
  return e;
}

GridFn fft_forward(const TorusGrid& grid, const GridFn& f) {
  check_sizes(grid, f, "fft_forward");
  GridFn out = run_dft(grid, FFTW_FORWARD, f);
  const double scale = 1.0 / static_cast<double>(out.size());
  for (auto& v : out) v *= scale;
  return out;
}

GridFn fft_backward(const TorusGrid& grid, const GridFn& fhat) {
  check_sizes(grid, fhat, "fft_backward");
  return run_dft(grid, FFTW_BACKWARD, fhat);
}

GridFn op_apply(const TorusGrid& grid, const SymbolFn& symbol,
                const GridFn& f) {
  check_sizes(grid, f, "op_apply");
  GridFn fhat = fft_forward(grid, f);
  const std::size_t n = grid.size();
  std::vector<std::vector<int>> freqs(n);
  std::vector<std::vector<double>> etas(n);
  for (std::size_t m = 0; m < n; ++m) {
    freqs[m] = grid.freq(m);
    etas[m] = grid.eta(m);
  }
  GridFn out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> y = grid.node(i);
    std::complex<double> acc = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      if (fhat[m] == 0.0) continue;
      double phase = 0.0;
      for (int a = 0; a < grid.dims; ++a) phase += y[a] * freqs[m][a];
      acc += std::polar(1.0, phase) * symbol(y, etas[m]) * fhat[m];
    }
    out[i] = acc;
  }
  return out;
}

GridFn op_apply_freq(const TorusGrid& grid, const GridFn& mode_values,
                     const GridFn& f) {
  check_sizes(grid, f, "op_apply_freq");
  if (mode_values.size() != grid.size())
    throw quantize_error("op_apply_freq: mode table size does not match");
  GridFn fhat = fft_forward(grid, f);
  for (std::size_t m = 0; m < fhat.size(); ++m) fhat[m] *= mode_values[m];
  return fft_backward(grid, fhat);
}

CutoffSpec CutoffSpec::create(double eps, double delta) {
  if (!(eps > 0.0) || !(eps < 2.0 / 3.0))
    throw quantize_error("CutoffSpec: eps must lie in (0, 2/3)");
  if (!(delta > 0.0)) throw quantize_error("CutoffSpec: delta must be positive");
  CutoffSpec s;
  s.eps = eps;
  s.delta = delta;
  return s;
}

double CutoffSpec::bump(double sigma) {
  const double s = std::abs(sigma);
  const double num = bump_g(2.0 - s);
  return num == 0.0 ? 0.0 : num / (num + bump_g(s - 1.0));
}

double CutoffSpec::bump_d1(double sigma) {
  const double s = std::abs(sigma);
  if (s <= 1.0 || s >= 2.0) return 0.0;
  const double d = band_derivs(s).d1;
  return sigma < 0.0 ? -d : d;
}

double CutoffSpec::bump_d2(double sigma) {
  const double s = std::abs(sigma);
  if (s <= 1.0 || s >= 2.0) return 0.0;
  return band_derivs(s).d2;
}

double cutoff_Phi(double t, double eta1, double h, double mu,
                  const CutoffSpec& spec) {
  if (!(h > 0.0)) throw quantize_error("cutoff_Phi: h must be positive");
  if (mu == 0.0) throw quantize_error("cutoff_Phi: mu must be nonzero");
  const double rho_sq = std::hypot(eta1, mu);
  return CutoffSpec::bump(t / std::pow(h, spec.eps)) *
         CutoffSpec::bump(t / (spec.delta * rho_sq));
}

SymbolFn parametrix_symbol(const PhaseJet& phase, const AmplitudeJet& amps,
                           const CutoffSpec& spec, double t, double h) {
  check_model_pair(phase, amps, "parametrix_symbol");
  const eikonal::ModelSpec& model = phase.model;
  if (model.mu == 0)
    throw quantize_error("parametrix_symbol: mu must be nonzero");
  const double mu_d = model.mu.get_d();
  std::vector<std::pair<double, symring::SymExpr>> phase_terms;
  for (int k = 1; k <= model.M; ++k) {
    symring::SymExpr p = phase.phi(k);
    if (!p.is_zero())
      phase_terms.emplace_back(std::pow(t, static_cast<double>(k)),
                               std::move(p));
  }
  std::vector<std::pair<double, symring::SymExpr>> amp_terms;
  for (const auto& [kj, a] : amps.amps)
    if (!a.is_zero())
      amp_terms.emplace_back(std::pow(t, static_cast<double>(kj.first)) *
                                 std::pow(h, static_cast<double>(kj.second)),
                             a);
  return [phase_terms, amp_terms, spec, t, h,
          mu_d](const std::vector<double>& y,
                const std::vector<double>& eta) -> std::complex<double> {
    const double cut =
        cutoff_Phi(t, eta[0], h, mu_d, spec) * CutoffSpec::bump(eta[0]);
    if (cut == 0.0) return {0.0, 0.0};
    symring::EvalPoint p;
    p.y = y;
    p.eta1 = eta[0];
    p.eta_tail.assign(eta.begin() + 1, eta.end());
    p.mu = mu_d;
    std::complex<double> phi = 0.0;
    for (const auto& [w, expr] : phase_terms)
      phi += w * symring::eval_numeric(expr, p);
    std::complex<double> amp = 0.0;
    for (const auto& [w, expr] : amp_terms)
      amp += w * symring::eval_numeric(expr, p);
    return std::exp(kI * phi / h) * cut * amp;
  };
}

GridFn evaluate_parametrix(const PhaseJet& phase, const AmplitudeJet& amps,
                           const CutoffSpec& spec, const TorusGrid& grid,
                           const GridFn& f, double t) {
  check_sizes(grid, f, "evaluate_parametrix");
  if (grid.dims != phase.model.d - 1)
    throw quantize_error("evaluate_parametrix: grid dims must equal d - 1");
  SymbolFn sym = parametrix_symbol(phase, amps, spec, t, grid.h);
  bool y_free = true;
  for (const symring::SymExpr& p : phase.phis)
    y_free = y_free && p.y_degree() <= 0;
  for (const auto& [kj, a] : amps.amps) y_free = y_free && a.y_degree() <= 0;
  if (y_free) {
    GridFn mult(grid.size());
    const std::vector<double> y0(static_cast<std::size_t>(grid.dims), 0.0);
    for (std::size_t m = 0; m < mult.size(); ++m) mult[m] = sym(y0, grid.eta(m));
    return op_apply_freq(grid, mult, f);
  }
  return op_apply(grid, sym, f);
}

DNSymbol dn_symbol(const PhaseJet& phase, const AmplitudeJet& amps, int s,
                   int k, const TorusGrid& grid) {
  grid.validate();
  check_model_pair(phase, amps, "dn_symbol");
  if (s < 0 || k < 0)
    throw quantize_error("dn_symbol: s and k must be nonnegative");
  if (k > 3 * s + 2)
    throw quantize_error("dn_symbol: k exceeds 3s + 2");
  const eikonal::ModelSpec& model = phase.model;
  if (grid.dims != model.d - 1)
    throw quantize_error("dn_symbol: grid dims must equal d - 1");
  if (s > model.M + 1)
    throw quantize_error("dn_symbol: amplitude depth M supports only s <= M + 1");
  const double mu_d = model.mu.get_d();
  std::vector<symring::SymExpr> rows;
  for (int j = 0; j < s; ++j) {
    symring::SymExpr a = amps.a(1, j);
    if (a.y_degree() > 0)
      throw quantize_error(
          "dn_symbol: a_{1,j} must be y-independent to sample in frequency");
    rows.push_back(std::move(a));
  }
  DNSymbol out;
  out.grid = grid;
  out.s = s;
  out.k = k;
  out.field.assign(grid.size(), {0.0, 0.0});
  const std::vector<double> y0(static_cast<std::size_t>(grid.dims), 0.0);
  for (std::size_t m = 0; m < out.field.size(); ++m) {
    const std::vector<double> eta = grid.eta(m);
    const double b = CutoffSpec::bump(eta[0]);
    if (b == 0.0) continue;
    const std::complex<double> rho = symring::rho_value(eta[0], mu_d);
    symring::EvalPoint p;
    p.y = y0;
    p.eta1 = eta[0];
    p.eta_tail.assign(eta.begin() + 1, eta.end());
    p.mu = mu_d;
    std::complex<double> corr = 0.0;
    double hj = grid.h;
    for (const symring::SymExpr& a : rows) {
      corr += hj * symring::eval_numeric(a, p);
      hj *= grid.h;
    }
    out.field[m] = b * (std::pow(rho, k + 1) - kI * std::pow(rho, k) * corr);
  }
  return out;
}

void write_grid_fn(std::ostream& out, const TorusGrid& grid,
                   const GridFn& f) {
  check_sizes(grid, f, "write_grid_fn");
  std::ostringstream header;
  header << "pgdn-grid " << grid.dims << ' ' << grid.n_modes << ' '
         << std::setprecision(17) << grid.h << '\n';
  out << header.str();
  out.write(reinterpret_cast<const char*>(f.data()),
            static_cast<std::streamsize>(f.size() * sizeof(f[0])));
  if (!out) throw quantize_error("write_grid_fn: stream failure");
}

std::pair<TorusGrid, GridFn> read_grid_fn(std::istream& in) {
  std::string magic;
  int dims = 0, n_modes = 0;
  double h = 0.0;
  in >> magic >> dims >> n_modes >> h;
  if (!in || magic != "pgdn-grid")
    throw quantize_error("read_grid_fn: malformed header");
  if (in.get() != '\n')
    throw quantize_error("read_grid_fn: malformed header terminator");
  TorusGrid grid = TorusGrid::create(dims, n_modes, h);
  GridFn f(grid.size());
  in.read(reinterpret_cast<char*>(f.data()),
          static_cast<std::streamsize>(f.size() * sizeof(f[0])));
  if (in.gcount() !=
      static_cast<std::streamsize>(f.size() * sizeof(f[0])))
    throw quantize_error("read_grid_fn: truncated payload");
  return {grid, f};
}

}  // namespace pgdn::quantize
