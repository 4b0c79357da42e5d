#include "pgdn/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <utility>

#define LAPACK_COMPLEX_CPP
#include <lapacke.h>

#include "pgdn/symring.hpp"

namespace pgdn::oracle {

namespace {

using CLD = std::complex<long double>;

constexpr std::complex<double> kI{0.0, 1.0};

// ---------------------------------------------------------------------------
// Complex Airy function.
//
// Maclaurin series in 128-bit arithmetic inside |z| <= 9: the series for
// Ai on the positive axis cancels down from terms of size e^{(4/3)|z|^{3/2}},
// which costs up to 16 digits at the switch radius, so double precision
// is not enough while quad headroom keeps the result at full double
// accuracy.  Beyond the radius the compound large-argument expansion is
// used directly for |arg z| <= 2pi/3 and through the rotation identity
// elsewhere; at |z| = 9 its optimally truncated tail is below 1e-15.

struct QC {
  __float128 re = 0;
  __float128 im = 0;
};

inline QC qc_add(QC a, QC b) { return {a.re + b.re, a.im + b.im}; }

inline QC qc_mul(QC a, QC b) {
  return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}

inline QC qc_scale(QC a, __float128 s) { return {a.re * s, a.im * s}; }

inline __float128 qc_mag2(QC a) { return a.re * a.re + a.im * a.im; }

// Ai(0) and Ai'(0) as hi+lo double pairs (3^{-2/3}/Gamma(2/3) and
// -3^{-1/3}/Gamma(1/3)), accurate to ~1e-33.
const QC kAi0 = {(__float128)3.55028053887817219e-01 +
                     (__float128)2.05233632436211994e-17,
                 0};
const QC kAip0 = {(__float128)-2.58819403792806824e-01 +
                      (__float128)2.52224311161083207e-17,
                  0};

struct AiryLD {
  CLD ai;
  CLD aip;
};

AiryLD airy_series(CLD zl) {
  const QC z{(__float128)zl.real(), (__float128)zl.imag()};
  const QC z2 = qc_mul(z, z);
  const QC z3 = qc_mul(z2, z);

  // Term values at index k for f, g and their derivatives:
  //   f   = sum a_k,  a_0 = 1,      a_k = a_{k-1} z^3 / ((3k-1)(3k))
  //   g   = sum b_k,  b_0 = z,      b_k = b_{k-1} z^3 / ((3k)(3k+1))
  //   f'  = sum c_k,  c_1 = z^2/2,  c_k = c_{k-1} z^3 k / ((k-1)(3k-1)(3k))
  //   g'  = sum e_k,  e_0 = 1,      e_k = e_{k-1} z^3 / ((3k-2)(3k))
  QC a{1, 0};
  QC b = z;
  QC c{0, 0};
  QC e{1, 0};
  QC f = a, g = b, fp = c, gp = e;

  __float128 msq = 1;
  for (int k = 1; k <= 240; ++k) {
    const __float128 k3 = (__float128)(3 * k);
    a = qc_scale(qc_mul(a, z3), 1 / ((k3 - 1) * k3));
    b = qc_scale(qc_mul(b, z3), 1 / (k3 * (k3 + 1)));
    e = qc_scale(qc_mul(e, z3), 1 / ((k3 - 2) * k3));
    if (k == 1) {
      c = qc_scale(z2, (__float128)0.5);
    } else {
      c = qc_scale(qc_mul(c, z3),
                   (__float128)k / ((__float128)(k - 1) * (k3 - 1) * k3));
    }
    f = qc_add(f, a);
    g = qc_add(g, b);
    fp = qc_add(fp, c);
    gp = qc_add(gp, e);

    const __float128 tm =
        std::max({qc_mag2(a), qc_mag2(b), qc_mag2(c), qc_mag2(e)});
    msq = std::max({msq, qc_mag2(f), qc_mag2(g)});
    if (tm <= msq * (__float128)1e-78) break;
  }

  const QC ai = qc_add(qc_mul(kAi0, f), qc_mul(kAip0, g));
  const QC aip = qc_add(qc_mul(kAi0, fp), qc_mul(kAip0, gp));
  return {CLD((long double)ai.re, (long double)ai.im),
          CLD((long double)aip.re, (long double)aip.im)};
}

// Large-argument expansion, valid here for |arg z| <= 2pi/3:
//   Ai(z)  ~ e^{-xi} z^{-1/4} / (2 sqrt(pi)) sum (-1)^k u_k xi^{-k}
//   Ai'(z) ~ -e^{-xi} z^{1/4} / (2 sqrt(pi)) sum (-1)^k v_k xi^{-k}
// with xi = (2/3) z^{3/2}; truncated at the smallest term.
AiryLD airy_asymptotic(CLD z) {
  const CLD lz = std::log(z);
  const CLD z14 = std::exp(0.25L * lz);
  const CLD xi = (2.0L / 3.0L) * std::exp(1.5L * lz);
  const CLD minv = -1.0L / xi;

  CLD su = 1, sv = 1, p = 1;
  long double u = 1, prev = std::numeric_limits<long double>::max();
  for (int k = 1; k <= 48; ++k) {
    u *= (long double)((6 * k - 5) * (6 * k - 3) * (6 * k - 1)) /
         (216.0L * k * (2 * k - 1));
    const long double v = u * (6 * k + 1) / (long double)(1 - 6 * k);
    p *= minv;
    const long double tm = u * std::abs(p);
    if (tm >= prev) break;
    prev = tm;
    su += u * p;
    sv += v * p;
    if (tm <= 1e-21L * std::abs(su)) break;
  }

  const long double c2p = 0.28209479177387814347403972578039L;  // 1/(2 sqrt(pi))
  const CLD epre = std::exp(-xi) * c2p;
  return {epre / z14 * su, -epre * z14 * sv};
}

AiryLD airy_eval(CLD z) {
  const long double r = std::hypot(z.real(), z.imag());
  if (r <= 9.0L) return airy_series(z);

  const long double th = std::atan2(z.imag(), z.real());
  const long double two_thirds_pi = 2.0943951023931954923084289221863L;
  if (std::fabs(th) <= two_thirds_pi) return airy_asymptotic(z);

  // Rotation identity: Ai(z) = -w Ai(w z) - conj(w) Ai(conj(w) z) with
  // w = e^{2 pi i/3}; both rotated arguments land in |arg| <= 2pi/3.
  const CLD w(-0.5L, 0.86602540378443864676372317075294L);
  const CLD wb = std::conj(w);
  const AiryLD p = airy_asymptotic(w * z);
  const AiryLD q = airy_asymptotic(wb * z);
  return {-(w * p.ai + wb * q.ai), -(wb * p.aip + w * q.aip)};
}

void require(bool ok, const char* what) {
  if (!ok) throw oracle_error(what);
}

double l2_norm(const quantize::GridFn& v) {
  double s = 0.0;
  for (const auto& x : v) s += std::norm(x);
  return std::sqrt(s);
}

}  // namespace

AiryValue airy_ai(std::complex<double> z) {
  require(std::isfinite(z.real()) && std::isfinite(z.imag()),
          "airy_ai: non-finite argument");
  const AiryLD v = airy_eval(CLD(z.real(), z.imag()));
  return {std::complex<double>((double)v.ai.real(), (double)v.ai.imag()),
          std::complex<double>((double)v.aip.real(), (double)v.aip.imag())};
}

std::complex<double> airy_dn(double eta1, double mu, double c, double h) {
  require(std::isfinite(eta1) && std::isfinite(mu) && std::isfinite(c) &&
              std::isfinite(h),
          "airy_dn: non-finite parameter");
  require(mu != 0.0, "airy_dn: mu must be nonzero");
  require(c != 0.0, "airy_dn: c must be nonzero");
  require(h > 0.0, "airy_dn: h must be positive");

  const CLD z((long double)eta1, (long double)-mu);
  const long double s0 =
      std::pow((long double)h * h * c * c, -1.0L / 3.0L);
  CLD s(s0, 0.0L);
  if (c < 0.0) {
    const CLD w(-0.5L, 0.86602540378443864676372317075294L);
    s *= (mu > 0.0 ? w : std::conj(w));
  }

  const AiryLD v = airy_eval(s * z);
  require(std::hypot(v.ai.real(), v.ai.imag()) > 1e-4800L,
          "airy_dn: vanishing Airy denominator");
  const CLD dn = CLD(0.0L, -(long double)h) * (s * (long double)c) * v.aip /
                 v.ai;
  return {(double)dn.real(), (double)dn.imag()};
}

std::vector<double> fd_weights(double x0, const std::vector<double>& x,
                               int m) {
  const int n = (int)x.size();
  require(n >= 1 && m >= 0 && n > m, "fd_weights: need more nodes than order");
  std::vector<double> w((std::size_t)n * (m + 1), 0.0);
  double c1 = 1.0;
  double c4 = x[0] - x0;
  w[0] = 1.0;
  for (int i = 1; i < n; ++i) {
    const int mn = std::min(i, m);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = x[i] - x0;
    for (int j = 0; j < i; ++j) {
      const double c3 = x[i] - x[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int d = mn; d >= 1; --d) {
          w[(std::size_t)i * (m + 1) + d] =
              c1 *
              (d * w[(std::size_t)(i - 1) * (m + 1) + d - 1] -
               c5 * w[(std::size_t)(i - 1) * (m + 1) + d]) /
              c2;
        }
        w[(std::size_t)i * (m + 1)] =
            -c1 * c5 * w[(std::size_t)(i - 1) * (m + 1)] / c2;
      }
      for (int d = mn; d >= 1; --d) {
        w[(std::size_t)j * (m + 1) + d] =
            (c4 * w[(std::size_t)j * (m + 1) + d] -
             d * w[(std::size_t)j * (m + 1) + d - 1]) /
            c3;
      }
      w[(std::size_t)j * (m + 1)] = c4 * w[(std::size_t)j * (m + 1)] / c3;
    }
    c1 = c2;
  }
  return w;
}

std::vector<double> stretched_t_grid(double h, double im_rho, double T,
                                     int refine, double fine_per_h) {
  require(h > 0.0 && std::isfinite(h), "stretched_t_grid: bad h");
  require(T > 0.0 && std::isfinite(T), "stretched_t_grid: bad T");
  require(refine >= 1, "stretched_t_grid: refine must be >= 1");
  require(fine_per_h >= 10.0, "stretched_t_grid: fine_per_h too coarse");

  double fine = h / (fine_per_h * refine);
  double t_cut = std::min(T, 35.0 * h / std::max(im_rho, 1e-6));
  t_cut = std::min(T, std::max(t_cut, 12.0 * fine));
  int n_fine = std::max(12, (int)std::ceil(t_cut / fine));
  fine = t_cut / n_fine;

  std::vector<double> t;
  t.reserve((std::size_t)n_fine + 64);
  for (int i = 0; i <= n_fine; ++i) t.push_back(t_cut * i / n_fine);
  if (t_cut < T) {
    const double ratio = std::pow(1.05, 1.0 / refine);
    double step = fine;
    double cur = t_cut;
    for (;;) {
      step *= ratio;
      cur += step;
      if (cur >= T - 0.25 * step) {
        t.push_back(T);
        break;
      }
      t.push_back(cur);
    }
  } else {
    t.back() = T;
  }
  return t;
}

ModeODEProblem ModeODEProblem::create(double eta1, double mu, double h,
                                      Profile m_profile, double T,
                                      int refine) {
  require(mu != 0.0 && std::isfinite(mu), "mode problem: mu must be nonzero");
  require(h > 0.0 && std::isfinite(h), "mode problem: h must be positive");
  require(std::isfinite(eta1), "mode problem: bad eta1");
  require(static_cast<bool>(m_profile), "mode problem: missing m_profile");
  ModeODEProblem p;
  p.eta1 = eta1;
  p.mu = mu;
  p.h = h;
  p.m_profile = std::move(m_profile);
  const double im = symring::rho_value(eta1, mu).imag();
  p.t_grid = stretched_t_grid(h, im, T, refine);
  p.validate();
  return p;
}

void ModeODEProblem::validate() const {
  require(mu != 0.0 && std::isfinite(mu), "mode problem: mu must be nonzero");
  require(h > 0.0 && std::isfinite(h), "mode problem: h must be positive");
  require(static_cast<bool>(m_profile), "mode problem: missing m_profile");
  require(t_grid.size() >= 12, "mode problem: grid too small");
  require(t_grid.front() == 0.0, "mode problem: grid must start at 0");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    require(t_grid[i] > t_grid[i - 1], "mode problem: grid not increasing");
  require(t_grid[1] - t_grid[0] <= h / 10.0 + 1e-15,
          "mode problem: under-resolved grid (first step exceeds h/10)");
  const std::complex<double> m0 = m_profile(0.0);
  require(std::abs(m0) <= 1e-9 + 100.0 * h,
          "mode problem: m(0) violates the glancing normalization");
}

namespace {

// Banded interior discretization of -h^2 d^2/dt^2 on a fixed grid with
// (2W+1)-node stencils, shared by every mode on that grid.
struct BandSystem {
  std::vector<double> t;
  int W = 3;
  int kl = 6;
  int ldab = 19;
  int ni = 0;
  std::vector<int> j0;
  std::vector<std::vector<double>> d2;  // -h^2 * weights, per interior row
  std::vector<double> u0_coef;          // row coupling to the t = 0 value
  std::vector<double> w1;               // 7-node derivative stencil at 0
};

BandSystem build_band_system(const std::vector<double>& t, int W, double h) {
  BandSystem bs;
  bs.t = t;
  bs.W = W;
  bs.kl = 2 * W;
  bs.ldab = 3 * bs.kl + 1;
  const int nn = (int)t.size();
  const int width = 2 * W + 1;
  require(nn >= width + 2, "band system: too few nodes");
  bs.ni = nn - 2;
  bs.j0.resize(bs.ni);
  bs.d2.resize(bs.ni);
  bs.u0_coef.assign(bs.ni, 0.0);
  const double h2 = h * h;
  std::vector<double> nodes(width);
  for (int i = 1; i <= nn - 2; ++i) {
    const int j0 = std::clamp(i - W, 0, nn - width);
    for (int j = 0; j < width; ++j) nodes[j] = t[j0 + j];
    const std::vector<double> w = fd_weights(t[i], nodes, 2);
    auto& row = bs.d2[i - 1];
    row.resize(width);
    for (int j = 0; j < width; ++j) row[j] = -h2 * w[(std::size_t)j * 3 + 2];
    bs.j0[i - 1] = j0;
    if (j0 == 0) bs.u0_coef[i - 1] = row[0];
  }
  const std::vector<double> head(t.begin(), t.begin() + 7);
  const std::vector<double> w1 = fd_weights(0.0, head, 1);
  bs.w1.resize(7);
  for (int j = 0; j < 7; ++j) bs.w1[j] = w1[(std::size_t)j * 2 + 1];
  return bs;
}

struct BandFactor {
  std::vector<std::complex<double>> ab;
  std::vector<lapack_int> ipiv;
};

// Adds q on the diagonal and factors the banded interior operator.
BandFactor factor_system(const BandSystem& bs,
                         const std::vector<std::complex<double>>& q) {
  const int nn = (int)bs.t.size();
  const int width = 2 * bs.W + 1;
  BandFactor f;
  f.ab.assign((std::size_t)bs.ldab * bs.ni, 0.0);
  f.ipiv.assign(bs.ni, 0);
  for (int i = 1; i <= nn - 2; ++i) {
    const int row = i - 1;
    const int j0 = bs.j0[row];
    for (int j = 0; j < width; ++j) {
      const int col = j0 + j - 1;
      if (col < 0 || col >= bs.ni) continue;
      std::complex<double> v = bs.d2[row][j];
      if (j0 + j == i) v += q[row];
      f.ab[(std::size_t)col * bs.ldab + (std::size_t)(2 * bs.kl + row - col)] +=
          v;
    }
  }
  const lapack_int info = LAPACKE_zgbtrf(
      LAPACK_COL_MAJOR, bs.ni, bs.ni, bs.kl, bs.kl,
      reinterpret_cast<lapack_complex_double*>(f.ab.data()), bs.ldab,
      f.ipiv.data());
  require(info >= 0, "band solve: illegal argument");
  require(info == 0, "band solve: singular system (resonance)");
  return f;
}

void solve_factored(const BandSystem& bs, const BandFactor& f,
                    std::vector<std::complex<double>>& rhs) {
  const lapack_int info = LAPACKE_zgbtrs(
      LAPACK_COL_MAJOR, 'N', bs.ni, bs.kl, bs.kl, 1,
      reinterpret_cast<const lapack_complex_double*>(f.ab.data()), bs.ldab,
      f.ipiv.data(),
      reinterpret_cast<lapack_complex_double*>(rhs.data()), bs.ni);
  require(info == 0, "band solve: back-substitution failed");
}

std::complex<double> dn_from_solution(
    const BandSystem& bs, const std::vector<std::complex<double>>& u,
    double h) {
  std::complex<double> up0 = 0.0;
  for (int j = 0; j < 7; ++j) up0 += bs.w1[j] * u[j];
  return -kI * h * up0;
}

}  // namespace

ModeSolution solve_mode_ode(const ModeODEProblem& p,
                            std::complex<double> boundary_value) {
  p.validate();
  const int nn = (int)p.t_grid.size();
  const BandSystem bs = build_band_system(p.t_grid, 3, p.h);

  std::vector<std::complex<double>> q(bs.ni);
  const std::complex<double> base(p.eta1, -p.mu);
  for (int i = 1; i <= nn - 2; ++i)
    q[i - 1] = base + p.m_profile(p.t_grid[i]);

  const BandFactor f = factor_system(bs, q);
  std::vector<std::complex<double>> rhs(bs.ni, 0.0);
  for (int r = 0; r < bs.ni; ++r)
    rhs[r] = -bs.u0_coef[r] * boundary_value;
  solve_factored(bs, f, rhs);

  ModeSolution out;
  out.t = p.t_grid;
  out.u.resize(nn);
  out.u[0] = boundary_value;
  for (int r = 0; r < bs.ni; ++r) out.u[r + 1] = rhs[r];
  out.u[nn - 1] = 0.0;
  out.dn_value = dn_from_solution(bs, out.u, p.h);
  return out;
}

SampledSymbol sampled_symbol(const eikonal::ModelSpec& model, double h) {
  model.validate();
  require(model.d == 2, "sampled_symbol: needs a d = 2 model");
  require(h > 0.0 && std::isfinite(h), "sampled_symbol: bad h");
  struct Row {
    int k;
    int j;
    symring::SymExpr expr;
  };
  std::vector<Row> rows;
  for (const auto& [kj, expr] : model.m_table)
    rows.push_back({kj.first, kj.second, expr});
  const double mu_d = model.mu.get_d();
  return [rows = std::move(rows), mu_d, h](double t, double y,
                                           double eta) -> std::complex<double> {
    symring::EvalPoint pt;
    pt.y = {y};
    pt.eta1 = eta;
    pt.mu = mu_d;
    std::complex<double> acc = 0.0;
    for (const auto& r : rows)
      acc += std::pow(t, r.k) * std::pow(h, r.j) * eval_numeric(r.expr, pt);
    return acc;
  };
}

BVPSolution solve_bvp_2d(const SampledSymbol& m,
                         const quantize::TorusGrid& grid,
                         const quantize::GridFn& f, double mu, double h,
                         int t_points, double T) {
  grid.validate();
  require(grid.dims == 1, "bvp solve: grid must be one-dimensional (d = 2)");
  require(static_cast<bool>(m), "bvp solve: missing symbol");
  require(mu != 0.0 && std::isfinite(mu), "bvp solve: mu must be nonzero");
  require(h > 0.0 && std::isfinite(h), "bvp solve: h must be positive");
  require(T > 0.0 && std::isfinite(T), "bvp solve: bad T");
  require(f.size() == grid.size(), "bvp solve: boundary data size mismatch");

  const int n = grid.n_modes;
  std::vector<double> etas(n), ys(n);
  std::vector<int> ks(n);
  for (int i = 0; i < n; ++i) {
    etas[i] = grid.eta((std::size_t)i)[0];
    ys[i] = grid.node((std::size_t)i)[0];
    ks[i] = grid.freq((std::size_t)i)[0];
  }

  double im_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    im_min = std::min(im_min, symring::rho_value(etas[i], mu).imag());

  int refine = 1;
  std::vector<double> t = stretched_t_grid(h, im_min, T, refine, 200.0);
  if (t_points > 0 && (int)t.size() < t_points) {
    refine = (int)((t_points + t.size() - 1) / t.size());
    t = stretched_t_grid(h, im_min, T, refine, 200.0);
  }
  const int nn = (int)t.size();
  const int ni = nn - 2;
  require((double)ni * n * n <= 6.0e7,
          "bvp solve: resolution guard (layer storage too large)");

  const BandSystem bs = build_band_system(t, 2, h);

  // Sample the symbol per interior layer; layers where the values do not
  // depend on y keep no coupling matrix.
  std::vector<std::vector<std::complex<double>>> coupling(ni);
  std::vector<std::vector<std::complex<double>>> mbar(
      ni, std::vector<std::complex<double>>(n));
  std::vector<std::complex<double>> vals((std::size_t)n * n);
  bool any_coupling = false;
  for (int i = 0; i < ni; ++i) {
    const double ti = t[i + 1];
    bool constant_in_y = true;
    for (int mo = 0; mo < n; ++mo) {
      for (int no = 0; no < n; ++no) {
        const std::complex<double> v = m(ti, ys[no], etas[mo]);
        vals[(std::size_t)no * n + mo] = v;
        if (v != vals[mo]) constant_in_y = false;
      }
    }
    if (constant_in_y) {
      for (int mo = 0; mo < n; ++mo) mbar[i][mo] = vals[mo];
    } else {
      for (int mo = 0; mo < n; ++mo) {
        std::complex<double> mean = 0.0;
        for (int no = 0; no < n; ++no) mean += vals[(std::size_t)no * n + mo];
        mbar[i][mo] = mean / (double)n;
      }
      any_coupling = true;
      auto& cp = coupling[i];
      cp.resize((std::size_t)n * n);
      for (int no = 0; no < n; ++no)
        for (int mo = 0; mo < n; ++mo)
          cp[(std::size_t)no * n + mo] =
              vals[(std::size_t)no * n + mo] *
              std::polar(1.0, ys[no] * ks[mo]);
    }
  }
  vals.clear();
  vals.shrink_to_fit();

  const quantize::GridFn fhat = quantize::fft_forward(grid, f);

  std::vector<BandFactor> factors(n);
  std::vector<std::complex<double>> q(ni);
  for (int mo = 0; mo < n; ++mo) {
    const std::complex<double> base(etas[mo], -mu);
    for (int i = 0; i < ni; ++i) q[i] = base + mbar[i][mo];
    factors[mo] = factor_system(bs, q);
  }

  // U[mo][i]: interior iterate per mode; initial decoupled solve.
  std::vector<std::vector<std::complex<double>>> U(n);
  std::vector<std::complex<double>> rhs(ni);
  for (int mo = 0; mo < n; ++mo) {
    for (int r = 0; r < ni; ++r) rhs[r] = -bs.u0_coef[r] * fhat[mo];
    solve_factored(bs, factors[mo], rhs);
    U[mo] = rhs;
  }

  BVPSolution out;
  const int max_iters = 150;
  if (!any_coupling) {
    out.converged = true;
    out.iterations = 1;
  } else {
    quantize::GridFn layer(n), coupled(n);
    std::vector<std::vector<std::complex<double>>> R(
        ni, std::vector<std::complex<double>>(n));
    std::vector<std::vector<std::complex<double>>> Unew(
        n, std::vector<std::complex<double>>(ni));
    for (int it = 1; it <= max_iters; ++it) {
      for (int i = 0; i < ni; ++i) {
        if (coupling[i].empty()) {
          std::fill(R[i].begin(), R[i].end(), std::complex<double>(0.0));
          continue;
        }
        for (int no = 0; no < n; ++no) {
          std::complex<double> acc = 0.0;
          const auto* row = &coupling[i][(std::size_t)no * n];
          for (int mo = 0; mo < n; ++mo) acc += row[mo] * U[mo][i];
          layer[no] = acc;
        }
        coupled = quantize::fft_forward(grid, layer);
        for (int mo = 0; mo < n; ++mo)
          R[i][mo] = coupled[mo] - mbar[i][mo] * U[mo][i];
      }
      double diff2 = 0.0, base2 = 0.0;
      for (int mo = 0; mo < n; ++mo) {
        for (int r = 0; r < ni; ++r)
          rhs[r] = -bs.u0_coef[r] * fhat[mo] - R[r][mo];
        solve_factored(bs, factors[mo], rhs);
        for (int r = 0; r < ni; ++r) {
          diff2 += std::norm(rhs[r] - U[mo][r]);
          base2 += std::norm(rhs[r]);
        }
        Unew[mo] = rhs;
      }
      U.swap(Unew);
      out.iterations = it;
      if (diff2 <= 1e-24 * std::max(base2, 1e-300)) {
        out.converged = true;
        break;
      }
    }
  }

  quantize::GridFn dnhat(n);
  std::vector<std::complex<double>> ufull(nn);
  for (int mo = 0; mo < n; ++mo) {
    ufull[0] = fhat[mo];
    for (int r = 0; r < ni; ++r) ufull[r + 1] = U[mo][r];
    ufull[nn - 1] = 0.0;
    dnhat[mo] = dn_from_solution(bs, ufull, h);
  }
  out.dn = quantize::fft_backward(grid, dnhat);
  return out;
}

BVPSolution solve_bvp_2d(const eikonal::ModelSpec& model,
                         const quantize::TorusGrid& grid,
                         const quantize::GridFn& f, double h, int t_points,
                         double T) {
  return solve_bvp_2d(sampled_symbol(model, h), grid, f, model.mu.get_d(), h,
                      t_points, T);
}

NormEstimate op_norm_estimate(const OpApply& apply,
                              const OpApply& apply_adjoint,
                              const quantize::TorusGrid& grid, int iters,
                              unsigned seed) {
  grid.validate();
  require(static_cast<bool>(apply) && static_cast<bool>(apply_adjoint),
          "op_norm_estimate: missing operator callbacks");
  require(iters >= 1, "op_norm_estimate: iters must be >= 1");

  std::mt19937_64 rng(seed);
  const auto urand = [&rng]() {
    return 2.0 * ((double)(rng() >> 11) * 0x1p-53) - 1.0;
  };
  quantize::GridFn v(grid.size());
  for (auto& x : v) x = {urand(), urand()};
  const double nv = l2_norm(v);
  require(nv > 0.0, "op_norm_estimate: degenerate start vector");
  for (auto& x : v) x /= nv;

  NormEstimate est;
  double prev = -1.0;
  for (int it = 1; it <= iters; ++it) {
    quantize::GridFn w = apply(v);
    require(w.size() == v.size(), "op_norm_estimate: apply changed size");
    const double sigma = l2_norm(w);
    est.value = sigma;
    est.iterations = it;
    if (sigma == 0.0) {
      est.converged = true;
      break;
    }
    quantize::GridFn z = apply_adjoint(w);
    require(z.size() == v.size(),
            "op_norm_estimate: adjoint apply changed size");
    const double nz = l2_norm(z);
    if (nz == 0.0) break;
    for (auto& x : z) x /= nz;
    v.swap(z);
    if (prev >= 0.0 && std::abs(sigma - prev) <= 1e-10 * sigma) {
      est.converged = true;
      break;
    }
    prev = sigma;
  }
  return est;
}

DNMeasurement DNMeasurement::create(double h, double mu, int s, int k,
                                    double error_norm) {
  require(h > 0.0 && std::isfinite(h), "measurement: h must be positive");
  require(mu != 0.0 && std::isfinite(mu), "measurement: mu must be nonzero");
  require(s >= 0, "measurement: s must be >= 0");
  require(k >= 0 && k <= 3 * s + 2, "measurement: k out of range");
  require(error_norm >= 0.0 && std::isfinite(error_norm),
          "measurement: error_norm must be >= 0");
  DNMeasurement r;
  r.h = h;
  r.mu = mu;
  r.s = s;
  r.k = k;
  r.error_norm = error_norm;
  r.bound_value =
      std::pow(h, s + 1) * std::pow(std::abs(mu), -0.5 * (3 * s + 2 - k));
  return r;
}

}  // namespace pgdn::oracle
