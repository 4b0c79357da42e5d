#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>
#include <sstream>

#include "pgdn/eikonal.hpp"
#include "pgdn/quantize.hpp"
#include "pgdn/transport.hpp"
#include "test_models.hpp"

using namespace pgdn;
using eikonal::ModelSpec;
using eikonal::PhaseJet;
using quantize::CutoffSpec;
using quantize::DNSymbol;
using quantize::GridFn;
using quantize::TorusGrid;
using quantize::quantize_error;
using symring::CRat;
using symring::EvalPoint;
using symring::SymExpr;
using transport::AmplitudeJet;

namespace {

const std::complex<double> kI{0.0, 1.0};

double urand(std::mt19937_64& rng) {
  return 2.0 * ((rng() >> 11) * 0x1p-53) - 1.0;
}

GridFn random_fn(const TorusGrid& grid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GridFn f(grid.size());
  for (auto& v : f) v = {urand(rng), urand(rng)};
  return f;
}

GridFn single_mode(const TorusGrid& grid, const std::vector<int>& k) {
  GridFn f(grid.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    std::vector<double> y = grid.node(i);
    double phase = 0.0;
    for (int a = 0; a < grid.dims; ++a) phase += y[a] * k[a];
    f[i] = std::polar(1.0, phase);
  }
  return f;
}

double rel_err(const GridFn& got, const GridFn& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num = std::max(num, std::abs(got[i] - want[i]));
    den = std::max(den, std::abs(want[i]));
  }
  return num / den;
}

double max_abs(const GridFn& f) {
  double m = 0.0;
  for (const auto& v : f) m = std::max(m, std::abs(v));
  return m;
}

ModelSpec free_model(int d, const mpq_class& mu, int M) {
  return ModelSpec::create(d, mu, M, {}, "free");
}

ModelSpec airy_model(int d, const mpq_class& c, const mpq_class& mu, int M) {
  std::map<std::pair<int, int>, SymExpr> table;
  table.emplace(std::make_pair(1, 0), SymExpr::constant(d, CRat(c)));
  return ModelSpec::create(d, mu, M, std::move(table), "airy");
}

struct Jets {
  PhaseJet phase;
  AmplitudeJet amps;
};

Jets solve(const ModelSpec& model) {
  PhaseJet phase = eikonal::solve_eikonal(model);
  AmplitudeJet amps = transport::solve_transport(model, phase);
  return {std::move(phase), std::move(amps)};
}

}  // namespace

TEST_CASE("grid validation, layout, and the frequency window") {
  TorusGrid g = TorusGrid::create(1, 64, 0.25);
  CHECK(g.size() == 64);
  CHECK(g.node(0)[0] == 0.0);
  CHECK(g.node(1)[0] == doctest::Approx(2.0 * 3.14159265358979312 / 64));
  CHECK(g.freq(5) == std::vector<int>{5});
  CHECK(g.freq(32) == std::vector<int>{-32});
  CHECK(g.freq(63) == std::vector<int>{-1});
  CHECK(g.eta(3)[0] == doctest::Approx(0.75));

  TorusGrid g2 = TorusGrid::create(2, 16, 0.5);
  CHECK(g2.size() == 256);
  CHECK(g2.freq(1) == std::vector<int>{0, 1});
  CHECK(g2.freq(16) == std::vector<int>{1, 0});
  CHECK(g2.freq(255) == std::vector<int>{-1, -1});
  CHECK(g2.node(17) == std::vector<double>{g2.node(16)[0], g2.node(1)[1]});

  CHECK_THROWS_AS(TorusGrid::create(0, 64, 0.25), quantize_error);
  CHECK_THROWS_AS(TorusGrid::create(1, 48, 0.25), quantize_error);
  CHECK_THROWS_AS(TorusGrid::create(1, 64, 0.0), quantize_error);
  CHECK_THROWS_AS(TorusGrid::create(1, 64, -0.25), quantize_error);
  CHECK_THROWS_AS(TorusGrid::create(1, 32, 0.1), quantize_error);
  CHECK_NOTHROW(TorusGrid::create(1, 32, 0.25));
}

TEST_CASE("bump cutoff plateau, support, golden values, and derivatives") {
  for (double s : {0.0, 0.3, -0.7, 1.0, -1.0})
    CHECK(CutoffSpec::bump(s) == 1.0);
  for (double s : {2.0, -2.0, 2.5, -3.0, 10.0})
    CHECK(CutoffSpec::bump(s) == 0.0);

  CHECK(CutoffSpec::bump(1.5) == 0.5);
  CHECK(CutoffSpec::bump(-1.5) == 0.5);
  CHECK(CutoffSpec::bump(1.25) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-8.0 / 3.0))).epsilon(1e-15));

  double prev = 1.0;
  for (int i = 1; i <= 40; ++i) {
    double v = CutoffSpec::bump(1.0 + 0.025 * i);
    CHECK(v <= prev);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    prev = v;
  }

  for (double s : {0.5, 1.0, 2.0, 2.5, -0.5, -2.5}) {
    CHECK(CutoffSpec::bump_d1(s) == 0.0);
    CHECK(CutoffSpec::bump_d2(s) == 0.0);
  }
  const double step = 1e-3;
  for (double s : {1.1, 1.3, 1.5, 1.75, 1.9, -1.4}) {
    double fd1 = (-CutoffSpec::bump(s + 2 * step) +
                  8 * CutoffSpec::bump(s + step) -
                  8 * CutoffSpec::bump(s - step) +
                  CutoffSpec::bump(s - 2 * step)) /
                 (12 * step);
    double fd2 = (-CutoffSpec::bump_d1(s + 2 * step) +
                  8 * CutoffSpec::bump_d1(s + step) -
                  8 * CutoffSpec::bump_d1(s - step) +
                  CutoffSpec::bump_d1(s - 2 * step)) /
                 (12 * step);
    CHECK(CutoffSpec::bump_d1(s) == doctest::Approx(fd1).epsilon(1e-6));
    CHECK(CutoffSpec::bump_d2(s) == doctest::Approx(fd2).epsilon(1e-6));
  }
  CHECK(CutoffSpec::bump_d1(-1.5) == -CutoffSpec::bump_d1(1.5));
  CHECK(CutoffSpec::bump_d2(-1.5) == CutoffSpec::bump_d2(1.5));

  CHECK_THROWS_AS(CutoffSpec::create(0.0, 0.5), quantize_error);
  CHECK_THROWS_AS(CutoffSpec::create(2.0 / 3.0, 0.5), quantize_error);
  CHECK_THROWS_AS(CutoffSpec::create(0.1, 0.0), quantize_error);
  CHECK_NOTHROW(CutoffSpec::create(0.1, 0.05));
}

TEST_CASE("cutoff_Phi plateau, support, and factorization") {
  CutoffSpec spec = CutoffSpec::create(0.3, 0.5);
  const double h = 0.25, mu = 0.5, eta1 = 0.5;
  const double wa = std::pow(h, spec.eps);
  const double wb = spec.delta * std::hypot(eta1, mu);

  CHECK(quantize::cutoff_Phi(0.0, eta1, h, mu, spec) == 1.0);
  CHECK(quantize::cutoff_Phi(0.99 * std::min(wa, wb), eta1, h, mu, spec) ==
        1.0);
  CHECK(quantize::cutoff_Phi(2.0 * std::max(wa, wb), eta1, h, mu, spec) ==
        0.0);
  CHECK(quantize::cutoff_Phi(5.0, eta1, h, mu, spec) == 0.0);

  double t_mid = 1.5 * std::min(wa, wb);
  double direct = CutoffSpec::bump(t_mid / wa) * CutoffSpec::bump(t_mid / wb);
  CHECK(quantize::cutoff_Phi(t_mid, eta1, h, mu, spec) == direct);
  CHECK(direct > 0.0);
  CHECK(direct < 1.0);

  CHECK_THROWS_AS(quantize::cutoff_Phi(0.1, eta1, 0.0, mu, spec),
                  quantize_error);
  CHECK_THROWS_AS(quantize::cutoff_Phi(0.1, eta1, h, 0.0, spec),
                  quantize_error);
}

TEST_CASE("op_apply identity, multipliers, and linearity") {
  TorusGrid grid = TorusGrid::create(1, 256, 0.0625);
  GridFn f = random_fn(grid, 11);

  GridFn id = quantize::op_apply(
      grid, [](const auto&, const auto&) { return 1.0; }, f);
  CHECK(rel_err(id, f) <= 1e-12);
  GridFn ones(grid.size(), 1.0);
  CHECK(rel_err(quantize::op_apply_freq(grid, ones, f), f) <= 1e-12);

  GridFn round_trip = quantize::fft_backward(grid, quantize::fft_forward(grid, f));
  CHECK(rel_err(round_trip, f) <= 1e-12);

  GridFn mode = single_mode(grid, {5});
  GridFn m1 = quantize::op_apply(
      grid, [](const auto&, const auto& eta) { return eta[0]; }, mode);
  GridFn want = mode;
  for (auto& v : want) v *= grid.h * 5;
  CHECK(rel_err(m1, want) <= 1e-12);

  GridFn m2 = quantize::op_apply(
      grid,
      [](const auto& y, const auto&) { return std::exp(kI * y[0]); }, f);
  GridFn want2 = f;
  for (std::size_t i = 0; i < want2.size(); ++i)
    want2[i] *= std::exp(kI * grid.node(i)[0]);
  CHECK(rel_err(m2, want2) <= 1e-12);

  auto sym = [](const std::vector<double>& y, const std::vector<double>& eta) {
    return eta[0] + std::exp(kI * y[0]);
  };
  GridFn g = random_fn(grid, 12);
  GridFn combo(grid.size());
  for (std::size_t i = 0; i < combo.size(); ++i)
    combo[i] = 2.0 * f[i] + 3.0 * kI * g[i];
  GridFn lhs = quantize::op_apply(grid, sym, combo);
  GridFn of = quantize::op_apply(grid, sym, f);
  GridFn og = quantize::op_apply(grid, sym, g);
  GridFn rhs(grid.size());
  for (std::size_t i = 0; i < rhs.size(); ++i)
    rhs[i] = 2.0 * of[i] + 3.0 * kI * og[i];
  CHECK(rel_err(lhs, rhs) <= 1e-12);

  TorusGrid g3 = TorusGrid::create(2, 16, 0.5);
  GridFn f3 = random_fn(g3, 13);
  GridFn id3 = quantize::op_apply(
      g3, [](const auto&, const auto&) { return 1.0; }, f3);
  CHECK(rel_err(id3, f3) <= 1e-12);
  GridFn mode3 = single_mode(g3, {3, -2});
  GridFn m3 = quantize::op_apply(
      g3, [](const auto&, const auto& eta) { return eta[1]; }, mode3);
  GridFn want3 = mode3;
  for (auto& v : want3) v *= g3.h * -2;
  CHECK(rel_err(m3, want3) <= 1e-12);

  GridFn wrong(grid.size() - 1);
  CHECK_THROWS_AS(quantize::op_apply_freq(grid, wrong, f), quantize_error);
}

TEST_CASE("free-model parametrix: boundary data, closed form, and decay") {
  Jets jets = solve(free_model(2, mpq_class(1, 2), 4));
  CutoffSpec spec = CutoffSpec::create(0.3, 0.5);
  TorusGrid grid = TorusGrid::create(1, 64, 0.25);
  const double mu = 0.5;

  GridFn f = random_fn(grid, 21);
  GridFn bump_mult(grid.size());
  for (std::size_t m = 0; m < bump_mult.size(); ++m)
    bump_mult[m] = CutoffSpec::bump(grid.eta(m)[0]);
  GridFn boundary =
      quantize::evaluate_parametrix(jets.phase, jets.amps, spec, grid, f, 0.0);
  CHECK(rel_err(boundary, quantize::op_apply_freq(grid, bump_mult, f)) <=
        1e-12);

  GridFn mode = single_mode(grid, {2});
  const double eta1 = grid.h * 2;
  const std::complex<double> rho = symring::rho_value(eta1, mu);
  for (double t : {0.1, 0.3}) {
    GridFn u =
        quantize::evaluate_parametrix(jets.phase, jets.amps, spec, grid, mode, t);
    GridFn want = mode;
    for (auto& v : want)
      v *= std::exp(kI * rho * t / grid.h) *
           quantize::cutoff_Phi(t, eta1, grid.h, mu, spec);
    CHECK(rel_err(u, want) <= 1e-11);
  }

  GridFn u1 =
      quantize::evaluate_parametrix(jets.phase, jets.amps, spec, grid, mode, 0.1);
  GridFn u2 =
      quantize::evaluate_parametrix(jets.phase, jets.amps, spec, grid, mode, 0.3);
  CHECK(max_abs(u2) / max_abs(u1) ==
        doctest::Approx(std::exp(-0.2 * rho.imag() / grid.h)).epsilon(1e-10));
}

TEST_CASE("free-model boundary derivative matches the multiplier rho * bump") {
  Jets jets = solve(free_model(2, mpq_class(1, 2), 4));
  CutoffSpec spec = CutoffSpec::create(0.3, 0.5);
  TorusGrid grid = TorusGrid::create(1, 64, 0.25);
  GridFn f = random_fn(grid, 31);

  const double dt = 0.003 * grid.h;
  auto u_at = [&](double t) {
    return quantize::evaluate_parametrix(jets.phase, jets.amps, spec, grid, f,
                                         t);
  };
  GridFn up1 = u_at(dt), up2 = u_at(2 * dt), um1 = u_at(-dt), um2 = u_at(-2 * dt);
  GridFn dn(grid.size());
  for (std::size_t i = 0; i < dn.size(); ++i)
    dn[i] = -kI * grid.h *
            (-up2[i] + 8.0 * up1[i] - 8.0 * um1[i] + um2[i]) / (12.0 * dt);

  GridFn mult(grid.size());
  for (std::size_t m = 0; m < mult.size(); ++m) {
    double eta1 = grid.eta(m)[0];
    mult[m] = symring::rho_value(eta1, 0.5) * CutoffSpec::bump(eta1);
  }
  CHECK(rel_err(dn, quantize::op_apply_freq(grid, mult, f)) <= 1e-10);
}

TEST_CASE("y-dependent model goes through the general path") {
  std::map<std::pair<int, int>, SymExpr> table;
  table.emplace(std::make_pair(1, 0),
                SymExpr::y(2, 1).scaled(CRat(mpq_class(1, 8))));
  ModelSpec model = ModelSpec::create(2, mpq_class(1, 2), 4, std::move(table));
  Jets jets = solve(model);
  CutoffSpec spec = CutoffSpec::create(0.3, 0.5);
  TorusGrid grid = TorusGrid::create(1, 16, 0.5);

  GridFn f = random_fn(grid, 41);
  GridFn bump_mult(grid.size());
  for (std::size_t m = 0; m < bump_mult.size(); ++m)
    bump_mult[m] = CutoffSpec::bump(grid.eta(m)[0]);
  GridFn boundary =
      quantize::evaluate_parametrix(jets.phase, jets.amps, spec, grid, f, 0.0);
  CHECK(rel_err(boundary, quantize::op_apply_freq(grid, bump_mult, f)) <=
        1e-12);

  const double t = 0.05;
  GridFn g = random_fn(grid, 42);
  GridFn combo(grid.size());
  for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = f[i] - 2.0 * kI * g[i];
  GridFn lhs =
      quantize::evaluate_parametrix(jets.phase, jets.amps, spec, grid, combo, t);
  GridFn uf =
      quantize::evaluate_parametrix(jets.phase, jets.amps, spec, grid, f, t);
  GridFn ug =
      quantize::evaluate_parametrix(jets.phase, jets.amps, spec, grid, g, t);
  GridFn rhs(grid.size());
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = uf[i] - 2.0 * kI * ug[i];
  CHECK(rel_err(lhs, rhs) <= 1e-12);

  auto sym = quantize::parametrix_symbol(jets.phase, jets.amps, spec, t, grid.h);
  EvalPoint pt;
  pt.y = {1.3};
  pt.eta1 = 0.5;
  pt.mu = 0.5;
  std::complex<double> phi_v =
      testing::eval_jet(jets.phase.phi_series(), t, grid.h, pt);
  std::complex<double> amp_v =
      testing::eval_jet(jets.amps.a_series(), t, grid.h, pt);
  std::complex<double> want = std::exp(kI * phi_v / grid.h) *
                              quantize::cutoff_Phi(t, 0.5, grid.h, 0.5, spec) *
                              CutoffSpec::bump(0.5) * amp_v;
  std::complex<double> got = sym({1.3}, {0.5});
  CHECK(std::abs(got - want) <= 1e-12 * std::abs(want));
}

TEST_CASE("dn_symbol closed forms and guards") {
  const mpq_class mu(1, 2);
  TorusGrid grid = TorusGrid::create(1, 64, 0.25);

  Jets free = solve(free_model(2, mu, 4));
  DNSymbol n00 = quantize::dn_symbol(free.phase, free.amps, 0, 0, grid);
  CHECK(n00.s == 0);
  CHECK(n00.k == 0);
  for (std::size_t m = 0; m < grid.size(); ++m) {
    double eta1 = grid.eta(m)[0];
    double b = CutoffSpec::bump(eta1);
    std::complex<double> want = b * symring::rho_value(eta1, 0.5);
    if (b == 0.0)
      CHECK(n00.field[m] == std::complex<double>{0.0, 0.0});
    else
      CHECK(std::abs(n00.field[m] - want) <= 1e-13 * std::abs(want));
  }

  const mpq_class c(2);
  Jets airy = solve(airy_model(2, c, mu, 4));
  DNSymbol n10 = quantize::dn_symbol(airy.phase, airy.amps, 1, 0, grid);
  DNSymbol n12 = quantize::dn_symbol(airy.phase, airy.amps, 1, 2, grid);
  for (std::size_t m = 0; m < grid.size(); ++m) {
    double eta1 = grid.eta(m)[0];
    double b = CutoffSpec::bump(eta1);
    if (b == 0.0) continue;
    std::complex<double> rho = symring::rho_value(eta1, 0.5);
    std::complex<double> w10 = b * (rho - kI * grid.h * 0.5 / (rho * rho));
    std::complex<double> w12 = b * (rho * rho * rho - kI * grid.h * 0.5);
    CHECK(std::abs(n10.field[m] - w10) <= 1e-12 * std::abs(w10));
    CHECK(std::abs(n12.field[m] - w12) <= 1e-12 * std::abs(w12));
  }

  CHECK_THROWS_AS(quantize::dn_symbol(free.phase, free.amps, 0, 3, grid),
                  quantize_error);
  CHECK_NOTHROW(quantize::dn_symbol(airy.phase, airy.amps, 1, 5, grid));
  CHECK_THROWS_AS(quantize::dn_symbol(airy.phase, airy.amps, 1, 6, grid),
                  quantize_error);
  CHECK_THROWS_AS(quantize::dn_symbol(airy.phase, airy.amps, 6, 0, grid),
                  quantize_error);
  CHECK_THROWS_AS(quantize::dn_symbol(airy.phase, airy.amps, -1, 0, grid),
                  quantize_error);

  std::map<std::pair<int, int>, SymExpr> table;
  table.emplace(std::make_pair(1, 0),
                SymExpr::y(2, 1).scaled(CRat(mpq_class(1, 8))));
  Jets ydep = solve(ModelSpec::create(2, mu, 4, std::move(table)));
  CHECK_NOTHROW(quantize::dn_symbol(ydep.phase, ydep.amps, 0, 0, grid));
  CHECK_THROWS_AS(quantize::dn_symbol(ydep.phase, ydep.amps, 1, 0, grid),
                  quantize_error);

  Jets free3 = solve(free_model(3, mu, 4));
  CHECK_THROWS_AS(quantize::dn_symbol(free3.phase, free3.amps, 0, 0, grid),
                  quantize_error);
  TorusGrid grid2 = TorusGrid::create(2, 16, 0.5);
  DNSymbol n3 = quantize::dn_symbol(free3.phase, free3.amps, 0, 0, grid2);
  for (std::size_t m = 0; m < grid2.size(); ++m) {
    double eta1 = grid2.eta(m)[0];
    double b = CutoffSpec::bump(eta1);
    std::complex<double> want = b * symring::rho_value(eta1, 0.5);
    CHECK(std::abs(n3.field[m] - want) <= 1e-13);
  }
}

TEST_CASE("grid function dumps round-trip") {
  TorusGrid grid = TorusGrid::create(1, 32, 0.25);
  GridFn f = random_fn(grid, 51);

  std::stringstream buf;
  quantize::write_grid_fn(buf, grid, f);
  std::string text = buf.str();
  CHECK(text.substr(0, 10) == "pgdn-grid ");

  auto [grid2, f2] = quantize::read_grid_fn(buf);
  CHECK(grid2.dims == grid.dims);
  CHECK(grid2.n_modes == grid.n_modes);
  CHECK(grid2.h == grid.h);
  REQUIRE(f2.size() == f.size());
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(f2[i] == f[i]);

  std::stringstream bad("pgdn-mesh 1 32 0.25\n");
  CHECK_THROWS_AS(quantize::read_grid_fn(bad), quantize_error);
  std::stringstream trunc(text.substr(0, text.size() - 8));
  CHECK_THROWS_AS(quantize::read_grid_fn(trunc), quantize_error);
}
