#include "pgdn/symring.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <functional>
#include <memory>
#include <cstdint>
#include <mutex>
#include <sstream>

namespace pgdn::symring {

// ---------------------------------------------------------------------------
// Rat

namespace detail {

namespace {

mpz_class mpz_from_u128(uint128 u) {
  const std::uint64_t limbs[2] = {static_cast<std::uint64_t>(u),
                                  static_cast<std::uint64_t>(u >> 64)};
  mpz_class z;
  mpz_import(z.get_mpz_t(), 2, -1, 8, 0, 0, limbs);
  return z;
}

mpz_class mpz_from_i128(int128 v) {
  mpz_class z = mpz_from_u128(uabs128(v));
  if (v < 0) mpz_neg(z.get_mpz_t(), z.get_mpz_t());
  return z;
}

bool mpz_to_i128(const mpz_class& z, int128& out) {
  if (mpz_sizeinbase(z.get_mpz_t(), 2) > 127) return false;
  std::uint64_t limbs[2] = {0, 0};
  size_t cnt = 0;
  mpz_export(limbs, &cnt, -1, 8, 0, 0, z.get_mpz_t());
  const uint128 u =
      (static_cast<uint128>(limbs[1]) << 64) | static_cast<uint128>(limbs[0]);
  out = mpz_sgn(z.get_mpz_t()) < 0 ? -static_cast<int128>(u)
                                   : static_cast<int128>(u);
  return true;
}

}  // namespace

Rat::Rat(long long n, long long d) {
  if (d == 0) throw ring_error("Rat: zero denominator");
  int128 nn = n, dd = d;
  if (dd < 0) {
    nn = -nn;
    dd = -dd;
  }
  const uint128 g = ugcd128(uabs128(nn), static_cast<uint128>(dd));
  n_ = nn / static_cast<int128>(g);
  d_ = dd / static_cast<int128>(g);
}

mpq_class Rat::to_mpq() const {
  if (big_) return *big_;
  return mpq_class(mpz_from_i128(n_), mpz_from_i128(d_));
}

void Rat::set_canonical(const mpq_class& q) {
  int128 n, d;
  if (mpz_to_i128(q.get_num(), n) && mpz_to_i128(q.get_den(), d)) {
    n_ = n;
    d_ = d;
    big_.reset();
  } else {
    n_ = 0;
    d_ = 1;
    big_ = std::make_shared<const mpq_class>(q);
  }
}

bool Rat::add_small(int128 on, int128 od) {
  if (on == 0) return true;
  if (n_ == 0) {
    n_ = on;
    d_ = od;
    return true;
  }
  const uint128 g0 =
      ugcd128(static_cast<uint128>(d_), static_cast<uint128>(od));
  const int128 da = d_ / static_cast<int128>(g0);
  const int128 db = od / static_cast<int128>(g0);
  if (bits128(uabs128(n_)) + bits128(static_cast<uint128>(db)) > 126 ||
      bits128(uabs128(on)) + bits128(static_cast<uint128>(da)) > 126)
    return false;
  const int128 t = n_ * db + on * da;
  if (t == 0) {
    n_ = 0;
    d_ = 1;
    return true;
  }
  int128 g1 = 1;
  if (g0 != 1)
    g1 = static_cast<int128>(
        ugcd128(uabs128(t % static_cast<int128>(g0)), g0));
  if (bits128(static_cast<uint128>(da)) +
          bits128(static_cast<uint128>(od / g1)) >
      127)
    return false;
  n_ = t / g1;
  d_ = da * (od / g1);
  return true;
}

Rat& Rat::add_slow(const Rat& o, bool sub) {
  mpq_class r = to_mpq();
  if (sub) r -= o.to_mpq(); else r += o.to_mpq();
  set_canonical(r);
  return *this;
}

Rat Rat::mul_slow(const Rat& o) const {
  Rat r;
  r.set_canonical(mpq_class(to_mpq() * o.to_mpq()));
  return r;
}

Rat Rat::operator/(const Rat& o) const {
  if (o.is_zero()) throw ring_error("Rat: division by zero");
  if (!big_ && !o.big_) {
    Rat inv;
    inv.n_ = o.n_ < 0 ? -o.d_ : o.d_;
    inv.d_ = o.n_ < 0 ? -o.n_ : o.n_;
    return *this * inv;
  }
  Rat r;
  r.set_canonical(mpq_class(to_mpq() / o.to_mpq()));
  return r;
}

std::string Rat::str() const {
  if (big_) return big_->get_str();
  mpz_class n = mpz_from_i128(n_);
  std::string s = n.get_str();
  if (d_ != 1) s += "/" + mpz_from_u128(static_cast<uint128>(d_)).get_str();
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CRat

CRat CRat::from_string(const std::string& re, const std::string& im) {
  return CRat(mpq_class(re), mpq_class(im));
}

CRat CRat::operator*(const CRat& o) const {
  using detail::Rat;
  const bool a_re = im_.is_zero(), a_im = re_.is_zero();
  const bool b_re = o.im_.is_zero(), b_im = o.re_.is_zero();
  if (a_re && b_re) return CRat(re_ * o.re_, Rat());
  if (a_re && b_im) return CRat(Rat(), re_ * o.im_);
  if (a_im && b_re) return CRat(Rat(), im_ * o.re_);
  if (a_im && b_im) return CRat(-(im_ * o.im_), Rat());
  if (a_re) return CRat(re_ * o.re_, re_ * o.im_);
  if (a_im) return CRat(-(im_ * o.im_), im_ * o.re_);
  if (b_re) return CRat(re_ * o.re_, im_ * o.re_);
  if (b_im) return CRat(-(im_ * o.im_), re_ * o.im_);
  Rat rr = re_ * o.re_;
  rr -= im_ * o.im_;
  Rat ri = re_ * o.im_;
  ri += im_ * o.re_;
  return CRat(std::move(rr), std::move(ri));
}

CRat CRat::operator/(const CRat& o) const {
  detail::Rat den = o.re_ * o.re_;
  den += o.im_ * o.im_;
  if (den.is_zero()) throw ring_error("CRat: division by zero");
  detail::Rat nr = re_ * o.re_;
  nr += im_ * o.im_;
  detail::Rat ni = im_ * o.re_;
  ni -= re_ * o.im_;
  return CRat(nr / den, ni / den);
}

CRat CRat::pow(long e) const {
  if (e < 0) return CRat(1) / pow(-e);
  CRat base = *this, acc(1);
  while (e > 0) {
    if (e & 1) acc = acc * base;
    base = base * base;
    e >>= 1;
  }
  return acc;
}

std::string CRat::str() const {
  if (im_.is_zero()) return re_.str();
  std::string ip;
  const std::string is = im_.str();
  if (is == "1") ip = "i";
  else if (is == "-1") ip = "-i";
  else ip = is + "i";
  if (re_.is_zero()) return ip;
  std::string sep = (ip[0] == '-') ? "" : "+";
  return "(" + re_.str() + sep + ip + ")";
}

// ---------------------------------------------------------------------------
// Monomial

int Monomial::y_degree() const {
  int s = 0;
  for (int e : y_exps) s += e;
  return s;
}

int Monomial::eta_degree() const {
  int s = 0;
  for (int e : eta_exps) s += e;
  return s;
}

// ---------------------------------------------------------------------------
// SymExpr

SymExpr::SymExpr(int d) : d_(d) {
  if (d < 2) throw ring_error("SymExpr: dimension must be >= 2");
}

SymExpr SymExpr::constant(int d, CRat c) {
  SymExpr s(d);
  Monomial m;
  m.y_exps.assign(d - 1, 0);
  m.eta_exps.assign(d - 2, 0);
  s.insert(std::move(m), std::move(c));
  return s;
}

SymExpr SymExpr::rho_pow(int d, int e, CRat c) {
  SymExpr s(d);
  Monomial m;
  m.rho_exp = e;
  m.y_exps.assign(d - 1, 0);
  m.eta_exps.assign(d - 2, 0);
  s.insert(std::move(m), std::move(c));
  return s;
}

SymExpr SymExpr::y(int d, int axis) {
  if (axis < 1 || axis > d - 1) throw ring_error("SymExpr::y: axis out of range");
  SymExpr s(d);
  Monomial m;
  m.y_exps.assign(d - 1, 0);
  m.eta_exps.assign(d - 2, 0);
  m.y_exps[axis - 1] = 1;
  s.insert(std::move(m), CRat(1));
  return s;
}

SymExpr SymExpr::eta(int d, int axis) {
  if (axis < 2 || axis > d - 1) throw ring_error("SymExpr::eta: axis out of range");
  SymExpr s(d);
  Monomial m;
  m.y_exps.assign(d - 1, 0);
  m.eta_exps.assign(d - 2, 0);
  m.eta_exps[axis - 2] = 1;
  s.insert(std::move(m), CRat(1));
  return s;
}

SymExpr SymExpr::eta1(int d, const mpq_class& mu) {
  SymExpr s = constant(d, CRat(mpq_class(0), mu)) - rho_pow(d, 2);
  s.mu_ = mu;
  return s;
}

SymExpr SymExpr::monomial(int d, Monomial m, CRat c) {
  if ((int)m.y_exps.size() != d - 1 || (int)m.eta_exps.size() != d - 2)
    throw ring_error("SymExpr::monomial: exponent tuple does not match dimension");
  SymExpr s(d);
  s.insert(std::move(m), std::move(c));
  return s;
}

void SymExpr::insert(Monomial m, CRat c) {
  if (c.is_zero()) return;
  auto it = std::lower_bound(
      terms_.begin(), terms_.end(), m,
      [](const auto& t, const Monomial& k) { return t.first < k; });
  if (it == terms_.end() || it->first != m) {
    terms_.emplace(it, std::move(m), std::move(c));
  } else {
    it->second += c;
    if (it->second.is_zero()) terms_.erase(it);
  }
}

void SymExpr::check_compatible(const SymExpr& o) const {
  if (d_ != o.d_) throw ring_error("SymExpr: dimension mismatch");
  if (mu_ && o.mu_ && *mu_ != *o.mu_) throw ring_error("SymExpr: mu mismatch");
}

std::optional<mpq_class> SymExpr::combined_mu(const SymExpr& o) const {
  return mu_ ? mu_ : o.mu_;
}

bool SymExpr::operator==(const SymExpr& o) const {
  return d_ == o.d_ && terms_ == o.terms_;
}

SymExpr SymExpr::operator-() const {
  SymExpr r(d_);
  r.mu_ = mu_;
  r.terms_.reserve(terms_.size());
  for (const auto& [m, c] : terms_) r.terms_.emplace_back(m, -c);
  return r;
}

namespace {

// Merges two canonically sorted term runs; sign applies to the right run.
void merge_terms(std::vector<std::pair<Monomial, CRat>>& out,
                 const std::vector<std::pair<Monomial, CRat>>& a,
                 const std::vector<std::pair<Monomial, CRat>>& b, bool sub) {
  out.clear();
  out.reserve(a.size() + b.size());
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const auto cmp = a[i].first <=> b[j].first;
    if (cmp < 0) {
      out.push_back(a[i++]);
    } else if (cmp > 0) {
      out.emplace_back(b[j].first, sub ? -b[j].second : b[j].second);
      ++j;
    } else {
      CRat c = a[i].second;
      if (sub) c -= b[j].second; else c += b[j].second;
      if (!c.is_zero()) out.emplace_back(a[i].first, std::move(c));
      ++i; ++j;
    }
  }
  for (; i < a.size(); ++i) out.push_back(a[i]);
  for (; j < b.size(); ++j)
    out.emplace_back(b[j].first, sub ? -b[j].second : b[j].second);
}

}  // namespace

SymExpr SymExpr::operator+(const SymExpr& o) const {
  check_compatible(o);
  SymExpr r(d_);
  r.mu_ = combined_mu(o);
  merge_terms(r.terms_, terms_, o.terms_, false);
  return r;
}

SymExpr& SymExpr::operator+=(const SymExpr& o) {
  check_compatible(o);
  mu_ = combined_mu(o);
  if (o.terms_.empty()) return *this;
  if (this == &o) return *this = scaled(CRat(2));
  if (terms_.empty()) {
    terms_ = o.terms_;
    return *this;
  }
  std::vector<std::pair<Monomial, CRat>> merged;
  merged.reserve(terms_.size() + o.terms_.size());
  size_t i = 0, j = 0;
  while (i < terms_.size() && j < o.terms_.size()) {
    const auto cmp = terms_[i].first <=> o.terms_[j].first;
    if (cmp < 0) {
      merged.push_back(std::move(terms_[i++]));
    } else if (cmp > 0) {
      merged.push_back(o.terms_[j++]);
    } else {
      terms_[i].second += o.terms_[j].second;
      if (!terms_[i].second.is_zero()) merged.push_back(std::move(terms_[i]));
      ++i; ++j;
    }
  }
  for (; i < terms_.size(); ++i) merged.push_back(std::move(terms_[i]));
  for (; j < o.terms_.size(); ++j) merged.push_back(o.terms_[j]);
  terms_ = std::move(merged);
  return *this;
}

SymExpr SymExpr::operator-(const SymExpr& o) const {
  check_compatible(o);
  SymExpr r(d_);
  r.mu_ = combined_mu(o);
  merge_terms(r.terms_, terms_, o.terms_, true);
  return r;
}

// Accumulates the product on a dense mixed-radix exponent grid when the
// supports are compact enough; the linear index order equals the Monomial
// lex order, so the touched cells emit in canonical order after one sort
// of plain integers.
bool SymExpr::dense_product(const SymExpr& o, SymExpr& r) const {
  if (terms_.size() * o.terms_.size() < 1024) return false;
  const int ny = d_ - 1, ne = d_ - 2;
  const int naxes = 1 + ny + ne;
  auto scan = [&](const std::vector<std::pair<Monomial, CRat>>& ts, int& rlo,
                  std::array<int, 6>& hi) {
    rlo = ts.front().first.rho_exp;
    hi.fill(0);
    hi[0] = ts.back().first.rho_exp;
    for (const auto& [m, c] : ts) {
      for (int i = 0; i < ny; ++i) hi[1 + i] = std::max(hi[1 + i], m.y_exps[i]);
      for (int i = 0; i < ne; ++i)
        hi[1 + ny + i] = std::max(hi[1 + ny + i], m.eta_exps[i]);
    }
  };
  int ra_lo, rb_lo;
  std::array<int, 6> ha{}, hb{};
  scan(terms_, ra_lo, ha);
  scan(o.terms_, rb_lo, hb);
  const int rlo = ra_lo + rb_lo;
  std::array<long long, 6> dim{};
  dim[0] = (ha[0] - ra_lo) + (hb[0] - rb_lo) + 1;
  for (int i = 1; i < naxes; ++i) dim[i] = ha[i] + hb[i] + 1;
  long long cells = 1;
  for (int i = 0; i < naxes; ++i) {
    cells *= dim[i];
    if (cells > (1 << 19)) return false;
  }
  std::array<long long, 6> stride{};
  stride[naxes - 1] = 1;
  for (int i = naxes - 2; i >= 0; --i) stride[i] = stride[i + 1] * dim[i + 1];
  auto index_of = [&](const Monomial& m, int rbase) {
    long long idx = static_cast<long long>(m.rho_exp - rbase) * stride[0];
    for (int i = 0; i < ny; ++i) idx += m.y_exps[i] * stride[1 + i];
    for (int i = 0; i < ne; ++i) idx += m.eta_exps[i] * stride[1 + ny + i];
    return idx;
  };
  static thread_local std::vector<CRat> cells_buf;
  static thread_local std::vector<std::uint32_t> stamp_buf;
  static thread_local std::vector<std::uint32_t> touched;
  static thread_local std::uint32_t epoch = 0;
  if (static_cast<long long>(cells_buf.size()) < cells) {
    cells_buf.resize(cells);
    stamp_buf.assign(cells_buf.size(), 0);
    epoch = 0;
  }
  ++epoch;
  if (epoch == 0) {
    std::fill(stamp_buf.begin(), stamp_buf.end(), 0);
    epoch = 1;
  }
  touched.clear();
  std::vector<std::pair<long long, const CRat*>> bterms;
  bterms.reserve(o.terms_.size());
  for (const auto& [mb, cb] : o.terms_) bterms.emplace_back(index_of(mb, rb_lo), &cb);
  for (const auto& [ma, ca] : terms_) {
    const long long base = index_of(ma, ra_lo);
    for (const auto& [ib, cb] : bterms) {
      const auto idx = static_cast<std::uint32_t>(base + ib);
      if (stamp_buf[idx] != epoch) {
        stamp_buf[idx] = epoch;
        cells_buf[idx] = ca * (*cb);
        touched.push_back(idx);
      } else {
        cells_buf[idx] += ca * (*cb);
      }
    }
  }
  std::sort(touched.begin(), touched.end());
  Monomial key;
  key.y_exps.assign(ny, 0);
  key.eta_exps.assign(ne, 0);
  r.terms_.reserve(touched.size());
  for (const std::uint32_t idx : touched) {
    CRat& c = cells_buf[idx];
    if (c.is_zero()) continue;
    long long rem = idx;
    key.rho_exp = static_cast<int>(rem / stride[0]) + rlo;
    rem %= stride[0];
    for (int i = 0; i < ny; ++i) {
      key.y_exps[i] = static_cast<int>(rem / stride[1 + i]);
      rem %= stride[1 + i];
    }
    for (int i = 0; i < ne; ++i) {
      key.eta_exps[i] = static_cast<int>(rem / stride[1 + ny + i]);
      rem %= stride[1 + ny + i];
    }
    r.terms_.emplace_back(key, std::move(c));
  }
  return true;
}

SymExpr SymExpr::operator*(const SymExpr& o) const {
  check_compatible(o);
  SymExpr r(d_);
  r.mu_ = combined_mu(o);
  if (terms_.empty() || o.terms_.empty()) return r;
  Monomial key;
  key.y_exps.assign(d_ - 1, 0);
  key.eta_exps.assign(d_ - 2, 0);
  if (terms_.size() * o.terms_.size() <= 16) {
    for (const auto& [ma, ca] : terms_) {
      for (const auto& [mb, cb] : o.terms_) {
        key.rho_exp = ma.rho_exp + mb.rho_exp;
        for (int i = 0; i < d_ - 1; ++i)
          key.y_exps[i] = ma.y_exps[i] + mb.y_exps[i];
        for (int i = 0; i < d_ - 2; ++i)
          key.eta_exps[i] = ma.eta_exps[i] + mb.eta_exps[i];
        r.insert(key, ca * cb);
      }
    }
    return r;
  }
  // Pack each monomial into one 128-bit key whose unsigned order equals the
  // Monomial lex order; exponents occupy 16-bit lanes, so keys of factor
  // monomials add lane-wise into the key of the product monomial.
  constexpr int kLane = 16;
  constexpr std::int64_t kBias = 1 << 14;
  constexpr std::int64_t kLaneMax = (1 << 15) - 1;
  auto packable = [&](const std::vector<std::pair<Monomial, CRat>>& ts) {
    for (const auto& [m, c] : ts) {
      if (m.rho_exp < -kBias / 2 || m.rho_exp > kBias / 2) return false;
      for (int e : m.y_exps)
        if (e < 0 || e > kLaneMax / 2) return false;
      for (int e : m.eta_exps)
        if (e < 0 || e > kLaneMax / 2) return false;
    }
    return true;
  };
  if (packable(terms_) && packable(o.terms_)) {
    if (dense_product(o, r)) return r;
    auto pack = [&](const Monomial& m) {
      unsigned __int128 k = static_cast<std::uint64_t>(m.rho_exp + kBias);
      for (int i = 0; i < d_ - 1; ++i)
        k = (k << kLane) | static_cast<std::uint64_t>(m.y_exps[i]);
      for (int i = 0; i < d_ - 2; ++i)
        k = (k << kLane) | static_cast<std::uint64_t>(m.eta_exps[i]);
      return k;
    };
    const unsigned __int128 bias_fix = static_cast<unsigned __int128>(kBias)
                                       << (kLane * (2 * d_ - 3));
    std::vector<std::pair<unsigned __int128, CRat>> prods;
    prods.reserve(terms_.size() * o.terms_.size());
    for (const auto& [ma, ca] : terms_) {
      const unsigned __int128 base = pack(ma) - bias_fix;
      for (const auto& [mb, cb] : o.terms_)
        prods.emplace_back(base + pack(mb), ca * cb);
    }
    std::sort(prods.begin(), prods.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    size_t i = 0;
    while (i < prods.size()) {
      CRat c = std::move(prods[i].second);
      size_t j = i + 1;
      while (j < prods.size() && prods[j].first == prods[i].first) {
        c += prods[j].second;
        ++j;
      }
      if (!c.is_zero()) {
        unsigned __int128 k = prods[i].first;
        for (int idx = d_ - 3; idx >= 0; --idx) {
          key.eta_exps[idx] = static_cast<int>(k & kLaneMax);
          k >>= kLane;
        }
        for (int idx = d_ - 2; idx >= 0; --idx) {
          key.y_exps[idx] = static_cast<int>(k & kLaneMax);
          k >>= kLane;
        }
        key.rho_exp = static_cast<int>(static_cast<std::int64_t>(k) - kBias);
        r.terms_.emplace_back(key, std::move(c));
      }
      i = j;
    }
    return r;
  }
  std::vector<std::pair<Monomial, CRat>> prods;
  prods.reserve(terms_.size() * o.terms_.size());
  for (const auto& [ma, ca] : terms_) {
    for (const auto& [mb, cb] : o.terms_) {
      key.rho_exp = ma.rho_exp + mb.rho_exp;
      for (int i = 0; i < d_ - 1; ++i)
        key.y_exps[i] = ma.y_exps[i] + mb.y_exps[i];
      for (int i = 0; i < d_ - 2; ++i)
        key.eta_exps[i] = ma.eta_exps[i] + mb.eta_exps[i];
      prods.emplace_back(key, ca * cb);
    }
  }
  std::sort(prods.begin(), prods.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  size_t i = 0;
  while (i < prods.size()) {
    CRat c = std::move(prods[i].second);
    size_t j = i + 1;
    while (j < prods.size() && prods[j].first == prods[i].first) {
      c += prods[j].second;
      ++j;
    }
    if (!c.is_zero())
      r.terms_.emplace_back(std::move(prods[i].first), std::move(c));
    i = j;
  }
  return r;
}

SymExpr SymExpr::scaled(const CRat& c) const {
  SymExpr r(d_);
  r.mu_ = mu_;
  if (c.is_zero()) return r;
  r.terms_.reserve(terms_.size());
  for (const auto& [m, v] : terms_) r.terms_.emplace_back(m, v * c);
  return r;
}

SymExpr SymExpr::rho_shifted(int k) const {
  SymExpr r(d_);
  r.mu_ = mu_;
  r.terms_.reserve(terms_.size());
  for (const auto& [m, v] : terms_) {
    Monomial shifted = m;
    shifted.rho_exp += k;
    r.terms_.emplace_back(std::move(shifted), v);
  }
  return r;
}

int SymExpr::y_degree() const {
  int deg = -1;
  for (const auto& [m, c] : terms_) deg = std::max(deg, m.y_degree());
  return deg;
}

int SymExpr::eta_degree() const {
  int deg = -1;
  for (const auto& [m, c] : terms_) deg = std::max(deg, m.eta_degree());
  return deg;
}

SymExpr ring_add(const SymExpr& a, const SymExpr& b) { return a + b; }
SymExpr ring_mul(const SymExpr& a, const SymExpr& b) { return a * b; }

SymExpr diff_y(const SymExpr& a, int axis) {
  if (axis < 1 || axis > a.d_ - 1) throw ring_error("diff_y: axis out of range");
  SymExpr r(a.d_);
  r.mu_ = a.mu_;
  for (const auto& [m, c] : a.terms_) {
    int e = m.y_exps[axis - 1];
    if (e == 0) continue;
    Monomial dm = m;
    dm.y_exps[axis - 1] = e - 1;
    r.terms_.emplace_back(std::move(dm), c * CRat(e));
  }
  return r;
}

SymExpr diff_eta(const SymExpr& a, int axis) {
  if (axis < 1 || axis > a.d_ - 1) throw ring_error("diff_eta: axis out of range");
  SymExpr r(a.d_);
  r.mu_ = a.mu_;
  if (axis == 1) {
    // c rho^e  ->  -(e/2) c rho^(e-2)
    for (const auto& [m, c] : a.terms_) {
      if (m.rho_exp == 0) continue;
      Monomial dm = m;
      dm.rho_exp -= 2;
      r.terms_.emplace_back(std::move(dm), c * CRat(mpq_class(-m.rho_exp, 2)));
    }
  } else {
    for (const auto& [m, c] : a.terms_) {
      int e = m.eta_exps[axis - 2];
      if (e == 0) continue;
      Monomial dm = m;
      dm.eta_exps[axis - 2] = e - 1;
      r.terms_.emplace_back(std::move(dm), c * CRat(e));
    }
  }
  return r;
}

std::optional<int> rho_degree(const SymExpr& a) {
  std::optional<int> deg;
  for (const auto& [m, c] : a.terms())
    if (!deg || m.rho_exp > *deg) deg = m.rho_exp;
  return deg;
}

std::optional<int> rho_valuation(const SymExpr& a) {
  std::optional<int> val;
  for (const auto& [m, c] : a.terms())
    if (!val || m.rho_exp < *val) val = m.rho_exp;
  return val;
}

std::complex<double> rho_value(double eta1, double mu) {
  if (mu == 0.0) throw ring_error("rho_value: mu must be nonzero");
  std::complex<double> w = std::sqrt(std::complex<double>(-eta1, mu));
  if (w.imag() < 0) w = -w;
  return w;
}

static std::complex<double> ipow(std::complex<double> z, int e) {
  if (e < 0) return 1.0 / ipow(z, -e);
  std::complex<double> acc(1.0, 0.0);
  while (e > 0) {
    if (e & 1) acc *= z;
    z *= z;
    e >>= 1;
  }
  return acc;
}

std::complex<double> eval_numeric(const SymExpr& a, const EvalPoint& p) {
  if (p.mu == 0.0) throw ring_error("eval_numeric: mu must be nonzero");
  if (a.mu() && std::abs(a.mu()->get_d() - p.mu) > 1e-12)
    throw ring_error("eval_numeric: point mu differs from the pinned expression mu");
  if ((int)p.y.size() != a.dim() - 1 || (int)p.eta_tail.size() != a.dim() - 2)
    throw ring_error("eval_numeric: point does not match dimension");
  std::complex<double> rho = rho_value(p.eta1, p.mu);
  std::complex<double> acc(0.0, 0.0);
  for (const auto& [m, c] : a.terms()) {
    std::complex<double> v = c.to_complex() * ipow(rho, m.rho_exp);
    for (size_t i = 0; i < p.y.size(); ++i)
      if (m.y_exps[i]) v *= std::pow(p.y[i], m.y_exps[i]);
    for (size_t i = 0; i < p.eta_tail.size(); ++i)
      if (m.eta_exps[i]) v *= std::pow(p.eta_tail[i], m.eta_exps[i]);
    acc += v;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Serialization

std::string SymExpr::str() const {
  if (terms_.empty()) return "0";
  std::ostringstream os;
  bool first = true;
  for (const auto& [m, c] : terms_) {
    std::string cs = c.str();
    if (!first) {
      if (cs[0] == '-' && cs.find('(') == std::string::npos) {
        os << " - ";
        cs = cs.substr(1);
      } else {
        os << " + ";
      }
    }
    first = false;
    std::vector<std::string> factors;
    auto add_factor = [&factors](const std::string& name, int e) {
      if (e == 0) return;
      if (e == 1) factors.push_back(name);
      else factors.push_back(name + "^" + std::to_string(e));
    };
    add_factor("rho", m.rho_exp);
    for (int i = 0; i < d_ - 1; ++i) add_factor("y" + std::to_string(i + 1), m.y_exps[i]);
    for (int i = 0; i < d_ - 2; ++i) add_factor("eta" + std::to_string(i + 2), m.eta_exps[i]);
    if (factors.empty()) {
      os << cs;
      continue;
    }
    if (cs == "1") {
    } else if (cs == "-1") {
      os << "-";
    } else {
      os << cs << "*";
    }
    for (size_t i = 0; i < factors.size(); ++i) {
      if (i) os << "*";
      os << factors[i];
    }
  }
  return os.str();
}

namespace {

// Recursive-descent parser for the canonical textual form:
//   expr   := ['+'|'-'] term (('+'|'-') term)*
//   term   := factor ('*' factor)*
//   factor := atom ['^' int]
//   atom   := rational | rational 'i' | 'i' | 'rho' | 'y<k>' | 'eta<k>'
//           | '(' expr ')'
struct Parser {
  const std::string& s;
  size_t pos = 0;
  int d;

  Parser(const std::string& text, int dim) : s(text), d(dim) {}

  void skip_ws() {
    while (pos < s.size() && std::isspace((unsigned char)s[pos])) ++pos;
  }

  bool eat(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& msg) {
    throw ring_error("SymExpr::parse: " + msg + " (position " + std::to_string(pos) + ")");
  }

  SymExpr parse_expr() {
    skip_ws();
    bool neg = false;
    if (eat('-')) neg = true;
    else eat('+');
    SymExpr acc = parse_term();
    if (neg) acc = -acc;
    for (;;) {
      skip_ws();
      if (eat('+')) acc = acc + parse_term();
      else if (eat('-')) acc = acc - parse_term();
      else break;
    }
    return acc;
  }

  SymExpr parse_term() {
    SymExpr acc = parse_factor();
    while (eat('*')) acc = acc * parse_factor();
    return acc;
  }

  SymExpr parse_factor() {
    SymExpr base = parse_atom();
    skip_ws();
    if (!eat('^')) return base;
    long e = parse_int();
    if (e >= 0) {
      SymExpr acc = SymExpr::one(d);
      for (long k = 0; k < e; ++k) acc = acc * base;
      return acc;
    }
    // Negative exponents only make sense on the Laurent atom rho.
    if (base.terms().size() == 1) {
      const auto& [m, c] = *base.terms().begin();
      if (m.y_degree() == 0 && m.eta_degree() == 0 && m.rho_exp != 0 && c == CRat(1))
        return SymExpr::rho_pow(d, (int)(m.rho_exp * e));
    }
    fail("negative exponent on a non-rho factor");
  }

  long parse_int() {
    skip_ws();
    bool neg = eat('-');
    skip_ws();
    size_t start = pos;
    while (pos < s.size() && std::isdigit((unsigned char)s[pos])) ++pos;
    if (pos == start) fail("expected integer");
    long v = std::stol(s.substr(start, pos - start));
    return neg ? -v : v;
  }

  int parse_axis(const std::string& name, size_t prefix) {
    if (name.size() == prefix) fail("expected axis number in '" + name + "'");
    for (size_t i = prefix; i < name.size(); ++i)
      if (!std::isdigit((unsigned char)name[i])) fail("bad axis in '" + name + "'");
    return std::stoi(name.substr(prefix));
  }

  SymExpr parse_atom() {
    skip_ws();
    if (pos >= s.size()) fail("unexpected end of input");
    char c = s[pos];
    if (c == '-') {
      ++pos;
      return -parse_factor();
    }
    if (c == '(') {
      ++pos;
      SymExpr inner = parse_expr();
      if (!eat(')')) fail("expected ')'");
      return inner;
    }
    if (std::isdigit((unsigned char)c)) {
      size_t start = pos;
      while (pos < s.size() && (std::isdigit((unsigned char)s[pos]) || s[pos] == '/')) ++pos;
      mpq_class q(s.substr(start, pos - start));
      q.canonicalize();
      if (pos < s.size() && s[pos] == 'i' &&
          (pos + 1 >= s.size() || !std::isalnum((unsigned char)s[pos + 1]))) {
        ++pos;
        return SymExpr::constant(d, CRat(mpq_class(0), q));
      }
      return SymExpr::constant(d, CRat(std::move(q)));
    }
    if (std::isalpha((unsigned char)c)) {
      size_t start = pos;
      while (pos < s.size() && std::isalnum((unsigned char)s[pos])) ++pos;
      std::string name = s.substr(start, pos - start);
      if (name == "i") return SymExpr::constant(d, CRat::i());
      if (name == "rho") return SymExpr::rho_pow(d, 1);
      if (name == "eta1")
        fail("the token 'eta1' is rejected; eta1 must enter as i*mu - rho^2");
      if (name[0] == 'y') return SymExpr::y(d, parse_axis(name, 1));
      if (name.rfind("eta", 0) == 0) return SymExpr::eta(d, parse_axis(name, 3));
      fail("unknown symbol '" + name + "'");
    }
    fail(std::string("unexpected character '") + c + "'");
  }
};

}  // namespace

SymExpr SymExpr::parse(int d, const std::string& text,
                       const std::optional<mpq_class>& mu) {
  Parser p(text, d);
  SymExpr r = p.parse_expr();
  p.skip_ws();
  if (p.pos != text.size())
    throw ring_error("SymExpr::parse: trailing input (position " +
                     std::to_string(p.pos) + ")");
  if (mu) {
    if (r.mu_ && *r.mu_ != *mu) throw ring_error("SymExpr::parse: mu mismatch");
    r.mu_ = mu;
  }
  return r;
}

// ---------------------------------------------------------------------------
// JetSeries

JetSeries::JetSeries(int d, int t_trunc, int h_trunc)
    : d_(d), t_trunc_(t_trunc), h_trunc_(h_trunc) {
  if (d < 2) throw ring_error("JetSeries: dimension must be >= 2");
  if (t_trunc < 0 || h_trunc < 0) throw ring_error("JetSeries: negative truncation");
}

JetSeries JetSeries::from_sym(const SymExpr& s, int t_order, int h_order) {
  if (t_order < 0 || h_order < 0) throw ring_error("JetSeries::from_sym: negative order");
  JetSeries j(s.dim(), kExactOrder, kExactOrder);
  if (!s.is_zero()) j.coeffs_.emplace(std::make_pair(t_order, h_order), s);
  return j;
}

bool JetSeries::operator==(const JetSeries& o) const {
  return d_ == o.d_ && t_trunc_ == o.t_trunc_ && h_trunc_ == o.h_trunc_ &&
         coeffs_ == o.coeffs_;
}

SymExpr JetSeries::coeff(int t_order, int h_order) const {
  auto it = coeffs_.find({t_order, h_order});
  if (it == coeffs_.end()) return SymExpr::zero(d_);
  return it->second;
}

void JetSeries::set_coeff(int t_order, int h_order, SymExpr s) {
  if (t_order >= t_trunc_ || h_order >= h_trunc_)
    throw ring_error("JetSeries::set_coeff: order beyond truncation");
  if (s.is_zero()) coeffs_.erase({t_order, h_order});
  else coeffs_[{t_order, h_order}] = std::move(s);
}

void JetSeries::check_compatible(const JetSeries& o) const {
  if (d_ != o.d_) throw ring_error("JetSeries: dimension mismatch");
}

void JetSeries::prune() {
  for (auto it = coeffs_.begin(); it != coeffs_.end();) {
    if (it->second.is_zero() || it->first.first >= t_trunc_ ||
        it->first.second >= h_trunc_)
      it = coeffs_.erase(it);
    else
      ++it;
  }
}

static int cap_order(long v) {
  return (int)std::min<long>(v, JetSeries::kExactOrder);
}

JetSeries JetSeries::operator+(const JetSeries& o) const {
  JetSeries r = *this;
  r += o;
  return r;
}

JetSeries& JetSeries::operator+=(const JetSeries& o) {
  check_compatible(o);
  t_trunc_ = std::min(t_trunc_, o.t_trunc_);
  h_trunc_ = std::min(h_trunc_, o.h_trunc_);
  for (const auto& [k, v] : o.coeffs_) {
    auto it = coeffs_.find(k);
    if (it == coeffs_.end()) coeffs_.emplace(k, v);
    else it->second += v;
  }
  prune();
  return *this;
}

JetSeries JetSeries::operator-(const JetSeries& o) const {
  return *this + o.scaled(CRat(-1));
}

JetSeries JetSeries::operator*(const JetSeries& o) const {
  check_compatible(o);
  // Known-part valuations, capped at the truncation orders.
  int va_t = t_valuation(), vb_t = o.t_valuation();
  int va_h = h_trunc_, vb_h = o.h_trunc_;
  for (const auto& [k, v] : coeffs_) va_h = std::min(va_h, k.second);
  for (const auto& [k, v] : o.coeffs_) vb_h = std::min(vb_h, k.second);
  int tt = std::min(cap_order((long)t_trunc_ + vb_t), cap_order((long)o.t_trunc_ + va_t));
  int ht = std::min(cap_order((long)h_trunc_ + vb_h), cap_order((long)o.h_trunc_ + va_h));
  // Mixed uncertainty (one factor truncated in t, the other in h) produces
  // cross terms t^Ta h^Hb that neither single-variable estimate covers;
  // shrink the h truncation until both cross terms lie in the discarded region.
  if (t_trunc_ < kExactOrder && o.h_trunc_ < kExactOrder && t_trunc_ < tt)
    ht = std::min(ht, o.h_trunc_);
  if (o.t_trunc_ < kExactOrder && h_trunc_ < kExactOrder && o.t_trunc_ < tt)
    ht = std::min(ht, h_trunc_);
  JetSeries r(d_, tt, ht);
  for (const auto& [ka, va] : coeffs_) {
    for (const auto& [kb, vb] : o.coeffs_) {
      int t = ka.first + kb.first, h = ka.second + kb.second;
      if (t >= tt || h >= ht) continue;
      SymExpr prod = va * vb;
      if (prod.is_zero()) continue;
      auto it = r.coeffs_.find({t, h});
      if (it == r.coeffs_.end()) r.coeffs_.emplace(std::make_pair(t, h), std::move(prod));
      else it->second += prod;
    }
  }
  r.prune();
  return r;
}

JetSeries JetSeries::scaled(const SymExpr& s) const {
  JetSeries r(d_, t_trunc_, h_trunc_);
  if (s.is_zero()) return r;
  for (const auto& [k, v] : coeffs_) {
    SymExpr prod = v * s;
    if (!prod.is_zero()) r.coeffs_.emplace(k, std::move(prod));
  }
  return r;
}

JetSeries JetSeries::scaled(const CRat& c) const {
  JetSeries r(d_, t_trunc_, h_trunc_);
  if (c.is_zero()) return r;
  for (const auto& [k, v] : coeffs_) r.coeffs_.emplace(k, v.scaled(c));
  return r;
}

JetSeries JetSeries::shifted(int dt, int dh) const {
  if (dt < 0 || dh < 0) throw ring_error("JetSeries::shifted: negative shift");
  JetSeries r(d_, cap_order((long)t_trunc_ + dt), cap_order((long)h_trunc_ + dh));
  for (const auto& [k, v] : coeffs_)
    r.coeffs_.emplace(std::make_pair(k.first + dt, k.second + dh), v);
  return r;
}

JetSeries JetSeries::truncated(int t_trunc, int h_trunc) const {
  JetSeries r(d_, std::min(t_trunc, t_trunc_), std::min(h_trunc, h_trunc_));
  r.coeffs_ = coeffs_;
  r.prune();
  return r;
}

JetSeries JetSeries::diff_t() const {
  int tt = (t_trunc_ == kExactOrder) ? kExactOrder : std::max(0, t_trunc_ - 1);
  JetSeries r(d_, tt, h_trunc_);
  for (const auto& [k, v] : coeffs_) {
    if (k.first == 0) continue;
    r.coeffs_.emplace(std::make_pair(k.first - 1, k.second), v.scaled(CRat(k.first)));
  }
  r.prune();
  return r;
}

JetSeries JetSeries::diff_y(int axis) const {
  JetSeries r(d_, t_trunc_, h_trunc_);
  for (const auto& [k, v] : coeffs_) {
    SymExpr dv = symring::diff_y(v, axis);
    if (!dv.is_zero()) r.coeffs_.emplace(k, std::move(dv));
  }
  return r;
}

JetSeries JetSeries::diff_eta(int axis) const {
  JetSeries r(d_, t_trunc_, h_trunc_);
  for (const auto& [k, v] : coeffs_) {
    SymExpr dv = symring::diff_eta(v, axis);
    if (!dv.is_zero()) r.coeffs_.emplace(k, std::move(dv));
  }
  return r;
}

int JetSeries::t_valuation() const {
  int v = t_trunc_;
  for (const auto& [k, c] : coeffs_) v = std::min(v, k.first);
  return v;
}

std::string JetSeries::str() const {
  std::ostringstream os;
  if (coeffs_.empty()) os << "0";
  bool first = true;
  for (const auto& [k, v] : coeffs_) {
    if (!first) os << " + ";
    first = false;
    os << "t^" << k.first << "*h^" << k.second << "*(" << v.str() << ")";
  }
  if (t_trunc_ < kExactOrder || h_trunc_ < kExactOrder) {
    os << "  [mod";
    if (t_trunc_ < kExactOrder) os << " t^" << t_trunc_;
    if (h_trunc_ < kExactOrder) os << " h^" << h_trunc_;
    os << "]";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Multi-index helpers

int mi_order(const MultiIndex& a) {
  int s = 0;
  for (int v : a) s += v;
  return s;
}

bool mi_leq(const MultiIndex& b, const MultiIndex& a) {
  if (b.size() != a.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (b[i] > a[i]) return false;
  return true;
}

MultiIndex mi_sub(const MultiIndex& a, const MultiIndex& b) {
  MultiIndex r(a.size());
  for (size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

mpz_class mi_binom(const MultiIndex& a, const MultiIndex& b) {
  mpz_class r = 1;
  for (size_t i = 0; i < a.size(); ++i) {
    mpz_class c;
    mpz_bin_uiui(c.get_mpz_t(), a[i], b[i]);
    r *= c;
  }
  return r;
}

mpz_class factorial(int n) {
  mpz_class r;
  mpz_fac_ui(r.get_mpz_t(), n);
  return r;
}

const std::vector<MultiIndex>& multi_indices_up_to(int n, int max_order) {
  static std::mutex mx;
  static std::map<std::pair<int, int>,
                  std::unique_ptr<const std::vector<MultiIndex>>>
      cache;
  std::lock_guard<std::mutex> lock(mx);
  auto key = std::make_pair(n, max_order);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;

  std::vector<MultiIndex> out;
  if (n == 0) {
    out.push_back({});
  } else {
    MultiIndex cur(n, 0);
    std::function<void(int, int)> rec = [&](int pos, int rem) {
      if (pos == n - 1) {
        cur[pos] = rem;
        out.push_back(cur);
        return;
      }
      for (int v = rem; v >= 0; --v) {
        cur[pos] = v;
        rec(pos + 1, rem - v);
      }
    };
    for (int s = 0; s <= max_order; ++s) rec(0, s);
  }
  it = cache
           .emplace(key, std::make_unique<const std::vector<MultiIndex>>(
                             std::move(out)))
           .first;
  return *it->second;
}

}  // namespace pgdn::symring
