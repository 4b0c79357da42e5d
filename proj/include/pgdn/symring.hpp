#pragma once

/// Exact symbolic ring used by every jet computation.
///
/// Expressions are Laurent polynomials in the single square-root atom
/// rho = sqrt(-eta1 + i*mu), Im rho > 0, with ordinary polynomial
/// dependence on the tangential variables y_1..y_{d-1} and on the
/// tangential duals eta_2..eta_{d-1}.  The variable eta1 never appears
/// on its own: it is eliminated through the normal form
/// eta1 = i*mu - rho^2, which turns the |rho|-weighted symbol grading
/// into a syntactic Laurent degree and keeps all divisions by rho exact.
/// Coefficients are exact complex rationals; no floating point enters
/// the symbolic layer.

#include <bit>
#include <complex>
#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <gmpxx.h>

namespace pgdn::symring {

class ring_error : public std::runtime_error {
 public:
  explicit ring_error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

using int128 = __int128;
using uint128 = unsigned __int128;

inline uint128 uabs128(int128 v) {
  return v < 0 ? uint128(0) - static_cast<uint128>(v) : static_cast<uint128>(v);
}

inline int bits128(uint128 v) {
  const auto hi = static_cast<std::uint64_t>(v >> 64);
  if (hi) return 128 - std::countl_zero(hi);
  const auto lo = static_cast<std::uint64_t>(v);
  return lo ? 64 - std::countl_zero(lo) : 0;
}

inline std::uint64_t ugcd64(std::uint64_t a, std::uint64_t b) {
  if (!a) return b;
  if (!b) return a;
  const int s = std::countr_zero(a | b);
  a >>= std::countr_zero(a);
  do {
    b >>= std::countr_zero(b);
    if (a > b) std::swap(a, b);
    b -= a;
  } while (b);
  return a << s;
}

inline int ctz128(uint128 v) {
  const auto lo = static_cast<std::uint64_t>(v);
  if (lo) return std::countr_zero(lo);
  return 64 + std::countr_zero(static_cast<std::uint64_t>(v >> 64));
}

inline uint128 ugcd128(uint128 a, uint128 b) {
  if ((a >> 64) == 0 && (b >> 64) == 0)
    return ugcd64(static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b));
  if (!a) return b;
  if (!b) return a;
  const int s = ctz128(a | b);
  a >>= ctz128(a);
  do {
    b >>= ctz128(b);
    if (a > b) std::swap(a, b);
    b -= a;
  } while (b);
  return a << s;
}

/// Canonical exact rational: 128-bit numerator/denominator fast path with
/// transparent promotion to GMP when a value stops fitting.  Values that
/// fit are always stored small, so representation never affects equality.
class Rat {
 public:
  Rat() = default;
  Rat(long long n) : n_(n) {}
  /// Canonicalizes (any d != 0 accepted).
  Rat(long long n, long long d);
  /// Assumes q is already canonical; demotes when it fits.
  explicit Rat(const mpq_class& q) { set_canonical(q); }

  bool is_zero() const { return !big_ && n_ == 0; }
  int sgn() const {
    if (big_) return mpq_sgn(big_->get_mpq_t());
    return (n_ > 0) - (n_ < 0);
  }
  mpq_class to_mpq() const;
  double to_double() const {
    if (big_) return big_->get_d();
    return static_cast<double>(n_) / static_cast<double>(d_);
  }
  std::string str() const;

  bool operator==(const Rat& o) const {
    if (!big_ && !o.big_) return n_ == o.n_ && d_ == o.d_;
    return to_mpq() == o.to_mpq();
  }

  Rat operator-() const {
    if (!big_) {
      Rat r;
      r.n_ = -n_;
      r.d_ = d_;
      return r;
    }
    Rat r;
    r.set_canonical(mpq_class(-*big_));
    return r;
  }

  Rat& operator+=(const Rat& o) {
    if (!big_ && !o.big_ && add_small(o.n_, o.d_)) return *this;
    return add_slow(o, false);
  }
  Rat& operator-=(const Rat& o) {
    if (!big_ && !o.big_ && add_small(-o.n_, o.d_)) return *this;
    return add_slow(o, true);
  }
  Rat operator+(const Rat& o) const { Rat r = *this; return r += o; }
  Rat operator-(const Rat& o) const { Rat r = *this; return r -= o; }

  Rat operator*(const Rat& o) const {
    if (!big_ && !o.big_) {
      if (n_ == 0 || o.n_ == 0) return Rat();
      const uint128 g1 = ugcd128(uabs128(n_), static_cast<uint128>(o.d_));
      const uint128 g2 = ugcd128(uabs128(o.n_), static_cast<uint128>(d_));
      const int128 na = n_ / static_cast<int128>(g1);
      const int128 nb = o.n_ / static_cast<int128>(g2);
      const int128 da = d_ / static_cast<int128>(g2);
      const int128 db = o.d_ / static_cast<int128>(g1);
      if (bits128(uabs128(na)) + bits128(uabs128(nb)) <= 127 &&
          bits128(static_cast<uint128>(da)) +
                  bits128(static_cast<uint128>(db)) <=
              127) {
        Rat r;
        r.n_ = na * nb;
        r.d_ = da * db;
        return r;
      }
    }
    return mul_slow(o);
  }
  /// Exact division; throws ring_error on division by zero.
  Rat operator/(const Rat& o) const;

 private:
  void set_canonical(const mpq_class& q);
  bool add_small(int128 on, int128 od);
  Rat& add_slow(const Rat& o, bool sub);
  Rat mul_slow(const Rat& o) const;

  int128 n_ = 0;
  int128 d_ = 1;
  std::shared_ptr<const mpq_class> big_;
};

}  // namespace detail

/// Exact complex number with rational real and imaginary parts.
class CRat {
 public:
  CRat() = default;
  CRat(long re, long im = 0) : re_(re), im_(im) {}
  CRat(mpq_class re, mpq_class im = 0) {
    re.canonicalize();
    im.canonicalize();
    re_ = detail::Rat(re);
    im_ = detail::Rat(im);
  }

  static CRat from_string(const std::string& re, const std::string& im = "0");
  static CRat i() { return CRat(0, 1); }

  mpq_class re() const { return re_.to_mpq(); }
  mpq_class im() const { return im_.to_mpq(); }
  bool is_zero() const { return re_.is_zero() && im_.is_zero(); }
  bool is_real() const { return im_.is_zero(); }

  CRat operator-() const { return CRat(-re_, -im_); }
  CRat conj() const { return CRat(re_, -im_); }
  CRat& operator+=(const CRat& o) {
    if (!o.re_.is_zero()) re_ += o.re_;
    if (!o.im_.is_zero()) im_ += o.im_;
    return *this;
  }
  CRat& operator-=(const CRat& o) {
    if (!o.re_.is_zero()) re_ -= o.re_;
    if (!o.im_.is_zero()) im_ -= o.im_;
    return *this;
  }
  CRat operator+(const CRat& o) const { CRat r = *this; return r += o; }
  CRat operator-(const CRat& o) const { CRat r = *this; return r -= o; }
  CRat operator*(const CRat& o) const;
  /// Exact division; throws ring_error on division by zero.
  CRat operator/(const CRat& o) const;
  bool operator==(const CRat& o) const { return re_ == o.re_ && im_ == o.im_; }
  bool operator!=(const CRat& o) const { return !(*this == o); }

  CRat pow(long e) const;
  std::complex<double> to_complex() const {
    return {re_.to_double(), im_.to_double()};
  }
  /// Canonical text form: "3", "-1/2", "2i", "(1/2-3i)".
  std::string str() const;

 private:
  CRat(detail::Rat re, detail::Rat im) : re_(std::move(re)), im_(std::move(im)) {}

  detail::Rat re_, im_;
};

/// Exponent tuple of one monomial: rho exponent (any sign), then the
/// y exponents (length d-1) and the tangential eta exponents (length d-2),
/// all nonnegative.  Ordering is lexicographic on (rho, y, eta), which
/// fixes the canonical serialization order.
struct Monomial {
  int rho_exp = 0;
  std::vector<int> y_exps;
  std::vector<int> eta_exps;

  auto operator<=>(const Monomial&) const = default;
  int y_degree() const;
  int eta_degree() const;
};

/// Numeric evaluation point.  rho is realized as the square root of
/// (-eta1 + i*mu) on the branch with positive imaginary part.
struct EvalPoint {
  std::vector<double> y;
  double eta1 = 0.0;
  std::vector<double> eta_tail;
  double mu = 1.0;
};

/// Canonical-form symbolic expression over a fixed dimension d >= 2.
///
/// The rational parameter mu is attached lazily: expressions built
/// without eta1 elimination carry no mu and combine with anything;
/// once an eliminated eta1 enters, the mu it was built with is pinned
/// and mixing two different pinned values is an error.
class SymExpr {
 public:
  SymExpr() : d_(2) {}
  explicit SymExpr(int d);

  static SymExpr zero(int d) { return SymExpr(d); }
  static SymExpr constant(int d, CRat c);
  static SymExpr one(int d) { return constant(d, CRat(1)); }
  static SymExpr rho_pow(int d, int e, CRat c = CRat(1));
  static SymExpr y(int d, int axis);        // axis in 1..d-1
  static SymExpr eta(int d, int axis);      // axis in 2..d-1
  /// eta1 in normal form: i*mu - rho^2, with mu pinned on the result.
  static SymExpr eta1(int d, const mpq_class& mu);
  static SymExpr monomial(int d, Monomial m, CRat c);

  int dim() const { return d_; }
  const std::optional<mpq_class>& mu() const { return mu_; }
  /// Terms in canonical (lexicographic) monomial order with nonzero
  /// coefficients; the invariant every operation maintains.
  const std::vector<std::pair<Monomial, CRat>>& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  std::size_t n_terms() const { return terms_.size(); }
  bool operator==(const SymExpr& o) const;
  bool operator!=(const SymExpr& o) const { return !(*this == o); }

  SymExpr operator-() const;
  SymExpr operator+(const SymExpr& o) const;
  SymExpr& operator+=(const SymExpr& o);
  SymExpr operator-(const SymExpr& o) const;
  SymExpr operator*(const SymExpr& o) const;
  SymExpr scaled(const CRat& c) const;
  /// Multiplies by rho^k (k may be negative); exact in the Laurent ring.
  SymExpr rho_shifted(int k) const;

  /// Total polynomial degree in the y variables (-1 for the zero expression).
  int y_degree() const;
  /// Total polynomial degree in the tangential eta variables.
  int eta_degree() const;

  std::string str() const;
  /// Parses the canonical textual form (sums of coeff * factor^exp terms).
  /// The token "eta1" is rejected: eta1 must enter as i*mu - rho^2.
  static SymExpr parse(int d, const std::string& text,
                       const std::optional<mpq_class>& mu = std::nullopt);

 private:
  friend SymExpr diff_y(const SymExpr&, int);
  friend SymExpr diff_eta(const SymExpr&, int);
  void insert(Monomial m, CRat c);
  bool dense_product(const SymExpr& o, SymExpr& r) const;
  void check_compatible(const SymExpr& o) const;
  std::optional<mpq_class> combined_mu(const SymExpr& o) const;

  int d_;
  std::optional<mpq_class> mu_;
  std::vector<std::pair<Monomial, CRat>> terms_;
};

/// Exact sum; requires equal dimension and compatible mu.
SymExpr ring_add(const SymExpr& a, const SymExpr& b);
/// Exact product; rho exponents add freely.
SymExpr ring_mul(const SymExpr& a, const SymExpr& b);
/// Partial derivative in y_axis, axis in 1..d-1; rho is y-independent.
SymExpr diff_y(const SymExpr& a, int axis);
/// Partial derivative in eta_axis, axis in 1..d-1.  For axis 1 the chain
/// rule through rho applies monomial-wise: d/d_eta1 = (-1/(2 rho)) d/d_rho.
SymExpr diff_eta(const SymExpr& a, int axis);
/// Maximum rho exponent over the stored monomials; nullopt for zero
/// (the degree of the zero expression is -infinity).
std::optional<int> rho_degree(const SymExpr& a);
/// Minimum rho exponent over the stored monomials; nullopt for zero.
/// On the glancing window |rho| is small, so a = O(|rho|^k) holds exactly
/// when rho_valuation(a) >= k; this is the membership functional for the
/// S^k(|rho|) grading checks.
std::optional<int> rho_valuation(const SymExpr& a);
/// Floating-point evaluation; requires mu != 0 and, if the expression
/// has a pinned mu, a matching point.mu.
std::complex<double> eval_numeric(const SymExpr& a, const EvalPoint& p);

/// rho(eta1; mu) evaluated on the Im > 0 branch.
std::complex<double> rho_value(double eta1, double mu);

/// Truncated double formal series in (t, h) with SymExpr coefficients.
///
/// t_trunc / h_trunc give the first unknown order: coefficients with
/// t_order >= t_trunc or h_order >= h_trunc are absent and arithmetic
/// keeps track of how truncation propagates.  kExactOrder marks series
/// that are exact polynomials in that variable.
class JetSeries {
 public:
  static constexpr int kExactOrder = 1 << 20;

  JetSeries() : d_(2), t_trunc_(kExactOrder), h_trunc_(kExactOrder) {}
  JetSeries(int d, int t_trunc, int h_trunc);

  static JetSeries zero(int d, int t_trunc = kExactOrder, int h_trunc = kExactOrder) {
    return JetSeries(d, t_trunc, h_trunc);
  }
  static JetSeries from_sym(const SymExpr& s, int t_order = 0, int h_order = 0);

  int dim() const { return d_; }
  int t_trunc() const { return t_trunc_; }
  int h_trunc() const { return h_trunc_; }
  const std::map<std::pair<int, int>, SymExpr>& coeffs() const { return coeffs_; }
  bool is_zero() const { return coeffs_.empty(); }
  bool operator==(const JetSeries& o) const;

  /// Coefficient of t^t_order h^h_order (zero expression when absent).
  SymExpr coeff(int t_order, int h_order) const;
  void set_coeff(int t_order, int h_order, SymExpr s);

  JetSeries operator+(const JetSeries& o) const;
  JetSeries& operator+=(const JetSeries& o);
  JetSeries operator-(const JetSeries& o) const;
  JetSeries operator*(const JetSeries& o) const;
  JetSeries scaled(const SymExpr& s) const;
  JetSeries scaled(const CRat& c) const;
  /// Multiplies by t^dt h^dh (dt, dh >= 0).
  JetSeries shifted(int dt, int dh) const;
  JetSeries truncated(int t_trunc, int h_trunc) const;
  JetSeries diff_t() const;
  JetSeries diff_y(int axis) const;
  JetSeries diff_eta(int axis) const;

  /// Lowest t order with a nonzero coefficient (t_trunc when empty).
  int t_valuation() const;

  std::string str() const;

 private:
  void check_compatible(const JetSeries& o) const;
  void prune();

  int d_;
  int t_trunc_, h_trunc_;
  std::map<std::pair<int, int>, SymExpr> coeffs_;
};

/// Multi-index over the d-1 tangential axes.
using MultiIndex = std::vector<int>;

int mi_order(const MultiIndex& a);
bool mi_leq(const MultiIndex& b, const MultiIndex& a);
MultiIndex mi_sub(const MultiIndex& a, const MultiIndex& b);
mpz_class mi_binom(const MultiIndex& a, const MultiIndex& b);
mpz_class factorial(int n);
/// All multi-indices of length n with |alpha| <= max_order, in
/// deterministic (graded lexicographic) order.
const std::vector<MultiIndex>& multi_indices_up_to(int n, int max_order);

}  // namespace pgdn::symring
