#pragma once

// Minimal reverse-mode automatic differentiation on a per-thread tape.
//
// Network code is templated on the scalar type so the same routine runs on
// plain doubles (inference, OCP) and on ad::Var (identification gradients).

#include <cmath>
#include <span>
#include <vector>

namespace shwmpc {

// ---------------------------------------------------------------------------
// Scalar primitives on double.

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Partial derivatives of phi(xi, alpha) = asinh(alpha + sinh xi).
/// Every quantity is computed after dividing through by e^{|xi|}/2, so no
/// intermediate overflows for large |xi|.
struct AsinhSinhTerms {
  double value;
  double d_xi;        // cosh xi / sqrt(1 + s^2)
  double d_alpha;     // 1 / sqrt(1 + s^2)
  double d_xi_xi;     // d(d_xi)/dxi
  double d_xi_alpha;  // d(d_xi)/dalpha == d(d_alpha)/dxi
  double d_alpha_alpha;
};

inline AsinhSinhTerms asinh_sinh_terms(double xi, double alpha) {
  const double sgn = xi < 0.0 ? -1.0 : 1.0;
  const double a = std::exp(-std::abs(xi));
  const double a2 = a * a;
  const double sh = sgn * (1.0 - a2);       // sinh xi / (e^|xi|/2)
  const double ch = 1.0 + a2;               // cosh xi / (e^|xi|/2)
  const double s = sh + 2.0 * alpha * a;    // (alpha + sinh xi) / (e^|xi|/2)
  const double r2 = 4.0 * a2 + s * s;
  const double r = std::sqrt(r2);           // sqrt(1+s^2) / (e^|xi|/2)
  const double r3 = r2 * r;
  AsinhSinhTerms t;
  if (std::abs(xi) <= 20.0) {
    t.value = std::asinh(alpha + std::sinh(xi));
  } else {
    const double mag = std::abs(xi) - std::log(2.0) + std::log(std::abs(s) + r);
    t.value = s < 0.0 ? -mag : mag;
  }
  t.d_xi = ch / r;
  t.d_alpha = 2.0 * a / r;
  t.d_xi_xi = (sh * r2 - ch * ch * s) / r3;
  t.d_xi_alpha = -2.0 * a * ch * s / r3;
  t.d_alpha_alpha = -4.0 * a2 * s / r3;
  return t;
}

inline double asinh_sinh(double xi, double alpha) {
  return asinh_sinh_terms(xi, alpha).value;
}
inline double asinh_sinh_dxi(double xi, double alpha) {
  return asinh_sinh_terms(xi, alpha).d_xi;
}
inline double asinh_sinh_dalpha(double xi, double alpha) {
  return asinh_sinh_terms(xi, alpha).d_alpha;
}

inline double value_of(double x) { return x; }

namespace ad {

struct Node {
  int a;
  int b;
  double da;
  double db;
};

class Tape {
 public:
  int push(int a, double da, int b, double db) {
    nodes_.push_back(Node{a, b, da, db});
    return static_cast<int>(nodes_.size()) - 1;
  }
  int leaf() { return push(-1, 0.0, -1, 0.0); }
  void clear() { nodes_.clear(); }
  /// Drops every node recorded after the first n.
  void truncate(std::size_t n) { nodes_.resize(n); }
  std::size_t size() const { return nodes_.size(); }

  /// Adjoints of every node with respect to node `out`.
  void backward(int out, std::vector<double>& adjoint) const;

 private:
  std::vector<Node> nodes_;
};

/// The tape new Var operations record onto (per thread).
Tape*& active_tape();

class Var {
 public:
  Var() = default;
  Var(double v) : v_(v) {}  // NOLINT: constants convert implicitly
  Var(double v, int id) : v_(v), id_(id) {}

  double value() const { return v_; }
  int id() const { return id_; }
  bool is_constant() const { return id_ < 0; }

  Var& operator+=(const Var& o) { return *this = *this + o; }
  Var& operator-=(const Var& o) { return *this = *this - o; }
  Var& operator*=(const Var& o) { return *this = *this * o; }

  friend Var operator+(const Var& x, const Var& y);
  friend Var operator-(const Var& x, const Var& y);
  friend Var operator*(const Var& x, const Var& y);
  friend Var operator/(const Var& x, const Var& y);
  friend Var operator-(const Var& x);

 private:
  double v_ = 0.0;
  int id_ = -1;
};

/// Records a unary or binary node; constant operands get no edge.
inline Var record(double value, const Var& x, double dx) {
  if (x.is_constant()) return Var(value);
  return Var(value, active_tape()->push(x.id(), dx, -1, 0.0));
}
inline Var record(double value, const Var& x, double dx, const Var& y,
                  double dy) {
  if (x.is_constant()) return record(value, y, dy);
  if (y.is_constant()) return record(value, x, dx);
  return Var(value, active_tape()->push(x.id(), dx, y.id(), dy));
}

inline Var operator+(const Var& x, const Var& y) {
  return record(x.v_ + y.v_, x, 1.0, y, 1.0);
}
inline Var operator-(const Var& x, const Var& y) {
  return record(x.v_ - y.v_, x, 1.0, y, -1.0);
}
inline Var operator*(const Var& x, const Var& y) {
  return record(x.v_ * y.v_, x, y.v_, y, x.v_);
}
inline Var operator/(const Var& x, const Var& y) {
  const double inv = 1.0 / y.v_;
  return record(x.v_ * inv, x, inv, y, -x.v_ * inv * inv);
}
inline Var operator-(const Var& x) { return record(-x.v_, x, -1.0); }

inline bool operator<(const Var& x, const Var& y) { return x.value() < y.value(); }
inline bool operator>(const Var& x, const Var& y) { return x.value() > y.value(); }

inline Var tanh(const Var& x) {
  const double t = std::tanh(x.value());
  return record(t, x, 1.0 - t * t);
}
inline Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return record(e, x, e);
}
inline Var log(const Var& x) { return record(std::log(x.value()), x, 1.0 / x.value()); }
inline Var sqrt(const Var& x) {
  const double s = std::sqrt(x.value());
  return record(s, x, 0.5 / s);
}
inline Var abs(const Var& x) {
  return record(std::abs(x.value()), x, x.value() < 0.0 ? -1.0 : 1.0);
}
inline Var softplus(const Var& x) {
  return record(shwmpc::softplus(x.value()), x, shwmpc::sigmoid(x.value()));
}
inline Var sigmoid(const Var& x) {
  const double s = shwmpc::sigmoid(x.value());
  return record(s, x, s * (1.0 - s));
}
inline Var asinh_sinh(const Var& xi, const Var& alpha) {
  const auto t = asinh_sinh_terms(xi.value(), alpha.value());
  return record(t.value, xi, t.d_xi, alpha, t.d_alpha);
}
inline Var asinh_sinh_dxi(const Var& xi, const Var& alpha) {
  const auto t = asinh_sinh_terms(xi.value(), alpha.value());
  return record(t.d_xi, xi, t.d_xi_xi, alpha, t.d_xi_alpha);
}
inline Var asinh_sinh_dalpha(const Var& xi, const Var& alpha) {
  const auto t = asinh_sinh_terms(xi.value(), alpha.value());
  return record(t.d_alpha, xi, t.d_xi_alpha, alpha, t.d_alpha_alpha);
}

inline double value_of(const Var& x) { return x.value(); }

/// Installs a fresh tape for the lifetime of the scope.
class TapeScope {
 public:
  TapeScope() : previous_(active_tape()) { active_tape() = &tape_; }
  ~TapeScope() { active_tape() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape& tape() { return tape_; }

  /// Registers each value as an independent leaf.
  std::vector<Var> leaves(std::span<const double> values);

 private:
  Tape tape_;
  Tape* previous_;
};

}  // namespace ad
}  // namespace shwmpc
