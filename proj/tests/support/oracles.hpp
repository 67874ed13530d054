#pragma once

// Independent reference computations used to freeze and check expected
// values. Nothing here calls the code path it is used to check.

#include <functional>
#include <random>

#include "shwmpc/bnn.hpp"
#include "shwmpc/linalg.hpp"
#include "shwmpc/picnn.hpp"

namespace shwmpc::oracle {

/// e^{A t} by a plain truncated Taylor series (no scaling); only for
/// ||A t|| <~ 2.
Matrix taylor_expm(const Matrix& a, double t, int terms = 40);

/// int_0^delta e^{A s} ds by composite Simpson with `panels` panels over
/// Taylor-series exponentials.
Matrix simpson_exp_integral(const Matrix& a, double delta, int panels = 200);

/// Box-QP minimizer by enumerating every free/lower/upper pattern.
Vector enumerate_box_qp(const Matrix& h, const Vector& g, const Vector& lower,
                        const Vector& upper);

/// Central-difference Jacobian of f at x.
Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                   double step = 1e-5);

/// Central-difference gradient of a scalar function.
Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                   double step = 1e-5);

/// Straight-line BNN forward written directly from the layer recursion with
/// Eigen matrices and std:: functions.
Vector reference_bnn_forward(const BnnParams& p, const Vector& xi, const Vector& eta);

/// Straight-line PICNN forward.
Vector reference_picnn_forward(const PicnnParams& p, const Vector& xi,
                               const Vector& eta);

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0);
Vector random_vector(int n, std::mt19937_64& rng, double scale = 1.0);

/// Relative error ||a - b|| / max(||b||, floor).
double rel_err(const Matrix& a, const Matrix& b, double floor = 1e-12);

}  // namespace shwmpc::oracle
