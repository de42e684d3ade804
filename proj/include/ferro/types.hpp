#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ferro {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat5 = Eigen::Matrix<double, 5, 5>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Error taxonomy. Each failure mode surfaced to the CLI maps to one of these.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct material_error : std::runtime_error {
  explicit material_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct assembly_error : std::runtime_error {
  explicit assembly_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct constraint_error : std::runtime_error {
  explicit constraint_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct solver_error : std::runtime_error {
  explicit solver_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct assumption_error : std::runtime_error {
  explicit assumption_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct estimation_error : std::runtime_error {
  explicit estimation_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Orthonormal (Mandel) coordinates for symmetric 2x2 matrices:
//   s  ->  (s_xx, s_yy, sqrt(2) s_xy).
// The Frobenius inner product becomes the plain dot product, and a rank-4
// tensor acting on symmetric matrices becomes a 3x3 matrix whose eigenvalues
// equal the operator eigenvalues. Coercivity checks rely on that.
inline Vec3 sym_to_vec(const Mat2& s) {
  const double xy = 0.5 * (s(0, 1) + s(1, 0));
  return Vec3(s(0, 0), s(1, 1), std::numbers::sqrt2 * xy);
}

inline Mat2 vec_to_sym(const Vec3& v) {
  const double xy = v(2) / std::numbers::sqrt2;
  Mat2 s;
  s << v(0), xy, xy, v(1);
  return s;
}

// Isotropic stiffness  eps -> lambda tr(eps) I + 2 mu eps  in Mandel form.
inline Mat3 isotropic_stiffness(double lambda, double mu) {
  Mat3 c = Mat3::Zero();
  c(0, 0) = lambda + 2.0 * mu;
  c(1, 1) = lambda + 2.0 * mu;
  c(0, 1) = lambda;
  c(1, 0) = lambda;
  c(2, 2) = 2.0 * mu;
  return c;
}

}  // namespace ferro
