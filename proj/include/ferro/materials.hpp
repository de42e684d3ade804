#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ferro/types.hpp"

namespace ferro {

// Material maps as functions of the polarization P. The stiffness acts on
// symmetric 2x2 matrices and is stored as its 3x3 Mandel matrix; the
// coupling maps symmetric matrices to vectors and is stored as 2x3.
// Derivatives are supplied per polarization component (directional
// derivatives follow by linearity); they are caller-provided closures and
// every construction path runs the finite-difference self check before the
// model is used in a solve.
struct MaterialModel {
  std::string name;

  std::function<Mat3(const Vec2&)> stiffness;          // C(P), Mandel
  std::function<Mat23(const Vec2&)> coupling;          // e(P)
  std::function<Mat2(const Vec2&)> spont_strain;       // spontaneous strain
  std::function<Mat2(const Vec2&)> permittivity;       // dielectric matrix
  std::function<double(const Vec2&)> separation;       // multi-well density

  std::function<std::array<Mat3, 2>(const Vec2&)> d_stiffness;
  std::function<std::array<Mat23, 2>(const Vec2&)> d_coupling;
  std::function<std::array<Mat2, 2>(const Vec2&)> d_spont_strain;
  std::function<std::array<Mat2, 2>(const Vec2&)> d_permittivity;
  std::function<Vec2(const Vec2&)> separation_grad;
};

struct MaterialPoint {
  Vec2 p;
  Mat3 stiffness;
  Mat23 coupling;
  Mat2 spont_strain;
  Mat2 permittivity;
  double separation = 0.0;
  std::array<Mat3, 2> d_stiffness;
  std::array<Mat23, 2> d_coupling;
  std::array<Mat2, 2> d_spont_strain;
  std::array<Mat2, 2> d_permittivity;
  Vec2 separation_grad;

  Mat3 d_stiffness_dir(const Vec2& d) const { return d_stiffness[0] * d.x() + d_stiffness[1] * d.y(); }
  Mat23 d_coupling_dir(const Vec2& d) const { return d_coupling[0] * d.x() + d_coupling[1] * d.y(); }
  Mat2 d_spont_strain_dir(const Vec2& d) const {
    return d_spont_strain[0] * d.x() + d_spont_strain[1] * d.y();
  }
  Mat2 d_permittivity_dir(const Vec2& d) const {
    return d_permittivity[0] * d.x() + d_permittivity[1] * d.y();
  }
};

namespace detail {
template <typename M>
void require_finite(const M& m, const char* map, const Vec2& p) {
  if (!m.allFinite())
    throw material_error(std::string("material map '") + map + "' returned non-finite values at P=(" +
                         std::to_string(p.x()) + "," + std::to_string(p.y()) + ")");
}
inline void require_symmetric(const Mat2& m, const char* map, double tol) {
  if (std::abs(m(0, 1) - m(1, 0)) > tol * (1.0 + m.cwiseAbs().maxCoeff()))
    throw material_error(std::string("material map '") + map + "' is not symmetric");
}
}  // namespace detail

inline MaterialPoint eval_material(const MaterialModel& model, const Vec2& p) {
  MaterialPoint mp;
  mp.p = p;
  mp.stiffness = model.stiffness(p);
  mp.coupling = model.coupling(p);
  mp.spont_strain = model.spont_strain(p);
  mp.permittivity = model.permittivity(p);
  mp.separation = model.separation(p);
  mp.d_stiffness = model.d_stiffness(p);
  mp.d_coupling = model.d_coupling(p);
  mp.d_spont_strain = model.d_spont_strain(p);
  mp.d_permittivity = model.d_permittivity(p);
  mp.separation_grad = model.separation_grad(p);

  detail::require_finite(mp.stiffness, "stiffness", p);
  detail::require_finite(mp.coupling, "coupling", p);
  detail::require_finite(mp.spont_strain, "spont_strain", p);
  detail::require_finite(mp.permittivity, "permittivity", p);
  if (!std::isfinite(mp.separation))
    throw material_error("material map 'separation' returned non-finite values");
  detail::require_finite(mp.separation_grad, "separation_grad", p);
  for (int k = 0; k < 2; ++k) {
    detail::require_finite(mp.d_stiffness[k], "d_stiffness", p);
    detail::require_finite(mp.d_coupling[k], "d_coupling", p);
    detail::require_finite(mp.d_spont_strain[k], "d_spont_strain", p);
    detail::require_finite(mp.d_permittivity[k], "d_permittivity", p);
  }

  // Major symmetry of the stiffness is symmetry of its Mandel matrix.
  if ((mp.stiffness - mp.stiffness.transpose()).cwiseAbs().maxCoeff() >
      1e-13 * (1.0 + mp.stiffness.cwiseAbs().maxCoeff()))
    throw material_error("material map 'stiffness' lacks major symmetry");
  detail::require_symmetric(mp.spont_strain, "spont_strain", 1e-14);
  detail::require_symmetric(mp.permittivity, "permittivity", 1e-14);
  return mp;
}

// Block material map on (strain, potential gradient) pairs in Mandel
// coordinates:
//   (eps, g)  ->  (C eps + e^T g, -e eps + epsd g).
// The antidiagonal blocks are exact transposes with opposite sign, which is
// what cancels the coupling in the quadratic form.
inline Mat5 assemble_block_map(const MaterialPoint& mp) {
  Mat5 b;
  b.block<3, 3>(0, 0) = mp.stiffness;
  b.block<3, 2>(0, 3) = mp.coupling.transpose();
  b.block<2, 3>(3, 0) = -mp.coupling;
  b.block<2, 2>(3, 3) = mp.permittivity;
  return b;
}

inline Mat5 block_map_derivative(const MaterialPoint& mp, const Vec2& dir) {
  Mat5 b;
  const Mat3 dc = mp.d_stiffness_dir(dir);
  const Mat23 de = mp.d_coupling_dir(dir);
  b.block<3, 3>(0, 0) = dc;
  b.block<3, 2>(0, 3) = de.transpose();
  b.block<2, 3>(3, 0) = -de;
  b.block<2, 2>(3, 3) = mp.d_permittivity_dir(dir);
  return b;
}

// ---------------------------------------------------------------------------
// Built-in models
// ---------------------------------------------------------------------------

using ParamMap = std::map<std::string, double>;

namespace detail {
inline double take(ParamMap& params, const std::string& key, double fallback) {
  auto it = params.find(key);
  if (it == params.end()) return fallback;
  const double v = it->second;
  params.erase(it);
  return v;
}
inline void reject_leftovers(const ParamMap& params, const std::string& model) {
  if (!params.empty())
    throw config_error("material '" + model + "': unknown parameter '" + params.begin()->first + "'");
}
}  // namespace detail

// Constant decoupled model: isotropic stiffness, zero coupling and
// spontaneous strain, scalar permittivity. Optional quadratic separation
// well 0.5*omega_quad*|P|^2.
inline MaterialModel make_lame_laplace(ParamMap params = {}) {
  const double lambda = detail::take(params, "lambda", 1.0);
  const double mu = detail::take(params, "mu", 1.0);
  const double gamma = detail::take(params, "gamma", 1.0);
  const double w = detail::take(params, "omega_quad", 0.0);
  detail::reject_leftovers(params, "lame_laplace");

  MaterialModel m;
  m.name = "lame_laplace";
  const Mat3 c = isotropic_stiffness(lambda, mu);
  m.stiffness = [c](const Vec2&) { return c; };
  m.coupling = [](const Vec2&) { return Mat23::Zero(); };
  m.spont_strain = [](const Vec2&) { return Mat2::Zero(); };
  m.permittivity = [gamma](const Vec2&) { return Mat2(gamma * Mat2::Identity()); };
  m.separation = [w](const Vec2& p) { return 0.5 * w * p.squaredNorm(); };
  m.d_stiffness = [](const Vec2&) { return std::array<Mat3, 2>{Mat3::Zero(), Mat3::Zero()}; };
  m.d_coupling = [](const Vec2&) { return std::array<Mat23, 2>{Mat23::Zero(), Mat23::Zero()}; };
  m.d_spont_strain = [](const Vec2&) { return std::array<Mat2, 2>{Mat2::Zero(), Mat2::Zero()}; };
  m.d_permittivity = [](const Vec2&) { return std::array<Mat2, 2>{Mat2::Zero(), Mat2::Zero()}; };
  m.separation_grad = [w](const Vec2& p) { return Vec2(w * p); };
  return m;
}

// Polynomial piezo model: every map is a polynomial of degree <= 2 in P with
// e(0) = 0, so the system decouples at P = 0; the separation density is the
// double well kappa*(|P|^2 - 1)^2. Exercises every derivative term of the
// source assembly.
inline MaterialModel make_poly_piezo(ParamMap params = {}) {
  const double lambda = detail::take(params, "lambda", 1.0);
  const double mu = detail::take(params, "mu", 1.0);
  const double gamma = detail::take(params, "gamma", 1.0);
  const double a_c = detail::take(params, "a_c", 0.2);
  const double b_c = detail::take(params, "b_c", 0.1);
  const double a_e = detail::take(params, "a_e", 0.3);
  const double c_e = detail::take(params, "c_e", 0.1);
  const double a_s = detail::take(params, "a_s", 0.15);
  const double a_d = detail::take(params, "a_d", 0.2);
  const double kappa = detail::take(params, "kappa", 1.0);
  detail::reject_leftovers(params, "poly_piezo");

  const Mat3 c0 = isotropic_stiffness(lambda, mu);
  Mat3 g1, g2;
  g1 << 1, 0, 0, 0, -1, 0, 0, 0, 0;
  g2 << 0, 1, 0, 1, 0, 0, 0, 0, 1;
  Mat23 e1, e2, e3;
  e1 << 1, 0, 0, 0, 0, 1;
  e2 << 0, 0, 1, 0, 1, 0;
  e3 << 0, 1, 1, 1, 0, 0;

  MaterialModel m;
  m.name = "poly_piezo";
  m.stiffness = [=](const Vec2& p) {
    return Mat3(c0 + a_c * p.squaredNorm() * Mat3::Identity() + b_c * (p.x() * g1 + p.y() * g2));
  };
  m.d_stiffness = [=](const Vec2& p) {
    return std::array<Mat3, 2>{Mat3(2.0 * a_c * p.x() * Mat3::Identity() + b_c * g1),
                               Mat3(2.0 * a_c * p.y() * Mat3::Identity() + b_c * g2)};
  };
  m.coupling = [=](const Vec2& p) {
    return Mat23(a_e * (p.x() * e1 + p.y() * e2) + c_e * p.squaredNorm() * e3);
  };
  m.d_coupling = [=](const Vec2& p) {
    return std::array<Mat23, 2>{Mat23(a_e * e1 + 2.0 * c_e * p.x() * e3),
                                Mat23(a_e * e2 + 2.0 * c_e * p.y() * e3)};
  };
  // Deviatoric spontaneous strain P (x) P - |P|^2/2 I.
  m.spont_strain = [=](const Vec2& p) {
    return Mat2(a_s * (p * p.transpose() - 0.5 * p.squaredNorm() * Mat2::Identity()));
  };
  m.d_spont_strain = [=](const Vec2& p) {
    std::array<Mat2, 2> d;
    for (int k = 0; k < 2; ++k) {
      Vec2 ek = Vec2::Zero();
      ek(k) = 1.0;
      d[k] = a_s * (ek * p.transpose() + p * ek.transpose() - p(k) * Mat2::Identity());
    }
    return d;
  };
  m.permittivity = [=](const Vec2& p) {
    return Mat2(gamma * Mat2::Identity() + a_d * p * p.transpose());
  };
  m.d_permittivity = [=](const Vec2& p) {
    std::array<Mat2, 2> d;
    for (int k = 0; k < 2; ++k) {
      Vec2 ek = Vec2::Zero();
      ek(k) = 1.0;
      d[k] = a_d * (ek * p.transpose() + p * ek.transpose());
    }
    return d;
  };
  m.separation = [=](const Vec2& p) {
    const double s = p.squaredNorm() - 1.0;
    return kappa * s * s;
  };
  m.separation_grad = [=](const Vec2& p) { return Vec2(4.0 * kappa * (p.squaredNorm() - 1.0) * p); };
  return m;
}

// Constant decoupled model whose separation density -|P|^4/4 drives a
// finite-time blow-up: spatially uniform states follow p' = |p|^2 p.
inline MaterialModel make_blowup_test(ParamMap params = {}) {
  const double lambda = detail::take(params, "lambda", 1.0);
  const double mu = detail::take(params, "mu", 1.0);
  const double gamma = detail::take(params, "gamma", 1.0);
  detail::reject_leftovers(params, "blowup_test");

  MaterialModel m = make_lame_laplace({{"lambda", lambda}, {"mu", mu}, {"gamma", gamma}});
  m.name = "blowup_test";
  m.separation = [](const Vec2& p) { return -0.25 * p.squaredNorm() * p.squaredNorm(); };
  m.separation_grad = [](const Vec2& p) { return Vec2(-p.squaredNorm() * p); };
  return m;
}

inline MaterialModel make_material(const std::string& name, ParamMap params = {}) {
  if (name == "lame_laplace") return make_lame_laplace(std::move(params));
  if (name == "poly_piezo") return make_poly_piezo(std::move(params));
  if (name == "blowup_test") return make_blowup_test(std::move(params));
  throw config_error("unknown material '" + name +
                     "' (available: lame_laplace, poly_piezo, blowup_test)");
}

// ---------------------------------------------------------------------------
// Assumption checks
// ---------------------------------------------------------------------------

// Central finite-difference self check of all supplied derivative maps.
// Returns the max error relative to a unit floor; models whose closures are
// inconsistent with their value maps fail loudly at startup instead of
// producing a wrong source term.
inline double check_derivatives(const MaterialModel& model, int n_samples = 50, double h = 1e-5,
                                unsigned seed = 12345) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  double worst = 0.0;
  auto update = [&](double num, double den) { worst = std::max(worst, num / std::max(1.0, den)); };

  for (int s = 0; s < n_samples; ++s) {
    const Vec2 p(unif(rng), unif(rng));
    for (int k = 0; k < 2; ++k) {
      Vec2 dp = Vec2::Zero();
      dp(k) = h;
      const Mat3 fd_c = (model.stiffness(p + dp) - model.stiffness(p - dp)) / (2.0 * h);
      const Mat23 fd_e = (model.coupling(p + dp) - model.coupling(p - dp)) / (2.0 * h);
      const Mat2 fd_s = (model.spont_strain(p + dp) - model.spont_strain(p - dp)) / (2.0 * h);
      const Mat2 fd_d = (model.permittivity(p + dp) - model.permittivity(p - dp)) / (2.0 * h);
      const double fd_w = (model.separation(p + dp) - model.separation(p - dp)) / (2.0 * h);
      update((fd_c - model.d_stiffness(p)[k]).norm(), fd_c.norm());
      update((fd_e - model.d_coupling(p)[k]).norm(), fd_e.norm());
      update((fd_s - model.d_spont_strain(p)[k]).norm(), fd_s.norm());
      update((fd_d - model.d_permittivity(p)[k]).norm(), fd_d.norm());
      update(std::abs(fd_w - model.separation_grad(p)(k)), std::abs(fd_w));
    }
  }
  return worst;
}

struct SmoothnessEntry {
  std::string map;
  double ratio = 0.0;        // max |g(P+h d) - g(P)| / h over sampled pairs
  double ratio_refined = 0.0;  // same with step h/10
  bool flagged = false;      // non-finite or ratio exploding as h -> 0
};

struct SmoothnessReport {
  std::vector<SmoothnessEntry> entries;
  bool ok = true;
  double max_ratio = 0.0;
};

// Empirical probe of derivative Lipschitz continuity on a box. Pairs are the
// sampled base points displaced by h in random directions; a quarter of the
// base points cluster within h of the box center so kinks there are hit.
// A map is flagged when refining the step to h/10 more than doubles the
// ratio (the hallmark of a derivative jump) or when evaluation blows up.
inline SmoothnessReport check_smoothness(const MaterialModel& model, const Vec2& box_lo,
                                         const Vec2& box_hi, double h, int n_samples = 200,
                                         unsigned seed = 777) {
  if (!(h > 0.0)) throw config_error("check_smoothness: step h must be positive");
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Vec2 center = 0.5 * (box_lo + box_hi);

  std::vector<Vec2> bases;
  bases.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    if (i % 4 == 0) {
      const double ang = 2.0 * std::numbers::pi * unif(rng);
      bases.push_back(center + 0.9 * h * unif(rng) * Vec2(std::cos(ang), std::sin(ang)));
    } else {
      bases.push_back(Vec2(box_lo.x() + (box_hi.x() - box_lo.x()) * unif(rng),
                           box_lo.y() + (box_hi.y() - box_lo.y()) * unif(rng)));
    }
  }
  std::vector<Vec2> dirs;
  dirs.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const double ang = 2.0 * std::numbers::pi * unif(rng);
    dirs.emplace_back(std::cos(ang), std::sin(ang));
  }

  struct Probe {
    std::string map;
    std::function<VecX(const Vec2&)> g;
  };
  auto flatten3 = [](const std::array<Mat3, 2>& a) {
    VecX v(18);
    v << Eigen::Map<const VecX>(a[0].data(), 9), Eigen::Map<const VecX>(a[1].data(), 9);
    return v;
  };
  auto flatten23 = [](const std::array<Mat23, 2>& a) {
    VecX v(12);
    v << Eigen::Map<const VecX>(a[0].data(), 6), Eigen::Map<const VecX>(a[1].data(), 6);
    return v;
  };
  auto flatten2 = [](const std::array<Mat2, 2>& a) {
    VecX v(8);
    v << Eigen::Map<const VecX>(a[0].data(), 4), Eigen::Map<const VecX>(a[1].data(), 4);
    return v;
  };
  const std::vector<Probe> probes = {
      {"d_stiffness", [&](const Vec2& p) { return flatten3(model.d_stiffness(p)); }},
      {"d_coupling", [&](const Vec2& p) { return flatten23(model.d_coupling(p)); }},
      {"d_spont_strain", [&](const Vec2& p) { return flatten2(model.d_spont_strain(p)); }},
      {"d_permittivity", [&](const Vec2& p) { return flatten2(model.d_permittivity(p)); }},
      {"separation_grad", [&](const Vec2& p) { return VecX(model.separation_grad(p)); }},
  };

  SmoothnessReport report;
  for (const auto& probe : probes) {
    SmoothnessEntry entry;
    entry.map = probe.map;
    bool finite = true;
    auto max_ratio_at = [&](double step) {
      double r = 0.0;
      for (int i = 0; i < n_samples; ++i) {
        try {
          const VecX ga = probe.g(bases[i]);
          const VecX gb = probe.g(bases[i] + step * dirs[i]);
          if (!ga.allFinite() || !gb.allFinite()) {
            finite = false;
            continue;
          }
          r = std::max(r, (gb - ga).norm() / step);
        } catch (const std::exception& ex) {
          throw material_error("check_smoothness: evaluation of '" + probe.map + "' failed near P=(" +
                               std::to_string(bases[i].x()) + "," + std::to_string(bases[i].y()) +
                               "): " + ex.what());
        }
      }
      return r;
    };
    entry.ratio = max_ratio_at(h);
    entry.ratio_refined = max_ratio_at(h / 10.0);
    entry.flagged = !finite || !std::isfinite(entry.ratio) || !std::isfinite(entry.ratio_refined) ||
                    entry.ratio_refined > 2.0 * entry.ratio + 1e-9;
    report.ok = report.ok && !entry.flagged;
    report.max_ratio = std::max(report.max_ratio, entry.ratio);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

struct CoercivityReport {
  double alpha_min = 0.0;  // min over samples of min(eig C(P), eig epsd(P))
  int samples = 0;
  std::optional<Vec2> failed_sample;
};

inline CoercivityReport check_pointwise_coercivity(const MaterialModel& model,
                                                   const std::vector<Vec2>& samples) {
  if (samples.empty()) throw config_error("check_pointwise_coercivity: no samples given");
  CoercivityReport report;
  report.samples = static_cast<int>(samples.size());
  report.alpha_min = std::numeric_limits<double>::infinity();
  for (const Vec2& p : samples) {
    Eigen::SelfAdjointEigenSolver<Mat3> es_c(model.stiffness(p));
    Eigen::SelfAdjointEigenSolver<Mat2> es_d(model.permittivity(p));
    const double alpha = std::min(es_c.eigenvalues().minCoeff(), es_d.eigenvalues().minCoeff());
    if (alpha < report.alpha_min) report.alpha_min = alpha;
    if (alpha <= 0.0 && !report.failed_sample) report.failed_sample = p;
  }
  return report;
}

struct DecouplingReport {
  bool decoupled = false;
  double deviation = 0.0;
  double lambda = 0.0, mu = 0.0, gamma = 0.0;  // fitted constants at P = 0
};

// At P = 0 the model must reduce to an isotropic elastic operator plus a
// scalar Laplacian with no electromechanical coupling.
inline DecouplingReport check_decoupling_at_zero(const MaterialModel& model, double tol = 1e-12) {
  const Vec2 zero = Vec2::Zero();
  const Mat3 c0 = model.stiffness(zero);
  const Mat23 e0 = model.coupling(zero);
  const Mat2 d0 = model.permittivity(zero);

  DecouplingReport report;
  report.lambda = 0.5 * (c0(0, 1) + c0(1, 0));
  const double mu_a = 0.5 * c0(2, 2);
  const double mu_b = 0.5 * (c0(0, 0) - report.lambda);
  const double mu_c = 0.5 * (c0(1, 1) - report.lambda);
  report.mu = (mu_a + mu_b + mu_c) / 3.0;
  report.gamma = 0.5 * (d0(0, 0) + d0(1, 1));

  const double dev_c = (c0 - isotropic_stiffness(report.lambda, report.mu)).cwiseAbs().maxCoeff();
  const double dev_e = e0.cwiseAbs().maxCoeff();
  const double dev_d = (d0 - report.gamma * Mat2::Identity()).cwiseAbs().maxCoeff();
  report.deviation = std::max({dev_c, dev_e, dev_d});
  report.decoupled = report.deviation <= tol;
  return report;
}

}  // namespace ferro
