#pragma once

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ferro/driver.hpp"

namespace ferro {

inline constexpr const char* kTimeSeriesHeader =
    "t,energy_total,energy_bulk,energy_sep,energy_exch,p_inf,p_h1,picard_iters,dt,"
    "elliptic_residual";

// Streams one CSV row per emitted snapshot and flushes after each, so a
// crashed run still leaves a parseable prefix. Formatting goes through
// snprintf with %.17g: locale-independent decimal points and lossless
// doubles.
class TimeSeriesLogger {
 public:
  TimeSeriesLogger(const std::string& path, const Problem& problem)
      : problem_(&problem),
        mass_(expand_componentwise(scalar_mass_matrix(problem.mesh))),
        stiffness_(expand_componentwise(scalar_stiffness_matrix(problem.mesh))),
        out_(path) {
    if (!out_) throw io_error("cannot open time series file: " + path);
    out_ << kTimeSeriesHeader << "\n";
    out_.flush();
  }

  void append(const Snapshot& snap) {
    const State& s = snap.state;
    const EnergyBreakdown e =
        compute_energy(problem_->mesh, problem_->model, s.u, s.phi, s.p);
    const double p_inf = s.p.size() ? s.p.cwiseAbs().maxCoeff() : 0.0;
    const double p_h1 = std::sqrt(s.p.dot(stiffness_ * s.p) + s.p.dot(mass_ * s.p));
    char buf[400];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%.17g\n",
                  s.t, e.total, e.bulk, e.separation, e.exchange, p_inf, p_h1,
                  snap.record.picard_iters, snap.record.dt, s.elliptic_residual);
    out_ << buf;
    out_.flush();
  }

 private:
  const Problem* problem_;
  SparseMat mass_, stiffness_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Legacy VTK snapshots
// ---------------------------------------------------------------------------

// ASCII legacy unstructured grid with three point-data arrays: the
// displacement and polarization padded to 3D vectors and the potential as a
// scalar field. Values are written with %.17g so a parse-back reproduces the
// nodal fields.
inline void write_vtk_snapshot(std::ostream& os, const Mesh& mesh, const State& state) {
  char buf[128];
  os << "# vtk DataFile Version 3.0\n";
  std::snprintf(buf, sizeof buf, "ferrosim state t=%.17g\n", state.t);
  os << buf << "ASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << mesh.n_vertices() << " double\n";
  for (const Vec2& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g 0\n", v.x(), v.y());
    os << buf;
  }
  os << "CELLS " << mesh.n_triangles() << " " << 4 * mesh.n_triangles() << "\n";
  for (const auto& t : mesh.triangles) os << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
  os << "CELL_TYPES " << mesh.n_triangles() << "\n";
  for (int k = 0; k < mesh.n_triangles(); ++k) os << "5\n";
  os << "POINT_DATA " << mesh.n_vertices() << "\n";
  os << "VECTORS displacement double\n";
  for (int i = 0; i < mesh.n_vertices(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g 0\n", state.u[2 * i], state.u[2 * i + 1]);
    os << buf;
  }
  os << "SCALARS potential double 1\nLOOKUP_TABLE default\n";
  for (int i = 0; i < mesh.n_vertices(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g\n", state.phi[i]);
    os << buf;
  }
  os << "VECTORS polarization double\n";
  for (int i = 0; i < mesh.n_vertices(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g 0\n", state.p[2 * i], state.p[2 * i + 1]);
    os << buf;
  }
}

inline void write_vtk_snapshot_file(const std::string& path, const Mesh& mesh,
                                    const State& state) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open snapshot file: " + path);
  write_vtk_snapshot(os, mesh, state);
  if (!os) throw io_error("failed writing snapshot: " + path);
}

// Minimal parse-back of the files written above (the round-trip oracle).
struct VtkSnapshot {
  std::vector<Vec2> points;
  std::vector<std::array<int, 3>> cells;
  VecX u, phi, p;
};

inline VtkSnapshot read_vtk_snapshot(std::istream& is) {
  VtkSnapshot snap;
  std::string line;
  auto fail = [](const std::string& why) { throw io_error("vtk parse: " + why); };
  int n_points = 0, n_cells = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "POINTS") {
      ls >> n_points;
      snap.points.resize(n_points);
      for (int i = 0; i < n_points; ++i) {
        double x, y, z;
        if (!(is >> x >> y >> z)) fail("truncated POINTS");
        snap.points[i] = Vec2(x, y);
      }
    } else if (word == "CELLS") {
      ls >> n_cells;
      snap.cells.resize(n_cells);
      for (int i = 0; i < n_cells; ++i) {
        int k, a, b, c;
        if (!(is >> k >> a >> b >> c) || k != 3) fail("unsupported cell");
        snap.cells[i] = {a, b, c};
      }
    } else if (word == "VECTORS") {
      std::string name;
      ls >> name;
      VecX field(2 * n_points);
      for (int i = 0; i < n_points; ++i) {
        double x, y, z;
        if (!(is >> x >> y >> z)) fail("truncated VECTORS " + name);
        field[2 * i] = x;
        field[2 * i + 1] = y;
      }
      if (name == "displacement")
        snap.u = field;
      else if (name == "polarization")
        snap.p = field;
      else
        fail("unexpected vector array " + name);
    } else if (word == "SCALARS") {
      std::getline(is, line);  // LOOKUP_TABLE
      snap.phi.resize(n_points);
      for (int i = 0; i < n_points; ++i)
        if (!(is >> snap.phi[i])) fail("truncated SCALARS");
    }
  }
  if (snap.points.empty()) fail("no POINTS section");
  return snap;
}

}  // namespace ferro
