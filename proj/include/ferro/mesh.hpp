#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ferro/types.hpp"

namespace ferro {

enum class Field { displacement = 0, potential = 1, polarization = 2 };

inline const char* field_name(Field f) {
  switch (f) {
    case Field::displacement: return "u";
    case Field::potential: return "phi";
    case Field::polarization: return "p";
  }
  return "?";
}

struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

struct BoundaryFacet {
  int v0 = -1, v1 = -1;  // endpoints, oriented so the domain lies to the left
  int tri = -1;          // owning triangle
};

// Conforming triangulation. Triangles are counterclockwise; boundary facets
// trace the boundary polygon and each one belongs to exactly one triangle.
struct Mesh {
  std::vector<Vec2> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<BoundaryFacet> boundary_facets;

  int n_vertices() const { return static_cast<int>(vertices.size()); }
  int n_triangles() const { return static_cast<int>(triangles.size()); }
  int n_boundary_facets() const { return static_cast<int>(boundary_facets.size()); }

  double signed_area(int tri) const {
    const auto& t = triangles[tri];
    const Vec2 a = vertices[t[0]], b = vertices[t[1]], c = vertices[t[2]];
    return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
  }

  double total_area() const {
    double s = 0.0;
    for (int k = 0; k < n_triangles(); ++k) s += signed_area(k);
    return s;
  }

  Vec2 facet_midpoint(int f) const {
    const auto& bf = boundary_facets[f];
    return 0.5 * (vertices[bf.v0] + vertices[bf.v1]);
  }

  double facet_length(int f) const {
    const auto& bf = boundary_facets[f];
    return (vertices[bf.v1] - vertices[bf.v0]).norm();
  }

  // Checks the structural invariants; throws config_error on the first
  // violation. Used after import and in tests.
  void validate() const {
    for (int k = 0; k < n_triangles(); ++k) {
      for (int v : triangles[k])
        if (v < 0 || v >= n_vertices())
          throw config_error("mesh: triangle " + std::to_string(k) + " has vertex index out of range");
      if (signed_area(k) <= 0.0)
        throw config_error("mesh: triangle " + std::to_string(k) + " has non-positive area");
    }
    // Edge incidence: every edge is shared by one or two triangles; the
    // boundary facet list must be exactly the single-owner edges.
    std::map<std::pair<int, int>, std::vector<int>> owners;
    for (int k = 0; k < n_triangles(); ++k) {
      const auto& t = triangles[k];
      for (int i = 0; i < 3; ++i) {
        int a = t[i], b = t[(i + 1) % 3];
        owners[{std::min(a, b), std::max(a, b)}].push_back(k);
      }
    }
    for (const auto& [edge, tris] : owners)
      if (tris.size() > 2)
        throw config_error("mesh: non-manifold edge (" + std::to_string(edge.first) + "," +
                           std::to_string(edge.second) + ")");
    std::size_t n_single = 0;
    for (const auto& [edge, tris] : owners) n_single += tris.size() == 1 ? 1 : 0;
    if (n_single != boundary_facets.size())
      throw config_error("mesh: boundary facet list does not cover the boundary (" +
                         std::to_string(boundary_facets.size()) + " facets, " +
                         std::to_string(n_single) + " boundary edges)");
    std::vector<int> touch(n_vertices(), 0);
    for (int f = 0; f < n_boundary_facets(); ++f) {
      const auto& bf = boundary_facets[f];
      auto it = owners.find({std::min(bf.v0, bf.v1), std::max(bf.v0, bf.v1)});
      if (it == owners.end() || it->second.size() != 1)
        throw config_error("mesh: facet " + std::to_string(f) + " is not a boundary edge");
      if (it->second[0] != bf.tri)
        throw config_error("mesh: facet " + std::to_string(f) + " names the wrong owning triangle");
      ++touch[bf.v0];
      ++touch[bf.v1];
    }
    // Closed polygonal curve: each boundary vertex is hit by exactly two facets.
    for (int v = 0; v < n_vertices(); ++v)
      if (touch[v] != 0 && touch[v] != 2)
        throw config_error("mesh: boundary is not a closed curve at vertex " + std::to_string(v));
  }
};

// Structured triangulation of a rectangle: row-major vertex numbering,
// each quad split along its up-right diagonal. Deterministic by design so
// oracle comparisons are reproducible.
inline Mesh build_structured_mesh(int nx, int ny, const Rect& rect = {}) {
  if (nx < 1 || ny < 1)
    throw config_error("mesh: subdivision counts must be >= 1 (got nx=" + std::to_string(nx) +
                       ", ny=" + std::to_string(ny) + ")");
  if (!(rect.width() > 0.0) || !(rect.height() > 0.0))
    throw config_error("mesh: rectangle must have positive side lengths");

  Mesh m;
  const int npx = nx + 1, npy = ny + 1;
  m.vertices.reserve(static_cast<std::size_t>(npx) * npy);
  for (int j = 0; j < npy; ++j)
    for (int i = 0; i < npx; ++i)
      m.vertices.emplace_back(rect.x0 + rect.width() * i / nx, rect.y0 + rect.height() * j / ny);

  auto vid = [npx](int i, int j) { return j * npx + i; };

  m.triangles.reserve(2u * nx * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int v00 = vid(i, j), v10 = vid(i + 1, j), v01 = vid(i, j + 1), v11 = vid(i + 1, j + 1);
      m.triangles.push_back({v00, v10, v11});
      m.triangles.push_back({v00, v11, v01});
    }
  }

  auto tri_of_quad = [nx](int i, int j, bool upper) { return 2 * (j * nx + i) + (upper ? 1 : 0); };
  // bottom, right, top, left -- counterclockwise around the rectangle
  for (int i = 0; i < nx; ++i)
    m.boundary_facets.push_back({vid(i, 0), vid(i + 1, 0), tri_of_quad(i, 0, false)});
  for (int j = 0; j < ny; ++j)
    m.boundary_facets.push_back({vid(nx, j), vid(nx, j + 1), tri_of_quad(nx - 1, j, false)});
  for (int i = nx; i > 0; --i)
    m.boundary_facets.push_back({vid(i, ny), vid(i - 1, ny), tri_of_quad(i - 1, ny - 1, true)});
  for (int j = ny; j > 0; --j)
    m.boundary_facets.push_back({vid(0, j), vid(0, j - 1), tri_of_quad(0, j - 1, true)});
  return m;
}

enum class BcType { dirichlet, neumann };

// Per-field facet tags. For each field the Dirichlet and Neumann facet sets
// partition the whole boundary; membership is decided on facet midpoints so
// vertices shared by two boundary parts are never ambiguous.
struct BoundaryPartition {
  std::array<std::vector<BcType>, 3> tags;  // indexed by Field

  const std::vector<BcType>& of(Field f) const { return tags[static_cast<int>(f)]; }
  std::vector<BcType>& of(Field f) { return tags[static_cast<int>(f)]; }

  int count(Field f, BcType t) const {
    const auto& v = of(f);
    return static_cast<int>(std::count(v.begin(), v.end(), t));
  }
  bool has_dirichlet(Field f) const { return count(f, BcType::dirichlet) > 0; }
};

using BoundarySpec = std::function<BcType(Field, const Vec2& midpoint)>;

inline BoundaryPartition tag_boundary(const Mesh& mesh, const BoundarySpec& spec) {
  if (!spec) throw config_error("tag_boundary: boundary predicate is empty");
  BoundaryPartition part;
  for (Field f : {Field::displacement, Field::potential, Field::polarization}) {
    auto& tags = part.of(f);
    tags.resize(mesh.n_boundary_facets());
    for (int k = 0; k < mesh.n_boundary_facets(); ++k) {
      try {
        tags[k] = spec(f, mesh.facet_midpoint(k));
      } catch (const std::exception& ex) {
        throw config_error(std::string("tag_boundary: predicate failed for field ") + field_name(f) +
                           " at facet " + std::to_string(k) + ": " + ex.what());
      }
    }
  }
  return part;
}

inline BoundaryPartition tag_all(const Mesh& mesh, BcType u, BcType phi, BcType p) {
  return tag_boundary(mesh, [&](Field f, const Vec2&) {
    switch (f) {
      case Field::displacement: return u;
      case Field::potential: return phi;
      default: return p;
    }
  });
}

// Plain-text mesh import:
//   VERTS n            followed by n lines "x y"
//   TRIS m             followed by m lines of 3 zero-based vertex indices
//   BFACETS k          followed by k lines "v0 v1 tri"
// Whether an imported mesh meets the geometric regularity the solver
// assumes is the user's obligation; only the structural invariants are
// verified here.
inline Mesh read_mesh(std::istream& in) {
  auto expect = [&](const char* kw) {
    std::string word;
    if (!(in >> word) || word != kw)
      throw config_error(std::string("mesh import: expected '") + kw + "', got '" + word + "'");
    long n = 0;
    if (!(in >> n) || n < 0) throw config_error(std::string("mesh import: bad count after ") + kw);
    return n;
  };
  Mesh m;
  const long nv = expect("VERTS");
  m.vertices.reserve(nv);
  for (long i = 0; i < nv; ++i) {
    double x, y;
    if (!(in >> x >> y)) throw config_error("mesh import: truncated vertex list");
    m.vertices.emplace_back(x, y);
  }
  const long nt = expect("TRIS");
  m.triangles.reserve(nt);
  for (long i = 0; i < nt; ++i) {
    int a, b, c;
    if (!(in >> a >> b >> c)) throw config_error("mesh import: truncated triangle list");
    m.triangles.push_back({a, b, c});
  }
  const long nf = expect("BFACETS");
  m.boundary_facets.reserve(nf);
  for (long i = 0; i < nf; ++i) {
    BoundaryFacet f;
    if (!(in >> f.v0 >> f.v1 >> f.tri)) throw config_error("mesh import: truncated facet list");
    m.boundary_facets.push_back(f);
  }
  m.validate();
  return m;
}

inline Mesh read_mesh_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open mesh file: " + path);
  return read_mesh(in);
}

inline void write_mesh(std::ostream& out, const Mesh& m) {
  out << "VERTS " << m.n_vertices() << "\n";
  char buf[80];
  for (const auto& v : m.vertices) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", v.x(), v.y());
    out << buf;
  }
  out << "TRIS " << m.n_triangles() << "\n";
  for (const auto& t : m.triangles) out << t[0] << " " << t[1] << " " << t[2] << "\n";
  out << "BFACETS " << m.n_boundary_facets() << "\n";
  for (const auto& f : m.boundary_facets) out << f.v0 << " " << f.v1 << " " << f.tri << "\n";
}

}  // namespace ferro
