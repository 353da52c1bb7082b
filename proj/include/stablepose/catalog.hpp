#pragma once

// Shape catalog: the seven canonical blocks plus a human-editable text format.
//
//   # comment
//   shape <name>
//   vertex <x> <y> <z>        (body frame, meters; solid centroid at origin)
//   face <i0> <i1> <i2> ...   (vertex indices, any winding)
//   end
//
// The loader validates convexity, closedness, and centroid placement and
// reports failures with file:line positions.

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stablepose/errors.hpp"
#include "stablepose/shape.hpp"

namespace stablepose {

inline constexpr const char* kCatalogEnvVar = "STABLEPOSE_CATALOG";

struct ShapeCatalog {
  std::vector<BlockShape> shapes;
  std::map<std::string, int> index;
  std::string source;  // file path or "<builtin>"

  bool has(const std::string& name) const { return index.count(name) != 0; }

  const BlockShape& get(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) {
      throw ValidationError("unknown shape '" + name + "' (catalog: " + source + ")");
    }
    return shapes[it->second];
  }

  const BlockShape& get(int i) const { return shapes.at(i); }
  int size() const { return static_cast<int>(shapes.size()); }
};

namespace detail {

inline void validate_shape(const BlockShape& s, const std::string& where) {
  for (const auto& f : s.faces) {
    for (int vi : f.verts) {
      double d = std::abs(f.normal.dot(s.vertices[vi]) - f.offset);
      if (d > 1e-9) {
        throw ValidationError(where + ": shape '" + s.name + "' has a non-planar face");
      }
    }
    for (const auto& v : s.vertices) {
      if (f.normal.dot(v) - f.offset > 1e-9) {
        throw ValidationError(where + ": shape '" + s.name + "' is not convex");
      }
    }
  }
  if (s.centroid.norm() > 1e-6) {
    std::ostringstream os;
    os << where << ": shape '" << s.name << "' centroid is off-origin by "
       << s.centroid.norm() << " m (limit 1e-6)";
    throw ValidationError(os.str());
  }
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string catalog_to_text(const ShapeCatalog& cat) {
  std::ostringstream os;
  os << "# stablepose shape catalog\n";
  for (const auto& s : cat.shapes) {
    os << "shape " << s.name << "\n";
    for (const auto& v : s.vertices) {
      os << "vertex " << detail::format_double(v.x()) << " " << detail::format_double(v.y())
         << " " << detail::format_double(v.z()) << "\n";
    }
    for (const auto& f : s.faces) {
      os << "face";
      for (int i : f.verts) os << " " << i;
      os << "\n";
    }
    os << "end\n";
  }
  return os.str();
}

/// FNV-1a over the canonical text form; identifies the catalog in datasets,
/// checkpoints, and reports.
inline std::uint64_t catalog_hash(const ShapeCatalog& cat) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : catalog_to_text(cat)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string catalog_hash_hex(const ShapeCatalog& cat) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, catalog_hash(cat));
  return buf;
}

inline ShapeCatalog parse_catalog(std::istream& in, const std::string& source) {
  ShapeCatalog cat;
  cat.source = source;

  std::string line;
  int lineno = 0;
  bool in_shape = false;
  int shape_line = 0;
  std::string name;
  std::vector<Vec3> verts;
  std::vector<std::vector<int>> faces;

  auto fail = [&](int ln, const std::string& msg) -> void {
    throw ValidationError(source + ":" + std::to_string(ln) + ": " + msg);
  };

  auto finish_shape = [&]() {
    BlockShape shape;
    try {
      shape = make_shape(name, verts, faces);
      detail::validate_shape(shape, source + ":" + std::to_string(shape_line));
    } catch (const ValidationError& e) {
      std::string what = e.what();
      if (what.rfind(source, 0) == 0) throw;
      fail(shape_line, what);
    }
    if (cat.index.count(name)) fail(shape_line, "duplicate shape '" + name + "'");
    cat.index[name] = static_cast<int>(cat.shapes.size());
    cat.shapes.push_back(std::move(shape));
  };

  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;

    if (tok == "shape") {
      if (in_shape) fail(lineno, "'shape' before previous shape was closed with 'end'");
      if (!(ls >> name)) fail(lineno, "'shape' needs a name");
      in_shape = true;
      shape_line = lineno;
      verts.clear();
      faces.clear();
    } else if (tok == "vertex") {
      if (!in_shape) fail(lineno, "'vertex' outside a shape block");
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) fail(lineno, "'vertex' needs three numbers");
      verts.push_back(v);
    } else if (tok == "face") {
      if (!in_shape) fail(lineno, "'face' outside a shape block");
      std::vector<int> f;
      int idx;
      while (ls >> idx) f.push_back(idx);
      if (f.size() < 3) fail(lineno, "'face' needs at least three vertex indices");
      faces.push_back(std::move(f));
    } else if (tok == "end") {
      if (!in_shape) fail(lineno, "'end' without 'shape'");
      finish_shape();
      in_shape = false;
    } else {
      fail(lineno, "unknown directive '" + tok + "'");
    }
  }
  if (in_shape) fail(lineno, "unterminated shape '" + name + "' (missing 'end')");
  if (cat.shapes.empty()) fail(lineno, "catalog contains no shapes");
  return cat;
}

inline ShapeCatalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open catalog file: " + path);
  return parse_catalog(in, path);
}

inline void save_catalog(const ShapeCatalog& cat, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write catalog file: " + path);
  out << catalog_to_text(cat);
}

inline const char* builtin_catalog_text() {
  // Canonical dimensions. Every shape is centered at the centroid of its
  // solid; the prism cross-section centroid sits at (leg_x/3, leg_z/3).
  return R"(# stablepose shape catalog
shape tall-triangle
# right-triangular prism, 0.10 base x 0.20 height x 0.10 depth
vertex -0.033333333333333333 -0.05 -0.066666666666666667
vertex 0.066666666666666667 -0.05 -0.066666666666666667
vertex -0.033333333333333333 -0.05 0.13333333333333333
vertex -0.033333333333333333 0.05 -0.066666666666666667
vertex 0.066666666666666667 0.05 -0.066666666666666667
vertex -0.033333333333333333 0.05 0.13333333333333333
face 0 1 2
face 3 5 4
face 0 3 4 1
face 0 2 5 3
face 1 4 5 2
end
shape middle-triangle
# right-triangular prism, 0.10 base x 0.10 height x 0.10 depth
vertex -0.033333333333333333 -0.05 -0.033333333333333333
vertex 0.066666666666666667 -0.05 -0.033333333333333333
vertex -0.033333333333333333 -0.05 0.066666666666666667
vertex -0.033333333333333333 0.05 -0.033333333333333333
vertex 0.066666666666666667 0.05 -0.033333333333333333
vertex -0.033333333333333333 0.05 0.066666666666666667
face 0 1 2
face 3 5 4
face 0 3 4 1
face 0 2 5 3
face 1 4 5 2
end
shape half-rectangle
# box 0.10 x 0.10 x 0.05
vertex -0.05 -0.05 -0.025
vertex 0.05 -0.05 -0.025
vertex 0.05 0.05 -0.025
vertex -0.05 0.05 -0.025
vertex -0.05 -0.05 0.025
vertex 0.05 -0.05 0.025
vertex 0.05 0.05 0.025
vertex -0.05 0.05 0.025
face 0 3 2 1
face 4 5 6 7
face 0 4 7 3
face 1 2 6 5
face 0 1 5 4
face 2 3 7 6
end
shape rectangle
# box 0.20 x 0.10 x 0.10
vertex -0.1 -0.05 -0.05
vertex 0.1 -0.05 -0.05
vertex 0.1 0.05 -0.05
vertex -0.1 0.05 -0.05
vertex -0.1 -0.05 0.05
vertex 0.1 -0.05 0.05
vertex 0.1 0.05 0.05
vertex -0.1 0.05 0.05
face 0 3 2 1
face 4 5 6 7
face 0 4 7 3
face 1 2 6 5
face 0 1 5 4
face 2 3 7 6
end
shape cube
# box 0.10 x 0.10 x 0.10
vertex -0.05 -0.05 -0.05
vertex 0.05 -0.05 -0.05
vertex 0.05 0.05 -0.05
vertex -0.05 0.05 -0.05
vertex -0.05 -0.05 0.05
vertex 0.05 -0.05 0.05
vertex 0.05 0.05 0.05
vertex -0.05 0.05 0.05
face 0 3 2 1
face 4 5 6 7
face 0 4 7 3
face 1 2 6 5
face 0 1 5 4
face 2 3 7 6
end
shape tetrahedron
# regular tetrahedron, edge 0.12
vertex 0.042426406871192853 0.042426406871192853 0.042426406871192853
vertex 0.042426406871192853 -0.042426406871192853 -0.042426406871192853
vertex -0.042426406871192853 0.042426406871192853 -0.042426406871192853
vertex -0.042426406871192853 -0.042426406871192853 0.042426406871192853
face 0 1 2
face 0 3 1
face 0 2 3
face 1 3 2
end
shape hat
# symmetric roof prism, 0.14 base x 0.07 height x 0.10 depth
vertex -0.07 -0.05 -0.023333333333333333
vertex 0.07 -0.05 -0.023333333333333333
vertex 0 -0.05 0.046666666666666667
vertex -0.07 0.05 -0.023333333333333333
vertex 0.07 0.05 -0.023333333333333333
vertex 0 0.05 0.046666666666666667
face 0 1 2
face 3 5 4
face 0 3 4 1
face 1 4 5 2
face 0 2 5 3
end
)";
}

inline const std::vector<std::string>& canonical_shape_names() {
  static const std::vector<std::string> names = {
      "tall-triangle", "middle-triangle", "half-rectangle", "rectangle",
      "cube",          "tetrahedron",     "hat"};
  return names;
}

inline ShapeCatalog builtin_catalog() {
  std::istringstream in(builtin_catalog_text());
  ShapeCatalog cat = parse_catalog(in, "<builtin>");
  for (const auto& n : canonical_shape_names()) {
    if (!cat.has(n)) throw ValidationError("builtin catalog is missing shape '" + n + "'");
  }
  return cat;
}

/// Builtin catalog, unless STABLEPOSE_CATALOG points at a catalog file.
inline ShapeCatalog default_catalog() {
  if (const char* path = std::getenv(kCatalogEnvVar)) {
    return load_catalog(path);
  }
  return builtin_catalog();
}

}  // namespace stablepose
