#pragma once

#include <cmath>
#include <cstdint>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "omct/errors.hpp"
#include "omct/geometry.hpp"
#include "omct/marching_cubes_tables.hpp"
#include "omct/orientation.hpp"
#include "omct/text_io.hpp"
#include "omct/volume.hpp"

namespace omct {

namespace detail {

inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

/// Runs fn(z_begin, z_end) over disjoint contiguous slice ranges. The
/// partition depends only on nz and the resolved thread count, and each
/// output voxel is computed independently, so results do not vary with
/// the worker count.
template <typename Fn>
void parallel_over_slices(int nz, int threads, Fn&& fn) {
  const int n = std::min(resolve_threads(threads), nz);
  if (n <= 1) {
    fn(0, nz);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const int z0 = static_cast<int>(static_cast<long long>(nz) * t / n);
    const int z1 = static_cast<int>(static_cast<long long>(nz) * (t + 1) / n);
    workers.emplace_back([&fn, z0, z1] { fn(z0, z1); });
  }
  for (auto& w : workers) w.join();
}

/// Snaps near-integer coordinates so right-angle rotations land exactly
/// on grid nodes despite cos(pi/2) not being a clean zero.
inline double snap_index(double w) {
  const double r = std::round(w);
  return std::abs(w - r) < 1e-9 ? r : w;
}

}  // namespace detail

/// Trilinear sample at fractional index w; grid positions outside the
/// voxel-center box blend toward `fill`.
inline double sample_trilinear(const Volume& v, const Vec3& w, double fill) {
  const int x0 = static_cast<int>(std::floor(w.x));
  const int y0 = static_cast<int>(std::floor(w.y));
  const int z0 = static_cast<int>(std::floor(w.z));
  const double fx = w.x - x0;
  const double fy = w.y - y0;
  const double fz = w.z - z0;

  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) *
                           (dz ? fz : 1.0 - fz);
        if (wgt == 0.0) continue;
        const int x = x0 + dx, y = y0 + dy, z = z0 + dz;
        const bool inside = x >= 0 && x < v.nx() && y >= 0 && y < v.ny() &&
                            z >= 0 && z < v.nz();
        acc += wgt * (inside ? static_cast<double>(v.at(x, y, z)) : fill);
      }
  return acc;
}

/// Rotates the imaged object by R about the volume's physical center,
/// onto the same grid: out(p) = in(c + R^T (p - c)), trilinear, pulled.
/// The mapping is done in index coordinates so the identity rotation is
/// bit-exact and right angles reduce to index permutations.
inline Volume resample_rotated(const Volume& v, const Mat3& r,
                               std::int16_t fill = -1000, int threads = 0) {
  const VolumeGeometry& g = v.geometry();
  const Mat3 rt = r.transposed();
  const double s[3] = {g.spacing.x, g.spacing.y, g.spacing.z};
  // index-space matrix M = S^-1 R^T S
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = rt(i, j) * s[j] / s[i];
  const Vec3 ci{0.5 * (g.dims[0] - 1), 0.5 * (g.dims[1] - 1),
                0.5 * (g.dims[2] - 1)};

  std::vector<std::int16_t> out(g.voxel_count());
  detail::parallel_over_slices(g.dims[2], threads, [&](int zb, int ze) {
    for (int z = zb; z < ze; ++z)
      for (int y = 0; y < g.dims[1]; ++y)
        for (int x = 0; x < g.dims[0]; ++x) {
          const Vec3 u{static_cast<double>(x) - ci.x,
                       static_cast<double>(y) - ci.y,
                       static_cast<double>(z) - ci.z};
          Vec3 w = m * u + ci;
          w = {detail::snap_index(w.x), detail::snap_index(w.y),
               detail::snap_index(w.z)};
          const double val =
              sample_trilinear(v, w, static_cast<double>(fill));
          out[static_cast<std::size_t>(x) +
              static_cast<std::size_t>(g.dims[0]) *
                  (static_cast<std::size_t>(y) +
                   static_cast<std::size_t>(g.dims[1]) *
                       static_cast<std::size_t>(z))] = clamp_hu(val);
        }
  });
  return Volume(g, std::move(out));
}

/// Applies the inverse of the measured head pose, so the landmark plane
/// returns to axial.
inline Volume standardize(const Volume& v, const EulerAngles& a,
                          int threads = 0) {
  return resample_rotated(v, euler_to_matrix(a).transposed(), -1000, threads);
}

/// Indexed triangle surface in physical mm.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

/// Marching-cubes isosurface of {value == threshold}. Vertices on shared
/// cell edges are merged, so closed level sets produce watertight meshes.
inline TriangleMesh extract_isosurface(const Volume& v, double threshold) {
  const VolumeGeometry& g = v.geometry();
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];

  TriangleMesh mesh;
  // canonical key: the lesser grid-node id and the axis of the edge
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  auto node_id = [&](int x, int y, int z) {
    return static_cast<std::uint64_t>(x) +
           static_cast<std::uint64_t>(nx) *
               (static_cast<std::uint64_t>(y) +
                static_cast<std::uint64_t>(ny) * static_cast<std::uint64_t>(z));
  };

  auto edge_point = [&](int cx, int cy, int cz, int edge) -> std::uint32_t {
    const auto& ends = detail::kMcEdgeCorners[edge];
    const auto& o0 = detail::kMcCornerOffsets[ends[0]];
    const auto& o1 = detail::kMcCornerOffsets[ends[1]];
    const int ax = cx + o0[0], ay = cy + o0[1], az = cz + o0[2];
    const int bx = cx + o1[0], by = cy + o1[1], bz = cz + o1[2];
    const std::uint64_t na = node_id(ax, ay, az);
    const std::uint64_t nb = node_id(bx, by, bz);
    // the edge axis is implied by the node pair, so min node + axis bits
    // identify it uniquely
    const int axis = (ax != bx) ? 0 : (ay != by) ? 1 : 2;
    const std::uint64_t key =
        (std::min(na, nb) << 2) | static_cast<std::uint64_t>(axis);
    const auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;

    const double va = v.at(ax, ay, az);
    const double vb = v.at(bx, by, bz);
    const double t = (threshold - va) / (vb - va);
    const Vec3 idx{ax + t * (bx - ax), ay + t * (by - ay),
                   az + t * (bz - az)};
    const std::uint32_t id = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(voxel_to_physical(g, idx));
    edge_vertex.emplace(key, id);
    return id;
  };

  for (int z = 0; z + 1 < nz; ++z)
    for (int y = 0; y + 1 < ny; ++y)
      for (int x = 0; x + 1 < nx; ++x) {
        int caseindex = 0;
        for (int c = 0; c < 8; ++c) {
          const auto& o = detail::kMcCornerOffsets[c];
          if (v.at(x + o[0], y + o[1], z + o[2]) < threshold)
            caseindex |= 1 << c;
        }
        const auto& row = detail::kMcTriangles[caseindex];
        for (int t = 0; row[t] >= 0; t += 3) {
          const std::uint32_t a = edge_point(x, y, z, row[t]);
          const std::uint32_t b = edge_point(x, y, z, row[t + 1]);
          const std::uint32_t c = edge_point(x, y, z, row[t + 2]);
          if (a == b || b == c || a == c) continue;
          mesh.triangles.push_back({a, b, c});
        }
      }

  if (mesh.triangles.empty())
    throw empty_surface_error("no grid cell straddles threshold " +
                              format_fixed6(threshold));
  return mesh;
}

inline double mesh_surface_area(const TriangleMesh& m) {
  double area = 0.0;
  for (const auto& t : m.triangles) {
    const Vec3 e1 = m.vertices[t[1]] - m.vertices[t[0]];
    const Vec3 e2 = m.vertices[t[2]] - m.vertices[t[0]];
    area += 0.5 * norm(cross(e1, e2));
  }
  return area;
}

/// V - E + F with E counted over distinct undirected index pairs.
/// A single closed orientable surface without handles gives 2.
inline long long mesh_euler_characteristic(const TriangleMesh& m) {
  std::unordered_set<std::uint64_t> edges;
  edges.reserve(m.triangles.size() * 3);
  for (const auto& t : m.triangles)
    for (int i = 0; i < 3; ++i) {
      const std::uint64_t a = t[i];
      const std::uint64_t b = t[(i + 1) % 3];
      edges.insert((std::min(a, b) << 32) | std::max(a, b));
    }
  return static_cast<long long>(m.vertices.size()) -
         static_cast<long long>(edges.size()) +
         static_cast<long long>(m.triangles.size());
}

/// Plain text OBJ: vertex lines then 1-based face lines.
inline void write_mesh_obj(const TriangleMesh& m,
                           const std::filesystem::path& path) {
  if (m.vertices.empty() || m.triangles.empty())
    throw empty_surface_error("refusing to write an empty mesh");
  std::string out;
  out.reserve(m.vertices.size() * 40 + m.triangles.size() * 24);
  for (const auto& v : m.vertices)
    out += "v " + format_fixed6(v.x) + " " + format_fixed6(v.y) + " " +
           format_fixed6(v.z) + "\n";
  for (const auto& t : m.triangles)
    out += "f " + std::to_string(t[0] + 1) + " " + std::to_string(t[1] + 1) +
           " " + std::to_string(t[2] + 1) + "\n";
  atomic_write_text(path, out);
}

}  // namespace omct
