#include "said/deformation_transfer/deformation_transfer.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <Eigen/Sparse>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "said/error.hpp"

namespace said::dt {

namespace {

using Eigen::Matrix3d;
using Eigen::Vector3d;

Vector3d ev(const Vec3& v) { return {v[0], v[1], v[2]}; }

Matrix3d to_eigen(const Mat3& m) {
  Matrix3d e;
  e << m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8];
  return e;
}

Mat3 from_eigen(const Matrix3d& e) {
  return {e(0, 0), e(0, 1), e(0, 2), e(1, 0), e(1, 1), e(1, 2), e(2, 0), e(2, 1), e(2, 2)};
}

Vec3 vertex(const std::vector<double>& flat, std::uint32_t i) { return {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]}; }

struct FaceGeometry {
  std::vector<Vector3d> centroid;
  std::vector<Vector3d> normal;  // unit, zero for degenerate faces
};

FaceGeometry face_geometry(const std::vector<Vec3>& pos, const std::vector<mesh::Face>& faces) {
  FaceGeometry g;
  g.centroid.reserve(faces.size());
  g.normal.reserve(faces.size());
  for (const auto& f : faces) {
    const Vector3d a = ev(pos[f[0]]), b = ev(pos[f[1]]), c = ev(pos[f[2]]);
    g.centroid.push_back((a + b + c) / 3.0);
    const Vector3d n = (b - a).cross(c - a);
    const double len = n.norm();
    g.normal.push_back(len > 0 ? Vector3d(n / len) : Vector3d::Zero());
  }
  return g;
}

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

CellKey cell_of(const Vector3d& p, double cell) {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell)), static_cast<std::int64_t>(std::floor(p.y() / cell)),
          static_cast<std::int64_t>(std::floor(p.z() / cell))};
}

std::uint32_t find_root(std::vector<std::uint32_t>& parent, std::uint32_t v) {
  while (parent[v] != v) {
    parent[v] = parent[parent[v]];
    v = parent[v];
  }
  return v;
}

}  // namespace

Vec3 Similarity::apply(const Vec3& p) const {
  const Vector3d q = scale * to_eigen(rotation) * ev(p) + ev(translation);
  return {q.x(), q.y(), q.z()};
}

Similarity estimate_similarity(const std::vector<Vec3>& src, const std::vector<Vec3>& tgt) {
  if (src.size() != tgt.size()) throw DimensionMismatch("landmark sets differ in size");
  if (src.empty()) throw DimensionMismatch("vertex correspondence is empty");
  Similarity sim;
  if (src.size() < 3) {
    Vector3d d = Vector3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) d += ev(tgt[i]) - ev(src[i]);
    d /= static_cast<double>(src.size());
    sim.translation = {d.x(), d.y(), d.z()};
    return sim;
  }
  Eigen::Matrix3Xd a(3, src.size()), b(3, tgt.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    a.col(static_cast<Eigen::Index>(i)) = ev(src[i]);
    b.col(static_cast<Eigen::Index>(i)) = ev(tgt[i]);
  }
  const Eigen::Matrix4d t = Eigen::umeyama(a, b, true);
  const Matrix3d sr = t.topLeftCorner<3, 3>();
  const double s = sr.col(0).norm();
  if (!(s > 0) || !std::isfinite(s)) return sim;
  sim.scale = s;
  sim.rotation = from_eigen(sr / s);
  sim.translation = {t(0, 3), t(1, 3), t(2, 3)};
  return sim;
}

FaceCorrespondence build_face_correspondence(const TriMesh& src, const TriMesh& tgt,
                                             const mesh::VertexCorrespondence& vc, const CorrespondenceOptions& opts) {
  if (vc.pairs.empty()) throw DimensionMismatch("vertex correspondence is empty");
  vc.validate(src.vertex_count(), tgt.vertex_count());

  std::vector<Vec3> ls, lt;
  for (const auto& [s, t] : vc.pairs) {
    ls.push_back(src.positions[s]);
    lt.push_back(tgt.positions[t]);
  }
  const Similarity sim = estimate_similarity(ls, lt);
  std::vector<Vec3> aligned(src.positions.size());
  for (std::size_t i = 0; i < aligned.size(); ++i) aligned[i] = sim.apply(src.positions[i]);

  const FaceGeometry gs = face_geometry(aligned, src.faces);
  const FaceGeometry gt = face_geometry(tgt.positions, tgt.faces);
  const double radius = opts.radius_scale * mesh::mean_edge_length(tgt);

  FaceCorrespondence fc;
  fc.source_rotation = sim.rotation;
  if (!(radius > 0)) {
    if (!tgt.faces.empty() && !opts.allow_unmatched) throw NoCompatibleFace("target mesh has zero mean edge length");
    for (std::uint32_t t = 0; t < tgt.faces.size(); ++t) fc.unmatched_target.push_back(t);
    return fc;
  }

  std::unordered_map<CellKey, std::vector<std::uint32_t>, CellHash> grid;
  for (std::uint32_t s = 0; s < src.faces.size(); ++s) grid[cell_of(gs.centroid[s], radius)].push_back(s);

  const double r2 = radius * radius;
  for (std::uint32_t t = 0; t < tgt.faces.size(); ++t) {
    const CellKey c = cell_of(gt.centroid[t], radius);
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_s = std::numeric_limits<std::uint32_t>::max();
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == grid.end()) continue;
          for (std::uint32_t s : it->second) {
            if (gs.normal[s].dot(gt.normal[t]) <= 0.0) continue;
            const double d2 = (gs.centroid[s] - gt.centroid[t]).squaredNorm();
            if (d2 > r2) continue;
            if (d2 < best || (d2 == best && s < best_s)) {
              best = d2;
              best_s = s;
            }
          }
        }
      }
    }
    if (best_s == std::numeric_limits<std::uint32_t>::max()) {
      if (!opts.allow_unmatched) {
        throw NoCompatibleFace("target face " + std::to_string(t) + " has no compatible source face within " +
                               std::to_string(radius));
      }
      fc.unmatched_target.push_back(t);
      continue;
    }
    fc.pairs.emplace_back(best_s, t);
  }
  return fc;
}

Mat3 triangle_frame(const Vec3& v1, const Vec3& v2, const Vec3& v3) {
  const Vector3d a = ev(v1), e1 = ev(v2) - a, e2 = ev(v3) - a;
  const Vector3d n = e1.cross(e2);
  const double len = n.norm();
  if (!(0.5 * len >= 1e-12)) throw DegenerateTriangle("triangle area " + std::to_string(0.5 * len) + " below 1e-12");
  Matrix3d v;
  v.col(0) = e1;
  v.col(1) = e2;
  v.col(2) = n / std::sqrt(len);
  return from_eigen(v);
}

std::vector<Mat3> deformation_gradients(const TriMesh& tmpl, const std::vector<double>& deformed) {
  if (deformed.size() != 3 * tmpl.vertex_count()) {
    throw DimensionMismatch("deformed positions have " + std::to_string(deformed.size()) + " entries, expected " +
                            std::to_string(3 * tmpl.vertex_count()));
  }
  std::vector<Mat3> out;
  out.reserve(tmpl.face_count());
  for (std::size_t f = 0; f < tmpl.face_count(); ++f) {
    const auto& face = tmpl.faces[f];
    Matrix3d v0;
    try {
      v0 = to_eigen(triangle_frame(tmpl.positions[face[0]], tmpl.positions[face[1]], tmpl.positions[face[2]]));
    } catch (const DegenerateTriangle& e) {
      throw DegenerateTriangle("template face " + std::to_string(f) + ": " + e.what());
    }
    const Vector3d a = ev(vertex(deformed, face[0])), e1 = ev(vertex(deformed, face[1])) - a,
                   e2 = ev(vertex(deformed, face[2])) - a;
    const Vector3d n = e1.cross(e2);
    const double len = n.norm();
    Matrix3d v1;
    v1.col(0) = e1;
    v1.col(1) = e2;
    // A collapsed deformed face has no normal; its frame keeps only the edges.
    v1.col(2) = len > 0 ? Vector3d(n / std::sqrt(len)) : Vector3d::Zero();
    out.push_back(from_eigen(v1 * v0.inverse()));
  }
  return out;
}

struct TransferSolver::Impl {
  TriMesh target;
  FaceCorrespondence fc;
  Eigen::SparseMatrix<double> a;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt;
  std::vector<int> var_of_vertex;     // -1 when pinned or unreferenced
  std::vector<std::uint32_t> component;  // per vertex, root id; unreferenced vertices keep their own id
  std::vector<std::uint8_t> referenced;
  std::unordered_map<std::uint32_t, Vector3d> template_centroid;
  std::vector<std::int64_t> source_of_target;  // -1 when unmatched
};

TransferSolver::TransferSolver(const TriMesh& target, const FaceCorrespondence& fc) : impl_(std::make_unique<Impl>()) {
  Impl& im = *impl_;
  im.target = target;
  im.fc = fc;
  const std::size_t m = target.vertex_count();
  const std::size_t f_count = target.face_count();
  target.validate();

  im.source_of_target.assign(f_count, -1);
  for (const auto& [s, t] : fc.pairs) {
    if (t >= f_count) throw IndexOutOfRange("face correspondence names target face " + std::to_string(t));
    im.source_of_target[t] = s;
  }

  std::vector<std::uint32_t> parent(m);
  std::iota(parent.begin(), parent.end(), 0u);
  im.referenced.assign(m, 0);
  for (const auto& face : target.faces) {
    for (std::uint32_t v : face) im.referenced[v] = 1;
    const std::uint32_t r0 = find_root(parent, face[0]);
    for (int i = 1; i < 3; ++i) {
      const std::uint32_t ri = find_root(parent, face[i]);
      if (ri != r0) parent[ri] = r0;
    }
  }
  im.component.resize(m);
  for (std::uint32_t v = 0; v < m; ++v) im.component[v] = find_root(parent, v);

  // One pinned vertex per connected component removes the translation null space.
  std::unordered_map<std::uint32_t, std::size_t> count;
  std::unordered_map<std::uint32_t, bool> pinned;
  im.var_of_vertex.assign(m, -1);
  int n_var = 0;
  for (std::uint32_t v = 0; v < m; ++v) {
    if (!im.referenced[v]) continue;
    const std::uint32_t c = im.component[v];
    im.template_centroid.try_emplace(c, Vector3d::Zero()).first->second += ev(target.positions[v]);
    ++count[c];
    if (!pinned[c]) {
      pinned[c] = true;
      continue;
    }
    im.var_of_vertex[v] = n_var++;
  }
  for (auto& [c, sum] : im.template_centroid) sum /= static_cast<double>(count[c]);
  const int first_fourth = n_var;
  n_var += static_cast<int>(f_count);

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(12 * f_count);
  for (std::size_t f = 0; f < f_count; ++f) {
    const auto& face = target.faces[f];
    Matrix3d w;
    try {
      w = to_eigen(triangle_frame(target.positions[face[0]], target.positions[face[1]], target.positions[face[2]]))
              .inverse();
    } catch (const DegenerateTriangle& e) {
      throw DegenerateTriangle("target face " + std::to_string(f) + ": " + e.what());
    }
    const int cols[4] = {im.var_of_vertex[face[0]], im.var_of_vertex[face[1]], im.var_of_vertex[face[2]],
                         first_fourth + static_cast<int>(f)};
    for (int j = 0; j < 3; ++j) {
      const int row = static_cast<int>(3 * f) + j;
      const double coef[4] = {-(w(0, j) + w(1, j) + w(2, j)), w(0, j), w(1, j), w(2, j)};
      for (int k = 0; k < 4; ++k) {
        if (cols[k] >= 0) trip.emplace_back(row, cols[k], coef[k]);
      }
    }
  }
  im.a.resize(static_cast<Eigen::Index>(3 * f_count), n_var);
  im.a.setFromTriplets(trip.begin(), trip.end());
  const Eigen::SparseMatrix<double> normal = Eigen::SparseMatrix<double>(im.a.transpose()) * im.a;
  im.llt.compute(normal);
  if (im.llt.info() != Eigen::Success) throw SingularSystem("anchored normal matrix is not positive definite");
}

TransferSolver::~TransferSolver() = default;
TransferSolver::TransferSolver(TransferSolver&&) noexcept = default;
TransferSolver& TransferSolver::operator=(TransferSolver&&) noexcept = default;

const TriMesh& TransferSolver::target() const noexcept { return impl_->target; }
const FaceCorrespondence& TransferSolver::correspondence() const noexcept { return impl_->fc; }

std::vector<double> TransferSolver::solve(const std::vector<Mat3>& target_gradients, double* residual_norm) const {
  const Impl& im = *impl_;
  const std::size_t m = im.target.vertex_count();
  const std::size_t f_count = im.target.face_count();
  if (target_gradients.size() != f_count) {
    throw DimensionMismatch("expected " + std::to_string(f_count) + " face gradients, got " +
                            std::to_string(target_gradients.size()));
  }
  std::vector<double> out = im.target.flat_positions();
  double res2 = 0.0;
  for (int r = 0; r < 3; ++r) {
    Eigen::VectorXd c(static_cast<Eigen::Index>(3 * f_count));
    for (std::size_t f = 0; f < f_count; ++f) {
      for (int j = 0; j < 3; ++j) c(static_cast<Eigen::Index>(3 * f + j)) = target_gradients[f][3 * r + j];
    }
    const Eigen::VectorXd y = im.llt.solve(im.a.transpose() * c);
    res2 += (im.a * y - c).squaredNorm();

    std::unordered_map<std::uint32_t, std::pair<double, std::size_t>> sum;
    std::vector<double> coord(m, 0.0);
    for (std::uint32_t v = 0; v < m; ++v) {
      if (!im.referenced[v]) continue;
      coord[v] = im.var_of_vertex[v] >= 0 ? y(im.var_of_vertex[v]) : 0.0;
      auto& s = sum[im.component[v]];
      s.first += coord[v];
      ++s.second;
    }
    for (std::uint32_t v = 0; v < m; ++v) {
      if (!im.referenced[v]) continue;
      const auto& s = sum.at(im.component[v]);
      out[3 * v + r] = coord[v] - s.first / static_cast<double>(s.second) + im.template_centroid.at(im.component[v])(r);
    }
  }
  if (residual_norm) *residual_norm = std::sqrt(res2);
  return out;
}

std::vector<double> TransferSolver::transfer(const TriMesh& source_template, const std::vector<double>& source_deformed,
                                             double* residual_norm) const {
  const Impl& im = *impl_;
  const std::vector<Mat3> q = deformation_gradients(source_template, source_deformed);
  const Matrix3d rot = to_eigen(im.fc.source_rotation);
  std::vector<Mat3> per_target(im.target.face_count(), Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1});
  for (std::size_t t = 0; t < per_target.size(); ++t) {
    const std::int64_t s = im.source_of_target[t];
    if (s < 0) continue;
    if (static_cast<std::size_t>(s) >= q.size()) {
      throw IndexOutOfRange("face correspondence names source face " + std::to_string(s));
    }
    per_target[t] = from_eigen(rot * to_eigen(q[static_cast<std::size_t>(s)]) * rot.transpose());
  }
  return solve(per_target, residual_norm);
}

std::vector<double> transfer(const TriMesh& source_template, const std::vector<double>& source_deformed,
                             const TriMesh& target_template, const FaceCorrespondence& fc) {
  return TransferSolver(target_template, fc).transfer(source_template, source_deformed);
}

namespace {

template <class E>
[[noreturn]] void rethrow_named(const E& e, const std::string& name) {
  throw E("blendshape '" + name + "': " + e.what());
}

}  // namespace

mesh::BlendshapeModel build_blendshapes(const TriMesh& source_template, const std::vector<TriMesh>& source_shapes,
                                        std::vector<std::string> names, const TriMesh& target_template,
                                        const FaceCorrespondence& fc, BuildReport* report) {
  if (names.size() != source_shapes.size()) {
    throw DimensionMismatch(std::to_string(source_shapes.size()) + " source blendshapes but " +
                            std::to_string(names.size()) + " names");
  }
  if (report) {
    report->residual_norms.clear();
    report->unmatched_faces = fc.unmatched_target.size();
  }
  std::vector<std::vector<double>> deltas;
  if (source_shapes.empty()) return mesh::BlendshapeModel(target_template, {}, {});

  const TransferSolver solver(target_template, fc);
  const std::vector<double> b0 = target_template.flat_positions();
  for (std::size_t k = 0; k < source_shapes.size(); ++k) {
    std::vector<double> pos;
    double residual = 0.0;
    try {
      if (source_shapes[k].vertex_count() != source_template.vertex_count()) {
        throw DimensionMismatch("vertex count differs from the source template");
      }
      pos = solver.transfer(source_template, source_shapes[k].flat_positions(), &residual);
    } catch (const DegenerateTriangle& e) {
      rethrow_named(e, names[k]);
    } catch (const SingularSystem& e) {
      rethrow_named(e, names[k]);
    } catch (const DimensionMismatch& e) {
      rethrow_named(e, names[k]);
    } catch (const IndexOutOfRange& e) {
      rethrow_named(e, names[k]);
    }
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] -= b0[i];
    deltas.push_back(std::move(pos));
    if (report) report->residual_norms.push_back(residual);
  }
  return mesh::BlendshapeModel(target_template, std::move(deltas), std::move(names));
}

mesh::BlendshapeModel build_blendshapes_from_landmarks(const TriMesh& source_template,
                                                       const std::vector<TriMesh>& source_shapes,
                                                       std::vector<std::string> names, const TriMesh& target_template,
                                                       const mesh::VertexCorrespondence& vc,
                                                       const std::optional<std::vector<std::uint32_t>>& target_mask,
                                                       const CorrespondenceOptions& opts, BuildReport* report) {
  if (!target_mask) {
    const FaceCorrespondence fc = build_face_correspondence(source_template, target_template, vc, opts);
    return build_blendshapes(source_template, source_shapes, std::move(names), target_template, fc, report);
  }
  vc.validate(source_template.vertex_count(), target_template.vertex_count());
  const mesh::Submesh sub = mesh::extract_submesh(target_template, *target_mask);
  std::unordered_map<std::uint32_t, std::uint32_t> local;
  for (std::uint32_t i = 0; i < sub.original_index.size(); ++i) local.emplace(sub.original_index[i], i);
  mesh::VertexCorrespondence sub_vc;
  for (const auto& [s, t] : vc.pairs) {
    const auto it = local.find(t);
    if (it != local.end()) sub_vc.pairs.emplace_back(s, it->second);
  }
  const FaceCorrespondence fc = build_face_correspondence(source_template, sub.mesh, sub_vc, opts);
  const mesh::BlendshapeModel part =
      build_blendshapes(source_template, source_shapes, std::move(names), sub.mesh, fc, report);

  std::vector<std::vector<double>> deltas(part.size(), std::vector<double>(3 * target_template.vertex_count(), 0.0));
  for (std::size_t k = 0; k < part.size(); ++k) {
    for (std::size_t i = 0; i < sub.original_index.size(); ++i) {
      for (int c = 0; c < 3; ++c) deltas[k][3 * sub.original_index[i] + c] = part.deltas()[k][3 * i + c];
    }
  }
  return mesh::BlendshapeModel(target_template, std::move(deltas), part.names());
}

}  // namespace said::dt
