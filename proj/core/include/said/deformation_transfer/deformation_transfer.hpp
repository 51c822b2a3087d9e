#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "said/mesh/blendshape_model.hpp"
#include "said/mesh/trimesh.hpp"

namespace said::dt {

using mesh::TriMesh;
using mesh::Vec3;

/// Row-major 3x3 matrix.
using Mat3 = std::array<double, 9>;

/// Source-to-target face map. `pairs` holds (source face, target face); a
/// target face appears at most once, a source face any number of times.
struct FaceCorrespondence {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  /// target faces with no compatible source face (identity transform used)
  std::vector<std::uint32_t> unmatched_target;
  /// rotation of the landmark alignment; source gradients are conjugated by it
  Mat3 source_rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
};

/// Least-squares similarity q ~ scale * R * p + t.
struct Similarity {
  Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  double scale = 1.0;
  Vec3 translation{0, 0, 0};

  Vec3 apply(const Vec3& p) const;
};

struct CorrespondenceOptions {
  /// matching radius as a multiple of the mean target edge length
  double radius_scale = 3.0;
  /// record unmatched target faces instead of throwing NoCompatibleFace
  bool allow_unmatched = false;
};

/// Umeyama estimate from paired points. Fewer than three pairs give a pure translation.
Similarity estimate_similarity(const std::vector<Vec3>& src, const std::vector<Vec3>& tgt);

/// Aligns `src` to `tgt` through the landmark similarity, then matches every
/// target face to the nearest-centroid source face with a normal within 90
/// degrees, searching only within the matching radius.
FaceCorrespondence build_face_correspondence(const TriMesh& src, const TriMesh& tgt,
                                             const mesh::VertexCorrespondence& vc,
                                             const CorrespondenceOptions& opts = {});

/// Frame of a triangle: columns v2-v1, v3-v1 and n/sqrt(|n|).
/// Throws DegenerateTriangle when the triangle area is below 1e-12.
Mat3 triangle_frame(const Vec3& v1, const Vec3& v2, const Vec3& v3);

/// Per-face transforms taking the template frames to the deformed frames.
std::vector<Mat3> deformation_gradients(const TriMesh& tmpl, const std::vector<double>& deformed);

/// Factorized least-squares problem for one target template and face map.
/// The normal matrix is built and factored once; every solve reuses it.
class TransferSolver {
 public:
  TransferSolver(const TriMesh& target, const FaceCorrespondence& fc);
  ~TransferSolver();
  TransferSolver(TransferSolver&&) noexcept;
  TransferSolver& operator=(TransferSolver&&) noexcept;

  /// Target positions (3M) whose face transforms best match `target_gradients`
  /// (one per target face), translated so each connected component keeps its
  /// template centroid.
  std::vector<double> solve(const std::vector<Mat3>& target_gradients, double* residual_norm = nullptr) const;

  /// Transfers the deformation `source_template` -> `source_deformed` (3M).
  std::vector<double> transfer(const TriMesh& source_template, const std::vector<double>& source_deformed,
                               double* residual_norm = nullptr) const;

  const TriMesh& target() const noexcept;
  const FaceCorrespondence& correspondence() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::vector<double> transfer(const TriMesh& source_template, const std::vector<double>& source_deformed,
                             const TriMesh& target_template, const FaceCorrespondence& fc);

struct BuildReport {
  /// similarity residual per blendshape
  std::vector<double> residual_norms;
  std::size_t unmatched_faces = 0;
};

/// One target blendshape per source blendshape, named after the source.
mesh::BlendshapeModel build_blendshapes(const TriMesh& source_template, const std::vector<TriMesh>& source_shapes,
                                        std::vector<std::string> names, const TriMesh& target_template,
                                        const FaceCorrespondence& fc, BuildReport* report = nullptr);

/// Full pipeline from landmarks. With `target_mask`, the transfer runs on the
/// masked target submesh and vertices outside it get zero deltas.
mesh::BlendshapeModel build_blendshapes_from_landmarks(
    const TriMesh& source_template, const std::vector<TriMesh>& source_shapes, std::vector<std::string> names,
    const TriMesh& target_template, const mesh::VertexCorrespondence& vc,
    const std::optional<std::vector<std::uint32_t>>& target_mask = std::nullopt,
    const CorrespondenceOptions& opts = {}, BuildReport* report = nullptr);

}  // namespace said::dt
