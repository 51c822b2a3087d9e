#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "said/mesh/trimesh.hpp"
#include "said/numerics/tensor.hpp"

namespace said::mesh {

/// Linear blendshape model: positions = template + sum_k u_k * delta_k.
///
/// `deltas[k]` is b_k - b_0 over all 3M coordinates. The template mesh also
/// carries the face list used when reconstructing frames.
class BlendshapeModel {
 public:
  BlendshapeModel() = default;
  BlendshapeModel(TriMesh template_mesh, std::vector<std::vector<double>> deltas, std::vector<std::string> names);

  /// Builds a model from a template and full blendshape meshes (same topology).
  static BlendshapeModel from_meshes(const TriMesh& template_mesh, const std::vector<TriMesh>& shapes,
                                     std::vector<std::string> names);

  std::size_t vertex_count() const noexcept { return template_.vertex_count(); }
  std::size_t size() const noexcept { return deltas_.size(); }
  const TriMesh& template_mesh() const noexcept { return template_; }
  const std::vector<double>& template_positions() const noexcept { return b0_; }
  const std::vector<std::vector<double>>& deltas() const noexcept { return deltas_; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  /// Residual matrix B (3M x K) whose columns are the deltas.
  Tensor residual_matrix() const;

  /// b0 + sum_k u_k * delta_k. Throws DimensionMismatch when u has the wrong length.
  std::vector<double> apply(std::span<const double> u) const;
  TriMesh mesh_for(std::span<const double> u) const;

  /// Model directory: manifest.json, template.obj and one <name>.obj per blendshape.
  void save(const std::filesystem::path& dir) const;
  static BlendshapeModel load(const std::filesystem::path& dir);

 private:
  TriMesh template_;
  std::vector<double> b0_;
  std::vector<std::vector<double>> deltas_;
  std::vector<std::string> names_;
};

std::vector<double> apply_coefficients(const BlendshapeModel& model, std::span<const double> u);

/// Source/target vertex index pairs (landmarks).
struct VertexCorrespondence {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;

  /// Throws IndexOutOfRange for invalid indices and FormatError for repeated source indices.
  void validate(std::size_t source_vertices, std::size_t target_vertices) const;
};

/// Parses lines of `src_idx tgt_idx` (0-based, `#` comments allowed).
VertexCorrespondence parse_vertex_correspondence(std::string_view text);
VertexCorrespondence load_vertex_correspondence(const std::filesystem::path& path);

}  // namespace said::mesh
