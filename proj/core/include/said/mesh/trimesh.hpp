#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace said::mesh {

using Vec3 = std::array<double, 3>;
using Face = std::array<std::uint32_t, 3>;

/// Triangle mesh: vertex positions plus 0-based triangle indices.
struct TriMesh {
  std::vector<Vec3> positions;
  std::vector<Face> faces;

  std::size_t vertex_count() const noexcept { return positions.size(); }
  std::size_t face_count() const noexcept { return faces.size(); }

  /// Positions flattened to x0 y0 z0 x1 ... (length 3M).
  std::vector<double> flat_positions() const;
  /// Copy of this mesh with positions replaced by a flattened 3M vector.
  TriMesh with_positions(const std::vector<double>& flat) const;

  /// Throws IndexOutOfRange / ParseError when a face references a missing
  /// vertex or repeats an index.
  void validate() const;
};

/// Parses ASCII OBJ text. Only `v` and `f` records matter; normals, texture
/// coordinates and grouping records are skipped. Polygons are fan-triangulated
/// and negative (relative) indices are resolved.
TriMesh parse_obj(std::string_view text);
std::string export_obj(const TriMesh& mesh);

TriMesh load_obj(const std::filesystem::path& path);
void save_obj(const std::filesystem::path& path, const TriMesh& mesh);

/// Reads a whitespace-separated list of vertex indices (one per line, `#` comments allowed).
std::vector<std::uint32_t> read_index_list(const std::filesystem::path& path);

struct Submesh {
  TriMesh mesh;
  /// original vertex index of each submesh vertex
  std::vector<std::uint32_t> original_index;
};

/// Restricts a mesh to the given vertices, keeping faces whose three corners survive.
Submesh extract_submesh(const TriMesh& mesh, const std::vector<std::uint32_t>& keep);

double mean_edge_length(const TriMesh& mesh);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace said::mesh
