#include "said/mesh/blendshape_model.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "said/error.hpp"

namespace said::mesh {

BlendshapeModel::BlendshapeModel(TriMesh template_mesh, std::vector<std::vector<double>> deltas,
                                 std::vector<std::string> names)
    : template_(std::move(template_mesh)), deltas_(std::move(deltas)), names_(std::move(names)) {
  b0_ = template_.flat_positions();
  if (names_.empty()) {
    for (std::size_t k = 0; k < deltas_.size(); ++k) names_.push_back("shape" + std::to_string(k));
  }
  if (names_.size() != deltas_.size()) {
    throw DimensionMismatch("blendshape model has " + std::to_string(deltas_.size()) + " deltas but " +
                            std::to_string(names_.size()) + " names");
  }
  for (std::size_t k = 0; k < deltas_.size(); ++k) {
    if (deltas_[k].size() != b0_.size()) {
      throw DimensionMismatch("delta " + std::to_string(k) + " has length " + std::to_string(deltas_[k].size()) +
                              ", expected " + std::to_string(b0_.size()));
    }
  }
}

BlendshapeModel BlendshapeModel::from_meshes(const TriMesh& template_mesh, const std::vector<TriMesh>& shapes,
                                             std::vector<std::string> names) {
  const std::vector<double> b0 = template_mesh.flat_positions();
  std::vector<std::vector<double>> deltas;
  deltas.reserve(shapes.size());
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (shapes[k].vertex_count() != template_mesh.vertex_count()) {
      throw DimensionMismatch("blendshape " + std::to_string(k) + " has " + std::to_string(shapes[k].vertex_count()) +
                              " vertices, template has " + std::to_string(template_mesh.vertex_count()));
    }
    std::vector<double> d = shapes[k].flat_positions();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= b0[i];
    deltas.push_back(std::move(d));
  }
  return BlendshapeModel(template_mesh, std::move(deltas), std::move(names));
}

Tensor BlendshapeModel::residual_matrix() const {
  const std::size_t rows = b0_.size();
  const std::size_t k_count = deltas_.size();
  Tensor b({rows, k_count});
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t r = 0; r < rows; ++r) b(r, k) = deltas_[k][r];
  }
  return b;
}

std::vector<double> BlendshapeModel::apply(std::span<const double> u) const {
  if (u.size() != deltas_.size()) {
    throw DimensionMismatch("coefficient vector has length " + std::to_string(u.size()) + ", model has " +
                            std::to_string(deltas_.size()) + " blendshapes");
  }
  std::vector<double> out = b0_;
  for (std::size_t k = 0; k < deltas_.size(); ++k) {
    const double uk = u[k];
    if (uk == 0.0) continue;
    const auto& d = deltas_[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += uk * d[i];
  }
  return out;
}

TriMesh BlendshapeModel::mesh_for(std::span<const double> u) const { return template_.with_positions(apply(u)); }

void BlendshapeModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_obj(dir / "template.obj", template_);
  for (std::size_t k = 0; k < deltas_.size(); ++k) {
    std::vector<double> pos = b0_;
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] += deltas_[k][i];
    save_obj(dir / (names_[k] + ".obj"), template_.with_positions(pos));
  }
  nlohmann::json manifest = {
      {"vertices", template_.vertex_count()},
      {"faces", template_.face_count()},
      {"blendshapes", names_},
  };
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

BlendshapeModel BlendshapeModel::load(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad model manifest in " + dir.string() + ": " + e.what());
  }
  if (!manifest.contains("blendshapes") || !manifest["blendshapes"].is_array()) {
    throw FormatError("model manifest lacks a 'blendshapes' list");
  }
  const TriMesh tmpl = load_obj(dir / "template.obj");
  std::vector<std::string> names;
  std::vector<TriMesh> shapes;
  for (const auto& n : manifest["blendshapes"]) {
    names.push_back(n.get<std::string>());
    shapes.push_back(load_obj(dir / (names.back() + ".obj")));
  }
  return from_meshes(tmpl, shapes, std::move(names));
}

std::vector<double> apply_coefficients(const BlendshapeModel& model, std::span<const double> u) {
  return model.apply(u);
}

void VertexCorrespondence::validate(std::size_t source_vertices, std::size_t target_vertices) const {
  std::unordered_set<std::uint32_t> seen;
  for (const auto& [s, t] : pairs) {
    if (s >= source_vertices) {
      throw IndexOutOfRange("source vertex " + std::to_string(s) + " outside mesh of " +
                            std::to_string(source_vertices));
    }
    if (t >= target_vertices) {
      throw IndexOutOfRange("target vertex " + std::to_string(t) + " outside mesh of " +
                            std::to_string(target_vertices));
    }
    if (!seen.insert(s).second) throw FormatError("duplicate source vertex " + std::to_string(s));
  }
}

VertexCorrespondence parse_vertex_correspondence(std::string_view text) {
  VertexCorrespondence vc;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    long s = 0, t = 0;
    if (!(ls >> s)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ParseError(line_no, "expected 'src_idx tgt_idx'");
    }
    std::string rest;
    if (!(ls >> t) || (ls >> rest) || s < 0 || t < 0) throw ParseError(line_no, "expected 'src_idx tgt_idx'");
    vc.pairs.emplace_back(static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(t));
  }
  return vc;
}

VertexCorrespondence load_vertex_correspondence(const std::filesystem::path& path) {
  return parse_vertex_correspondence(read_text_file(path));
}

}  // namespace said::mesh
