#include <gtest/gtest.h>

#include <filesystem>

#include "said/error.hpp"
#include "said/mesh/blendshape_model.hpp"
#include "said/mesh/trimesh.hpp"
#include "said/numerics/rng.hpp"

namespace said::mesh {
namespace {

TEST(ParseObj, SingleTriangle) {
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3");
  ASSERT_EQ(m.vertex_count(), 3u);
  ASSERT_EQ(m.face_count(), 1u);
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
  EXPECT_EQ(m.positions[1], (Vec3{1, 0, 0}));
}

TEST(ParseObj, QuadIsFanTriangulated) {
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  ASSERT_EQ(m.face_count(), 2u);
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
  EXPECT_EQ(m.faces[1], (Face{0, 2, 3}));
}

TEST(ParseObj, FaceIndexOutOfRange) {
  EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9"), IndexOutOfRange);
}

TEST(ParseObj, SkipsNormalsAndTextureIndices) {
  const TriMesh m = parse_obj(
      "# comment\nmtllib x.mtl\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\ng head\ns 1\n"
      "f 1/1/1 2/2/1 3//1\r\n");
  ASSERT_EQ(m.face_count(), 1u);
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
}

TEST(ParseObj, NegativeIndicesAreRelative) {
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n");
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
}

TEST(ParseObj, MalformedRecordsReportLine) {
  try {
    parse_obj("v 0 0 0\nv 1 zero 0\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse_obj("v 0 0\n"), ParseError);
  EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nf 1 2\n"), ParseError);
  EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\n"), ParseError);
  EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 x 2\n"), ParseError);
}

TEST(ExportObj, TriangleRoundTrip) {
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3");
  const TriMesh r = parse_obj(export_obj(m));
  EXPECT_EQ(r.positions, m.positions);
  EXPECT_EQ(r.faces, m.faces);
}

TEST(ExportObj, EmptyMeshIsHeaderOnly) {
  const std::string text = export_obj(TriMesh{});
  EXPECT_EQ(text.front(), '#');
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  const TriMesh r = parse_obj(text);
  EXPECT_EQ(r.vertex_count(), 0u);
  EXPECT_EQ(r.face_count(), 0u);
}

TEST(ExportObj, RandomVerticesRoundTripWithinPrintedPrecision) {
  Rng rng(3);
  TriMesh m;
  for (int i = 0; i < 1000; ++i) m.positions.push_back({rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)});
  for (std::uint32_t i = 0; i + 2 < 1000; i += 3) m.faces.push_back({i, i + 1, i + 2});
  const TriMesh r = parse_obj(export_obj(m));
  ASSERT_EQ(r.vertex_count(), m.vertex_count());
  for (std::size_t i = 0; i < m.vertex_count(); ++i) {
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.positions[i][c], m.positions[i][c], 1e-6);
  }
  EXPECT_EQ(r.faces, m.faces);
}

TEST(Submesh, KeepsFacesWithAllCornersInside) {
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n");
  const Submesh s = extract_submesh(m, {0, 2, 3});
  ASSERT_EQ(s.mesh.vertex_count(), 3u);
  ASSERT_EQ(s.mesh.face_count(), 1u);
  EXPECT_EQ(s.mesh.faces[0], (Face{0, 1, 2}));
  EXPECT_EQ(s.original_index, (std::vector<std::uint32_t>{0, 2, 3}));
  EXPECT_THROW(extract_submesh(m, {7}), IndexOutOfRange);
}

BlendshapeModel one_vertex_model() {
  TriMesh t{{{0, 0, 0}}, {}};
  return BlendshapeModel(t, {{1, 0, 0}}, {"x"});
}

TEST(ApplyCoefficients, HalfWeightOnOneVertexModel) {
  const auto p = apply_coefficients(one_vertex_model(), std::vector<double>{0.5});
  EXPECT_EQ(p, (std::vector<double>{0.5, 0, 0}));
}

BlendshapeModel random_model(Rng& rng, std::size_t m, std::size_t k, std::vector<TriMesh>* shapes = nullptr) {
  TriMesh t;
  for (std::size_t i = 0; i < m; ++i) t.positions.push_back({rng.normal(), rng.normal(), rng.normal()});
  for (std::uint32_t i = 0; i + 2 < m; ++i) t.faces.push_back({i, i + 1, i + 2});
  std::vector<TriMesh> s;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < k; ++j) {
    TriMesh b = t;
    for (auto& p : b.positions)
      for (double& c : p) c += rng.normal();
    s.push_back(b);
    names.push_back("shape_" + std::to_string(j));
  }
  if (shapes) *shapes = s;
  return BlendshapeModel::from_meshes(t, s, names);
}

TEST(ApplyCoefficients, ZeroGivesTemplateAndUnitVectorGivesBlendshape) {
  Rng rng(5);
  std::vector<TriMesh> shapes;
  const BlendshapeModel model = random_model(rng, 20, 4, &shapes);
  EXPECT_EQ(model.apply(std::vector<double>(4, 0.0)), model.template_positions());
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<double> e(4, 0.0);
    e[k] = 1.0;
    const auto p = model.apply(e);
    const auto want = shapes[k].flat_positions();
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], want[i], 1e-12);
  }
}

TEST(ApplyCoefficients, WrongLengthRejected) {
  EXPECT_THROW(one_vertex_model().apply(std::vector<double>{0.1, 0.2}), DimensionMismatch);
}

TEST(ApplyCoefficients, AffineInCoefficients) {
  // Dyadic values keep every product and sum exact, so equality must be bitwise.
  Rng rng(9);
  TriMesh t;
  for (int i = 0; i < 10; ++i) t.positions.push_back({double(rng.below(16)), double(rng.below(16)), double(rng.below(16))});
  std::vector<std::vector<double>> deltas(3, std::vector<double>(30));
  for (auto& d : deltas)
    for (double& x : d) x = double(rng.below(64)) / 8.0 - 4.0;
  const BlendshapeModel model(t, deltas, {});
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> u1(3), u2(3), s(3);
    for (int k = 0; k < 3; ++k) {
      u1[k] = double(rng.below(8)) / 16.0;
      u2[k] = double(rng.below(8)) / 16.0;
      s[k] = u1[k] + u2[k];
    }
    const auto a = model.apply(u1), b = model.apply(u2), z = model.apply(std::vector<double>(3, 0.0)),
               c = model.apply(s);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i] + b[i] - z[i], c[i]);
  }
}

TEST(ApplyCoefficients, AffineOnRandomRealsWithinRounding) {
  Rng rng(10);
  const BlendshapeModel model = random_model(rng, 50, 6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> u1(6), u2(6), s(6);
    for (int k = 0; k < 6; ++k) {
      u1[k] = rng.uniform();
      u2[k] = rng.uniform();
      s[k] = u1[k] + u2[k];
    }
    const auto a = model.apply(u1), b = model.apply(u2), z = model.apply(std::vector<double>(6, 0.0)),
               c = model.apply(s);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i] + b[i] - z[i], c[i], 1e-12);
  }
}

TEST(BlendshapeModel, ResidualMatrixColumnsAreDeltas) {
  Rng rng(6);
  const BlendshapeModel model = random_model(rng, 7, 3);
  const Tensor b = model.residual_matrix();
  ASSERT_EQ(b.shape(), (Shape{21, 3}));
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t r = 0; r < 21; ++r) EXPECT_EQ(b(r, k), model.deltas()[k][r]);
}

TEST(BlendshapeModel, DirectoryRoundTrip) {
  Rng rng(8);
  const BlendshapeModel model = random_model(rng, 12, 3);
  const auto dir = std::filesystem::temp_directory_path() / "said_mesh_test_model";
  std::filesystem::remove_all(dir);
  model.save(dir);
  const BlendshapeModel back = BlendshapeModel::load(dir);
  EXPECT_EQ(back.names(), model.names());
  EXPECT_EQ(back.template_mesh().faces, model.template_mesh().faces);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 36; ++i) EXPECT_NEAR(back.deltas()[k][i], model.deltas()[k][i], 1e-6);
  std::filesystem::remove_all(dir);
}

TEST(VertexCorrespondence, ParseAndValidate) {
  const auto vc = parse_vertex_correspondence("# landmarks\n0 4\n1 3  # lip\n\n2 2\n");
  ASSERT_EQ(vc.pairs.size(), 3u);
  EXPECT_EQ(vc.pairs[1], (std::pair<std::uint32_t, std::uint32_t>{1, 3}));
  EXPECT_NO_THROW(vc.validate(3, 5));
  EXPECT_THROW(vc.validate(2, 5), IndexOutOfRange);
  EXPECT_THROW(vc.validate(3, 4), IndexOutOfRange);
  EXPECT_THROW(parse_vertex_correspondence("0 1\n0 2\n").validate(3, 3), FormatError);
  EXPECT_THROW(parse_vertex_correspondence("0\n"), ParseError);
  EXPECT_THROW(parse_vertex_correspondence("0 1 2\n"), ParseError);
}

}  // namespace
}  // namespace said::mesh
