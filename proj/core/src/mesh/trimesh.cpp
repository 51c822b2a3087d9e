#include "said/mesh/trimesh.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "said/error.hpp"

namespace said::mesh {

std::vector<double> TriMesh::flat_positions() const {
  std::vector<double> flat;
  flat.reserve(3 * positions.size());
  for (const Vec3& p : positions) flat.insert(flat.end(), p.begin(), p.end());
  return flat;
}

TriMesh TriMesh::with_positions(const std::vector<double>& flat) const {
  if (flat.size() != 3 * positions.size()) {
    throw DimensionMismatch("position vector has " + std::to_string(flat.size()) + " entries, mesh needs " +
                            std::to_string(3 * positions.size()));
  }
  TriMesh out{std::vector<Vec3>(positions.size()), faces};
  for (std::size_t i = 0; i < positions.size(); ++i) out.positions[i] = {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
  return out;
}

void TriMesh::validate() const {
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& face = faces[f];
    for (std::uint32_t v : face) {
      if (v >= positions.size()) {
        throw IndexOutOfRange("face " + std::to_string(f) + " references vertex " + std::to_string(v) + " of " +
                              std::to_string(positions.size()));
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      throw FormatError("face " + std::to_string(f) + " is degenerate (repeated vertex)");
    }
  }
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

bool parse_long(std::string_view tok, long& out) {
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

}  // namespace

TriMesh parse_obj(std::string_view text) {
  TriMesh mesh;
  struct PendingFace {
    std::vector<long> idx;
    std::size_t line;
  };
  std::vector<PendingFace> pending;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto tokens = split_ws(line);
    const std::string_view tag = tokens[0];
    if (tag == "v") {
      if (tokens.size() < 4) throw ParseError(line_no, "vertex record needs three coordinates");
      Vec3 p{};
      for (int c = 0; c < 3; ++c) {
        if (!parse_double(tokens[1 + c], p[c]) || !std::isfinite(p[c])) {
          throw ParseError(line_no, "bad coordinate '" + std::string(tokens[1 + c]) + "'");
        }
      }
      mesh.positions.push_back(p);
    } else if (tag == "f") {
      if (tokens.size() < 4) throw ParseError(line_no, "face record needs at least three vertices");
      PendingFace face{{}, line_no};
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        const std::string_view first = tokens[i].substr(0, tokens[i].find('/'));
        long v = 0;
        if (!parse_long(first, v) || v == 0) throw ParseError(line_no, "bad face index '" + std::string(tokens[i]) + "'");
        // Relative indices refer to vertices defined so far.
        if (v < 0) v = static_cast<long>(mesh.positions.size()) + v + 1;
        face.idx.push_back(v);
      }
      pending.push_back(std::move(face));
    }
    // vn, vt, g, o, s, usemtl, mtllib, l, ... carry no geometry we need.
  }

  const long m = static_cast<long>(mesh.positions.size());
  for (const PendingFace& pf : pending) {
    for (long v : pf.idx) {
      if (v < 1 || v > m) {
        throw IndexOutOfRange("line " + std::to_string(pf.line) + ": face index " + std::to_string(v) +
                              " outside 1.." + std::to_string(m));
      }
    }
    for (std::size_t i = 1; i + 1 < pf.idx.size(); ++i) {
      const Face f{static_cast<std::uint32_t>(pf.idx[0] - 1), static_cast<std::uint32_t>(pf.idx[i] - 1),
                   static_cast<std::uint32_t>(pf.idx[i + 1] - 1)};
      if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) throw ParseError(pf.line, "degenerate face");
      mesh.faces.push_back(f);
    }
  }
  return mesh;
}

std::string export_obj(const TriMesh& mesh) {
  std::string out;
  out.reserve(48 * mesh.positions.size() + 24 * mesh.faces.size() + 64);
  char buf[128];
  std::snprintf(buf, sizeof buf, "# said mesh: %zu vertices, %zu faces\n", mesh.positions.size(), mesh.faces.size());
  out += buf;
  for (const Vec3& p : mesh.positions) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", p[0], p[1], p[2]);
    out += buf;
  }
  for (const Face& f : mesh.faces) {
    std::snprintf(buf, sizeof buf, "f %u %u %u\n", f[0] + 1, f[1] + 1, f[2] + 1);
    out += buf;
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

TriMesh load_obj(const std::filesystem::path& path) { return parse_obj(read_text_file(path)); }

void save_obj(const std::filesystem::path& path, const TriMesh& mesh) { write_text_file(path, export_obj(mesh)); }

std::vector<std::uint32_t> read_index_list(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::vector<std::uint32_t> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    long v = 0;
    if (!parse_long(t, v) || v < 0) throw ParseError(line_no, "bad vertex index '" + std::string(t) + "'");
    out.push_back(static_cast<std::uint32_t>(v));
  }
  return out;
}

Submesh extract_submesh(const TriMesh& mesh, const std::vector<std::uint32_t>& keep) {
  Submesh sub;
  std::unordered_map<std::uint32_t, std::uint32_t> remap;
  for (std::uint32_t v : keep) {
    if (v >= mesh.vertex_count()) throw IndexOutOfRange("mask index " + std::to_string(v) + " out of range");
    if (remap.count(v)) continue;
    remap.emplace(v, static_cast<std::uint32_t>(sub.original_index.size()));
    sub.original_index.push_back(v);
    sub.mesh.positions.push_back(mesh.positions[v]);
  }
  for (const Face& f : mesh.faces) {
    const auto a = remap.find(f[0]), b = remap.find(f[1]), c = remap.find(f[2]);
    if (a == remap.end() || b == remap.end() || c == remap.end()) continue;
    sub.mesh.faces.push_back({a->second, b->second, c->second});
  }
  return sub;
}

double mean_edge_length(const TriMesh& mesh) {
  if (mesh.faces.empty()) return 0.0;
  double total = 0.0;
  for (const Face& f : mesh.faces) {
    for (int e = 0; e < 3; ++e) {
      const Vec3& a = mesh.positions[f[e]];
      const Vec3& b = mesh.positions[f[(e + 1) % 3]];
      total += std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
    }
  }
  return total / (3.0 * static_cast<double>(mesh.faces.size()));
}

}  // namespace said::mesh
