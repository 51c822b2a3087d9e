#include "said/coeff_fit/coeff_fit.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "said/error.hpp"
#include "said/numerics/linalg.hpp"

namespace said::coeff_fit {

namespace {

void check_rank(const Tensor& btb) {
  try {
    (void)linalg::cholesky(btb);
  } catch (const NotPositiveDefinite& e) {
    throw RankDeficientBlendshapes(std::string("B'B is not positive definite: ") + e.what());
  }
}

}  // namespace

QPInstance make_qp(const Tensor& btb, const Tensor& targets, double delta) {
  if (btb.rank() != 2 || btb.rows() != btb.cols()) throw DimensionMismatch("B'B must be square");
  if (targets.rank() != 2 || targets.cols() != btb.rows()) {
    throw DimensionMismatch("targets must be N x " + std::to_string(btb.rows()));
  }
  if (btb.rows() > 0) check_rank(btb);
  QPInstance qp;
  qp.frames = targets.rows();
  qp.channels = btb.rows();
  qp.btb = btb;
  qp.delta = delta;
  qp.q.resize(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) qp.q[i] = -targets[i];
  return qp;
}

QPInstance assemble_qp(const mesh::BlendshapeModel& model, const MotionSequence& motion, const QPConfig& cfg) {
  const std::size_t dim = 3 * model.vertex_count();
  const std::size_t k = model.size();
  const std::size_t n = motion.frames.size();
  if (n == 0) throw DimensionMismatch("motion sequence has no frames");
  for (std::size_t f = 0; f < n; ++f) {
    if (motion.frames[f].size() != dim) {
      throw DimensionMismatch("frame " + std::to_string(f) + " has " + std::to_string(motion.frames[f].size()) +
                              " coordinates, model has " + std::to_string(dim));
    }
  }
  const Tensor b = model.residual_matrix();
  const Tensor btb = linalg::matmul_tn(b, b);
  const auto& b0 = model.template_positions();

  Tensor targets({n, k});
  double offset = 0.0;
  std::vector<double> r(dim);
  for (std::size_t f = 0; f < n; ++f) {
    for (std::size_t i = 0; i < dim; ++i) {
      r[i] = motion.frames[f][i] - b0[i];
      offset += 0.5 * r[i] * r[i];
    }
    for (std::size_t j = 0; j < k; ++j) {
      const auto& d = model.deltas()[j];
      double s = 0.0;
      for (std::size_t i = 0; i < dim; ++i) s += d[i] * r[i];
      targets(f, j) = s;
    }
  }
  QPInstance qp = make_qp(btb, targets, cfg.delta);
  qp.offset = offset;
  return qp;
}

CoeffSequence fit_sequence(const mesh::BlendshapeModel& model, const MotionSequence& motion, const QPConfig& cfg,
                           QPDiagnostics* diagnostics) {
  const QPInstance qp = assemble_qp(model, motion, cfg);
  const QPSolution sol = solve_qp(qp, cfg);
  if (diagnostics) *diagnostics = sol.diagnostics;
  CoeffSequence seq;
  seq.values = Tensor({qp.frames, qp.channels}, sol.u);
  seq.frame_rate = motion.frame_rate;
  seq.names = model.names();
  return seq;
}

void write_coeff_csv(std::ostream& out, const CoeffSequence& seq) {
  const std::size_t n = seq.frames(), k = seq.channels();
  if (seq.names.size() != k) throw DimensionMismatch("coefficient names do not match the channel count");
  out << "frame";
  for (const auto& name : seq.names) out << ',' << name;
  out << '\n';
  char buf[40];
  for (std::size_t f = 0; f < n; ++f) {
    out << f;
    for (std::size_t j = 0; j < k; ++j) {
      std::snprintf(buf, sizeof buf, ",%.9g", seq.values(f, j));
      out << buf;
    }
    out << '\n';
  }
}

void save_coeff_csv(const std::filesystem::path& path, const CoeffSequence& seq) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_coeff_csv(out, seq);
  if (!out) throw FormatError("failed writing " + path.string());
}

CoeffSequence read_coeff_csv(std::istream& in, double frame_rate) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing CSV header");
  const auto header = split(line);
  if (header.empty() || header[0] != "frame") throw ParseError(1, "header must start with 'frame'");
  CoeffSequence seq;
  seq.frame_rate = frame_rate;
  seq.names.assign(header.begin() + 1, header.end());
  const std::size_t k = seq.names.size();
  std::vector<double> data;
  std::size_t line_no = 1, rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != k + 1) {
      throw ParseError(line_no, "expected " + std::to_string(k + 1) + " columns, found " + std::to_string(cells.size()));
    }
    for (std::size_t j = 1; j <= k; ++j) {
      double v = 0.0;
      const auto& c = cells[j];
      const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size()) throw ParseError(line_no, "bad value '" + c + "'");
      data.push_back(v);
    }
    ++rows;
  }
  seq.values = Tensor({rows, k}, std::move(data));
  return seq;
}

CoeffSequence load_coeff_csv(const std::filesystem::path& path, double frame_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_coeff_csv(in, frame_rate);
}

}  // namespace said::coeff_fit
