#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "said/mesh/blendshape_model.hpp"
#include "said/numerics/tensor.hpp"

namespace said::coeff_fit {

/// Vertex positions per frame, each of length 3M.
struct MotionSequence {
  std::vector<std::vector<double>> frames;
  double frame_rate = 60.0;
};

/// N x K coefficients in [0, 1].
struct CoeffSequence {
  Tensor values;
  double frame_rate = 60.0;
  std::vector<std::string> names;

  std::size_t frames() const { return values.rank() == 2 ? values.rows() : 0; }
  std::size_t channels() const { return values.rank() == 2 ? values.cols() : 0; }
};

struct QPConfig {
  /// largest allowed per-frame change of a coefficient
  double delta = 0.1;
  double tol_primal = 1e-6;
  double tol_dual = 1e-6;
  int max_iter = 20000;
  double rho = 1.0;
  double sigma = 1e-6;
  /// over-relaxation
  double alpha = 1.6;
  /// iterations between penalty adaptation checks
  int adapt_interval = 25;
  /// iterations between active-set polishing attempts
  int polish_interval = 200;
  bool polish = true;
};

/// min 1/2 u'Pu + q'u  s.t. 0 <= u <= 1, |u^{n+1}_k - u^n_k| <= delta.
///
/// P is block diagonal with N copies of B'B; only the K x K block is stored.
/// u is stacked frame-major: u[n * K + k].
struct QPInstance {
  std::size_t frames = 0;
  std::size_t channels = 0;
  Tensor btb;                 // K x K
  std::vector<double> q;      // N * K
  double delta = 0.1;
  /// 1/2 ||p - b0||^2 summed over frames; objective + offset = 1/2 * squared reconstruction error.
  double offset = 0.0;

  double objective(const std::vector<double>& u) const;
  Tensor dense_P() const;
  /// Velocity rows [D -D] per frame pair with D = [I; -I], i.e. 2K(N-1) rows.
  Tensor dense_G() const;
  std::vector<double> h() const;
};

struct QPDiagnostics {
  int iterations = 0;
  /// largest constraint violation of the returned coefficients
  double primal_residual = 0.0;
  /// stationarity ||Pu + q + A'y||_inf divided by max diag(P)
  double dual_residual = 0.0;
  double objective = 0.0;
  double rho = 1.0;
  bool converged = false;
  bool polished = false;
};

struct QPSolution {
  /// N * K, frame-major
  std::vector<double> u;
  /// multipliers of the box rows (N * K) and velocity rows u^{n+1}-u^n ((N-1) * K), unscaled
  std::vector<double> y_box;
  std::vector<double> y_vel;
  QPDiagnostics diagnostics;
};

/// Throws DimensionMismatch on inconsistent sizes and RankDeficientBlendshapes
/// when B'B has a Cholesky pivot at or below 1e-12.
QPInstance assemble_qp(const mesh::BlendshapeModel& model, const MotionSequence& motion, const QPConfig& cfg = {});

/// Builds an instance from B'B and the per-frame targets c_n = B'(p^n - b0).
QPInstance make_qp(const Tensor& btb, const Tensor& targets, double delta);

/// ADMM solve. `warm_start` (N * K) overrides the default clipped per-frame
/// least-squares start. Reaching max_iter is reported through
/// diagnostics.converged = false with the last iterate.
QPSolution solve_qp(const QPInstance& qp, const QPConfig& cfg = {}, const std::vector<double>* warm_start = nullptr);

/// Worst violation of box and velocity constraints.
double constraint_violation(const QPInstance& qp, const std::vector<double>& u);
/// ||Pu + q + y_box + E'y_vel||_inf, E the forward-difference operator.
double stationarity(const QPInstance& qp, const std::vector<double>& u, const std::vector<double>& y_box,
                    const std::vector<double>& y_vel);

CoeffSequence fit_sequence(const mesh::BlendshapeModel& model, const MotionSequence& motion, const QPConfig& cfg = {},
                           QPDiagnostics* diagnostics = nullptr);

/// Header `frame,name_1,...,name_K`, 0-based frame index, %.9g values.
void write_coeff_csv(std::ostream& out, const CoeffSequence& seq);
void save_coeff_csv(const std::filesystem::path& path, const CoeffSequence& seq);
CoeffSequence read_coeff_csv(std::istream& in, double frame_rate = 60.0);
CoeffSequence load_coeff_csv(const std::filesystem::path& path, double frame_rate = 60.0);

}  // namespace said::coeff_fit
