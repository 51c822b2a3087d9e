#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <sstream>

#include "said/coeff_fit/coeff_fit.hpp"
#include "said/error.hpp"
#include "said/numerics/rng.hpp"
#include "support/qp_oracle.hpp"

namespace said::coeff_fit {
namespace {

mesh::BlendshapeModel one_vertex_model() {
  return mesh::BlendshapeModel(mesh::TriMesh{{{0, 0, 0}}, {}}, {{1, 0, 0}}, {"jawOpen"});
}

MotionSequence motion_x(std::initializer_list<double> xs) {
  MotionSequence m;
  for (double x : xs) m.frames.push_back({x, 0, 0});
  return m;
}

TEST(AssembleQp, SingleFrameHasNoVelocityRows) {
  const QPInstance qp = assemble_qp(one_vertex_model(), motion_x({0.5}));
  EXPECT_EQ(qp.dense_G().rows(), 0u);
  EXPECT_TRUE(qp.h().empty());
}

TEST(AssembleQp, TwoFramesOneChannelGivesTwoVelocityRows) {
  const QPInstance qp = assemble_qp(one_vertex_model(), motion_x({0.5, 0.9}));
  const Tensor g = qp.dense_G();
  ASSERT_EQ(g.shape(), (Shape{2, 2}));
  EXPECT_EQ(g(0, 0), 1.0);
  EXPECT_EQ(g(0, 1), -1.0);
  EXPECT_EQ(g(1, 0), -1.0);
  EXPECT_EQ(g(1, 1), 1.0);
  EXPECT_EQ(qp.h(), (std::vector<double>{0.1, 0.1}));
  EXPECT_EQ(qp.q, (std::vector<double>{-0.5, -0.9}));
}

TEST(AssembleQp, BlocksMatchDirectProduct) {
  Rng rng(1);
  std::vector<std::vector<double>> deltas(4, std::vector<double>(30));
  for (auto& d : deltas)
    for (double& x : d) x = rng.normal();
  mesh::TriMesh t;
  for (int i = 0; i < 10; ++i) t.positions.push_back({rng.normal(), rng.normal(), rng.normal()});
  const mesh::BlendshapeModel model(t, deltas, {});
  MotionSequence motion;
  for (int f = 0; f < 3; ++f) {
    std::vector<double> p(30);
    for (double& x : p) x = rng.normal();
    motion.frames.push_back(p);
  }
  const QPInstance qp = assemble_qp(model, motion);

  Eigen::MatrixXd b(30, 4);
  for (int k = 0; k < 4; ++k)
    for (int r = 0; r < 30; ++r) b(r, k) = deltas[k][r];
  const Eigen::MatrixXd btb = b.transpose() * b;
  const Tensor p = qp.dense_P();
  ASSERT_EQ(p.shape(), (Shape{12, 12}));
  for (int f = 0; f < 3; ++f)
    for (int g = 0; g < 3; ++g)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          EXPECT_NEAR(p(4 * f + i, 4 * g + j), f == g ? btb(i, j) : 0.0, 1e-12);
  const auto b0 = model.template_positions();
  for (int f = 0; f < 3; ++f) {
    Eigen::VectorXd r(30);
    for (int i = 0; i < 30; ++i) r(i) = b0[i] - motion.frames[f][i];
    const Eigen::VectorXd want = b.transpose() * r;
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(qp.q[4 * f + k], want(k), 1e-12);
  }
}

TEST(AssembleQp, RankDeficientBlendshapesRejected) {
  mesh::TriMesh t{{{0, 0, 0}, {1, 0, 0}}, {}};
  const mesh::BlendshapeModel model(t, {{1, 0, 0, 0, 0, 0}, {2, 0, 0, 0, 0, 0}}, {});
  MotionSequence m;
  m.frames.push_back(std::vector<double>(6, 0.0));
  EXPECT_THROW(assemble_qp(model, m), RankDeficientBlendshapes);
}

TEST(AssembleQp, FrameSizeMismatchRejected) {
  MotionSequence m;
  m.frames.push_back({0.0, 0.0});
  EXPECT_THROW(assemble_qp(one_vertex_model(), m), DimensionMismatch);
}

TEST(SolveQp, InteriorOptimumSingleFrame) {
  const auto seq = fit_sequence(one_vertex_model(), motion_x({0.5}));
  EXPECT_NEAR(seq.values(0, 0), 0.5, 1e-9);
}

TEST(SolveQp, HandFixtureWithActiveVelocityConstraint) {
  QPDiagnostics d;
  const auto seq = fit_sequence(one_vertex_model(), motion_x({0.5, 0.9}), {}, &d);
  EXPECT_NEAR(seq.values(0, 0), 0.65, 1e-9);
  EXPECT_NEAR(seq.values(1, 0), 0.75, 1e-9);
  EXPECT_TRUE(d.converged);
}

TEST(SolveQp, TargetsAtTemplateGiveExactZero) {
  Rng rng(2);
  const auto inst = testing::random_qp_instance(rng, 5, 3);
  QPInstance qp = inst;
  std::fill(qp.q.begin(), qp.q.end(), 0.0);
  const QPSolution sol = solve_qp(qp);
  for (double u : sol.u) EXPECT_EQ(u, 0.0);
}

TEST(SolveQp, MatchesProjectedGradientOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t k = 1 + rng.below(6);
    const std::size_t n = 1 + rng.below(60 / k);
    const QPInstance qp = testing::random_qp_instance(rng, n, k);
    const QPSolution sol = solve_qp(qp);
    const auto oracle = testing::projected_gradient_oracle(qp);
    EXPECT_TRUE(sol.diagnostics.converged) << "trial " << trial;
    EXPECT_NEAR(sol.diagnostics.objective, oracle.objective, 1e-8 * std::max(1.0, std::abs(oracle.objective)))
        << "trial " << trial;
    for (std::size_t i = 0; i < sol.u.size(); ++i) EXPECT_NEAR(sol.u[i], oracle.u[i], 1e-6) << "trial " << trial;
    EXPECT_LE(constraint_violation(qp, sol.u), 1e-6);
    const double scale = [&] {
      double m = 0;
      for (std::size_t i = 0; i < k; ++i) m = std::max(m, qp.btb(i, i));
      return m;
    }();
    EXPECT_LE(stationarity(qp, sol.u, sol.y_box, sol.y_vel) / scale, 1e-5);
  }
}

TEST(SolveQp, WarmStartsAgree) {
  Rng rng(4);
  const QPInstance qp = testing::random_qp_instance(rng, 20, 3);
  const QPSolution a = solve_qp(qp);
  std::vector<double> start(qp.frames * qp.channels);
  for (double& s : start) s = rng.uniform();
  const QPSolution b = solve_qp(qp, {}, &start);
  for (std::size_t i = 0; i < a.u.size(); ++i) EXPECT_NEAR(a.u[i], b.u[i], 1e-5);
}

TEST(SolveQp, FeasibleAndNoWorseThanZero) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const QPInstance qp = testing::random_qp_instance(rng, 1 + rng.below(30), 1 + rng.below(5));
    const QPSolution sol = solve_qp(qp);
    EXPECT_LE(constraint_violation(qp, sol.u), 1e-6);
    EXPECT_LE(sol.diagnostics.objective, qp.objective(std::vector<double>(sol.u.size(), 0.0)) + 1e-12);
  }
}

TEST(SolveQp, AdmmWithoutPolishStillMeetsTolerances) {
  Rng rng(6);
  const QPInstance qp = testing::random_qp_instance(rng, 15, 4);
  QPConfig cfg;
  cfg.polish = false;
  const QPSolution sol = solve_qp(qp, cfg);
  EXPECT_TRUE(sol.diagnostics.converged);
  EXPECT_FALSE(sol.diagnostics.polished);
  const auto oracle = testing::projected_gradient_oracle(qp);
  EXPECT_NEAR(sol.diagnostics.objective, oracle.objective, 1e-4);
  for (std::size_t i = 0; i < sol.u.size(); ++i) EXPECT_NEAR(sol.u[i], oracle.u[i], 1e-3);
}

TEST(SolveQp, IterationCapReportsNonConvergence) {
  Rng rng(7);
  const QPInstance qp = testing::random_qp_instance(rng, 30, 5);
  QPConfig cfg;
  cfg.max_iter = 2;
  cfg.polish = false;
  QPSolution sol;
  EXPECT_NO_THROW(sol = solve_qp(qp, cfg));
  EXPECT_FALSE(sol.diagnostics.converged);
  EXPECT_EQ(sol.diagnostics.iterations, 2);
  EXPECT_EQ(sol.u.size(), 150u);
}

TEST(SolveQp, VelocityBoundRespectedOnLongSequence) {
  Rng rng(8);
  const QPInstance qp = testing::random_qp_instance(rng, 400, 8);
  const QPSolution sol = solve_qp(qp);
  EXPECT_TRUE(sol.diagnostics.converged);
  for (std::size_t f = 0; f + 1 < qp.frames; ++f)
    for (std::size_t j = 0; j < qp.channels; ++j)
      EXPECT_LE(std::abs(sol.u[(f + 1) * 8 + j] - sol.u[f * 8 + j]), qp.delta + 1e-6);
}

TEST(CoeffCsv, RoundTripAndHeader) {
  CoeffSequence seq;
  seq.names = {"jawOpen", "mouthClose"};
  seq.values = Tensor::matrix({{0.1, 0.25}, {0.123456789012, 1}});
  std::ostringstream out;
  write_coeff_csv(out, seq);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "frame,jawOpen,mouthClose");
  EXPECT_NE(text.find("\n1,0.123456789,1\n"), std::string::npos);
  std::istringstream in(text);
  const CoeffSequence back = read_coeff_csv(in);
  EXPECT_EQ(back.names, seq.names);
  ASSERT_EQ(back.values.shape(), seq.values.shape());
  EXPECT_LE(max_abs_diff(back.values, seq.values), 1e-9);
}

TEST(CoeffCsv, MalformedRowsRejected) {
  std::istringstream a("frame,x\n0,0.1,0.2\n");
  EXPECT_THROW(read_coeff_csv(a), ParseError);
  std::istringstream b("frame,x\n0,abc\n");
  EXPECT_THROW(read_coeff_csv(b), ParseError);
  std::istringstream c("time,x\n");
  EXPECT_THROW(read_coeff_csv(c), ParseError);
}

}  // namespace
}  // namespace said::coeff_fit
