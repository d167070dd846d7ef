#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "icon/eval.hpp"
#include "icon/synthdata.hpp"
#include "oracles.hpp"

using namespace icon;
using icon::oracle::make_random_flow;

TEST(Hungarian, KnownAssignment) {
  Matrix c(3, 3);
  c << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  const auto a = hungarian_min_cost(c);
  EXPECT_EQ(a, (std::vector<int>{1, 0, 2}));
}

TEST(Hungarian, MatchesBruteForce) {
  RngStream rng(1, 0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix c(5, 5);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform();
    std::vector<int> perm{0, 1, 2, 3, 4};
    double best = 1e300;
    do {
      double s = 0;
      for (int i = 0; i < 5; ++i) s += c(i, perm[i]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const auto a = hungarian_min_cost(c);
    double s = 0;
    for (int i = 0; i < 5; ++i) s += c(i, a[i]);
    EXPECT_NEAR(s, best, 1e-12);
  }
  EXPECT_THROW(hungarian_min_cost(Matrix::Zero(2, 3)), ContractError);
}

TEST(Alignment, PermutationScoresOne) {
  RngStream rng(2, 0);
  const Matrix a = rng.normal_matrix(500, 4);
  Matrix b(500, 4);
  b << -a.col(2), a.col(0), 3.0 * a.col(3), a.col(1);
  const AlignmentReport r = alignment_report(a, b);
  EXPECT_NEAR(r.mean, 1.0, 1e-12);
  EXPECT_EQ(r.assignment, (std::vector<int>{1, 3, 0, 2}));
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Alignment, IndependentAndNoisy) {
  RngStream rng(3, 0);
  const Matrix a = rng.normal_matrix(10000, 3), b = rng.normal_matrix(10000, 3);
  EXPECT_LT(alignment_report(a, b).mean, 0.05);
  const Matrix noisy = a + 0.1 * b;
  EXPECT_NEAR(alignment_report(a, noisy).mean, 1.0 / std::sqrt(1.01), 0.005);
}

TEST(Alignment, ConstantDimWarns) {
  RngStream rng(4, 0);
  const Matrix a = rng.normal_matrix(50, 2);
  Matrix b = a;
  b.col(1).setConstant(3.0);
  const AlignmentReport r = alignment_report(a, b);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_TRUE(std::isfinite(r.mean));
  EXPECT_NEAR(r.mean, 0.5, 1e-12);
}

TEST(Recovery, AffineMapIsExact) {
  RngStream rng(5, 0);
  const Matrix z = rng.normal_matrix(200, 3);
  const Matrix zt = (3.0 * z).array() + 1.0;
  const RecoveryFit f = fit_affine(z, zt);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_LT(icon::oracle::naive_rmse(apply_affine(f, z), zt), 1e-10);
  EXPECT_NEAR(recovery_r2(z, rng.normal_matrix(200, 3)), 0.0, 0.05);
}

TEST(Reconstruction, FullLatentFlowReconstructsExactly) {
  const FlowParams f = make_random_flow(4, 4, 2, 8, 6);
  RngStream rng(6, 0);
  const Matrix x = rng.normal_matrix(100, 4);
  EXPECT_LT(reconstruction_rmse(f, x), 1e-6);
}

TEST(Reconstruction, GrowsWithLatentPerturbation) {
  // Shifting every latent row by delta moves the reconstruction; the error
  // is linear in delta for small perturbations.
  const FlowParams f = make_random_flow(6, 3, 2, 8, 7);
  RngStream rng(7, 0);
  const Matrix x = rng.normal_matrix(200, 6);
  const Matrix mu = posterior(f, x).mu;
  const Matrix dir = rng.normal_matrix(200, 3);
  const double e1 = reconstruction_rmse(f, x, mu + 1e-4 * dir);
  const double e2 = reconstruction_rmse(f, x, mu + 2e-4 * dir);
  EXPECT_GT(e1, 0.0);
  EXPECT_NEAR(e2 / e1, 2.0, 1e-3);
  EXPECT_LT(reconstruction_rmse(f, x, mu), 1e-9);
}

TEST(Table1, IdenticalBanksGiveEqualArms) {
  SynthSpec s;
  s.n_tasks = 2;
  s.n_per_task = 200;
  s.seed = 8;
  const GeneratedData g = generate(s);
  ModelBank bank;
  bank.ata = make_random_flow(s.K, 16, 2, 16, 9, 0.1);
  bank.pta[1] = bank.ata;
  bank.pta[2] = bank.ata;
  const Table1 t = table1(bank, bank, g.train, g.test);
  EXPECT_EQ(t.ata_with_kl, t.ata_without_kl);
  // pta[2] and ATA share the model and the readout fitted on both tasks.
  EXPECT_EQ(t.per_task_pta_with_kl[1], t.per_task_ata_with_kl[1]);
  EXPECT_EQ(t.per_task_ata_with_kl.size(), 2u);
  EXPECT_NEAR(t.ata_improvement(), 0.0, 1e-15);
  EXPECT_EQ(t.to_json().at("with_kl").at("ata").get<double>(), t.ata_with_kl);
}

TEST(Scatter, CountsCsvAndSvg) {
  SynthSpec s;
  s.n_tasks = 2;
  s.n_per_task = 100;
  s.seed = 10;
  const GeneratedData g = generate(s);
  ModelBank bank;
  bank.ata = make_random_flow(s.K, 16, 1, 8, 11, 0.1);
  bank.pta[1] = make_random_flow(s.K, 16, 1, 8, 12, 0.1);
  bank.pta[2] = make_random_flow(s.K, 16, 1, 8, 13, 0.1);
  RngStream rng(14, Stream::kExport);
  const ScatterExport e = make_scatter(bank, g.train, 15, rng);
  EXPECT_EQ(e.points.rows(), 2 * 2 * 15);
  EXPECT_EQ(e.points.cols(), 2);
  EXPECT_EQ(std::count(e.setup.begin(), e.setup.end(), "PTA"), 30);
  EXPECT_EQ(std::count(e.task.begin(), e.task.end(), 2), 30);
  EXPECT_TRUE(e.warnings.empty());

  const std::string csv = scatter_csv(e);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x,y,setup,task");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 60);
  const std::string svg = scatter_svg(e);
  std::size_t circles = 0;
  for (std::size_t p = svg.find("<circle"); p != std::string::npos; p = svg.find("<circle", p + 1)) ++circles;
  EXPECT_EQ(circles, 60u);

  // Oversampling falls back to replacement with a warning.
  RngStream rng2(14, Stream::kExport);
  const ScatterExport big = make_scatter(bank, g.train, 1000, rng2);
  EXPECT_EQ(big.points.rows(), 4000);
  EXPECT_EQ(big.warnings.size(), 2u);

  const auto dir = icon::oracle::scratch_dir("scatter");
  export_scatter(e, dir, "fig");
  EXPECT_EQ(icon::oracle::read_file(dir / "fig.csv"), csv);
  EXPECT_EQ(icon::oracle::read_file(dir / "fig.svg"), svg);
}

TEST(Scatter, CentroidGap) {
  ScatterExport s;
  s.points.resize(4, 2);
  s.points << 0, 0, 0, 2, 4, 0, 4, 2;
  s.setup = {"PTA", "PTA", "ATA", "ATA"};
  s.task = {1, 1, 1, 1};
  // Centroids (0,1) and (4,1); pooled axis variances are 4 and 1.
  EXPECT_NEAR(scatter_centroid_gap(s, 1), 4.0 / std::sqrt(2.5), 1e-12);
  EXPECT_THROW(scatter_centroid_gap(s, 2), ContractError);
}

TEST(Table1, PooledReadoutIsExactForAffineLatents) {
  // Latents that are one affine image of the observations across every task are
  // recovered exactly by any invertible linear flow readout.
  RngStream rng(15, 0);
  const FlowParams f = init_flow(3, 3, FlowOptions{2, 8, 0.1}, rng);
  std::vector<TaskDataset> train, test;
  Matrix a(3, 3);
  a << 2, 0, 1, 0, 1, 0, 1, 0, 3;
  for (int t = 1; t <= 2; ++t)
    for (auto* split : {&train, &test}) {
      TaskDataset d;
      d.task_id = t;
      d.X = rng.normal_matrix(40, 3).array() + 3.0 * t;
      d.z_true = Matrix((d.X * a).array() + 1.0);
      split->push_back(d);
    }
  ModelBank bank;
  bank.ata = f;
  bank.pta[1] = f;
  bank.pta[2] = f;
  const TableArm arm = table1_arm(bank, train, test);
  EXPECT_LT(arm.ata, 1e-10);
  EXPECT_LT(arm.pta, 1e-10);
  EXPECT_EQ(latent_recovery_rmse(f, train[0], test[0]),
            latent_recovery_rmse(f, std::vector<const TaskDataset*>{&train[0]}, test[0]));
}

TEST(Table1, PooledReadoutExposesDrift) {
  // A model whose latent code shifts between tasks cannot be read out by one
  // map, while a per-task map hides the shift.
  RngStream rng(16, 0);
  std::vector<TaskDataset> train, test;
  for (int t = 1; t <= 2; ++t)
    for (auto* split : {&train, &test}) {
      TaskDataset d;
      d.task_id = t;
      const Matrix z = rng.normal_matrix(200, 2);
      d.z_true = z;
      // The observation of task 2 is a rotated copy of its latent.
      d.X = t == 1 ? z : Matrix(z * Eigen::Rotation2D<double>(1.2).toRotationMatrix().transpose());
      split->push_back(d);
    }
  RngStream init(17, 0);
  const FlowParams f = init_flow(2, 2, FlowOptions{1, 4, 0.1}, init);
  const double pooled = latent_recovery_rmse(f, {&train[0], &train[1]}, test[1]);
  const double own = latent_recovery_rmse(f, train[1], test[1]);
  EXPECT_LT(own, 1e-10);
  EXPECT_GT(pooled, 0.3);
}
