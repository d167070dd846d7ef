#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "icon/dataset_io.hpp"
#include "icon/eval.hpp"
#include "icon/synthdata.hpp"
#include "oracles.hpp"

using namespace icon;

namespace {

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

std::vector<double> column(const Matrix& m, Eigen::Index c) {
  std::vector<double> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) v[static_cast<std::size_t>(r)] = m(r, c);
  return v;
}

SynthSpec small_spec(std::uint64_t seed, int n = 1000) {
  SynthSpec s;
  s.n_per_task = n;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(TaskParams, RangesAndDeterminism) {
  const SynthSpec s = small_spec(1);
  RngStream a(1, Stream::kTaskParams), b(1, Stream::kTaskParams);
  const auto p = gen_task_params(s, a), q = gen_task_params(s, b);
  ASSERT_EQ(p.size(), 4u);
  for (std::size_t t = 0; t < p.size(); ++t) {
    EXPECT_TRUE(p[t].mu == q[t].mu && p[t].var == q[t].var);
    EXPECT_GE(p[t].mu.minCoeff(), -4.0);
    EXPECT_LE(p[t].mu.maxCoeff(), 4.0);
    EXPECT_GE(p[t].var.minCoeff(), 0.1);
    EXPECT_LE(p[t].var.maxCoeff(), 1.0);
  }
}

TEST(TaskParams, UniformMeanIsZero) {
  SynthSpec s = small_spec(2);
  s.n_tasks = 12500;  // 1e5 mu draws
  RngStream rng(2, Stream::kTaskParams);
  const auto p = gen_task_params(s, rng);
  double sum = 0.0;
  for (const auto& tp : p) sum += tp.mu.sum();
  const double n = 1e5, se = 8.0 / std::sqrt(12.0) / std::sqrt(n);
  EXPECT_NEAR(sum / n, 0.0, 3 * se);
}

TEST(Latents, BlockMoments) {
  const SynthSpec s = small_spec(3);
  TaskLatentParams tp{Vector::LinSpaced(8, -3, 3), Vector::Constant(8, 0.5)};
  RngStream rng(3, Stream::kLatents);
  const int n = 100000;
  const Matrix z = gen_latents(s, tp, n, rng);
  for (int c = 0; c < 8; ++c) {
    EXPECT_NEAR(z.col(c).mean(), 0.0, 3.0 / std::sqrt(n));
    EXPECT_NEAR(z.col(8 + c).mean(), tp.mu(c), 3.0 * std::sqrt(0.5 / n));
  }
}

TEST(Latents, InvariantBlockSharedAcrossTasks) {
  const SynthSpec s = small_spec(4);
  RngStream prng(4, Stream::kTaskParams), rng(4, Stream::kLatents);
  const auto p = gen_task_params(s, prng);
  const int n = 10000;
  const Matrix z1 = gen_latents(s, p[0], n, rng), z2 = gen_latents(s, p[1], n, rng);
  const double crit = 1.628 * std::sqrt(2.0 / n);  // two-sample KS, alpha = 0.01
  for (int c = 0; c < 8; ++c) {
    EXPECT_NEAR(z1.col(c).mean() - z2.col(c).mean(), 0.0, 3.0 * std::sqrt(2.0 / n));
    EXPECT_LT(ks_statistic(column(z1, c), column(z2, c)), crit);
  }
}

TEST(Mixer, InvertibleAndConditioned) {
  const SynthSpec s = small_spec(5);
  RngStream rng(5, Stream::kMixer);
  const MixerParams m = make_mixer(s, rng);
  for (const Matrix* w : {&m.w1, &m.w2}) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(*w)};
    EXPECT_LT(svd.singularValues()(0) / svd.singularValues()(15), 100.0);
  }
  const Matrix z = RngStream(6, 0).normal_matrix(500, 16) * 3.0;
  EXPECT_LT((m.invert(m.apply(z)) - z).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Mixer, JacobianNonsingularAndMatchesFiniteDifferences) {
  const SynthSpec s = small_spec(7);
  RngStream rng(7, Stream::kMixer);
  const MixerParams m = make_mixer(s, rng);
  const VectorMap g = [&](const Vector& z) { return m.apply(z); };
  RngStream pts(8, 0);
  for (int i = 0; i < 100; ++i) {
    const Vector z = pts.normal_matrix(16, 1).col(0) * 2.0;
    const Matrix j = m.jacobian(z);
    const Matrix fd = finite_diff_jacobian(g, z);
    EXPECT_LT((fd - j).cwiseAbs().maxCoeff() / j.cwiseAbs().maxCoeff(), 1e-4);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(fd)};
    EXPECT_GT(svd.singularValues()(15), 1e-3);
  }
}

TEST(Mixer, Determinism) {
  const SynthSpec s = small_spec(9);
  RngStream a(9, Stream::kMixer), b(9, Stream::kMixer);
  EXPECT_EQ(make_mixer(s, a).hash(), make_mixer(s, b).hash());
}

TEST(Mixer, UnreachableConditionBoundFails) {
  SynthSpec s = small_spec(10);
  s.max_condition = 1.0001;
  RngStream rng(10, Stream::kMixer);
  EXPECT_THROW(make_mixer(s, rng), GenerationError);
}

TEST(Mixer, JsonRoundTrip) {
  const SynthSpec s = small_spec(11);
  RngStream rng(11, Stream::kMixer);
  const MixerParams m = make_mixer(s, rng);
  const MixerParams r = mixer_from_json(nlohmann::json::parse(mixer_to_json(m).dump()));
  EXPECT_EQ(r.hash(), m.hash());
  nlohmann::json bad = mixer_to_json(m);
  bad["hash"] = m.hash() + 1;
  EXPECT_THROW(mixer_from_json(bad), IngestionError);
}

TEST(SmoothLeaky, InverseRoundTrip) {
  for (double u = -30; u <= 30; u += 0.37) EXPECT_NEAR(smooth_leaky_inverse(smooth_leaky(u, 0.2), 0.2), u, 1e-10);
}

TEST(Generate, ShapesSplitAndReproduction) {
  const GeneratedData g = generate(small_spec(12, 1000));
  ASSERT_EQ(g.train.size(), 4u);
  ASSERT_EQ(g.test.size(), 4u);
  for (int t = 0; t < 4; ++t) {
    EXPECT_EQ(g.train[t].X.rows(), 900);
    EXPECT_EQ(g.test[t].X.rows(), 100);
    EXPECT_EQ(g.train[t].X.cols(), 16);
    EXPECT_EQ(g.train[t].task_id, t + 1);
    EXPECT_LT((g.mixer.apply(*g.train[t].z_true) - g.train[t].X).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_EQ(g.manifest.at("mixer_hash").get<std::uint64_t>(), g.mixer.hash());
  EXPECT_EQ(g.manifest.at("tasks").size(), 4u);
}

TEST(Generate, FullScaleShapes) {
  const GeneratedData g = generate(small_spec(13, 10000));
  for (const auto& d : g.train) EXPECT_EQ(d.X.rows() + g.test[d.task_id - 1].X.rows(), 10000);
}

TEST(Generate, GroundTruthRecoverable) {
  const GeneratedData g = generate(small_spec(14, 2000));
  EXPECT_NEAR(recovery_r2(g.mixer.invert(g.train[0].X), *g.train[0].z_true), 1.0, 1e-8);
}

TEST(Generate, TasksSeparateOnVariantBlock) {
  const GeneratedData g = generate(small_spec(15, 5000));
  for (int t = 0; t < 4; ++t) {
    for (int u = t + 1; u < 4; ++u) {
      const Vector dm = g.task_params[t].mu - g.task_params[u].mu;
      Eigen::Index c = 0;
      if (dm.cwiseAbs().maxCoeff(&c) <= 0.5) continue;
      const Matrix& za = *g.train[t].z_true;
      const Matrix& zb = *g.train[u].z_true;
      // Separation carried through to observations: the mean difference of
      // mixed data exceeds 3 standard errors in at least one coordinate.
      const Vector mx = g.train[t].X.colwise().mean() - g.train[u].X.colwise().mean();
      const auto var = [](const Matrix& m) {
        return Vector((m.rowwise() - m.colwise().mean()).array().square().colwise().sum() / (m.rows() - 1.0));
      };
      const Vector se = (var(g.train[t].X) / za.rows() + var(g.train[u].X) / zb.rows()).cwiseSqrt();
      EXPECT_GT((mx.cwiseAbs().array() / se.array()).maxCoeff(), 3.0);
    }
  }
}

TEST(Generate, DeterministicUnderSeed) {
  const GeneratedData a = generate(small_spec(16, 300)), b = generate(small_spec(16, 300));
  for (int t = 0; t < 4; ++t) EXPECT_TRUE(a.train[t].X == b.train[t].X);
  EXPECT_FALSE(generate(small_spec(17, 300)).train[0].X == a.train[0].X);
}

TEST(Generate, InvalidSpecThrows) {
  SynthSpec s = small_spec(1);
  s.K = 12;
  EXPECT_THROW(generate(s), ContractError);
  s = small_spec(1);
  s.var_lo = 0.0;
  EXPECT_THROW(generate(s), ContractError);
}

TEST(DatasetIo, RoundTripAsFloat32) {
  const GeneratedData g = generate(small_spec(18, 200));
  const auto dir = oracle::scratch_dir("dataset_io");
  write_data_dir(dir / "data", g);
  const DataDir d = read_data_dir(dir / "data");
  ASSERT_EQ(d.n_tasks(), 4);
  for (int t = 0; t < 4; ++t) {
    EXPECT_EQ(d.train[t].X, g.train[t].X.cast<float>().cast<double>());
    EXPECT_EQ(*d.test[t].z_true, g.test[t].z_true->cast<float>().cast<double>());
  }
  ASSERT_TRUE(d.mixer.has_value());
  EXPECT_EQ(d.mixer->hash(), g.mixer.hash());
}

TEST(DatasetIo, RejectsCorruptFiles) {
  const GeneratedData g = generate(small_spec(19, 100));
  const auto dir = oracle::scratch_dir("dataset_bad");
  write_dataset(g.train[0], dir / "ok.bin");
  std::string bytes = oracle::read_file(dir / "ok.bin");
  std::ofstream(dir / "trunc.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(read_dataset(dir / "trunc.bin"), IngestionError);
  bytes[0] = 'X';
  std::ofstream(dir / "magic.bin", std::ios::binary) << bytes;
  EXPECT_THROW(read_dataset(dir / "magic.bin"), IngestionError);
  EXPECT_THROW(read_dataset(dir / "missing.bin"), IngestionError);
  EXPECT_THROW(read_data_dir(dir / "nope"), IngestionError);
}
