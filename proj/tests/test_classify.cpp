#include <gtest/gtest.h>

#include <set>

#include "icon/classify.hpp"
#include "icon/config.hpp"
#include "icon/dataset_io.hpp"
#include "oracles.hpp"

using namespace icon;

namespace {

SynthEmbeddingSpec small_spec(std::uint64_t seed) {
  SynthEmbeddingSpec s;
  s.dim = 16;
  s.per_class_train = 30;
  s.per_class_test = 10;
  s.seed = seed;
  return s;
}

// Least-squares one-vs-all linear probe with bias, fitted on every task's train
// split jointly and scored on every test split, in percent.
double linear_probe_accuracy(const EmbeddingDataset& d) {
  auto stack = [&](const std::vector<TaskDataset>& parts, std::vector<int>& labels) {
    Eigen::Index n = 0;
    for (const auto& p : parts) n += p.X.rows();
    Matrix a(n, d.dim() + 1);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      a.block(r, 0, p.X.rows(), d.dim()) = p.X;
      r += p.X.rows();
      labels.insert(labels.end(), p.labels->begin(), p.labels->end());
    }
    a.col(d.dim()).setOnes();
    return a;
  };
  std::vector<int> ytr, yte;
  const Matrix a = stack(d.train, ytr), b = stack(d.test, yte);
  Matrix onehot = Matrix::Zero(a.rows(), d.n_classes);
  for (std::size_t i = 0; i < ytr.size(); ++i) onehot(static_cast<Eigen::Index>(i), ytr[i]) = 1.0;
  const Matrix w = a.colPivHouseholderQr().solve(onehot);
  const Matrix scores = b * w;
  int hit = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    hit += arg == yte[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return 100.0 * hit / static_cast<double>(yte.size());
}

Matrix random_orthogonal(int d, RngStream& rng) {
  Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(d, d));
  return qr.householderQ();
}

}  // namespace

TEST(SynthEmbeddings, PartitionAndShapes) {
  const SynthEmbeddings e = synth_embeddings(small_spec(1));
  ASSERT_EQ(e.data.n_tasks(), 4);
  EXPECT_EQ(e.class_emb.rows(), 20);
  EXPECT_EQ(e.class_emb.cols(), 16);
  std::set<int> all;
  for (int t = 0; t < 4; ++t) {
    EXPECT_EQ(e.data.task_classes[static_cast<std::size_t>(t)].size(), 5u);
    const auto& tr = e.data.train[static_cast<std::size_t>(t)];
    EXPECT_EQ(tr.size(), 5 * 30);
    EXPECT_EQ(e.data.test[static_cast<std::size_t>(t)].size(), 5 * 10);
    const std::set<int> labels(tr.labels->begin(), tr.labels->end());
    const std::set<int> expected(e.data.task_classes[static_cast<std::size_t>(t)].begin(),
                                 e.data.task_classes[static_cast<std::size_t>(t)].end());
    EXPECT_EQ(labels, expected);
    all.insert(labels.begin(), labels.end());
  }
  EXPECT_EQ(all.size(), 20u);
  for (Eigen::Index c = 0; c < 20; ++c) EXPECT_NEAR(e.class_emb.row(c).norm(), 1.0, 1e-12);
}

TEST(SynthEmbeddings, Deterministic) {
  const SynthEmbeddings a = synth_embeddings(small_spec(2)), b = synth_embeddings(small_spec(2));
  EXPECT_EQ(a.class_emb, b.class_emb);
  EXPECT_EQ(a.data.train[2].X, b.data.train[2].X);
  EXPECT_NE(synth_embeddings(small_spec(3)).class_emb, a.class_emb);
}

TEST(SynthEmbeddings, InvalidSpec) {
  SynthEmbeddingSpec s = small_spec(1);
  s.n_classes = 21;
  EXPECT_THROW(synth_embeddings(s), ContractError);
  s = small_spec(1);
  s.sep = 0.0;
  EXPECT_THROW(synth_embeddings(s), ContractError);
}

TEST(SynthEmbeddings, DefaultLinearProbeIsCalibrated) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthEmbeddingSpec s = default_classify_config().data;
    s.seed = seed;
    const double acc = linear_probe_accuracy(synth_embeddings(s).data);
    EXPECT_GE(acc, 85.0) << "seed " << seed;
    EXPECT_LE(acc, 95.0) << "seed " << seed;
  }
}

TEST(NearestEmbedding, SeparableAndChanceLimits) {
  SynthEmbeddingSpec s = small_spec(5);
  s.noise = 0.0;
  s.sep = 20.0;
  SynthEmbeddings e = synth_embeddings(s);
  for (const auto& d : e.data.test) EXPECT_EQ(nearest_embedding_accuracy(d.X, *d.labels, e.class_emb), 100.0);

  s.noise = 1000.0;
  s.sep = 0.01;
  s.per_class_test = 500;
  e = synth_embeddings(s);
  std::vector<int> labels;
  Matrix x(0, s.dim);
  for (const auto& d : e.data.test) {
    Matrix next(x.rows() + d.X.rows(), s.dim);
    next << x, d.X;
    x = std::move(next);
    labels.insert(labels.end(), d.labels->begin(), d.labels->end());
  }
  // 10000 draws at p = 0.05: binomial sd is 0.22 points.
  EXPECT_NEAR(nearest_embedding_accuracy(x, labels, e.class_emb), 5.0, 1.1);
}

TEST(NearestEmbedding, RotationInvariant) {
  const SynthEmbeddings e = synth_embeddings(small_spec(4));
  RngStream rng(4, 0);
  const Matrix q = random_orthogonal(16, rng);
  const auto& d = e.data.test[1];
  const double base = nearest_embedding_accuracy(d.X, *d.labels, e.class_emb);
  EXPECT_EQ(nearest_embedding_accuracy(d.X * q, *d.labels, e.class_emb * q), base);
  EXPECT_GT(base, 100.0 / 20.0);
}

TEST(EmbeddingIo, RoundTrip) {
  const SynthEmbeddings e = synth_embeddings(small_spec(5));
  const auto dir = icon::oracle::scratch_dir("emb_roundtrip");
  write_embeddings(dir, e.data, e.class_emb);
  const EmbeddingDataset back = load_embeddings(dir);
  EXPECT_EQ(back.n_classes, 20);
  EXPECT_EQ(back.task_classes, e.data.task_classes);
  EXPECT_EQ(back.embedding_source, "synthetic");
  ASSERT_EQ(back.n_tasks(), 4);
  EXPECT_EQ(*back.train[3].labels, *e.data.train[3].labels);
  EXPECT_LT((back.train[3].X - e.data.train[3].X).cwiseAbs().maxCoeff(), 1e-6);
  const Matrix emb = load_class_embeddings(dir, 20);
  EXPECT_LT((emb - e.class_emb).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(load_class_embeddings(dir, 19), IngestionError);
}

TEST(EmbeddingIo, RejectsOutOfRangeLabel) {
  SynthEmbeddingSpec s = small_spec(6);
  s.n_classes = 100;
  s.n_tasks = 1;
  s.per_class_train = 1;
  s.per_class_test = 1;
  const SynthEmbeddings e = synth_embeddings(s);
  const auto dir = icon::oracle::scratch_dir("emb_bad_label");
  write_embeddings(dir, e.data, e.class_emb);
  TaskDataset bad = e.data.train[0];
  (*bad.labels)[7] = 100;
  write_dataset(bad, dir / dataset_filename(1, "train"));
  try {
    load_embeddings(dir);
    FAIL() << "label 100 accepted";
  } catch (const IngestionError& err) {
    EXPECT_NE(std::string(err.what()).find("label 100"), std::string::npos) << err.what();
  }
}

TEST(EmbeddingDataset, RejectsSharedClass) {
  SynthEmbeddings e = synth_embeddings(small_spec(7));
  e.data.task_classes[1][0] = e.data.task_classes[0][0];
  EXPECT_THROW(e.data.validate(), IngestionError);
}

TEST(ContinualClassify, SmallRunIsDeterministicAndScored) {
  SynthEmbeddingSpec s = small_spec(8);
  s.n_classes = 8;
  s.n_tasks = 2;
  s.dim = 8;
  s.per_class_train = 20;
  s.per_class_test = 10;
  const SynthEmbeddings e = synth_embeddings(s);
  TrainConfig c;
  c.seed = 8;
  c.epochs_stage1 = 2;
  c.epochs_stage2 = 1;
  c.batch_size = 32;
  c.replay_size = 16;
  c.head_hidden = 16;
  c.flow.n_blocks = 2;
  c.flow.width = 16;
  const ClassifyRun a = continual_classify(e.data, e.class_emb, c);
  const ClassifyRun b = continual_classify(e.data, e.class_emb, c);
  ASSERT_EQ(a.report.per_task_accuracy.size(), 2u);
  for (double acc : a.report.per_task_accuracy) {
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 100.0);
  }
  EXPECT_EQ(a.report.average_accuracy, b.report.average_accuracy);
  EXPECT_EQ(a.run.bank.ata.params.values, b.run.bank.ata.params.values);
  ASSERT_TRUE(a.run.bank.head.has_value());
  const auto pred = predict_classes(a.run.bank.ata, *a.run.bank.head, e.class_emb, e.data.test[0].X);
  for (int p : pred) {
    EXPECT_GE(p, 0);
    EXPECT_LT(p, 8);
  }
}

TEST(ContinualClassify, HeadOnlyContrastiveLeavesFlowUnsupervised) {
  SynthEmbeddingSpec s = small_spec(9);
  s.n_classes = 8;
  s.n_tasks = 2;
  s.dim = 8;
  s.per_class_train = 20;
  s.per_class_test = 5;
  const SynthEmbeddings e = synth_embeddings(s);
  TrainConfig c;
  c.seed = 9;
  c.epochs_stage1 = 2;
  c.epochs_stage2 = 1;
  c.batch_size = 32;
  c.replay_size = 16;
  c.head_hidden = 16;
  c.flow.n_blocks = 2;
  c.flow.width = 16;
  c.nce_flow_grad = false;
  const ClassifyRun head_only = continual_classify(e.data, e.class_emb, c);
  c.nce_weight = 0.0;
  const ClassifyRun no_nce = continual_classify(e.data, e.class_emb, c);
  EXPECT_EQ(head_only.run.bank.ata.params.values, no_nce.run.bank.ata.params.values);
  EXPECT_NE(head_only.run.bank.head->params.values, no_nce.run.bank.head->params.values);
}
