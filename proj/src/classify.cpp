#include "icon/classify.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "icon/dataset_io.hpp"

namespace icon {

namespace fs = std::filesystem;

void EmbeddingDataset::validate() const {
  ICON_REQUIRE(!train.empty(), "EmbeddingDataset: no tasks");
  ICON_REQUIRE(n_classes >= 1, "EmbeddingDataset: n_classes must be positive");
  ICON_REQUIRE(static_cast<int>(task_classes.size()) == n_tasks(), "EmbeddingDataset: class partition size differs from task count");
  ICON_REQUIRE(test.empty() || test.size() == train.size(), "EmbeddingDataset: train and test task counts differ");
  std::vector<int> owner(static_cast<std::size_t>(n_classes), 0);
  for (int t = 0; t < n_tasks(); ++t)
    for (int c : task_classes[static_cast<std::size_t>(t)]) {
      if (c < 0 || c >= n_classes)
        throw IngestionError("class partition: class " + std::to_string(c) + " of task " + std::to_string(t + 1) +
                             " outside [0, " + std::to_string(n_classes) + ")");
      if (owner[static_cast<std::size_t>(c)] != 0)
        throw IngestionError("class partition: class " + std::to_string(c) + " listed in tasks " +
                             std::to_string(owner[static_cast<std::size_t>(c)]) + " and " + std::to_string(t + 1));
      owner[static_cast<std::size_t>(c)] = t + 1;
    }
  auto check = [&](const TaskDataset& d) {
    const std::string where = dataset_filename(d.task_id, d.split);
    if (!d.labels) throw IngestionError(where + ": labels missing");
    if (d.X.cols() != dim()) throw IngestionError(where + ": feature dimension differs from task 1");
    for (std::size_t r = 0; r < d.labels->size(); ++r) {
      const int y = (*d.labels)[r];
      if (y < 0 || y >= n_classes)
        throw IngestionError(where + ": row " + std::to_string(r) + " label " + std::to_string(y) + " outside [0, " +
                             std::to_string(n_classes) + ")");
      if (owner[static_cast<std::size_t>(y)] != d.task_id)
        throw IngestionError(where + ": row " + std::to_string(r) + " label " + std::to_string(y) +
                             " belongs to task " + std::to_string(owner[static_cast<std::size_t>(y)]));
    }
  };
  for (const auto& d : train) check(d);
  for (const auto& d : test) check(d);
}

void SynthEmbeddingSpec::validate() const {
  ICON_REQUIRE(n_classes >= 1 && n_tasks >= 1 && n_classes % n_tasks == 0,
               "SynthEmbeddingSpec: n_classes must be a positive multiple of n_tasks");
  ICON_REQUIRE(per_class_train >= 1 && per_class_test >= 0, "SynthEmbeddingSpec: invalid per-class counts");
  ICON_REQUIRE(dim >= 2, "SynthEmbeddingSpec: dim must be at least 2");
  ICON_REQUIRE(sep > 0.0 && noise >= 0.0, "SynthEmbeddingSpec: need sep > 0 and noise >= 0");
}

namespace {

Vector random_unit(int dim, RngStream& rng) {
  Vector v(dim);
  do {
    for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  } while (v.norm() == 0.0);
  return v.normalized();
}

TaskDataset draw_task(int task, const std::vector<int>& classes, int per_class, const Matrix& dirs, double noise,
                      const std::string& split, RngStream& rng) {
  const auto dim = dirs.cols();
  TaskDataset d;
  d.task_id = task;
  d.split = split;
  const auto n = static_cast<Eigen::Index>(classes.size()) * per_class;
  d.X.resize(n, dim);
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(n));
  const double scale = noise / std::sqrt(static_cast<double>(dim));
  Eigen::Index r = 0;
  for (int c : classes)
    for (int k = 0; k < per_class; ++k, ++r) {
      for (Eigen::Index j = 0; j < dim; ++j) d.X(r, j) = dirs(c, j) + scale * rng.normal();
      labels.push_back(c);
    }
  // Shuffle rows so that files are not class-sorted.
  const auto perm = rng.permutation(static_cast<std::size_t>(n));
  d.X = gather_rows(d.X, perm);
  std::vector<int> shuffled;
  shuffled.reserve(labels.size());
  for (auto p : perm) shuffled.push_back(labels[p]);
  d.labels = std::move(shuffled);
  return d;
}

}  // namespace

SynthEmbeddings synth_embeddings(const SynthEmbeddingSpec& spec) {
  spec.validate();
  RngStream rng(spec.seed, Stream::kEmbeddings);
  const Vector axis = random_unit(spec.dim, rng);
  Matrix dirs(spec.n_classes, spec.dim);
  for (int c = 0; c < spec.n_classes; ++c) dirs.row(c) = (axis + spec.sep * random_unit(spec.dim, rng)).normalized().transpose();

  SynthEmbeddings out;
  out.class_emb = dirs;
  out.data.n_classes = spec.n_classes;
  out.data.embedding_source = "synthetic";
  const int cpt = spec.n_classes / spec.n_tasks;
  RngStream train_rng = rng.split(1), test_rng = rng.split(2);
  for (int t = 1; t <= spec.n_tasks; ++t) {
    std::vector<int> classes;
    for (int c = (t - 1) * cpt; c < t * cpt; ++c) classes.push_back(c);
    out.data.task_classes.push_back(classes);
    out.data.train.push_back(draw_task(t, classes, spec.per_class_train, dirs, spec.noise, "train", train_rng));
    if (spec.per_class_test > 0)
      out.data.test.push_back(draw_task(t, classes, spec.per_class_test, dirs, spec.noise, "test", test_rng));
  }
  out.data.validate();
  return out;
}

void write_embeddings(const fs::path& dir, const EmbeddingDataset& data, const Matrix& class_emb) {
  data.validate();
  ICON_REQUIRE(class_emb.rows() == data.n_classes && class_emb.cols() == data.dim(),
               "write_embeddings: class embedding table shape differs from the dataset");
  fs::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  auto put = [&](const TaskDataset& d) {
    const std::string name = dataset_filename(d.task_id, d.split);
    write_dataset(d, dir / name);
    files.push_back({{"task", d.task_id}, {"split", d.split}, {"file", name}});
  };
  for (const auto& d : data.train) put(d);
  for (const auto& d : data.test) put(d);

  TaskDataset emb;
  emb.X = class_emb;
  std::vector<int> ids(static_cast<std::size_t>(data.n_classes));
  for (int c = 0; c < data.n_classes; ++c) ids[static_cast<std::size_t>(c)] = c;
  emb.labels = ids;
  write_dataset(emb, dir / "class_embeddings.bin");

  nlohmann::json m = {{"kind", "embeddings"},
                      {"n_classes", data.n_classes},
                      {"classes_per_task", data.n_classes / data.n_tasks()},
                      {"task_classes", data.task_classes},
                      {"embedding_source", data.embedding_source},
                      {"class_embeddings_file", "class_embeddings.bin"},
                      {"files", files}};
  if (!data.class_names.empty()) m["class_names"] = data.class_names;
  write_json(dir / "manifest.json", m);
}

EmbeddingDataset load_embeddings(const fs::path& dir) {
  DataDir raw = read_data_dir(dir);
  const auto& m = raw.manifest;
  const std::string where = (dir / "manifest.json").string();
  if (!m.contains("n_classes")) throw IngestionError(where + ": missing 'n_classes'");
  EmbeddingDataset out;
  out.n_classes = m.at("n_classes").get<int>();
  if (out.n_classes < 1) throw IngestionError(where + ": n_classes must be positive");
  out.train = std::move(raw.train);
  out.test = std::move(raw.test);
  if (m.contains("task_classes")) {
    out.task_classes = m.at("task_classes").get<std::vector<std::vector<int>>>();
  } else {
    if (!m.contains("classes_per_task")) throw IngestionError(where + ": missing 'classes_per_task'");
    const int cpt = m.at("classes_per_task").get<int>();
    if (cpt < 1 || cpt * out.n_tasks() != out.n_classes)
      throw IngestionError(where + ": classes_per_task * tasks differs from n_classes");
    for (int t = 0; t < out.n_tasks(); ++t) {
      std::vector<int> cls;
      for (int c = t * cpt; c < (t + 1) * cpt; ++c) cls.push_back(c);
      out.task_classes.push_back(cls);
    }
  }
  if (m.contains("class_names")) out.class_names = m.at("class_names").get<std::vector<std::string>>();
  if (m.contains("embedding_source")) out.embedding_source = m.at("embedding_source").get<std::string>();
  out.validate();
  return out;
}

Matrix load_class_embeddings(const fs::path& dir, int n_classes) {
  const TaskDataset emb = read_dataset(dir / "class_embeddings.bin");
  const std::string where = (dir / "class_embeddings.bin").string();
  if (emb.X.rows() != n_classes)
    throw IngestionError(where + ": " + std::to_string(emb.X.rows()) + " rows for " + std::to_string(n_classes) + " classes");
  Matrix out = emb.X;
  for (Eigen::Index c = 0; c < out.rows(); ++c) {
    const double norm = out.row(c).norm();
    if (!(norm > 0.0)) throw IngestionError(where + ": row " + std::to_string(c) + " has zero norm");
    out.row(c) /= norm;  // float32 storage loses unit norm at ~1e-7
  }
  return out;
}

std::vector<int> predict_classes(const FlowParams& ata, const NceHead& head, const Matrix& class_emb, const Matrix& x) {
  const Matrix sim = nce_similarity(posterior(ata, x).mu, head, class_emb);
  std::vector<int> out(static_cast<std::size_t>(sim.rows()));
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    Eigen::Index arg = 0;
    sim.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

namespace {

double accuracy_percent(const std::vector<int>& pred, const std::vector<int>& labels) {
  ICON_REQUIRE(pred.size() == labels.size() && !labels.empty(), "accuracy: prediction count differs from labels");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace

nlohmann::json ClassifyReport::to_json() const {
  return {{"per_task_accuracy", per_task_accuracy}, {"average_accuracy", average_accuracy}};
}

ClassifyReport evaluate_accuracy(const ModelBank& bank, const Matrix& class_emb, const std::vector<TaskDataset>& test) {
  ICON_REQUIRE(bank.head.has_value(), "evaluate_accuracy: model bank has no classification head");
  ICON_REQUIRE(!test.empty(), "evaluate_accuracy: no test data");
  ClassifyReport rep;
  for (const auto& d : test) {
    ICON_REQUIRE(d.labels.has_value(), "evaluate_accuracy: test split without labels");
    rep.per_task_accuracy.push_back(accuracy_percent(predict_classes(bank.ata, *bank.head, class_emb, d.X), *d.labels));
  }
  double sum = 0.0;
  for (double a : rep.per_task_accuracy) sum += a;
  rep.average_accuracy = sum / static_cast<double>(rep.per_task_accuracy.size());
  return rep;
}

ClassifyRun continual_classify(const EmbeddingDataset& data, const Matrix& class_emb, TrainConfig cfg) {
  data.validate();
  ICON_REQUIRE(class_emb.rows() == data.n_classes, "continual_classify: class embedding rows differ from n_classes");
  ICON_REQUIRE(!data.test.empty(), "continual_classify: no test split");
  const Matrix emb = normalize_rows(class_emb, "continual_classify: class embeddings");
  cfg.head_out = static_cast<int>(emb.cols());
  ClassifyRun out;
  out.run = run_sequence(data.train, cfg, ClassifyInputs{&emb});
  out.report = evaluate_accuracy(out.run.bank, emb, data.test);
  return out;
}

double nearest_embedding_accuracy(const Matrix& x, const std::vector<int>& labels, const Matrix& class_emb) {
  const Matrix sim = normalize_rows(x, "nearest_embedding_accuracy") * normalize_rows(class_emb, "class embeddings").transpose();
  std::vector<int> pred(static_cast<std::size_t>(sim.rows()));
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    Eigen::Index arg = 0;
    sim.row(i).maxCoeff(&arg);
    pred[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return accuracy_percent(pred, labels);
}

}  // namespace icon
