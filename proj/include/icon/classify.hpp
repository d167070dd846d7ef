#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "icon/trainer.hpp"
#include "json.hpp"

namespace icon {

// Pre-extracted feature rows partitioned into sequential tasks. Every class
// belongs to exactly one task; label ids are global.
struct EmbeddingDataset {
  std::vector<TaskDataset> train;
  std::vector<TaskDataset> test;
  int n_classes = 0;
  std::vector<std::vector<int>> task_classes;  // task index -> class ids
  std::vector<std::string> class_names;
  std::string embedding_source;

  int n_tasks() const { return static_cast<int>(train.size()); }
  Eigen::Index dim() const { return train.empty() ? 0 : train.front().X.cols(); }
  // Label range, class-to-task exclusivity and shape consistency.
  void validate() const;
};

struct SynthEmbeddingSpec {
  int n_classes = 20;
  int n_tasks = 4;
  int per_class_train = 200;
  int per_class_test = 50;
  int dim = 512;
  double sep = 1.0;    // spread of class directions around a shared axis
  double noise = 1.5;  // expected norm of the per-sample noise
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthEmbeddings {
  EmbeddingDataset data;
  Matrix class_emb;  // C x dim, unit rows
};

// Class directions u_c = normalize(a + sep r_c) around a shared unit axis a
// with independent unit r_c; features x = u_c + noise * g / sqrt(dim),
// g ~ N(0, I); class embeddings are the u_c.
SynthEmbeddings synth_embeddings(const SynthEmbeddingSpec& spec);

// Directory layout: task{t}_{split}.bin with labels, class_embeddings.bin
// (rows = classes, label = class id) and manifest.json with n_classes,
// classes_per_task, optional class_names / task_classes, embedding_source.
void write_embeddings(const std::filesystem::path& dir, const EmbeddingDataset& data, const Matrix& class_emb);
EmbeddingDataset load_embeddings(const std::filesystem::path& dir);
Matrix load_class_embeddings(const std::filesystem::path& dir, int n_classes);

// Argmax over all classes of the cosine similarity between the projected ATA
// posterior mean and the class embeddings. No task id is used.
std::vector<int> predict_classes(const FlowParams& ata, const NceHead& head, const Matrix& class_emb, const Matrix& x);

struct ClassifyReport {
  std::vector<double> per_task_accuracy;  // percent
  double average_accuracy = 0.0;

  nlohmann::json to_json() const;
};

ClassifyReport evaluate_accuracy(const ModelBank& bank, const Matrix& class_emb, const std::vector<TaskDataset>& test);

struct ClassifyRun {
  RunResult run;
  ClassifyReport report;
};

// Trains the sequence with the contrastive branch and class-balanced replay,
// then scores every task's test split with the final ATA flow and head.
// The head output width is taken from the class embeddings.
ClassifyRun continual_classify(const EmbeddingDataset& data, const Matrix& class_emb, TrainConfig cfg);

// Accuracy of the nearest-class-embedding rule applied directly to features.
double nearest_embedding_accuracy(const Matrix& x, const std::vector<int>& labels, const Matrix& class_emb);

}  // namespace icon
