#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <optional>
#include <vector>

#include "icon/objectives.hpp"
#include "json.hpp"

namespace icon {

enum class Stage2Mode { kPerTask, kAtEnd };

struct TrainConfig {
  double lr0 = 0.002;
  double lr_min = 0.0;
  double weight_decay = 1e-2;
  int epochs_stage1 = 60;
  int epochs_stage2 = 200;
  int batch_size = 128;
  double tau = 0.07;
  std::size_t replay_size = 50;
  bool use_kl = true;
  Stage2Mode stage2_mode = Stage2Mode::kPerTask;
  bool warm_start = true;
  int latent_dim = 0;  // designated latent dims N; 0 means N = K
  double stage2_mle_weight = 0.0;  // weight of the MLE anchor added to both flows in stage 2
  FlowOptions flow;
  // Contrastive classification branch (active when class embeddings are given).
  double nce_weight = 1.0;
  bool nce_flow_grad = true;  // false: the contrastive loss trains the head only
  int head_hidden = 256;
  int head_out = 512;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;

  explicit AdamState(Eigen::Index n = 0) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
void adamw_step(Vector& params, const Vector& grad, AdamState& state, double lr, double wd);

double cosine_lr(long step, long total, double lr0, double lr_min);

// Fixed-capacity exemplar store. Exemplars are (task, row) references into the
// stored training sets, grouped either per task or per class; after each
// insertion every group holds capacity / n_groups exemplars (+1 for the first
// capacity % n_groups groups), drawn uniformly without replacement.
class ReplayBuffer {
 public:
  struct Exemplar {
    int task;
    std::size_t row;
  };

  explicit ReplayBuffer(std::size_t capacity = 0, bool by_class = false) : capacity_(capacity), by_class_(by_class) {}

  void add_task(const TaskDataset& data, RngStream& rng);

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  bool by_class() const { return by_class_; }
  std::vector<std::size_t> rows_for_task(int task) const;
  std::vector<Exemplar> all() const;
  const std::map<int, std::vector<Exemplar>>& groups() const { return groups_; }

 private:
  std::size_t capacity_;
  bool by_class_;
  std::map<int, std::vector<Exemplar>> groups_;
};

// Cycles through a shuffled index order, reshuffling at each wrap.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, RngStream rng);
  std::vector<std::size_t> next(std::size_t k);
  std::size_t pool_size() const { return pool_.size(); }

 private:
  std::vector<std::size_t> pool_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  RngStream rng_;
};

struct StageTrace {
  std::vector<double> pta_loss;  // per-epoch mean
  std::vector<double> ata_loss;
  std::vector<double> kl;
  std::vector<double> nce;
  std::map<std::string, AdamState> optimizer;  // state at stage exit, keyed "ata", "pta_{t}", "head"
};

struct Stage2Record {
  int task = 0;
  double kl_entry = 0.0;
  double kl_exit = 0.0;
  double align_entry = 0.0;
  double align_exit = 0.0;
  int steps = 0;
};

// Optional classification inputs; all tasks share one class-embedding table.
struct ClassifyInputs {
  const Matrix* class_emb = nullptr;
};

struct RunResult {
  ModelBank bank;
  std::vector<StageTrace> stage1;
  std::vector<StageTrace> stage2;
  std::vector<Stage2Record> stage2_records;
  ReplayBuffer replay;
  std::map<std::string, AdamState> optimizer;  // latest state per model

  nlohmann::json to_json() const;
};

// Stage 1: pta[t] (warm-started from pta[t-1]) minimizes the task-averaged MLE
// over tasks 1..t; ATA minimizes MLE on current-task batches mixed 1:1 with
// replay batches.
StageTrace train_stage1(ModelBank& bank, int t, const std::vector<TaskDataset>& train, const ReplayBuffer& replay,
                        const TrainConfig& cfg, const ClassifyInputs& cls, RngStream& rng);

// Stage 2: joint descent of kl_align on ATA and pta[t] over the current task
// and the replay exemplars of earlier tasks.
StageTrace train_stage2(ModelBank& bank, int t, const std::vector<TaskDataset>& train, const ReplayBuffer& replay,
                        const TrainConfig& cfg, const ClassifyInputs& cls, RngStream& rng, Stage2Record* record);

RunResult run_sequence(const std::vector<TaskDataset>& train, const TrainConfig& cfg, const ClassifyInputs& cls = {});

// Per-task batches of the stage-2 pool (current task in full, replay rows for
// earlier tasks); tasks without exemplars are skipped.
std::vector<Matrix> stage2_pool(int t, const std::vector<TaskDataset>& train, const ReplayBuffer& replay);

nlohmann::json train_config_to_json(const TrainConfig& cfg);

// Binary optimizer-state file: per entry the name, step count and both moment
// vectors as little-endian float64.
void save_optimizer(const std::map<std::string, AdamState>& states, const std::filesystem::path& path);
std::map<std::string, AdamState> load_optimizer(const std::filesystem::path& path);

}  // namespace icon
