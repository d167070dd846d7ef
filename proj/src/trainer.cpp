#include "icon/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "icon/binio.hpp"
#include "icon/eval.hpp"

namespace icon {

void TrainConfig::validate() const {
  ICON_REQUIRE(lr0 > 0.0 && lr_min >= 0.0 && lr_min <= lr0, "TrainConfig: need 0 <= lr_min <= lr0, lr0 > 0");
  ICON_REQUIRE(weight_decay >= 0.0, "TrainConfig: weight decay must be non-negative");
  ICON_REQUIRE(epochs_stage1 >= 0 && epochs_stage2 >= 0, "TrainConfig: epoch counts must be non-negative");
  ICON_REQUIRE(batch_size >= 2, "TrainConfig: batch size must be at least 2");
  ICON_REQUIRE(tau > 0.0, "TrainConfig: tau must be positive");
  ICON_REQUIRE(latent_dim >= 0, "TrainConfig: latent_dim must be non-negative");
  ICON_REQUIRE(stage2_mle_weight >= 0.0, "TrainConfig: stage2_mle_weight must be non-negative");
  ICON_REQUIRE(flow.n_blocks >= 1 && flow.width >= 1 && flow.init_sigma > 0.0, "TrainConfig: invalid flow options");
  ICON_REQUIRE(nce_weight >= 0.0 && head_hidden >= 1 && head_out >= 1, "TrainConfig: invalid head options");
}

void adamw_step(Vector& params, const Vector& grad, AdamState& state, double lr, double wd) {
  ICON_REQUIRE(params.size() == grad.size(), "adamw_step: gradient length differs from parameters");
  if (state.m.size() != params.size()) state = AdamState(params.size());
  if (!grad.allFinite()) {
    Eigen::Index bad = 0;
    for (; bad < grad.size() && std::isfinite(grad(bad)); ++bad) {
    }
    throw DivergenceError("adamw_step: non-finite gradient at index " + std::to_string(bad) + " (step " +
                          std::to_string(state.step + 1) + ")");
  }
  ++state.step;
  state.m = kAdamBeta1 * state.m + (1.0 - kAdamBeta1) * grad;
  state.v = kAdamBeta2 * state.v + (1.0 - kAdamBeta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  const auto m_hat = state.m.array() / bc1;
  const auto v_hat = state.v.array() / bc2;
  params.array() -= lr * (m_hat / (v_hat.sqrt() + kAdamEps) + wd * params.array());
}

double cosine_lr(long step, long total, double lr0, double lr_min) {
  ICON_REQUIRE(total >= 0 && step >= 0 && step <= std::max(total, 0L), "cosine_lr: need 0 <= step <= total");
  if (total == 0) return lr0;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

void ReplayBuffer::add_task(const TaskDataset& data, RngStream& rng) {
  if (capacity_ == 0) return;
  std::map<int, std::vector<std::size_t>> fresh;
  if (by_class_) {
    ICON_REQUIRE(data.labels.has_value(), "ReplayBuffer: class-balanced replay needs labels");
    for (std::size_t r = 0; r < data.labels->size(); ++r) fresh[(*data.labels)[r]].push_back(r);
  } else {
    std::vector<std::size_t> rows(static_cast<std::size_t>(data.X.rows()));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    fresh[data.task_id] = std::move(rows);
  }
  for (const auto& [key, rows] : fresh) {
    ICON_REQUIRE(!groups_.count(key), "ReplayBuffer: group " + std::to_string(key) + " already stored");
    (void)rows;
  }

  const std::size_t n_groups = groups_.size() + fresh.size();
  std::size_t index = 0;
  auto quota_of = [&](std::size_t i) { return capacity_ / n_groups + (i < capacity_ % n_groups ? 1 : 0); };

  std::map<int, std::vector<Exemplar>> next;
  for (auto& [key, ex] : groups_) {
    // stored exemplars are in random order, so truncation keeps a uniform sample
    ex.resize(std::min(ex.size(), quota_of(index++)));
    next[key] = std::move(ex);
  }
  for (const auto& [key, rows] : fresh) {
    const std::size_t k = std::min(rows.size(), quota_of(index++));
    const auto pick = rng.sample_without_replacement(rows.size(), k);
    std::vector<Exemplar> ex;
    for (auto p : pick) ex.push_back({data.task_id, rows[p]});
    next[key] = std::move(ex);
  }
  groups_ = std::move(next);
}

std::size_t ReplayBuffer::size() const {
  std::size_t n = 0;
  for (const auto& [key, ex] : groups_) n += ex.size();
  return n;
}

std::vector<std::size_t> ReplayBuffer::rows_for_task(int task) const {
  std::vector<std::size_t> out;
  for (const auto& [key, ex] : groups_)
    for (const auto& e : ex)
      if (e.task == task) out.push_back(e.row);
  return out;
}

std::vector<ReplayBuffer::Exemplar> ReplayBuffer::all() const {
  std::vector<Exemplar> out;
  for (const auto& [key, ex] : groups_) out.insert(out.end(), ex.begin(), ex.end());
  return out;
}

BatchSampler::BatchSampler(std::vector<std::size_t> pool, RngStream rng) : pool_(std::move(pool)), rng_(rng) {
  ICON_REQUIRE(!pool_.empty(), "BatchSampler: empty pool");
  order_ = rng_.permutation(pool_.size());
}

std::vector<std::size_t> BatchSampler::next(std::size_t k) {
  std::vector<std::size_t> out;
  out.reserve(k);
  while (out.size() < k) {
    if (cursor_ == order_.size()) {
      order_ = rng_.permutation(pool_.size());
      cursor_ = 0;
    }
    out.push_back(pool_[order_[cursor_++]]);
  }
  return out;
}

namespace {

std::vector<std::size_t> all_rows(const TaskDataset& d) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(d.X.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

long steps_per_epoch(const TaskDataset& current, int batch_size) {
  return std::max(1L, static_cast<long>((current.X.rows() + batch_size - 1) / batch_size));
}

// Rows of several task datasets stacked into one labelled pool.
struct Pool {
  Matrix X;
  std::vector<int> labels;
};

Pool replay_pool(const std::vector<TaskDataset>& train, const ReplayBuffer& replay) {
  const auto ex = replay.all();
  Pool p;
  if (ex.empty()) return p;
  p.X.resize(static_cast<Eigen::Index>(ex.size()), train.front().X.cols());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const TaskDataset& d = *tasks_up_to(train, ex[i].task).back();
    p.X.row(static_cast<Eigen::Index>(i)) = d.X.row(static_cast<Eigen::Index>(ex[i].row));
    if (d.labels) p.labels.push_back((*d.labels)[ex[i].row]);
  }
  return p;
}

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels[r]);
  return out;
}

void check_finite_loss(double value, const char* stage, int t, long step) {
  if (!std::isfinite(value))
    throw DivergenceError(std::string(stage) + ": non-finite loss at task " + std::to_string(t) + ", step " +
                          std::to_string(step));
}

// Contrastive term on the ATA posterior means: per-sample mean of the NCE loss
// over all batches of one step, scaled by nce_weight.
struct NceTerm {
  const NceHead* head = nullptr;
  const Matrix* class_emb = nullptr;
  double tau = 0.07;
  double weight = 1.0;
  bool flow_grad = true;
  std::vector<std::vector<int>> batch_labels;
  double total_rows = 1.0;
  Vector grad_head;
  double value = 0.0;

  LatentHook hook(int N) {
    return [this, N](std::size_t b, const Matrix& z, Matrix& gz) {
      const double w = weight / total_rows;
      const NceGrad g = nce_loss_grad(z.leftCols(N), *head, batch_labels[b], *class_emb, tau);
      if (flow_grad) gz.leftCols(N) += g.grad_z * w;
      grad_head += g.grad_head * w;
      value += g.value * w;
      return g.value * w;
    };
  }
};

}  // namespace

std::vector<Matrix> stage2_pool(int t, const std::vector<TaskDataset>& train, const ReplayBuffer& replay) {
  const auto tasks = tasks_up_to(train, t);
  std::vector<Matrix> out;
  for (int i = 1; i < t; ++i) {
    const auto rows = replay.rows_for_task(i);
    if (!rows.empty()) out.push_back(gather_rows(tasks[static_cast<std::size_t>(i - 1)]->X, rows));
  }
  out.push_back(tasks.back()->X);
  return out;
}

StageTrace train_stage1(ModelBank& bank, int t, const std::vector<TaskDataset>& train, const ReplayBuffer& replay,
                        const TrainConfig& cfg, const ClassifyInputs& cls, RngStream& rng) {
  const auto tasks = tasks_up_to(train, t);
  const TaskDataset& current = *tasks.back();
  FlowParams& pta = bank.pta.at(t);
  FlowParams& ata = bank.ata;
  const bool classify = cls.class_emb != nullptr;
  ICON_REQUIRE(!classify || (bank.head && current.labels), "train_stage1: classification needs a head and labels");

  StageTrace trace;
  if (cfg.epochs_stage1 == 0) return trace;
  const long spe = steps_per_epoch(current, cfg.batch_size);
  const long total = spe * cfg.epochs_stage1;

  std::vector<BatchSampler> pta_samplers;
  for (const auto* d : tasks) pta_samplers.emplace_back(all_rows(*d), rng.split(static_cast<std::uint64_t>(d->task_id)));
  const Pool rep = replay_pool(train, replay);
  const bool has_replay = rep.X.rows() > 0;
  BatchSampler cur_sampler(all_rows(current), rng.split(1000));
  std::optional<BatchSampler> rep_sampler;
  if (has_replay) {
    std::vector<std::size_t> rows(static_cast<std::size_t>(rep.X.rows()));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    rep_sampler.emplace(std::move(rows), rng.split(1001));
  }

  AdamState st_pta(pta.params.values.size()), st_ata(ata.params.values.size());
  AdamState st_head(classify ? bank.head->params.values.size() : 0);
  const auto per_task = static_cast<std::size_t>(std::max(1, cfg.batch_size / t));
  const auto n_cur = static_cast<std::size_t>(has_replay ? cfg.batch_size / 2 : cfg.batch_size);
  const auto n_rep = static_cast<std::size_t>(cfg.batch_size) - n_cur;

  double epoch_pta = 0.0, epoch_ata = 0.0, epoch_nce = 0.0;
  for (long step = 0; step < total; ++step) {
    const double lr = cosine_lr(step, total, cfg.lr0, cfg.lr_min);

    std::vector<Matrix> pta_batches;
    for (std::size_t i = 0; i < tasks.size(); ++i)
      pta_batches.push_back(gather_rows(tasks[i]->X, pta_samplers[i].next(per_task)));
    std::vector<const Matrix*> pta_ptrs;
    for (const auto& b : pta_batches) pta_ptrs.push_back(&b);
    const LossGrad lp = mle_loss_grad(pta, pta_ptrs);
    check_finite_loss(lp.value, "stage 1 (PTA)", t, step);
    adamw_step(pta.params.values, lp.grad, st_pta, lr, cfg.weight_decay);

    std::vector<Matrix> ata_batches;
    NceTerm nce;
    const auto cur_rows = cur_sampler.next(n_cur);
    ata_batches.push_back(gather_rows(current.X, cur_rows));
    if (classify) nce.batch_labels.push_back(gather_labels(*current.labels, cur_rows));
    if (has_replay) {
      const auto rep_rows = rep_sampler->next(n_rep);
      ata_batches.push_back(gather_rows(rep.X, rep_rows));
      if (classify) nce.batch_labels.push_back(gather_labels(rep.labels, rep_rows));
    }
    std::vector<const Matrix*> ata_ptrs;
    for (const auto& b : ata_batches) ata_ptrs.push_back(&b);

    LossGrad la;
    if (classify) {
      nce.head = &*bank.head;
      nce.class_emb = cls.class_emb;
      nce.tau = cfg.tau;
      nce.weight = cfg.nce_weight;
      nce.flow_grad = cfg.nce_flow_grad;
      nce.total_rows = static_cast<double>(cfg.batch_size);
      nce.grad_head = Vector::Zero(bank.head->params.values.size());
      la = mle_loss_grad(ata, ata_ptrs, nce.hook(ata.N));
    } else {
      la = mle_loss_grad(ata, ata_ptrs);
    }
    check_finite_loss(la.value, "stage 1 (ATA)", t, step);
    adamw_step(ata.params.values, la.grad, st_ata, lr, cfg.weight_decay);
    if (classify) adamw_step(bank.head->params.values, nce.grad_head, st_head, lr, cfg.weight_decay);

    epoch_pta += lp.value;
    epoch_ata += la.value - nce.value;
    epoch_nce += nce.value;
    if ((step + 1) % spe == 0) {
      trace.pta_loss.push_back(epoch_pta / static_cast<double>(spe));
      trace.ata_loss.push_back(epoch_ata / static_cast<double>(spe));
      if (classify) trace.nce.push_back(epoch_nce / static_cast<double>(spe));
      epoch_pta = epoch_ata = epoch_nce = 0.0;
    }
  }
  trace.optimizer.emplace("ata", std::move(st_ata));
  trace.optimizer.emplace("pta_" + std::to_string(t), std::move(st_pta));
  if (classify) trace.optimizer.emplace("head", std::move(st_head));
  return trace;
}

StageTrace train_stage2(ModelBank& bank, int t, const std::vector<TaskDataset>& train, const ReplayBuffer& replay,
                        const TrainConfig& cfg, const ClassifyInputs& cls, RngStream& rng, Stage2Record* record) {
  const auto tasks = tasks_up_to(train, t);
  const TaskDataset& current = *tasks.back();
  FlowParams& pta = bank.pta.at(t);
  FlowParams& ata = bank.ata;
  const bool classify = cls.class_emb != nullptr;
  ICON_REQUIRE(!classify || (bank.head && current.labels), "train_stage2: classification needs a head and labels");

  // Per-task pools: replay rows of earlier tasks, all rows of the current task.
  struct Group {
    const TaskDataset* data;
    std::vector<std::size_t> rows;
  };
  std::vector<Group> groups;
  for (int i = 1; i < t; ++i) {
    auto rows = replay.rows_for_task(i);
    if (!rows.empty()) groups.push_back({tasks[static_cast<std::size_t>(i - 1)], std::move(rows)});
  }
  groups.push_back({&current, all_rows(current)});

  const std::vector<Matrix> pool = stage2_pool(t, train, replay);
  std::vector<const Matrix*> pool_ptrs;
  for (const auto& m : pool) pool_ptrs.push_back(&m);
  Matrix pooled(0, current.X.cols());
  for (const auto& m : pool) {
    Matrix next(pooled.rows() + m.rows(), pooled.cols());
    next << pooled, m;
    pooled = std::move(next);
  }
  auto alignment = [&]() {
    return alignment_report(posterior(pta, pooled).mu, posterior(ata, pooled).mu).mean;
  };

  Stage2Record rec;
  rec.task = t;
  rec.kl_entry = kl_align_value(ata, pta, pool_ptrs);
  rec.align_entry = alignment();

  StageTrace trace;
  const long spe = steps_per_epoch(current, cfg.batch_size);
  const long total = spe * cfg.epochs_stage2;
  std::vector<BatchSampler> samplers;
  for (std::size_t g = 0; g < groups.size(); ++g) samplers.emplace_back(groups[g].rows, rng.split(2000 + g));
  const auto per_group = static_cast<std::size_t>(std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch_size) / groups.size()));

  AdamState st_ata(ata.params.values.size()), st_pta(pta.params.values.size());
  AdamState st_head(classify ? bank.head->params.values.size() : 0);
  double epoch_kl = 0.0, epoch_nce = 0.0;
  for (long step = 0; step < total; ++step) {
    const double lr = cosine_lr(step, total, cfg.lr0, cfg.lr_min);
    std::vector<Matrix> batches;
    NceTerm nce;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto rows = samplers[g].next(per_group);
      batches.push_back(gather_rows(groups[g].data->X, rows));
      if (classify) nce.batch_labels.push_back(gather_labels(*groups[g].data->labels, rows));
    }
    std::vector<const Matrix*> ptrs;
    for (const auto& b : batches) ptrs.push_back(&b);

    AlignGrad ag;
    if (classify) {
      nce.head = &*bank.head;
      nce.class_emb = cls.class_emb;
      nce.tau = cfg.tau;
      nce.weight = cfg.nce_weight;
      nce.flow_grad = cfg.nce_flow_grad;
      nce.total_rows = static_cast<double>(per_group * groups.size());
      nce.grad_head = Vector::Zero(bank.head->params.values.size());
      ag = kl_align_grad(ata, pta, ptrs, nce.hook(ata.N));
    } else {
      ag = kl_align_grad(ata, pta, ptrs);
    }
    double anchor = 0.0;
    if (cfg.stage2_mle_weight > 0.0) {
      const LossGrad ma = mle_loss_grad(ata, ptrs);
      const LossGrad mp = mle_loss_grad(pta, ptrs);
      anchor = cfg.stage2_mle_weight * (ma.value + mp.value);
      ag.grad_ata += cfg.stage2_mle_weight * ma.grad;
      ag.grad_pta += cfg.stage2_mle_weight * mp.grad;
    }
    check_finite_loss(ag.value + anchor, "stage 2", t, step);
    adamw_step(ata.params.values, ag.grad_ata, st_ata, lr, cfg.weight_decay);
    adamw_step(pta.params.values, ag.grad_pta, st_pta, lr, cfg.weight_decay);
    if (classify) adamw_step(bank.head->params.values, nce.grad_head, st_head, lr, cfg.weight_decay);

    epoch_kl += ag.value - nce.value;
    epoch_nce += nce.value;
    if ((step + 1) % spe == 0) {
      trace.kl.push_back(epoch_kl / static_cast<double>(spe));
      if (classify) trace.nce.push_back(epoch_nce / static_cast<double>(spe));
      epoch_kl = epoch_nce = 0.0;
    }
  }

  trace.optimizer.emplace("ata", std::move(st_ata));
  trace.optimizer.emplace("pta_" + std::to_string(t), std::move(st_pta));
  if (classify) trace.optimizer.emplace("head", std::move(st_head));
  rec.steps = static_cast<int>(total);
  rec.kl_exit = kl_align_value(ata, pta, pool_ptrs);
  rec.align_exit = alignment();
  if (record) *record = rec;
  return trace;
}

namespace {
void keep_optimizer(RunResult& res, const StageTrace& trace) {
  for (const auto& [name, st] : trace.optimizer) res.optimizer.insert_or_assign(name, st);
}
}  // namespace

RunResult run_sequence(const std::vector<TaskDataset>& train, const TrainConfig& cfg, const ClassifyInputs& cls) {
  cfg.validate();
  ICON_REQUIRE(!train.empty(), "run_sequence: no training data");
  const int T = static_cast<int>(train.size());
  tasks_up_to(train, T);  // contiguous ids 1..T
  const int K = static_cast<int>(train.front().X.cols());
  const int N = cfg.latent_dim > 0 ? cfg.latent_dim : K;
  const bool classify = cls.class_emb != nullptr;
  for (const auto& d : train) {
    ICON_REQUIRE(d.X.cols() == K, "run_sequence: tasks differ in observation dimension");
    d.validate(classify ? static_cast<int>(cls.class_emb->rows()) : -1);
    ICON_REQUIRE(!classify || d.labels, "run_sequence: classification needs labels on every task");
  }

  RunResult res;
  res.replay = ReplayBuffer(cfg.replay_size, classify);
  RngStream init_rng(cfg.seed, Stream::kFlowInit);
  RngStream batch_rng(cfg.seed, Stream::kBatches);
  RngStream replay_rng(cfg.seed, Stream::kReplay);
  res.bank.ata = init_flow(K, N, cfg.flow, init_rng);
  if (classify) {
    RngStream head_rng(cfg.seed, Stream::kHeadInit);
    res.bank.head = init_head(N, cfg.head_hidden, cfg.head_out, head_rng);
  }

  for (int t = 1; t <= T; ++t) {
    if (t == 1 || !cfg.warm_start) {
      res.bank.pta[t] = init_flow(K, N, cfg.flow, init_rng);
    } else {
      res.bank.pta[t] = res.bank.pta.at(t - 1);
    }
    RngStream task_rng = batch_rng.split(static_cast<std::uint64_t>(t));
    res.stage1.push_back(train_stage1(res.bank, t, train, res.replay, cfg, cls, task_rng));
    keep_optimizer(res, res.stage1.back());
    if (cfg.use_kl && cfg.stage2_mode == Stage2Mode::kPerTask) {
      Stage2Record rec;
      res.stage2.push_back(train_stage2(res.bank, t, train, res.replay, cfg, cls, task_rng, &rec));
      res.stage2_records.push_back(rec);
      keep_optimizer(res, res.stage2.back());
    }
    res.replay.add_task(*tasks_up_to(train, t).back(), replay_rng);
  }
  if (cfg.use_kl && cfg.stage2_mode == Stage2Mode::kAtEnd) {
    RngStream end_rng = batch_rng.split(static_cast<std::uint64_t>(T + 1));
    // The buffer now also holds task T, so exclude it from the replay side.
    Stage2Record rec;
    ReplayBuffer earlier = res.replay;
    res.stage2.push_back(train_stage2(res.bank, T, train, earlier, cfg, cls, end_rng, &rec));
    res.stage2_records.push_back(rec);
    keep_optimizer(res, res.stage2.back());
  }
  return res;
}

namespace {
constexpr char kOptMagic[8] = {'I', 'C', 'O', 'N', 'O', 'P', 'T', '1'};
}  // namespace

void save_optimizer(const std::map<std::string, AdamState>& states, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("save_optimizer: cannot open " + path.string());
  os.write(kOptMagic, sizeof(kOptMagic));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(states.size()));
  for (const auto& [name, st] : states) {
    binio::put_string(os, name);
    binio::put<std::int64_t>(os, st.step);
    binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(st.m.size()));
    os.write(reinterpret_cast<const char*>(st.m.data()), static_cast<std::streamsize>(st.m.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(st.v.data()), static_cast<std::streamsize>(st.v.size() * sizeof(double)));
  }
  if (!os) throw Error("save_optimizer: write failed for " + path.string());
}

std::map<std::string, AdamState> load_optimizer(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("load_optimizer: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kOptMagic, sizeof(magic)) != 0)
    throw IngestionError("load_optimizer: bad magic in " + path.string());
  std::map<std::string, AdamState> out;
  const auto n = binio::get<std::uint32_t>(is, "entry count");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = binio::get_string(is, "entry name");
    const auto step = binio::get<std::int64_t>(is, "step");
    const auto len = binio::get<std::uint64_t>(is, "moment length");
    if (len > (1ULL << 32)) throw IngestionError("load_optimizer: implausible moment length");
    AdamState st(static_cast<Eigen::Index>(len));
    st.step = static_cast<long>(step);
    is.read(reinterpret_cast<char*>(st.m.data()), static_cast<std::streamsize>(len * sizeof(double)));
    is.read(reinterpret_cast<char*>(st.v.data()), static_cast<std::streamsize>(len * sizeof(double)));
    if (!is) throw IngestionError("load_optimizer: truncated moments for " + name);
    if (!st.m.allFinite() || !st.v.allFinite()) throw IngestionError("load_optimizer: non-finite moments for " + name);
    out.emplace(name, std::move(st));
  }
  return out;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"lr0", cfg.lr0},
          {"lr_min", cfg.lr_min},
          {"weight_decay", cfg.weight_decay},
          {"epochs_stage1", cfg.epochs_stage1},
          {"epochs_stage2", cfg.epochs_stage2},
          {"batch_size", cfg.batch_size},
          {"tau", cfg.tau},
          {"replay_size", cfg.replay_size},
          {"use_kl", cfg.use_kl},
          {"stage2_mode", cfg.stage2_mode == Stage2Mode::kPerTask ? "per_task" : "at_end"},
          {"warm_start", cfg.warm_start},
          {"latent_dim", cfg.latent_dim},
          {"stage2_mle_weight", cfg.stage2_mle_weight},
          {"flow", {{"n_blocks", cfg.flow.n_blocks}, {"width", cfg.flow.width}, {"init_sigma", cfg.flow.init_sigma}}},
          {"nce_weight", cfg.nce_weight},
          {"nce_flow_grad", cfg.nce_flow_grad},
          {"head_hidden", cfg.head_hidden},
          {"head_out", cfg.head_out},
          {"seed", cfg.seed}};
}

nlohmann::json RunResult::to_json() const {
  nlohmann::json stages = nlohmann::json::array();
  for (std::size_t i = 0; i < stage1.size(); ++i) {
    nlohmann::json s = {{"task", i + 1}, {"stage1_pta_loss", stage1[i].pta_loss}, {"stage1_ata_loss", stage1[i].ata_loss}};
    if (!stage1[i].nce.empty()) s["stage1_nce"] = stage1[i].nce;
    stages.push_back(s);
  }
  nlohmann::json s2 = nlohmann::json::array();
  for (std::size_t i = 0; i < stage2_records.size(); ++i) {
    const auto& r = stage2_records[i];
    nlohmann::json e = {{"task", r.task},         {"kl_entry", r.kl_entry},       {"kl_exit", r.kl_exit},
                        {"align_entry", r.align_entry}, {"align_exit", r.align_exit}, {"steps", r.steps}};
    if (i < stage2.size()) e["kl_trace"] = stage2[i].kl;
    s2.push_back(e);
  }
  return {{"stage1", stages}, {"stage2", s2}, {"replay_size", replay.size()}};
}

}  // namespace icon
