#include "icon/objectives.hpp"

#include <cmath>

namespace icon {

void TaskDataset::validate(int n_classes) const {
  ICON_REQUIRE(task_id >= 1, "TaskDataset: task id must be >= 1");
  ICON_REQUIRE(X.rows() >= 1, "TaskDataset: empty dataset for task " + std::to_string(task_id));
  require_finite(X, "TaskDataset observations");
  if (z_true) {
    ICON_REQUIRE(z_true->rows() == X.rows(), "TaskDataset: latent row count differs from observations");
    require_finite(*z_true, "TaskDataset latents");
  }
  if (labels) {
    ICON_REQUIRE(static_cast<Eigen::Index>(labels->size()) == X.rows(), "TaskDataset: label count differs from rows");
    for (int y : *labels) {
      ICON_REQUIRE(y >= 0, "TaskDataset: negative label");
      if (n_classes >= 0) ICON_REQUIRE(y < n_classes, "TaskDataset: label " + std::to_string(y) + " out of range");
    }
  }
}

TaskDataset TaskDataset::subset(const std::vector<std::size_t>& rows) const {
  TaskDataset out;
  out.task_id = task_id;
  out.split = split;
  out.X = gather_rows(X, rows);
  if (z_true) out.z_true = gather_rows(*z_true, rows);
  if (labels) {
    std::vector<int> l;
    l.reserve(rows.size());
    for (auto r : rows) l.push_back((*labels)[r]);
    out.labels = std::move(l);
  }
  return out;
}

NceHead init_head(int latent_dim, int hidden, int out_dim, RngStream& rng) {
  ICON_REQUIRE(latent_dim >= 1 && hidden >= 1 && out_dim >= 1, "init_head: dimensions must be positive");
  ParamLayout layout;
  NceHead head;
  head.mlp = Mlp::append_to(layout, "head", {latent_dim, hidden, out_dim});
  head.params = ParamVector(layout);
  head.mlp.init(head.params.values, rng, /*zero_last=*/false);
  return head;
}

void ModelBank::validate() const {
  int t = 1;
  for (const auto& [id, f] : pta) {
    ICON_REQUIRE(id == t, "ModelBank: partial-task keys must be contiguous from 1");
    ICON_REQUIRE(f.K == ata.K && f.N == ata.N, "ModelBank: partial-task model dimensions differ from ATA");
    ++t;
  }
  if (head) ICON_REQUIRE(head->mlp.in_dim() == ata.N, "ModelBank: head input width differs from latent dim");
}

const FlowParams& ModelBank::pta_at(int t) const {
  const auto it = pta.find(t);
  if (it == pta.end()) throw ContractError("ModelBank: no partial-task model for task " + std::to_string(t));
  return it->second;
}

std::vector<const TaskDataset*> tasks_up_to(const std::vector<TaskDataset>& data, int t) {
  ICON_REQUIRE(t >= 1, "tasks_up_to: t must be >= 1");
  std::vector<const TaskDataset*> out(static_cast<std::size_t>(t), nullptr);
  for (const auto& d : data)
    if (d.task_id >= 1 && d.task_id <= t) out[static_cast<std::size_t>(d.task_id - 1)] = &d;
  for (int i = 0; i < t; ++i)
    if (!out[static_cast<std::size_t>(i)]) throw ContractError("missing data for task " + std::to_string(i + 1));
  return out;
}

namespace {

std::vector<const Matrix*> observations(const std::vector<const TaskDataset*>& tasks) {
  std::vector<const Matrix*> out;
  for (const auto* d : tasks) out.push_back(&d->X);
  return out;
}

}  // namespace

double mle_loss(const FlowParams& f, const std::vector<const Matrix*>& batches) {
  ICON_REQUIRE(!batches.empty(), "mle_loss: no task batches");
  double total = 0.0;
  for (const Matrix* x : batches) {
    ICON_REQUIRE(x->rows() > 0, "mle_loss: empty task batch");
    total += log_likelihood(f, *x).mean();
  }
  return -total / static_cast<double>(batches.size());
}

LossGrad mle_loss_grad(const FlowParams& f, const std::vector<const Matrix*>& batches, const LatentHook& hook) {
  ICON_REQUIRE(!batches.empty(), "mle_loss_grad: no task batches");
  LossGrad out;
  out.grad = Vector::Zero(f.params.values.size());
  const double n_tasks = static_cast<double>(batches.size());
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Matrix* x = batches[b];
    ICON_REQUIRE(x->rows() > 0, "mle_loss_grad: empty task batch");
    const InverseTrace trace = inverse_traced(f, *x);
    const double w = 1.0 / (n_tasks * static_cast<double>(x->rows()));
    out.value -= std_normal_log_density(trace.z).sum() * w;
    // d(-log phi(z))/dz = z
    Matrix gz = trace.z * w;
    if (hook) out.value += hook(b, trace.z, gz);
    backprop_inverse(f, trace, gz, out.grad);
  }
  return out;
}

double loss_pta(const ModelBank& bank, int t, const std::vector<TaskDataset>& data) {
  return mle_loss(bank.pta_at(t), observations(tasks_up_to(data, t)));
}

double loss_ata(const FlowParams& ata, const std::vector<TaskDataset>& data) {
  ICON_REQUIRE(!data.empty(), "loss_ata: no task data");
  std::vector<const Matrix*> xs;
  for (const auto& d : data) xs.push_back(&d.X);
  return mle_loss(ata, xs);
}

double kl_gauss(const Vector& mu_p, const Vector& sigma_p, const Vector& mu_q, const Vector& sigma_q) {
  const auto n = mu_p.size();
  ICON_REQUIRE(sigma_p.size() == n && mu_q.size() == n && sigma_q.size() == n, "kl_gauss: dimension mismatch");
  ICON_REQUIRE((sigma_p.array() > 0.0).all() && (sigma_q.array() > 0.0).all(), "kl_gauss: sigmas must be positive");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double vp = sigma_p(i) * sigma_p(i);
    const double vq = sigma_q(i) * sigma_q(i);
    const double dm = mu_p(i) - mu_q(i);
    kl += std::log(sigma_q(i) / sigma_p(i)) + (vp + dm * dm) / (2.0 * vq) - 0.5;
  }
  return kl;
}

double kl_align_value(const FlowParams& ata, const FlowParams& pta, const std::vector<const Matrix*>& batches) {
  ICON_REQUIRE(!batches.empty(), "kl_align: no task batches");
  ICON_REQUIRE(ata.N == pta.N && ata.K == pta.K, "kl_align: model dimensions differ");
  const Vector sp = ata.log_sigma().array().exp();
  const Vector sq = pta.log_sigma().array().exp();
  const Vector log_ratio = pta.log_sigma() - ata.log_sigma();
  const double per_sample_const =
      (log_ratio.array() + sp.array().square() / (2.0 * sq.array().square()) - 0.5).sum();
  const RowVector inv_2vq = (0.5 / sq.array().square()).matrix().transpose();

  double total = 0.0;
  for (const Matrix* x : batches) {
    ICON_REQUIRE(x->rows() > 0, "kl_align: empty task batch");
    const Matrix dm = inverse(ata, *x).leftCols(ata.N) - inverse(pta, *x).leftCols(pta.N);
    const double mean_quad = (dm.array().square().rowwise() * inv_2vq.array()).sum() / static_cast<double>(x->rows());
    total += per_sample_const + mean_quad;
  }
  return total / static_cast<double>(batches.size());
}

AlignGrad kl_align_grad(const FlowParams& ata, const FlowParams& pta, const std::vector<const Matrix*>& batches,
                        const LatentHook& ata_hook) {
  ICON_REQUIRE(!batches.empty(), "kl_align: no task batches");
  ICON_REQUIRE(ata.N == pta.N && ata.K == pta.K, "kl_align: model dimensions differ");
  const int N = ata.N;
  const Vector vp = (2.0 * ata.log_sigma()).array().exp();
  const Vector vq = (2.0 * pta.log_sigma()).array().exp();
  const RowVector inv_vq = vq.cwiseInverse().transpose();

  AlignGrad out;
  out.grad_ata = Vector::Zero(ata.params.values.size());
  out.grad_pta = Vector::Zero(pta.params.values.size());
  Vector g_ls_p = Vector::Zero(N);
  Vector g_ls_q = Vector::Zero(N);
  const double n_tasks = static_cast<double>(batches.size());

  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Matrix* x = batches[b];
    ICON_REQUIRE(x->rows() > 0, "kl_align: empty task batch");
    const double n = static_cast<double>(x->rows());
    const double w = 1.0 / (n_tasks * n);
    const InverseTrace ta = inverse_traced(ata, *x);
    const InverseTrace tq = inverse_traced(pta, *x);
    const Matrix dm = ta.z.leftCols(N) - tq.z.leftCols(N);
    const Matrix dm_scaled = dm.array().rowwise() * inv_vq.array();

    const Vector per_dim = (pta.log_sigma() - ata.log_sigma()).array() + vp.array() / (2.0 * vq.array()) - 0.5;
    out.value += w * (n * per_dim.sum() + 0.5 * (dm.array().square().rowwise() * inv_vq.array()).sum());

    Matrix gz = Matrix::Zero(x->rows(), ata.K);
    gz.leftCols(N) = dm_scaled * w;
    if (ata_hook) out.value += ata_hook(b, ta.z, gz);
    backprop_inverse(ata, ta, gz, out.grad_ata);
    gz.setZero();
    gz.leftCols(N) = -dm_scaled * w;
    backprop_inverse(pta, tq, gz, out.grad_pta);

    const Vector sq_sum = dm.array().square().colwise().sum().transpose();
    g_ls_p += w * (n * (vp.array() / vq.array() - 1.0)).matrix();
    g_ls_q += w * (n * (1.0 - vp.array() / vq.array()) - sq_sum.array() / vq.array()).matrix();
  }
  out.grad_ata.segment(static_cast<Eigen::Index>(ata.log_sigma_offset()), N) += g_ls_p;
  out.grad_pta.segment(static_cast<Eigen::Index>(pta.log_sigma_offset()), N) += g_ls_q;
  return out;
}

double kl_align(const ModelBank& bank, int t, const std::vector<TaskDataset>& data) {
  return kl_align_value(bank.ata, bank.pta_at(t), observations(tasks_up_to(data, t)));
}

double forgetting_from_loglik(const std::vector<Vector>& pta_loglik, const std::vector<Vector>& ata_loglik) {
  ICON_REQUIRE(!pta_loglik.empty() && pta_loglik.size() == ata_loglik.size(), "forgetting: task count mismatch");
  double total = 0.0;
  for (std::size_t t = 0; t < pta_loglik.size(); ++t) {
    ICON_REQUIRE(pta_loglik[t].size() == ata_loglik[t].size() && pta_loglik[t].size() > 0,
                 "forgetting: sample count mismatch");
    total += (pta_loglik[t] - ata_loglik[t]).mean();
  }
  return total / static_cast<double>(pta_loglik.size());
}

double forgetting(const ModelBank& bank, const std::vector<TaskDataset>& test_data) {
  std::vector<Vector> pta_ll, ata_ll;
  for (const auto& d : test_data) {
    pta_ll.push_back(log_likelihood(bank.pta_at(d.task_id), d.X));
    ata_ll.push_back(log_likelihood(bank.ata, d.X));
  }
  return forgetting_from_loglik(pta_ll, ata_ll);
}

Matrix normalize_rows(const Matrix& m, const char* what) {
  const Vector norms = m.rowwise().norm();
  if (m.rows() > 0 && !(norms.array() > 0.0).all())
    throw ContractError(std::string(what) + ": zero-norm row");
  return norms.cwiseInverse().asDiagonal() * m;
}

Matrix nce_similarity(const Matrix& z_hat, const NceHead& head, const Matrix& class_emb) {
  const Matrix e = normalize_rows(head.project(z_hat), "nce projected latent");
  return e * normalize_rows(class_emb, "class embedding").transpose();
}

namespace {

void check_labels(const std::vector<int>& labels, Eigen::Index n, Eigen::Index n_classes) {
  ICON_REQUIRE(static_cast<Eigen::Index>(labels.size()) == n, "nce_loss: label count differs from batch size");
  for (int y : labels) ICON_REQUIRE(y >= 0 && y < n_classes, "nce_loss: label outside the class embedding table");
}

}  // namespace

double nce_loss(const Matrix& z_hat, const NceHead& head, const std::vector<int>& labels, const Matrix& class_emb,
                double tau) {
  ICON_REQUIRE(tau > 0.0, "nce_loss: tau must be positive");
  check_labels(labels, z_hat.rows(), class_emb.rows());
  const Matrix logits = nce_similarity(z_hat, head, class_emb) / tau;
  double total = 0.0;
  for (Eigen::Index k = 0; k < logits.rows(); ++k) {
    const double m = logits.row(k).maxCoeff();
    const double lse = m + std::log((logits.row(k).array() - m).exp().sum());
    total += lse - logits(k, labels[static_cast<std::size_t>(k)]);
  }
  return total;
}

NceGrad nce_loss_grad(const Matrix& z_hat, const NceHead& head, const std::vector<int>& labels,
                      const Matrix& class_emb, double tau) {
  ICON_REQUIRE(tau > 0.0, "nce_loss: tau must be positive");
  check_labels(labels, z_hat.rows(), class_emb.rows());
  Mlp::Cache cache;
  const Matrix e = head.project(z_hat, &cache);
  const Vector norms = e.rowwise().norm();
  if (e.rows() > 0 && !(norms.array() > 0.0).all()) throw ContractError("nce projected latent: zero-norm row");
  const Matrix u = norms.cwiseInverse().asDiagonal() * e;
  const Matrix c = normalize_rows(class_emb, "class embedding");
  const Matrix logits = (u * c.transpose()) / tau;

  NceGrad out;
  Matrix g_logits(logits.rows(), logits.cols());
  for (Eigen::Index k = 0; k < logits.rows(); ++k) {
    const double m = logits.row(k).maxCoeff();
    const RowVector p = (logits.row(k).array() - m).exp();
    const double z = p.sum();
    const auto y = labels[static_cast<std::size_t>(k)];
    out.value += m + std::log(z) - logits(k, y);
    g_logits.row(k) = p / z;
    g_logits(k, y) -= 1.0;
  }
  // d/d e of u = e/|e|:  (I - u u^T) / |e|
  const Matrix g_u = (g_logits / tau) * c;
  const Vector radial = (g_u.array() * u.array()).rowwise().sum();
  Matrix g_e = g_u - radial.asDiagonal() * u;
  g_e = norms.cwiseInverse().asDiagonal() * g_e;

  out.grad_head = Vector::Zero(head.params.values.size());
  out.grad_z = head.mlp.backward(head.params.values, cache, g_e, out.grad_head);
  return out;
}

Vector backprop_posterior_mean(const FlowParams& f, const InverseTrace& trace, const Matrix& grad_mu) {
  ICON_REQUIRE(grad_mu.cols() == f.N, "backprop_posterior_mean: gradient width differs from latent dim");
  Matrix gz = Matrix::Zero(grad_mu.rows(), f.K);
  gz.leftCols(f.N) = grad_mu;
  Vector grad = Vector::Zero(f.params.values.size());
  backprop_inverse(f, trace, gz, grad);
  return grad;
}

}  // namespace icon
