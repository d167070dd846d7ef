#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icon/flow.hpp"

namespace icon {

struct TaskDataset {
  int task_id = 1;
  Matrix X;                                // n x K observations
  std::optional<Matrix> z_true;            // n x N ground-truth latents
  std::optional<std::vector<int>> labels;  // class ids
  std::string split = "train";

  Eigen::Index size() const { return X.rows(); }
  // n_classes < 0 skips the label range check.
  void validate(int n_classes = -1) const;
  TaskDataset subset(const std::vector<std::size_t>& rows) const;
};

// Projection head for the contrastive classifier: N -> hidden (tanh) -> out.
struct NceHead {
  ParamVector params;
  Mlp mlp;

  Matrix project(const Matrix& z_hat, Mlp::Cache* cache = nullptr) const { return mlp.forward(params.values, z_hat, cache); }
};

NceHead init_head(int latent_dim, int hidden, int out_dim, RngStream& rng);

struct ModelBank {
  FlowParams ata;
  std::map<int, FlowParams> pta;  // task id -> partial-task model, keys 1..T
  std::optional<NceHead> head;

  // Shared dimensions and a contiguous key range starting at 1.
  void validate() const;
  const FlowParams& pta_at(int t) const;
};

// Looks up the datasets for tasks 1..t (in task order); throws if one is missing.
std::vector<const TaskDataset*> tasks_up_to(const std::vector<TaskDataset>& data, int t);

// Extra loss attached to the latents of one flow. Called once per batch with
// the inverse-pass output z (n x K); adds its gradient into grad_z and returns
// its loss contribution.
using LatentHook = std::function<double(std::size_t batch, const Matrix& z, Matrix& grad_z)>;

// Negative task-averaged mean log-likelihood: -(1/T) sum_t mean_x log p_f(x).
double mle_loss(const FlowParams& f, const std::vector<const Matrix*>& batches);
LossGrad mle_loss_grad(const FlowParams& f, const std::vector<const Matrix*>& batches,
                       const LatentHook& hook = nullptr);

double loss_pta(const ModelBank& bank, int t, const std::vector<TaskDataset>& data);
double loss_ata(const FlowParams& ata, const std::vector<TaskDataset>& data);

// Closed-form KL(N(mu_p, diag sigma_p^2) || N(mu_q, diag sigma_q^2)).
double kl_gauss(const Vector& mu_p, const Vector& sigma_p, const Vector& mu_q, const Vector& sigma_q);

struct AlignGrad {
  double value = 0.0;
  Vector grad_ata;
  Vector grad_pta;
};

// (1/t) sum_i mean_x KL(q_ata(x) || q_pta(x)) over the given per-task batches.
double kl_align_value(const FlowParams& ata, const FlowParams& pta, const std::vector<const Matrix*>& batches);
// `ata_hook` attaches an extra loss to the ATA latents.
AlignGrad kl_align_grad(const FlowParams& ata, const FlowParams& pta, const std::vector<const Matrix*>& batches,
                        const LatentHook& ata_hook = nullptr);

double kl_align(const ModelBank& bank, int t, const std::vector<TaskDataset>& data);

// Mean over tasks of the per-sample log-likelihood gap log p_pta[t] - log p_ata.
double forgetting(const ModelBank& bank, const std::vector<TaskDataset>& test_data);
double forgetting_from_loglik(const std::vector<Vector>& pta_loglik, const std::vector<Vector>& ata_loglik);

// Unit-normalized rows; throws on a zero row.
Matrix normalize_rows(const Matrix& m, const char* what);

struct NceGrad {
  double value = 0.0;  // summed over the batch
  Vector grad_head;
  Matrix grad_z;
};

// Cosine similarity between projected latents and class embeddings, n x C.
Matrix nce_similarity(const Matrix& z_hat, const NceHead& head, const Matrix& class_emb);

double nce_loss(const Matrix& z_hat, const NceHead& head, const std::vector<int>& labels, const Matrix& class_emb,
                double tau);
NceGrad nce_loss_grad(const Matrix& z_hat, const NceHead& head, const std::vector<int>& labels,
                      const Matrix& class_emb, double tau);

// Gradient of the contrastive loss through the ATA posterior mean:
// returns dL/d(flow params) for L evaluated on z_hat = mu_ata(x).
Vector backprop_posterior_mean(const FlowParams& f, const InverseTrace& trace, const Matrix& grad_mu);

}  // namespace icon
