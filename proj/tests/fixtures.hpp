#pragma once

#include <vector>

#include "icon/objectives.hpp"

namespace icon::oracle {

inline FlowParams make_random_flow(int K, int N, int blocks, int width, std::uint64_t seed, double scale = 0.3) {
  RngStream rng(seed, Stream::kFlowInit);
  FlowOptions o;
  o.n_blocks = blocks;
  o.width = width;
  FlowParams f = init_flow(K, N, o, rng);
  randomize_flow(f, rng, scale);
  for (Eigen::Index i = 0; i < N; ++i) f.log_sigma()(i) = rng.uniform(-1.5, 0.5);
  return f;
}

inline std::vector<Matrix> make_batches(int n_tasks, int rows, int K, std::uint64_t seed) {
  RngStream rng(seed, 0);
  std::vector<Matrix> out;
  for (int t = 0; t < n_tasks; ++t) out.push_back(rng.normal_matrix(rows + t, K) + Matrix::Constant(rows + t, K, 0.5 * t));
  return out;
}

inline std::vector<const Matrix*> ptrs(const std::vector<Matrix>& ms) {
  std::vector<const Matrix*> out;
  for (const auto& m : ms) out.push_back(&m);
  return out;
}

// Negative task-averaged MLE as a differentiable function of the flow parameters.
inline DifferentiableLoss mle_objective(const FlowParams& f, const std::vector<Matrix>& batches) {
  DifferentiableLoss l;
  l.value_and_grad = [f, batches](const Vector& p) {
    FlowParams g = f;
    g.params.values = p;
    return mle_loss_grad(g, ptrs(batches));
  };
  l.value = [f, batches](const Vector& p) {
    FlowParams g = f;
    g.params.values = p;
    return mle_loss(g, ptrs(batches));
  };
  return l;
}

// KL alignment over the concatenated [ATA; PTA] parameter vector.
inline DifferentiableLoss kl_objective(const FlowParams& ata, const FlowParams& pta, const std::vector<Matrix>& batches) {
  const Eigen::Index na = ata.params.values.size();
  DifferentiableLoss l;
  l.value_and_grad = [=](const Vector& p) {
    FlowParams a = ata, q = pta;
    a.params.values = p.head(na);
    q.params.values = p.tail(p.size() - na);
    const AlignGrad g = kl_align_grad(a, q, ptrs(batches));
    Vector grad(p.size());
    grad << g.grad_ata, g.grad_pta;
    return LossGrad{g.value, grad};
  };
  l.value = [=](const Vector& p) {
    FlowParams a = ata, q = pta;
    a.params.values = p.head(na);
    q.params.values = p.tail(p.size() - na);
    return kl_align_value(a, q, ptrs(batches));
  };
  return l;
}

inline Vector concat(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

// Contrastive loss on the ATA posterior mean over [flow; head] parameters.
inline DifferentiableLoss nce_objective(const FlowParams& f, const NceHead& head, const Matrix& x,
                                        const std::vector<int>& labels, const Matrix& class_emb, double tau) {
  const Eigen::Index nf = f.params.values.size();
  DifferentiableLoss l;
  l.value_and_grad = [=](const Vector& p) {
    FlowParams g = f;
    NceHead h = head;
    g.params.values = p.head(nf);
    h.params.values = p.tail(p.size() - nf);
    const InverseTrace tr = inverse_traced(g, x);
    const NceGrad ng = nce_loss_grad(tr.z.leftCols(g.N), h, labels, class_emb, tau);
    return LossGrad{ng.value, concat(backprop_posterior_mean(g, tr, ng.grad_z), ng.grad_head)};
  };
  l.value = [=](const Vector& p) {
    FlowParams g = f;
    NceHead h = head;
    g.params.values = p.head(nf);
    h.params.values = p.tail(p.size() - nf);
    return nce_loss(posterior(g, x).mu, h, labels, class_emb, tau);
  };
  return l;
}

}  // namespace icon::oracle
