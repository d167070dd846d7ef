#pragma once

#include <filesystem>
#include <vector>

#include "icon/autodiff.hpp"
#include "icon/numerics.hpp"

namespace icon {

// Volume-preserving invertible network built from affine coupling blocks whose
// per-sample log-scales are centered to sum to zero.
//
// Block b maps u -> v: y = P_b u (y_i = u_{perm[i]}), the first ceil(K/2)
// coordinates of y condition a subnet producing raw scales and translations
// for the remaining floor(K/2), and
//   s = 2 tanh(s_raw) - mean(2 tanh(s_raw)),   y2' = y2 * exp(s) + t.
// The flow's forward direction maps latents to observations.
struct FlowParams {
  int K = 0;
  int N = 0;
  int n_blocks = 0;
  int width = 0;
  std::vector<std::vector<int>> permutations;
  ParamVector params;  // block{b}.w{l}, block{b}.b{l}, ..., log_sigma

  int cond_dim() const { return (K + 1) / 2; }
  int trans_dim() const { return K / 2; }
  Mlp subnet(int block) const;
  std::size_t log_sigma_offset() const { return params.layout.at("log_sigma").offset; }
  Eigen::Map<const Vector> log_sigma() const { return params.segment("log_sigma"); }
  Eigen::Map<Vector> log_sigma() { return params.segment("log_sigma"); }

  bool operator==(const FlowParams& other) const;
};

struct FlowOptions {
  int n_blocks = 8;
  int width = 64;
  double init_sigma = 0.1;
};

ParamLayout flow_layout(int K, int N, int n_blocks, int width);

FlowParams init_flow(int K, int N, const FlowOptions& options, RngStream& rng);

Matrix forward(const FlowParams& f, const Matrix& z);
Matrix inverse(const FlowParams& f, const Matrix& x);

// Per-block, per-sample sum of the applied log-scales along the forward pass;
// n x n_blocks. Zero up to rounding by construction.
Matrix applied_log_scale_sums(const FlowParams& f, const Matrix& z);

struct GaussianPosterior {
  Matrix mu;       // n x N
  Vector log_sigma;  // N

  Vector sigma() const { return log_sigma.array().exp(); }
  Eigen::Index dim() const { return log_sigma.size(); }
};

GaussianPosterior posterior(const FlowParams& f, const Matrix& x);

// Per-sample log p(x) under a standard-normal base; the log-determinant is zero.
Vector log_likelihood(const FlowParams& f, const Matrix& x);

// Per-sample standard-normal log density of the rows of z.
Vector std_normal_log_density(const Matrix& z);

// Intermediates of an inverse pass, kept for backpropagation.
struct InverseTrace {
  struct Block {
    Mlp::Cache cache;
    Matrix scale_pre;  // subnet scale outputs before tanh
    Matrix scale;      // centered log-scales s
    Matrix y2;         // recovered transformed half
  };
  std::vector<Block> blocks;  // indexed by block id
  Matrix z;
};

InverseTrace inverse_traced(const FlowParams& f, const Matrix& x);

// Given dL/dz for z = inverse(f, x), accumulates dL/dparams into `grad`
// (length f.params.size()). The log_sigma segment is untouched.
void backprop_inverse(const FlowParams& f, const InverseTrace& trace, const Matrix& grad_z, Vector& grad);

// Replaces every subnet weight with U(-scale, scale) noise. Used to produce
// non-trivial flows for tests and oracles.
void randomize_flow(FlowParams& f, RngStream& rng, double scale);

// Binary checkpoint: dims header, permutations, layout table, then the flat
// parameter array as little-endian float64.
void save_flow(const FlowParams& f, const std::filesystem::path& path);
FlowParams load_flow(const std::filesystem::path& path);

}  // namespace icon
