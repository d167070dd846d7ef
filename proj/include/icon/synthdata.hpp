#pragma once

#include <utility>
#include <vector>

#include "icon/objectives.hpp"
#include "json.hpp"

namespace icon {

struct SynthSpec {
  int n_tasks = 4;
  int n_per_task = 10000;
  int d_inv = 8;   // task-invariant latent dims, N(0, I) in every task
  int d_var = 8;   // task-specific latent dims, N(mu_t, sigma_t^2 I)
  int K = 16;      // observation dims
  double mu_lo = -4.0, mu_hi = 4.0;
  double var_lo = 0.1, var_hi = 1.0;
  double test_fraction = 0.1;
  double leaky_slope = 0.2;
  double max_condition = 100.0;
  std::uint64_t seed = 0;

  int latent_dim() const { return d_inv + d_var; }
  void validate() const;
};

struct TaskLatentParams {
  Vector mu;   // d_var
  Vector var;  // d_var
};

// Two square layers, x = W2 act(W1 z + b1) + b2, with the smooth leaky
// activation act(u) = a u + (1 - a) softplus(u). act' lies in (a, 1), so every
// layer is a global diffeomorphism when W1, W2 are nonsingular.
struct MixerParams {
  Matrix w1, w2;
  Vector b1, b2;
  double slope = 0.2;

  Matrix apply(const Matrix& z) const;
  Matrix invert(const Matrix& x) const;
  Vector apply(const Vector& z) const;
  Matrix jacobian(const Vector& z) const;  // analytic
  std::uint64_t hash() const;
};

double smooth_leaky(double u, double slope);
double smooth_leaky_inverse(double y, double slope);

std::vector<TaskLatentParams> gen_task_params(const SynthSpec& spec, RngStream& rng);
Matrix gen_latents(const SynthSpec& spec, const TaskLatentParams& params, int n, RngStream& rng);
MixerParams make_mixer(const SynthSpec& spec, RngStream& rng);

struct GeneratedData {
  std::vector<TaskDataset> train;
  std::vector<TaskDataset> test;
  std::vector<TaskLatentParams> task_params;
  MixerParams mixer;
  nlohmann::json manifest;
};

GeneratedData generate(const SynthSpec& spec);

nlohmann::json mixer_to_json(const MixerParams& m);
MixerParams mixer_from_json(const nlohmann::json& j);

}  // namespace icon
