#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "icon/objectives.hpp"
#include "json.hpp"

namespace icon {

// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
// potentials). Returns assignment[row] = column.
std::vector<int> hungarian_min_cost(const Matrix& cost);

struct AlignmentReport {
  Vector matched;       // |Pearson| of the matched pair, per dim of the first input
  std::vector<int> assignment;
  double mean = 0.0;
  std::vector<std::string> warnings;
};

// Absolute correlation matrix between the dims of a and b, optimally matched
// one-to-one. Constant dims score 0 with a warning.
AlignmentReport alignment_report(const Matrix& a, const Matrix& b);

struct RecoveryFit {
  Matrix coef;       // (d_hat + 1) x d_true, last row is the intercept
  double r2 = 0.0;   // uniform average over true dims
  bool regularized = false;
};

// Least-squares affine fit z_true ~ z_hat A + b.
RecoveryFit fit_affine(const Matrix& z_hat, const Matrix& z_true);
Matrix apply_affine(const RecoveryFit& fit, const Matrix& z_hat);
double recovery_r2(const Matrix& z_hat, const Matrix& z_true);

// RMSE between X and forward(flow, z') where z' = inverse(flow, X) with the
// designated latent coordinates replaced by `latent_mean` (noise coordinates
// pass through). Without an override the posterior mean is used.
double reconstruction_rmse(const FlowParams& flow, const Matrix& x);
double reconstruction_rmse(const FlowParams& flow, const Matrix& x, const Matrix& latent_mean);

// Latent-recovery RMSE: one affine map from the model's posterior mean to the
// ground-truth latents, fitted on the pooled `fit_data`, scored on `eval_data`.
RecoveryFit fit_recovery(const FlowParams& flow, const std::vector<const TaskDataset*>& fit_data);
double recovery_rmse(const FlowParams& flow, const RecoveryFit& fit, const TaskDataset& eval_data);
double latent_recovery_rmse(const FlowParams& flow, const std::vector<const TaskDataset*>& fit_data,
                            const TaskDataset& eval_data);
double latent_recovery_rmse(const FlowParams& flow, const TaskDataset& fit_data, const TaskDataset& eval_data);

struct Table1 {
  double pta_without_kl = 0.0;
  double ata_without_kl = 0.0;
  double pta_with_kl = 0.0;
  double ata_with_kl = 0.0;
  std::vector<double> per_task_pta_without_kl, per_task_ata_without_kl, per_task_pta_with_kl, per_task_ata_with_kl;

  double ata_improvement() const { return 1.0 - ata_with_kl / ata_without_kl; }
  nlohmann::json to_json() const;
};

struct TableArm {
  double pta = 0.0;
  double ata = 0.0;
  std::vector<double> per_task_pta, per_task_ata;
};

// Average latent-recovery RMSE over tasks for one trained bank. pta[t] is read
// out with a map fitted on tasks 1..t, the final ATA model with one map fitted
// on every task; both are scored on the test split of task t.
TableArm table1_arm(const ModelBank& bank, const std::vector<TaskDataset>& train, const std::vector<TaskDataset>& test);
Table1 table1(const ModelBank& bank_with_kl, const ModelBank& bank_without_kl, const std::vector<TaskDataset>& train,
              const std::vector<TaskDataset>& test);

struct ScatterExport {
  Matrix points;  // rows of (x, y)
  std::vector<std::string> setup;  // "PTA" / "ATA"
  std::vector<int> task;
  std::vector<std::string> warnings;
  std::string projection = "pca-pooled";
};

ScatterExport make_scatter(const ModelBank& bank, const std::vector<TaskDataset>& data, int n, RngStream& rng);
std::string scatter_csv(const ScatterExport& s);
std::string scatter_svg(const ScatterExport& s);
// Writes <stem>.csv and <stem>.svg into dir.
void export_scatter(const ScatterExport& s, const std::filesystem::path& dir, const std::string& stem);

// Euclidean distance between PTA and ATA cloud centroids divided by the pooled
// per-axis standard deviation (root mean of the two axis variances).
double scatter_centroid_gap(const ScatterExport& s, int task);

}  // namespace icon
