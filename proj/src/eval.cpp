#include "icon/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace icon {

std::vector<int> hungarian_min_cost(const Matrix& cost) {
  ICON_REQUIRE(cost.rows() == cost.cols(), "hungarian: cost matrix must be square");
  require_finite(cost, "hungarian cost");
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] is the row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return assignment;
}

AlignmentReport alignment_report(const Matrix& a, const Matrix& b) {
  ICON_REQUIRE(a.rows() == b.rows() && a.cols() == b.cols(), "alignment_report: shapes differ");
  ICON_REQUIRE(a.rows() >= 2, "alignment_report: need at least two samples");
  const Eigen::Index d = a.cols();
  AlignmentReport rep;

  auto standardize = [&rep](const Matrix& m, const char* which) {
    Matrix c = m.rowwise() - m.colwise().mean();
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      const double norm = c.col(j).norm();
      if (norm == 0.0) {
        rep.warnings.push_back(std::string(which) + " dim " + std::to_string(j) + " is constant; scored 0");
        c.col(j).setZero();
      } else {
        c.col(j) /= norm;
      }
    }
    return c;
  };
  const Matrix sa = standardize(a, "first input");
  const Matrix sb = standardize(b, "second input");
  const Matrix corr = (sa.transpose() * sb).cwiseAbs().cwiseMin(1.0);

  rep.assignment = hungarian_min_cost(-corr);
  rep.matched.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) rep.matched(i) = corr(i, rep.assignment[static_cast<std::size_t>(i)]);
  rep.mean = d > 0 ? rep.matched.mean() : 0.0;
  return rep;
}

RecoveryFit fit_affine(const Matrix& z_hat, const Matrix& z_true) {
  ICON_REQUIRE(z_hat.rows() == z_true.rows(), "recovery: sample counts differ");
  ICON_REQUIRE(z_hat.rows() >= 2, "recovery: need at least two samples");
  Eigen::MatrixXd design(z_hat.rows(), z_hat.cols() + 1);
  design.leftCols(z_hat.cols()) = z_hat;
  design.col(z_hat.cols()).setOnes();
  const Eigen::MatrixXd target = z_true;

  RecoveryFit fit;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() == design.cols()) {
    fit.coef = qr.solve(target);
  } else {
    fit.regularized = true;
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().array() += 1e-8;
    fit.coef = gram.ldlt().solve(design.transpose() * target);
  }

  const Matrix pred = design * Eigen::MatrixXd(fit.coef);
  double total = 0.0;
  for (Eigen::Index j = 0; j < z_true.cols(); ++j) {
    const double ss_res = (z_true.col(j) - pred.col(j)).squaredNorm();
    const double ss_tot = (z_true.col(j).array() - z_true.col(j).mean()).matrix().squaredNorm();
    total += ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  }
  fit.r2 = z_true.cols() > 0 ? total / static_cast<double>(z_true.cols()) : 0.0;
  return fit;
}

Matrix apply_affine(const RecoveryFit& fit, const Matrix& z_hat) {
  const Eigen::Index d = z_hat.cols();
  ICON_REQUIRE(fit.coef.rows() == d + 1, "apply_affine: coefficient shape mismatch");
  Matrix out = z_hat * fit.coef.topRows(d);
  out.rowwise() += fit.coef.row(d);
  return out;
}

double recovery_r2(const Matrix& z_hat, const Matrix& z_true) { return fit_affine(z_hat, z_true).r2; }

double reconstruction_rmse(const FlowParams& flow, const Matrix& x, const Matrix& latent_mean) {
  ICON_REQUIRE(x.cols() == flow.K, "reconstruction_rmse: flow dims do not match data");
  ICON_REQUIRE(latent_mean.rows() == x.rows() && latent_mean.cols() == flow.N,
               "reconstruction_rmse: latent mean shape mismatch");
  Matrix z = inverse(flow, x);
  z.leftCols(flow.N) = latent_mean;
  return rmse(x, forward(flow, z));
}

double reconstruction_rmse(const FlowParams& flow, const Matrix& x) {
  return reconstruction_rmse(flow, x, posterior(flow, x).mu);
}

RecoveryFit fit_recovery(const FlowParams& flow, const std::vector<const TaskDataset*>& fit_data) {
  ICON_REQUIRE(!fit_data.empty(), "latent_recovery_rmse: no fit data");
  Eigen::Index rows = 0;
  for (const TaskDataset* d : fit_data) {
    ICON_REQUIRE(d->z_true.has_value(), "latent_recovery_rmse: ground-truth latents required");
    rows += d->size();
  }
  Matrix mu(rows, flow.N), z(rows, fit_data.front()->z_true->cols());
  Eigen::Index r = 0;
  for (const TaskDataset* d : fit_data) {
    ICON_REQUIRE(d->z_true->cols() == z.cols(), "latent_recovery_rmse: latent dimension differs between tasks");
    mu.middleRows(r, d->size()) = posterior(flow, d->X).mu;
    z.middleRows(r, d->size()) = *d->z_true;
    r += d->size();
  }
  return fit_affine(mu, z);
}

double recovery_rmse(const FlowParams& flow, const RecoveryFit& fit, const TaskDataset& eval_data) {
  ICON_REQUIRE(eval_data.z_true.has_value(), "latent_recovery_rmse: ground-truth latents required");
  return rmse(apply_affine(fit, posterior(flow, eval_data.X).mu), *eval_data.z_true);
}

double latent_recovery_rmse(const FlowParams& flow, const std::vector<const TaskDataset*>& fit_data,
                            const TaskDataset& eval_data) {
  return recovery_rmse(flow, fit_recovery(flow, fit_data), eval_data);
}

double latent_recovery_rmse(const FlowParams& flow, const TaskDataset& fit_data, const TaskDataset& eval_data) {
  return latent_recovery_rmse(flow, std::vector<const TaskDataset*>{&fit_data}, eval_data);
}

nlohmann::json Table1::to_json() const {
  return {{"scale", 1.0},
          {"without_kl", {{"pta", pta_without_kl}, {"ata", ata_without_kl}}},
          {"with_kl", {{"pta", pta_with_kl}, {"ata", ata_with_kl}}},
          {"per_task",
           {{"without_kl", {{"pta", per_task_pta_without_kl}, {"ata", per_task_ata_without_kl}}},
            {"with_kl", {{"pta", per_task_pta_with_kl}, {"ata", per_task_ata_with_kl}}}}},
          {"ata_improvement", ata_improvement()}};
}

TableArm table1_arm(const ModelBank& bank, const std::vector<TaskDataset>& train, const std::vector<TaskDataset>& test) {
  ICON_REQUIRE(!test.empty(), "table1: no evaluation data");
  TableArm arm;
  int last = 0;
  for (const auto& d : test) last = std::max(last, d.task_id);
  // One readout per model: pta[t] over the tasks it has seen, ATA over all of them.
  const RecoveryFit ata_fit = fit_recovery(bank.ata, tasks_up_to(train, last));
  for (const auto& d : test) {
    arm.per_task_pta.push_back(latent_recovery_rmse(bank.pta_at(d.task_id), tasks_up_to(train, d.task_id), d));
    arm.per_task_ata.push_back(recovery_rmse(bank.ata, ata_fit, d));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  arm.pta = mean(arm.per_task_pta);
  arm.ata = mean(arm.per_task_ata);
  return arm;
}

Table1 table1(const ModelBank& bank_with_kl, const ModelBank& bank_without_kl, const std::vector<TaskDataset>& train,
              const std::vector<TaskDataset>& test) {
  ICON_REQUIRE(bank_with_kl.ata.K == bank_without_kl.ata.K && bank_with_kl.pta.size() == bank_without_kl.pta.size(),
               "table1: the two arms were trained on different data");
  const TableArm with = table1_arm(bank_with_kl, train, test);
  const TableArm without = table1_arm(bank_without_kl, train, test);
  Table1 t;
  t.pta_with_kl = with.pta;
  t.ata_with_kl = with.ata;
  t.pta_without_kl = without.pta;
  t.ata_without_kl = without.ata;
  t.per_task_pta_with_kl = with.per_task_pta;
  t.per_task_ata_with_kl = with.per_task_ata;
  t.per_task_pta_without_kl = without.per_task_pta;
  t.per_task_ata_without_kl = without.per_task_ata;
  return t;
}

ScatterExport make_scatter(const ModelBank& bank, const std::vector<TaskDataset>& data, int n, RngStream& rng) {
  ICON_REQUIRE(n >= 1, "export_scatter: n must be positive");
  ICON_REQUIRE(!data.empty(), "export_scatter: no data");
  ScatterExport out;
  std::vector<Matrix> clouds;
  for (const auto& d : data) {
    std::vector<std::size_t> rows;
    const auto size = static_cast<std::size_t>(d.X.rows());
    if (static_cast<std::size_t>(n) <= size) {
      rows = rng.sample_without_replacement(size, static_cast<std::size_t>(n));
    } else {
      out.warnings.push_back("task " + std::to_string(d.task_id) + ": " + std::to_string(n) +
                             " points requested from " + std::to_string(size) + "; sampling with replacement");
      for (int i = 0; i < n; ++i) rows.push_back(rng.index(size));
    }
    const Matrix x = gather_rows(d.X, rows);
    clouds.push_back(posterior(bank.pta_at(d.task_id), x).mu);
    clouds.push_back(posterior(bank.ata, x).mu);
    for (const char* setup : {"PTA", "ATA"}) {
      for (int i = 0; i < n; ++i) {
        out.setup.emplace_back(setup);
        out.task.push_back(d.task_id);
      }
    }
  }
  Eigen::Index total = 0;
  for (const auto& c : clouds) total += c.rows();
  Matrix pooled(total, clouds.front().cols());
  Eigen::Index r = 0;
  for (const auto& c : clouds) {
    pooled.middleRows(r, c.rows()) = c;
    r += c.rows();
  }
  out.points = pca_project(pooled, 2);
  return out;
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string scatter_csv(const ScatterExport& s) {
  std::string out = "x,y,setup,task\n";
  for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
    out += fmt_double(s.points(i, 0)) + "," + fmt_double(s.points(i, 1)) + "," + s.setup[static_cast<std::size_t>(i)] +
           "," + std::to_string(s.task[static_cast<std::size_t>(i)]) + "\n";
  }
  return out;
}

std::string scatter_svg(const ScatterExport& s) {
  constexpr double size = 600.0, margin = 20.0;
  const Eigen::Index n = s.points.rows();
  double lo_x = 0, hi_x = 1, lo_y = 0, hi_y = 1;
  if (n > 0) {
    lo_x = s.points.col(0).minCoeff();
    hi_x = s.points.col(0).maxCoeff();
    lo_y = s.points.col(1).minCoeff();
    hi_y = s.points.col(1).maxCoeff();
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-12});
  const double scale = (size - 2 * margin) / span;

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n";
  out += "<rect width=\"600\" height=\"600\" fill=\"white\"/>\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const double cx = margin + (s.points(i, 0) - lo_x) * scale;
    const double cy = size - margin - (s.points(i, 1) - lo_y) * scale;
    const char* color = s.setup[idx] == "PTA" ? "#1f77b4" : "#d62728";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"2\" fill=\"%s\" fill-opacity=\"0.5\" data-task=\"%d\"/>\n",
                  cx, cy, color, s.task[idx]);
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

void export_scatter(const ScatterExport& s, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  for (auto [ext, body] : {std::pair{".csv", scatter_csv(s)}, std::pair{".svg", scatter_svg(s)}}) {
    std::ofstream os(dir / (stem + ext), std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + (dir / (stem + ext)).string());
    os << body;
  }
}

double scatter_centroid_gap(const ScatterExport& s, int task) {
  RowVector sum_p = RowVector::Zero(2), sum_a = RowVector::Zero(2);
  Eigen::Index np = 0, na = 0;
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (s.task[idx] != task) continue;
    rows.push_back(i);
    if (s.setup[idx] == "PTA") {
      sum_p += s.points.row(i);
      ++np;
    } else {
      sum_a += s.points.row(i);
      ++na;
    }
  }
  ICON_REQUIRE(np > 0 && na > 0, "scatter_centroid_gap: task has no points for one setup");
  Matrix pooled(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) pooled.row(static_cast<Eigen::Index>(i)) = s.points.row(rows[i]);
  const RowVector mean = pooled.colwise().mean();
  const double var = (pooled.rowwise() - mean).array().square().sum() / (2.0 * static_cast<double>(pooled.rows()));
  return (sum_p / static_cast<double>(np) - sum_a / static_cast<double>(na)).norm() / std::sqrt(var);
}

}  // namespace icon
