#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "icon/numerics.hpp"

namespace icon::oracle {

// One-sided Jacobi SVD; returns singular values in descending order.
inline std::vector<double> jacobi_singular_values(Matrix a) {
  const Eigen::Index n = a.cols();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double alpha = a.col(p).squaredNorm();
        const double beta = a.col(q).squaredNorm();
        const double gamma = a.col(p).dot(a.col(q));
        if (gamma == 0.0) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        const Vector cp = a.col(p), cq = a.col(q);
        a.col(p) = c * cp - s * cq;
        a.col(q) = s * cp + c * cq;
      }
    }
    if (off < 1e-15) break;
  }
  std::vector<double> sv;
  for (Eigen::Index j = 0; j < n; ++j) sv.push_back(a.col(j).norm());
  std::sort(sv.rbegin(), sv.rend());
  return sv;
}

inline double naive_rmse(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  return std::sqrt(s / static_cast<double>(a.size()));
}

inline double naive_std_normal_logpdf(const Vector& z) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) s += -0.5 * z(i) * z(i) - 0.5 * std::log(2.0 * M_PI);
  return s;
}

inline double naive_kl_gauss(const Vector& mp, const Vector& sp, const Vector& mq, const Vector& sq) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < mp.size(); ++i) {
    const double d = mp(i) - mq(i);
    s += std::log(sq(i) / sp(i)) + (sp(i) * sp(i) + d * d) / (2.0 * sq(i) * sq(i)) - 0.5;
  }
  return s;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("icon_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace icon::oracle
