#include "icon/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace icon {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(splitmix64(seed ^ splitmix64(stream_id + 0x1234567ULL))) {}

double RngStream::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Marsaglia polar method.
  double u = 0.0, v = 0.0, s = 0.0;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * factor;
  has_spare_ = true;
  return u * factor;
}

std::size_t RngStream::index(std::size_t n) {
  ICON_REQUIRE(n > 0, "RngStream::index: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t r = 0;
  do {
    r = engine_();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

RngStream RngStream::split(std::uint64_t child_id) {
  return RngStream(splitmix64(seed_ ^ next_u64()), splitmix64(stream_id_) ^ child_id);
}

Matrix RngStream::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
  return m;
}

std::vector<std::size_t> RngStream::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  // Fisher-Yates with our own index() so the result is portable.
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
  return p;
}

std::vector<std::size_t> RngStream::sample_without_replacement(std::size_t n, std::size_t k) {
  ICON_REQUIRE(k <= n, "sample_without_replacement: k exceeds population");
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(p[i], p[i + index(n - i)]);
  p.resize(k);
  return p;
}

double default_fd_step(const Vector& x) {
  const double scale = x.size() > 0 ? x.cwiseAbs().maxCoeff() : 0.0;
  return 1e-4 * std::max(1.0, scale);
}

Matrix finite_diff_jacobian(const VectorMap& f, const Vector& x, double h) {
  if (h <= 0.0) h = default_fd_step(x);
  Vector xp = x;
  Matrix jac;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp(j) = x(j) + h;
    const Vector fp = f(xp);
    xp(j) = x(j) - h;
    const Vector fm = f(xp);
    xp(j) = x(j);
    if (!fp.allFinite() || !fm.allFinite())
      throw NumericDomainError("finite_diff_jacobian: non-finite function value");
    if (j == 0) jac.resize(fp.size(), x.size());
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  const Matrix gram = m.transpose() * m;
  if (gram.cwiseAbs().maxCoeff() == 0.0) return 0.0;

  RngStream rng(0x5eedULL, 0);
  Vector v(gram.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.1 * rng.normal();
  v.normalize();

  double sigma = 0.0;
  for (int iter = 0; iter < 1000; ++iter) {
    Vector w = gram * v;
    const double norm = w.norm();
    if (norm == 0.0) break;
    v = w / norm;
    // Rayleigh quotient of the Gram matrix is sigma^2.
    const double next = std::sqrt(v.dot(gram * v));
    const double change = std::abs(next - sigma) / std::max(next, 1e-300);
    sigma = next;
    if (change < 1e-10 && iter > 2) break;
  }
  return sigma;
}

double rmse(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError("rmse: shape mismatch");
  if (a.size() == 0) return 0.0;
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

double pearson(const Vector& a, const Vector& b) {
  ICON_REQUIRE(a.size() == b.size(), "pearson: length mismatch");
  ICON_REQUIRE(a.size() >= 2, "pearson: need at least two samples");
  const Vector da = a.array() - a.mean();
  const Vector db = b.array() - b.mean();
  const double va = da.squaredNorm();
  const double vb = db.squaredNorm();
  if (va == 0.0 || vb == 0.0) throw NumericDomainError("pearson: zero variance, correlation undefined");
  const double r = da.dot(db) / std::sqrt(va * vb);
  return std::clamp(r, -1.0, 1.0);
}

Matrix pca_project(const Matrix& points, int k) {
  ICON_REQUIRE(points.rows() > 2, "pca_project: need more than two points");
  ICON_REQUIRE(k >= 1, "pca_project: k must be positive");
  const RowVector mean = points.colwise().mean();
  const Matrix centered = points.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(points.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index d = points.cols();

  Matrix axes = Matrix::Zero(d, k);
  for (int c = 0; c < k && c < d; ++c) {
    // Eigenvalues come out ascending.
    Vector axis = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    axes.col(c) = axis;
  }
  return centered * axes;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericDomainError(std::string(what) + ": non-finite entries");
}

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NumericDomainError(std::string(what) + ": non-finite entries");
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ICON_REQUIRE(static_cast<Eigen::Index>(rows[i]) < m.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace icon
