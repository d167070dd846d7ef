#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "icon/errors.hpp"

namespace icon {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Named stream ids. Every random draw in the library comes from one of these
// streams derived from the top-level run seed.
enum class Stream : std::uint64_t {
  kTaskParams = 1,
  kLatents = 2,
  kMixer = 3,
  kSplit = 4,
  kFlowInit = 10,
  kBatches = 11,
  kReplay = 12,
  kHeadInit = 13,
  kExport = 20,
  kEmbeddings = 30,
  kTheory = 40,
  kGradCheck = 50,
};

/// Deterministic random stream keyed by (seed, stream id).
///
/// Built on std::mt19937_64, whose output sequence is fixed by the standard.
/// Distribution transforms are implemented here rather than through
/// <random> distributions, which are allowed to differ between standard
/// libraries.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);
  RngStream(std::uint64_t seed, Stream stream) : RngStream(seed, static_cast<std::uint64_t>(stream)) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal();
  std::size_t index(std::size_t n);       // uniform in [0, n)

  // Derive an independent child stream, e.g. one per task or per worker.
  RngStream split(std::uint64_t child_id);

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);
  std::vector<std::size_t> permutation(std::size_t n);
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

using VectorMap = std::function<Vector(const Vector&)>;

double default_fd_step(const Vector& x);

// Central-difference Jacobian; entry (i, j) = (f(x + h e_j)_i - f(x - h e_j)_i) / 2h.
// h <= 0 selects default_fd_step(x).
Matrix finite_diff_jacobian(const VectorMap& f, const Vector& x, double h = -1.0);

// Largest singular value by power iteration on M^T M.
double spectral_norm(const Matrix& m);

double rmse(const Matrix& a, const Matrix& b);

double pearson(const Vector& a, const Vector& b);

// Projection onto the top-k principal axes of the centered cloud. Each axis is
// sign-fixed so that its largest-magnitude loading is positive.
Matrix pca_project(const Matrix& points, int k = 2);

// Throws NumericDomainError naming `what` if any entry is NaN or Inf.
void require_finite(const Matrix& m, const char* what);
void require_finite(const Vector& v, const char* what);

// Elementwise tanh through the vectorized exp: 1 - 2 / (exp(2x) + 1).
// Absolute error below 1e-15; saturates cleanly at +-1.
template <typename Derived>
Eigen::ArrayXXd tanh_array(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 - 2.0 / ((2.0 * x.derived().template cast<double>()).exp() + 1.0);
}

// Select rows by index.
Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows);

}  // namespace icon
