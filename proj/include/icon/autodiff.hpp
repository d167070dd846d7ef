#pragma once

#include <functional>
#include <string>
#include <vector>

#include "icon/numerics.hpp"

namespace icon {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 1;
  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

// Name -> (offset, shape) table over a flat parameter array. Segments are laid
// out back to back in insertion order.
class ParamLayout {
 public:
  std::size_t add(const std::string& name, Eigen::Index rows, Eigen::Index cols = 1);
  const Segment& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t total() const { return total_; }

  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

struct ParamVector {
  ParamLayout layout;
  Vector values;

  ParamVector() = default;
  explicit ParamVector(ParamLayout l) : layout(std::move(l)), values(Vector::Zero(static_cast<Eigen::Index>(layout.total()))) {}

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  Eigen::Map<Matrix> matrix(const std::string& name);
  Eigen::Map<const Matrix> matrix(const std::string& name) const;
  Eigen::Map<Vector> segment(const std::string& name);
  Eigen::Map<const Vector> segment(const std::string& name) const;
};

struct LossGrad {
  double value = 0.0;
  Vector grad;
};

// A scalar loss of a flat parameter vector. `value_and_grad` must return the
// exact reverse-mode derivative of the computation it performs; `value` is an
// optional cheaper evaluation used by finite-difference checks.
struct DifferentiableLoss {
  std::function<LossGrad(const Vector&)> value_and_grad;
  std::function<double(const Vector&)> value;

  double evaluate(const Vector& params) const;
};

// Evaluates the loss and validates the result (finite value, finite gradient
// of matching length).
LossGrad value_and_grad(const DifferentiableLoss& loss, const Vector& params);

/// Worst relative error between the reverse-mode gradient and central
/// differences over `n_coords` randomly chosen coordinates. Below gradient
/// magnitude 1e-6 the absolute error is used instead.
double grad_check(const DifferentiableLoss& loss, const Vector& params, int n_coords, RngStream& rng);

/// Multi-layer perceptron over weights stored in an external flat array.
/// Hidden layers use tanh; the output layer is affine. Weight matrices are
/// stored row-major as [out x in], followed by the bias [out].
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<Eigen::Index> sizes, std::size_t offset) : sizes_(std::move(sizes)), offset_(offset) {}

  // Appends `prefix.w{l}` / `prefix.b{l}` segments and returns the view.
  static Mlp append_to(ParamLayout& layout, const std::string& prefix, std::vector<Eigen::Index> sizes);

  struct Cache {
    std::vector<Matrix> activations;  // activations[0] is the input
  };

  Matrix forward(const Vector& params, const Matrix& x, Cache* cache = nullptr) const;

  // Accumulates parameter gradients into `grad` (same layout as params) and
  // returns the gradient with respect to the input.
  Matrix backward(const Vector& params, const Cache& cache, const Matrix& grad_out, Vector& grad) const;

  // Scaled-uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the final layer
  // is zeroed when `zero_last` is set.
  void init(Vector& params, RngStream& rng, bool zero_last) const;

  std::size_t num_params() const;
  Eigen::Index in_dim() const { return sizes_.front(); }
  Eigen::Index out_dim() const { return sizes_.back(); }
  std::size_t offset() const { return offset_; }

 private:
  std::vector<Eigen::Index> sizes_;
  std::size_t offset_ = 0;
};

}  // namespace icon
