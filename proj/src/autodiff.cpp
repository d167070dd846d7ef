#include "icon/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace icon {

std::size_t ParamLayout::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  ICON_REQUIRE(!contains(name), "ParamLayout: duplicate segment " + name);
  ICON_REQUIRE(rows >= 0 && cols >= 0, "ParamLayout: negative shape");
  Segment s{name, total_, rows, cols};
  total_ += s.size();
  segments_.push_back(s);
  return s.offset;
}

const Segment& ParamLayout::at(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw ContractError("ParamLayout: no segment named " + name);
}

bool ParamLayout::contains(const std::string& name) const {
  return std::any_of(segments_.begin(), segments_.end(), [&](const Segment& s) { return s.name == name; });
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (total_ != other.total_ || segments_.size() != other.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& a = segments_[i];
    const auto& b = other.segments_[i];
    if (a.name != b.name || a.offset != b.offset || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

Eigen::Map<Matrix> ParamVector::matrix(const std::string& name) {
  const auto& s = layout.at(name);
  return {values.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Matrix> ParamVector::matrix(const std::string& name) const {
  const auto& s = layout.at(name);
  return {values.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<Vector> ParamVector::segment(const std::string& name) {
  const auto& s = layout.at(name);
  return {values.data() + s.offset, static_cast<Eigen::Index>(s.size())};
}

Eigen::Map<const Vector> ParamVector::segment(const std::string& name) const {
  const auto& s = layout.at(name);
  return {values.data() + s.offset, static_cast<Eigen::Index>(s.size())};
}

double DifferentiableLoss::evaluate(const Vector& params) const {
  if (value) return value(params);
  return value_and_grad(params).value;
}

LossGrad value_and_grad(const DifferentiableLoss& loss, const Vector& params) {
  ICON_REQUIRE(static_cast<bool>(loss.value_and_grad), "value_and_grad: loss has no gradient routine");
  LossGrad out = loss.value_and_grad(params);
  if (out.grad.size() != params.size())
    throw ContractError("value_and_grad: gradient length does not match parameter length");
  if (!std::isfinite(out.value) || !out.grad.allFinite())
    throw NumericDomainError("value_and_grad: non-finite loss or gradient");
  return out;
}

double grad_check(const DifferentiableLoss& loss, const Vector& params, int n_coords, RngStream& rng) {
  const LossGrad lg = value_and_grad(loss, params);
  const auto n = static_cast<std::size_t>(params.size());
  const std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(n_coords, 0)));
  const auto coords = rng.sample_without_replacement(n, k);

  Vector probe = params;
  double worst = 0.0;
  for (std::size_t j : coords) {
    const auto idx = static_cast<Eigen::Index>(j);
    const double h = 1e-5 * std::max(1.0, std::abs(params(idx)));
    probe(idx) = params(idx) + h;
    const double fp = loss.evaluate(probe);
    probe(idx) = params(idx) - h;
    const double fm = loss.evaluate(probe);
    probe(idx) = params(idx);
    const double fd = (fp - fm) / (2.0 * h);
    const double ad = lg.grad(idx);
    const double mag = std::max(std::abs(fd), std::abs(ad));
    const double err = mag < 1e-6 ? std::abs(fd - ad) : std::abs(fd - ad) / mag;
    worst = std::max(worst, err);
  }
  return worst;
}

Mlp Mlp::append_to(ParamLayout& layout, const std::string& prefix, std::vector<Eigen::Index> sizes) {
  ICON_REQUIRE(sizes.size() >= 2, "Mlp: need at least input and output sizes");
  const std::size_t offset = layout.total();
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    layout.add(prefix + ".w" + std::to_string(l), sizes[l + 1], sizes[l]);
    layout.add(prefix + ".b" + std::to_string(l), sizes[l + 1]);
  }
  return {std::move(sizes), offset};
}

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
    n += static_cast<std::size_t>(sizes_[l + 1] * sizes_[l] + sizes_[l + 1]);
  return n;
}

Matrix Mlp::forward(const Vector& params, const Matrix& x, Cache* cache) const {
  ICON_REQUIRE(x.cols() == sizes_.front(), "Mlp::forward: input width mismatch");
  const double* p = params.data() + offset_;
  Matrix a = x;
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(a);
  }
  const std::size_t n_layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Eigen::Index in = sizes_[l], out = sizes_[l + 1];
    Eigen::Map<const Matrix> w(p, out, in);
    Eigen::Map<const RowVector> b(p + out * in, out);
    p += out * in + out;
    Matrix z = a * w.transpose();
    z.rowwise() += b;
    if (l + 1 < n_layers) z = tanh_array(z.array()).matrix();
    a = std::move(z);
    if (cache && l + 1 < n_layers) cache->activations.push_back(a);
  }
  return a;
}

Matrix Mlp::backward(const Vector& params, const Cache& cache, const Matrix& grad_out, Vector& grad) const {
  const std::size_t n_layers = sizes_.size() - 1;
  ICON_REQUIRE(cache.activations.size() == n_layers, "Mlp::backward: cache does not match network");

  std::vector<std::size_t> offsets(n_layers);
  std::size_t off = offset_;
  for (std::size_t l = 0; l < n_layers; ++l) {
    offsets[l] = off;
    off += static_cast<std::size_t>(sizes_[l + 1] * sizes_[l] + sizes_[l + 1]);
  }

  Matrix g = grad_out;  // gradient w.r.t. the pre-activation of layer l
  for (std::size_t li = n_layers; li-- > 0;) {
    const Eigen::Index in = sizes_[li], out = sizes_[li + 1];
    const Matrix& a_in = cache.activations[li];
    Eigen::Map<const Matrix> w(params.data() + offsets[li], out, in);
    Eigen::Map<Matrix> gw(grad.data() + offsets[li], out, in);
    Eigen::Map<RowVector> gb(grad.data() + offsets[li] + out * in, out);
    gw.noalias() += g.transpose() * a_in;
    gb += g.colwise().sum();
    Matrix g_in = g * w;
    if (li > 0) {
      // a_in = tanh(pre) for hidden layers
      g_in.array() *= (1.0 - a_in.array().square());
    }
    g = std::move(g_in);
  }
  return g;
}

void Mlp::init(Vector& params, RngStream& rng, bool zero_last) const {
  std::size_t off = offset_;
  const std::size_t n_layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Eigen::Index in = sizes_[l], out = sizes_[l + 1];
    const double bound = in > 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : 0.0;
    const bool zero = zero_last && l + 1 == n_layers;
    for (Eigen::Index i = 0; i < out * in + out; ++i)
      params(static_cast<Eigen::Index>(off) + i) = zero ? 0.0 : rng.uniform(-bound, bound);
    off += static_cast<std::size_t>(out * in + out);
  }
}

}  // namespace icon
