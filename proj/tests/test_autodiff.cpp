#include <gtest/gtest.h>

#include "icon/autodiff.hpp"

using namespace icon;

namespace {

DifferentiableLoss quadratic() {
  DifferentiableLoss l;
  l.value_and_grad = [](const Vector& p) { return LossGrad{0.5 * p.squaredNorm(), p}; };
  return l;
}

DifferentiableLoss mlp_loss(const Mlp& mlp, const Matrix& x, const Matrix& target) {
  DifferentiableLoss l;
  l.value_and_grad = [mlp, x, target](const Vector& p) {
    Mlp::Cache cache;
    const Matrix y = mlp.forward(p, x, &cache);
    const Matrix r = y - target;
    LossGrad out{0.5 * r.squaredNorm() / static_cast<double>(x.rows()), Vector::Zero(p.size())};
    mlp.backward(p, cache, r / static_cast<double>(x.rows()), out.grad);
    return out;
  };
  return l;
}

}  // namespace

TEST(Autodiff, QuadraticGradientIsParams) {
  RngStream rng(1, 0);
  const Vector p = rng.normal_matrix(10, 1).col(0);
  const LossGrad lg = value_and_grad(quadratic(), p);
  EXPECT_LT((lg.grad - p).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(grad_check(quadratic(), p, 10, rng), 1e-9);
}

TEST(Autodiff, LinearLossGradientIsCoefficient) {
  RngStream rng(2, 0);
  const Vector c = rng.normal_matrix(6, 1).col(0);
  DifferentiableLoss l;
  l.value_and_grad = [c](const Vector& p) { return LossGrad{c.dot(p), c}; };
  const LossGrad lg = value_and_grad(l, Vector::Zero(6));
  EXPECT_EQ(lg.grad, c);
  EXPECT_LT(grad_check(l, Vector::Ones(6), 6, rng), 1e-9);
}

TEST(Autodiff, CorruptedGradientIsDetected) {
  RngStream rng(3, 0);
  DifferentiableLoss l;
  l.value_and_grad = [](const Vector& p) {
    Vector g = p;
    g(2) = 0.0;
    return LossGrad{0.5 * p.squaredNorm(), g};
  };
  Vector p = Vector::Constant(5, 1.0);
  EXPECT_GT(grad_check(l, p, 5, rng), 1e-2);
}

TEST(Autodiff, MlpBackwardMatchesFiniteDifferences) {
  ParamLayout layout;
  const Mlp mlp = Mlp::append_to(layout, "net", {3, 7, 5, 2});
  ParamVector pv(layout);
  RngStream rng(4, 0);
  mlp.init(pv.values, rng, false);
  const Matrix x = rng.normal_matrix(9, 3), target = rng.normal_matrix(9, 2);
  EXPECT_LT(grad_check(mlp_loss(mlp, x, target), pv.values, 25, rng), 1e-6);
}

TEST(Autodiff, MlpInputGradient) {
  ParamLayout layout;
  const Mlp mlp = Mlp::append_to(layout, "net", {4, 6, 3});
  ParamVector pv(layout);
  RngStream rng(5, 0);
  mlp.init(pv.values, rng, false);
  const Matrix x = rng.normal_matrix(1, 4);
  Mlp::Cache cache;
  mlp.forward(pv.values, x, &cache);
  Vector dummy = Vector::Zero(pv.values.size());
  const Matrix gx = mlp.backward(pv.values, cache, Matrix::Ones(1, 3), dummy);
  const VectorMap f = [&](const Vector& v) {
    return Vector::Constant(1, mlp.forward(pv.values, Matrix(v.transpose())).sum());
  };
  const Matrix j = finite_diff_jacobian(f, x.row(0).transpose());
  EXPECT_LT((j - gx).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Autodiff, GradientOfSumIsSumOfGradients) {
  ParamLayout layout;
  const Mlp mlp = Mlp::append_to(layout, "net", {3, 5, 2});
  ParamVector pv(layout);
  RngStream rng(6, 0);
  mlp.init(pv.values, rng, false);
  const Matrix x1 = rng.normal_matrix(4, 3), x2 = rng.normal_matrix(6, 3);
  const Matrix t1 = rng.normal_matrix(4, 2), t2 = rng.normal_matrix(6, 2);
  const auto l1 = mlp_loss(mlp, x1, t1), l2 = mlp_loss(mlp, x2, t2);
  DifferentiableLoss sum;
  sum.value_and_grad = [l1, l2](const Vector& p) {
    LossGrad a = l1.value_and_grad(p), b = l2.value_and_grad(p);
    return LossGrad{a.value + b.value, a.grad + b.grad};
  };
  const Vector gs = value_and_grad(sum, pv.values).grad;
  const Vector ga = value_and_grad(l1, pv.values).grad, gb = value_and_grad(l2, pv.values).grad;
  EXPECT_LT((gs - ga - gb).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Autodiff, ValueAndGradRejectsBadResults) {
  DifferentiableLoss wrong_len;
  wrong_len.value_and_grad = [](const Vector&) { return LossGrad{0.0, Vector::Zero(2)}; };
  EXPECT_THROW(value_and_grad(wrong_len, Vector::Zero(3)), ContractError);
  DifferentiableLoss nan_val;
  nan_val.value_and_grad = [](const Vector& p) { return LossGrad{std::nan(""), p}; };
  EXPECT_THROW(value_and_grad(nan_val, Vector::Zero(3)), NumericDomainError);
}

TEST(Autodiff, LayoutOffsetsAreContiguous) {
  ParamLayout layout;
  EXPECT_EQ(layout.add("a", 2, 3), 0u);
  EXPECT_EQ(layout.add("b", 4), 6u);
  EXPECT_EQ(layout.total(), 10u);
  EXPECT_THROW(layout.at("missing"), ContractError);
  ParamVector pv(layout);
  pv.matrix("a")(1, 2) = 5.0;
  EXPECT_EQ(pv.values(5), 5.0);
}
