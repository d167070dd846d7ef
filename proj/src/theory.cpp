#include "icon/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace icon {

const char* cloud_source_name(CloudSource s) {
  switch (s) {
    case CloudSource::kPta:
      return "PTA";
    case CloudSource::kAta:
      return "ATA";
    case CloudSource::kTruth:
      return "ground-truth";
    case CloudSource::kOther:
      break;
  }
  return "other";
}

void LatentCloud::validate(const char* what) const {
  ICON_REQUIRE(points.rows() >= 1 && points.cols() >= 1, std::string(what) + ": cloud is empty");
  require_finite(points, what);
}

namespace {

void require_same_dim(const LatentCloud& a, const LatentCloud& b, const char* what) {
  ICON_REQUIRE(a.dim() == b.dim(), std::string(what) + ": clouds differ in dimension");
}

double sq_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

struct UnionFind {
  std::vector<std::size_t> parent;
  std::size_t components;

  explicit UnionFind(std::size_t n) : parent(n), components(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }

  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    parent[std::max(a, b)] = std::min(a, b);
    --components;
  }
};

}  // namespace

double manifold_distance(const LatentCloud& a, const LatentCloud& b) {
  a.validate("manifold_distance");
  b.validate("manifold_distance");
  require_same_dim(a, b, "manifold_distance");
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j) best = std::min(best, sq_dist(a.points, i, b.points, j));
  return std::sqrt(best);
}

NearestPoint nearest_in_cloud(const Vector& z, const LatentCloud& c) {
  c.validate("nearest_in_cloud");
  ICON_REQUIRE(z.size() == c.dim(), "nearest_in_cloud: query dimension differs from cloud");
  NearestPoint out;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const double d = (c.points.row(i).transpose() - z).squaredNorm();
    if (d < best) {
      best = d;
      out.index = i;
    }
  }
  out.point = c.points.row(out.index).transpose();
  out.distance = std::sqrt(best);
  return out;
}

LatentCloud intersection_estimate(const LatentCloud& a, const LatentCloud& b, double eps) {
  ICON_REQUIRE(eps > 0.0, "intersection_estimate: eps must be positive");
  a.validate("intersection_estimate");
  b.validate("intersection_estimate");
  require_same_dim(a, b, "intersection_estimate");
  const double eps2 = eps * eps;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j)
      if (sq_dist(a.points, i, b.points, j) <= eps2) pairs.emplace_back(i, j);
  LatentCloud out;
  out.source = CloudSource::kOther;
  out.task_id = a.task_id;
  out.points.resize(static_cast<Eigen::Index>(pairs.size()), a.dim());
  for (std::size_t k = 0; k < pairs.size(); ++k)
    out.points.row(static_cast<Eigen::Index>(k)) = 0.5 * (a.points.row(pairs[k].first) + b.points.row(pairs[k].second));
  return out;
}

bool connectivity_check(const LatentCloud& c, double eps) {
  ICON_REQUIRE(eps > 0.0, "connectivity_check: eps must be positive");
  c.validate("connectivity_check");
  const auto n = static_cast<std::size_t>(c.size());
  UnionFind uf(n);
  const double eps2 = eps * eps;
  for (std::size_t i = 0; i < n && uf.components > 1; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (sq_dist(c.points, static_cast<Eigen::Index>(i), c.points, static_cast<Eigen::Index>(j)) <= eps2) uf.unite(i, j);
  return uf.components == 1;
}

double nn_distance_quantile(const LatentCloud& c, double q) {
  ICON_REQUIRE(q >= 0.0 && q <= 1.0, "nn_distance_quantile: q must lie in [0, 1]");
  c.validate("nn_distance_quantile");
  const Eigen::Index n = c.size();
  if (n == 1) return 0.0;
  std::vector<double> nn(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = sq_dist(c.points, i, c.points, j);
      nn[static_cast<std::size_t>(i)] = std::min(nn[static_cast<std::size_t>(i)], d);
      nn[static_cast<std::size_t>(j)] = std::min(nn[static_cast<std::size_t>(j)], d);
    }
  std::sort(nn.begin(), nn.end());
  // Linear interpolation between order statistics.
  const double pos = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, nn.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return (1.0 - frac) * std::sqrt(nn[lo]) + frac * std::sqrt(nn[hi]);
}

double line_integral_check(const VectorMap& g, const Vector& z, const Vector& z1, int n_steps) {
  ICON_REQUIRE(n_steps >= 1, "line_integral_check: need at least one step");
  ICON_REQUIRE(z.size() == z1.size(), "line_integral_check: endpoints differ in dimension");
  const Vector h1 = z1 - z;
  const Vector lhs = g(z1) - g(z);
  require_finite(lhs, "line_integral_check");
  Vector rhs = Vector::Zero(lhs.size());
  for (int k = 0; k <= n_steps; ++k) {
    const double lambda = static_cast<double>(k) / n_steps;
    const Vector p = lambda * z + (1.0 - lambda) * z1;
    const double w = (k == 0 || k == n_steps) ? 0.5 : 1.0;
    rhs += w * (finite_diff_jacobian(g, p) * h1);
  }
  rhs /= static_cast<double>(n_steps);
  const double scale = std::max(lhs.norm(), std::numeric_limits<double>::min());
  return (lhs - rhs).norm() / scale;
}

Assumption5Result assumption5_check(const VectorMap& g, const LatentCloud& z1, const LatentCloud& z2,
                                    const LatentCloud& intersection, int samples, RngStream& rng) {
  ICON_REQUIRE(samples >= 1, "assumption5_check: need at least one sample");
  z1.validate("assumption5_check (Z1)");
  z2.validate("assumption5_check (Z2)");
  intersection.validate("assumption5_check (intersection)");
  require_same_dim(z1, z2, "assumption5_check");
  require_same_dim(z1, intersection, "assumption5_check");

  Assumption5Result r;
  Matrix pooled(z1.size() + z2.size(), z1.dim());
  pooled << z1.points, z2.points;
  const auto n_pool = static_cast<std::size_t>(pooled.rows());
  const std::size_t n_jac = std::min(n_pool, static_cast<std::size_t>(samples));
  const auto pick = n_jac == n_pool ? rng.permutation(n_pool) : rng.sample_without_replacement(n_pool, n_jac);
  for (std::size_t k = 0; k < n_jac; ++k) {
    const Matrix jac = finite_diff_jacobian(g, pooled.row(static_cast<Eigen::Index>(pick[k])).transpose());
    r.spectral_bound = std::max(r.spectral_bound, spectral_norm(jac));
  }
  if (!(r.spectral_bound > 0.0)) throw NumericDomainError("assumption5_check: map has a zero Jacobian on the sample");

  r.cloud_distance = manifold_distance(z1, z2);
  r.bound = r.cloud_distance / (2.0 * r.spectral_bound);

  r.outside_distances.reserve(n_pool);
  for (Eigen::Index i = 0; i < pooled.rows(); ++i) {
    const double d = nearest_in_cloud(pooled.row(i).transpose(), intersection).distance;
    r.outside_distances.push_back(d);
    r.max_outside_distance = std::max(r.max_outside_distance, d);
  }
  r.slack = r.bound - r.max_outside_distance;

  // z1 = z + h1, z2 = z + h2 around the intersection point nearest to z1.
  for (int k = 0; k < samples; ++k) {
    const Vector p1 = z1.points.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(z1.size())))).transpose();
    const Vector p2 = z2.points.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(z2.size())))).transpose();
    const Vector z = nearest_in_cloud(p1, intersection).point;
    const double h = std::max((p1 - z).norm(), (p2 - z).norm());
    ++r.n_pairs;
    if (h >= r.bound) ++r.n_pairs_inequality_holds;
  }
  return r;
}

BoundingBox bounding_box(const Matrix& points) {
  ICON_REQUIRE(points.rows() >= 1, "bounding_box: no points");
  require_finite(points, "bounding_box");
  return {points.colwise().minCoeff().transpose(), points.colwise().maxCoeff().transpose()};
}

bool TheoremReport::assumption1() const {
  if (line_integral_residuals.empty()) return false;
  return std::all_of(line_integral_residuals.begin(), line_integral_residuals.end(),
                     [this](double r) { return std::isfinite(r) && r < line_integral_tol; });
}

namespace {

nlohmann::json box_json(const BoundingBox& b) {
  return {{"lo", std::vector<double>(b.lo.data(), b.lo.data() + b.lo.size())},
          {"hi", std::vector<double>(b.hi.data(), b.hi.data() + b.hi.size())}};
}

}  // namespace

nlohmann::json TheoremReport::to_json() const {
  nlohmann::json a5 = nullptr;
  if (assumption5) {
    const auto& r = *assumption5;
    a5 = {{"spectral_bound", r.spectral_bound},
          {"cloud_distance", r.cloud_distance},
          {"bound", r.bound},
          {"max_outside_distance", r.max_outside_distance},
          {"slack", r.slack},
          {"n_pairs", r.n_pairs},
          {"n_pairs_inequality_holds", r.n_pairs_inequality_holds}};
  }
  nlohmann::json j = {
      {"manifold_distance", manifold_distance},
      {"intersection", {{"size", intersection_size}, {"eps", intersection_eps}}},
      {"connectivity",
       {{"connected_a", connected_a}, {"connected_b", connected_b}, {"eps_a", connectivity_eps_a}, {"eps_b", connectivity_eps_b}}},
      {"line_integral", {{"residuals", line_integral_residuals}, {"tolerance", line_integral_tol}}},
      {"latent_box", box_json(latent_box)},
      {"observation_box", observation_box ? box_json(*observation_box) : nlohmann::json(nullptr)},
      {"assumption5", a5},
      {"assumptions",
       {{"1_smooth_map", assumption1()},
        {"2_nonempty_intersection", assumption2()},
        {"3_connected", assumption3()},
        {"4_compact", assumption4()},
        {"5_distance_bound", assumption5_ok()}}},
      {"notes", notes}};
  return j;
}

TheoremReport verify_theorem(const VectorMap& g, const LatentCloud& a, const LatentCloud& b, const Matrix* observations,
                             const VerifyOptions& opts, RngStream& rng) {
  ICON_REQUIRE(opts.intersection_eps > 0.0, "verify: intersection eps must be positive");
  ICON_REQUIRE(opts.line_integral_steps >= 1 && opts.line_integral_segments >= 0 && opts.samples >= 1,
               "verify: invalid step or sample counts");
  a.validate("verify (cloud a)");
  b.validate("verify (cloud b)");
  require_same_dim(a, b, "verify");

  TheoremReport rep;
  rep.line_integral_tol = opts.line_integral_tol;
  rep.manifold_distance = manifold_distance(a, b);

  const LatentCloud inter = intersection_estimate(a, b, opts.intersection_eps);
  rep.intersection_size = static_cast<int>(inter.size());
  rep.intersection_eps = opts.intersection_eps;

  rep.connectivity_eps_a = opts.connectivity_eps > 0.0 ? opts.connectivity_eps : 3.0 * nn_distance_quantile(a, 0.95);
  rep.connectivity_eps_b = opts.connectivity_eps > 0.0 ? opts.connectivity_eps : 3.0 * nn_distance_quantile(b, 0.95);
  // A single point (or duplicate points) is trivially connected.
  rep.connected_a = a.size() == 1 || rep.connectivity_eps_a == 0.0 || connectivity_check(a, rep.connectivity_eps_a);
  rep.connected_b = b.size() == 1 || rep.connectivity_eps_b == 0.0 || connectivity_check(b, rep.connectivity_eps_b);

  for (int s = 0; s < opts.line_integral_segments; ++s) {
    const Vector z = a.points.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(a.size())))).transpose();
    const Vector z1 = b.points.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(b.size())))).transpose();
    if ((z1 - z).norm() == 0.0) {
      rep.notes.push_back("line integral: degenerate segment skipped");
      continue;
    }
    rep.line_integral_residuals.push_back(line_integral_check(g, z, z1, opts.line_integral_steps));
  }

  Matrix both(a.size() + b.size(), a.dim());
  both << a.points, b.points;
  rep.latent_box = bounding_box(both);
  if (observations) rep.observation_box = bounding_box(*observations);

  if (inter.size() == 0) {
    rep.notes.push_back("assumption 2 fails at eps " + std::to_string(opts.intersection_eps) +
                        ": no cross-cloud pair within eps; assumption 5 not evaluated");
    return rep;
  }
  if (b.size() < 3) {
    rep.notes.push_back("assumption 5 needs at least three points in cloud b");
    return rep;
  }
  // Split b at the median of its first principal coordinate.
  const Matrix proj = pca_project(b.points, 1);
  std::vector<std::size_t> order(static_cast<std::size_t>(b.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return proj(static_cast<Eigen::Index>(i), 0) < proj(static_cast<Eigen::Index>(j), 0);
  });
  const std::size_t half = order.size() / 2;
  LatentCloud b1{gather_rows(b.points, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half)}), b.source, b.task_id};
  LatentCloud b2{gather_rows(b.points, {order.begin() + static_cast<std::ptrdiff_t>(half), order.end()}), b.source, b.task_id};
  rep.assumption5 = assumption5_check(g, b1, b2, inter, opts.samples, rng);
  return rep;
}

}  // namespace icon
