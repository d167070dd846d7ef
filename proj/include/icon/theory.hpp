#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icon/numerics.hpp"
#include "json.hpp"

namespace icon {

enum class CloudSource { kPta, kAta, kTruth, kOther };

const char* cloud_source_name(CloudSource s);

// Finite sample of a latent manifold.
struct LatentCloud {
  Matrix points;  // n x N
  CloudSource source = CloudSource::kOther;
  int task_id = 0;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
  // Non-empty and finite.
  void validate(const char* what) const;
};

// Minimum pairwise Euclidean distance (exact O(n m) scan).
double manifold_distance(const LatentCloud& a, const LatentCloud& b);

struct NearestPoint {
  Vector point;
  Eigen::Index index = 0;
  double distance = 0.0;
};

// Closest cloud point to z; ties go to the lowest index.
NearestPoint nearest_in_cloud(const Vector& z, const LatentCloud& c);

// Midpoints of all cross-cloud pairs closer than eps.
LatentCloud intersection_estimate(const LatentCloud& a, const LatentCloud& b, double eps);

// True iff the eps-neighbourhood graph over the cloud has one component.
bool connectivity_check(const LatentCloud& c, double eps);

// q-quantile over points of the distance to the nearest other point (0 if n = 1).
double nn_distance_quantile(const LatentCloud& c, double q);

// Relative residual of g(z1) - g(z) against the trapezoid-rule integral of the
// finite-difference Jacobian along the segment from z1 to z, applied to z1 - z.
double line_integral_check(const VectorMap& g, const Vector& z, const Vector& z1, int n_steps);

struct Assumption5Result {
  double spectral_bound = 0.0;  // J: max spectral norm of sampled Jacobians
  double cloud_distance = 0.0;  // D(Z1, Z2)
  double bound = 0.0;           // D / (2 J)
  double max_outside_distance = 0.0;
  double slack = 0.0;           // bound - max_outside_distance
  std::vector<double> outside_distances;  // per point of Z1 then Z2
  int n_pairs = 0;                        // constructed (h1, h2) pairs
  int n_pairs_inequality_holds = 0;       // max(|h1|, |h2|) >= bound
  bool holds() const { return slack >= 0.0; }
};

// `samples` bounds the number of Jacobian evaluation points and (h1, h2) pairs.
Assumption5Result assumption5_check(const VectorMap& g, const LatentCloud& z1, const LatentCloud& z2,
                                    const LatentCloud& intersection, int samples, RngStream& rng);

struct BoundingBox {
  Vector lo, hi;
};

BoundingBox bounding_box(const Matrix& points);

struct VerifyOptions {
  double intersection_eps = 0.1;
  double connectivity_eps = -1.0;  // <= 0: 3x the 95th-percentile nearest-neighbour distance
  int line_integral_steps = 1000;
  int line_integral_segments = 5;
  double line_integral_tol = 1e-3;
  int samples = 200;
};

struct TheoremReport {
  double manifold_distance = 0.0;
  int intersection_size = 0;
  double intersection_eps = 0.0;
  bool connected_a = false, connected_b = false;
  double connectivity_eps_a = 0.0, connectivity_eps_b = 0.0;
  std::vector<double> line_integral_residuals;
  std::optional<BoundingBox> observation_box;
  BoundingBox latent_box;
  std::optional<Assumption5Result> assumption5;  // unset when the intersection is empty
  std::vector<std::string> notes;

  bool assumption1() const;  // smooth map: every line-integral residual within tolerance
  bool assumption2() const { return intersection_size > 0; }
  bool assumption3() const { return connected_a && connected_b; }
  bool assumption4() const { return true; }  // finite samples always fit in the reported box
  bool assumption5_ok() const { return assumption5 && assumption5->holds(); }
  double line_integral_tol = 1e-3;

  nlohmann::json to_json() const;
};

// Checks the theorem's assumptions for clouds a (partial-task) and b
// (all-task) under map g. b is split into two halves at the median of its
// first principal coordinate to form the sub-manifolds of assumption 5.
// `observations` (optional) supplies the compactness box.
TheoremReport verify_theorem(const VectorMap& g, const LatentCloud& a, const LatentCloud& b,
                             const Matrix* observations, const VerifyOptions& opts, RngStream& rng);

}  // namespace icon
