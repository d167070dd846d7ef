#include "icon/synthdata.hpp"

#include <cmath>
#include <cstring>

namespace icon {

void SynthSpec::validate() const {
  ICON_REQUIRE(n_tasks >= 1, "SynthSpec: need at least one task");
  ICON_REQUIRE(n_per_task >= 2, "SynthSpec: need at least two samples per task");
  ICON_REQUIRE(d_inv >= 0 && d_var >= 0 && d_inv + d_var >= 1, "SynthSpec: invalid latent split");
  ICON_REQUIRE(latent_dim() == K, "SynthSpec: the square mixer needs d_inv + d_var == K");
  ICON_REQUIRE(mu_lo <= mu_hi, "SynthSpec: mu range not ordered");
  ICON_REQUIRE(var_lo > 0.0 && var_lo <= var_hi, "SynthSpec: variance range must be positive and ordered");
  ICON_REQUIRE(test_fraction > 0.0 && test_fraction < 1.0, "SynthSpec: test fraction must lie in (0, 1)");
  ICON_REQUIRE(leaky_slope > 0.0 && leaky_slope < 1.0, "SynthSpec: leaky slope must lie in (0, 1)");
  ICON_REQUIRE(max_condition > 1.0, "SynthSpec: condition bound must exceed 1");
}

double smooth_leaky(double u, double slope) {
  // numerically stable softplus
  const double sp = u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
  return slope * u + (1.0 - slope) * sp;
}

namespace {

double sigmoid(double u) { return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }

double smooth_leaky_grad(double u, double slope) { return slope + (1.0 - slope) * sigmoid(u); }

Matrix draw_conditioned(int d, double max_condition, RngStream& rng, int& attempts) {
  for (attempts = 1; attempts <= 100; ++attempts) {
    Matrix w = rng.normal_matrix(d, d) / std::sqrt(static_cast<double>(d));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
    const auto& s = svd.singularValues();
    if (s(d - 1) > 0.0 && s(0) / s(d - 1) < max_condition) return w;
  }
  throw GenerationError("make_mixer: could not draw a weight matrix under the condition bound in 100 attempts");
}

}  // namespace

double smooth_leaky_inverse(double y, double slope) {
  // act is increasing and convex, so Newton from the right of the root
  // converges monotonically.
  double u = std::max(y, y / slope) + 1.0;
  for (int i = 0; i < 200; ++i) {
    const double step = (smooth_leaky(u, slope) - y) / smooth_leaky_grad(u, slope);
    u -= step;
    if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(u))) break;
  }
  return u;
}

Matrix MixerParams::apply(const Matrix& z) const {
  Matrix h = z * w1.transpose();
  h.rowwise() += b1.transpose();
  h = h.unaryExpr([this](double u) { return smooth_leaky(u, slope); });
  Matrix x = h * w2.transpose();
  x.rowwise() += b2.transpose();
  return x;
}

Vector MixerParams::apply(const Vector& z) const {
  const Matrix out = apply(Matrix(z.transpose()));
  return out.row(0).transpose();
}

Matrix MixerParams::invert(const Matrix& x) const {
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu2{Eigen::MatrixXd(w2)};
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu1{Eigen::MatrixXd(w1)};
  Eigen::MatrixXd shifted = (x.rowwise() - b2.transpose()).transpose();
  Eigen::MatrixXd h = lu2.solve(shifted);
  h = h.unaryExpr([this](double y) { return smooth_leaky_inverse(y, slope); });
  h.colwise() -= b1;
  return Matrix(lu1.solve(h).transpose());
}

Matrix MixerParams::jacobian(const Vector& z) const {
  const Vector pre = w1 * z + b1;
  Vector d(pre.size());
  for (Eigen::Index i = 0; i < pre.size(); ++i) d(i) = smooth_leaky_grad(pre(i), slope);
  return w2 * d.asDiagonal() * w1;
}

std::uint64_t MixerParams::hash() const {
  // FNV-1a over the raw float64 bytes of every parameter.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const double* p, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (Eigen::Index i = 0; i < n * static_cast<Eigen::Index>(sizeof(double)); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  feed(w1.data(), w1.size());
  feed(b1.data(), b1.size());
  feed(w2.data(), w2.size());
  feed(b2.data(), b2.size());
  feed(&slope, 1);
  return h;
}

std::vector<TaskLatentParams> gen_task_params(const SynthSpec& spec, RngStream& rng) {
  spec.validate();
  std::vector<TaskLatentParams> out;
  for (int t = 0; t < spec.n_tasks; ++t) {
    TaskLatentParams p{Vector(spec.d_var), Vector(spec.d_var)};
    for (int i = 0; i < spec.d_var; ++i) p.mu(i) = rng.uniform(spec.mu_lo, spec.mu_hi);
    for (int i = 0; i < spec.d_var; ++i) p.var(i) = rng.uniform(spec.var_lo, spec.var_hi);
    out.push_back(std::move(p));
  }
  return out;
}

Matrix gen_latents(const SynthSpec& spec, const TaskLatentParams& params, int n, RngStream& rng) {
  ICON_REQUIRE(n >= 1, "gen_latents: n must be positive");
  ICON_REQUIRE(params.mu.size() == spec.d_var && params.var.size() == spec.d_var, "gen_latents: task params size");
  Matrix z(n, spec.latent_dim());
  for (int r = 0; r < n; ++r) {
    for (int i = 0; i < spec.d_inv; ++i) z(r, i) = rng.normal();
    for (int i = 0; i < spec.d_var; ++i) z(r, spec.d_inv + i) = params.mu(i) + std::sqrt(params.var(i)) * rng.normal();
  }
  return z;
}

MixerParams make_mixer(const SynthSpec& spec, RngStream& rng) {
  spec.validate();
  MixerParams m;
  m.slope = spec.leaky_slope;
  int attempts = 0;
  m.w1 = draw_conditioned(spec.K, spec.max_condition, rng, attempts);
  m.w2 = draw_conditioned(spec.K, spec.max_condition, rng, attempts);
  m.b1 = Vector::Zero(spec.K);
  m.b2 = Vector::Zero(spec.K);
  return m;
}

nlohmann::json mixer_to_json(const MixerParams& m) {
  auto mat = [](const Matrix& a) {
    return std::vector<double>(a.data(), a.data() + a.size());
  };
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"dim", m.w1.rows()}, {"slope", m.slope},   {"w1", mat(m.w1)}, {"b1", vec(m.b1)},
          {"w2", mat(m.w2)},    {"b2", vec(m.b2)},    {"hash", m.hash()}};
}

MixerParams mixer_from_json(const nlohmann::json& j) {
  MixerParams m;
  const auto d = j.at("dim").get<Eigen::Index>();
  m.slope = j.at("slope").get<double>();
  auto mat = [d](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != d * d) throw IngestionError("mixer: weight size mismatch");
    return Matrix(Eigen::Map<const Matrix>(v.data(), d, d));
  };
  auto vec = [d](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != d) throw IngestionError("mixer: bias size mismatch");
    return Vector(Eigen::Map<const Vector>(v.data(), d));
  };
  m.w1 = mat(j.at("w1"));
  m.w2 = mat(j.at("w2"));
  m.b1 = vec(j.at("b1"));
  m.b2 = vec(j.at("b2"));
  if (j.contains("hash") && j.at("hash").get<std::uint64_t>() != m.hash())
    throw IngestionError("mixer: stored hash does not match parameters");
  return m;
}

GeneratedData generate(const SynthSpec& spec) {
  spec.validate();
  GeneratedData out;
  RngStream param_rng(spec.seed, Stream::kTaskParams);
  RngStream mixer_rng(spec.seed, Stream::kMixer);
  RngStream latent_rng(spec.seed, Stream::kLatents);
  RngStream split_rng(spec.seed, Stream::kSplit);

  out.task_params = gen_task_params(spec, param_rng);
  out.mixer = make_mixer(spec, mixer_rng);

  const int n_test = std::max(1, static_cast<int>(std::lround(spec.test_fraction * spec.n_per_task)));
  nlohmann::json tasks = nlohmann::json::array();
  for (int t = 1; t <= spec.n_tasks; ++t) {
    const auto& tp = out.task_params[static_cast<std::size_t>(t - 1)];
    const Matrix z = gen_latents(spec, tp, spec.n_per_task, latent_rng);
    const Matrix x = out.mixer.apply(z);
    require_finite(x, "generated observations");

    const auto order = split_rng.permutation(static_cast<std::size_t>(spec.n_per_task));
    const std::vector<std::size_t> test_rows(order.begin(), order.begin() + n_test);
    const std::vector<std::size_t> train_rows(order.begin() + n_test, order.end());
    for (auto [rows, split, dest] : {std::tuple{&train_rows, "train", &out.train}, std::tuple{&test_rows, "test", &out.test}}) {
      TaskDataset d;
      d.task_id = t;
      d.split = split;
      d.X = gather_rows(x, *rows);
      d.z_true = gather_rows(z, *rows);
      dest->push_back(std::move(d));
    }
    tasks.push_back({{"task", t},
                     {"mu", std::vector<double>(tp.mu.data(), tp.mu.data() + tp.mu.size())},
                     {"var", std::vector<double>(tp.var.data(), tp.var.data() + tp.var.size())},
                     {"n_train", train_rows.size()},
                     {"n_test", test_rows.size()}});
  }

  out.manifest = {
      {"kind", "synthetic"},
      {"seed", spec.seed},
      {"streams", {{"task_params", static_cast<int>(Stream::kTaskParams)},
                   {"latents", static_cast<int>(Stream::kLatents)},
                   {"mixer", static_cast<int>(Stream::kMixer)},
                   {"split", static_cast<int>(Stream::kSplit)}}},
      {"spec", {{"n_tasks", spec.n_tasks},
                {"n_per_task", spec.n_per_task},
                {"d_inv", spec.d_inv},
                {"d_var", spec.d_var},
                {"K", spec.K},
                {"mu_range", {spec.mu_lo, spec.mu_hi}},
                {"var_range", {spec.var_lo, spec.var_hi}},
                {"test_fraction", spec.test_fraction},
                {"leaky_slope", spec.leaky_slope},
                {"max_condition", spec.max_condition}}},
      {"tasks", tasks},
      {"mixer_hash", out.mixer.hash()},
  };
  return out;
}

}  // namespace icon
