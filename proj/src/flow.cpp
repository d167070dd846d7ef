#include "icon/flow.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "icon/binio.hpp"

namespace icon {
namespace {

constexpr double kMaxLogScale = 30.0;
constexpr char kFlowMagic[8] = {'I', 'C', 'O', 'N', 'F', 'L', 'O', 'W'};
constexpr std::uint32_t kFlowVersion = 1;

std::string block_prefix(int b) { return "block" + std::to_string(b); }

void check_scale(const Matrix& s) {
  if (!s.allFinite() || (s.size() > 0 && s.cwiseAbs().maxCoeff() > kMaxLogScale))
    throw InstabilityError("flow: coupling log-scale out of range");
}

// y_i = u_{perm[i]}
Matrix permute_cols(const Matrix& u, const std::vector<int>& perm) {
  Matrix y(u.rows(), u.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) y.col(static_cast<Eigen::Index>(i)) = u.col(perm[i]);
  return y;
}

// u_{perm[i]} = y_i
Matrix unpermute_cols(const Matrix& y, const std::vector<int>& perm) {
  Matrix u(y.rows(), y.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) u.col(perm[i]) = y.col(static_cast<Eigen::Index>(i));
  return u;
}

// Centered, bounded log-scales from the raw subnet scale outputs.
Matrix centered_scale(const Matrix& scale_pre) {
  Matrix s = (2.0 * tanh_array(scale_pre.array())).matrix();
  if (s.cols() > 0) {
    const Vector mean = s.rowwise().mean();
    s.colwise() -= mean;
  }
  return s;
}

void check_input(const FlowParams& f, const Matrix& m, const char* what) {
  ICON_REQUIRE(m.cols() == f.K, std::string(what) + ": column count does not match flow dimension");
  require_finite(m, what);
}

}  // namespace

Mlp FlowParams::subnet(int block) const {
  const auto& seg = params.layout.at(block_prefix(block) + ".w0");
  return Mlp({cond_dim(), width, width, 2 * trans_dim()}, seg.offset);
}

bool FlowParams::operator==(const FlowParams& other) const {
  return K == other.K && N == other.N && n_blocks == other.n_blocks && width == other.width &&
         permutations == other.permutations && params.layout == other.params.layout &&
         params.values.size() == other.params.values.size() &&
         (params.values.array() == other.params.values.array()).all();
}

ParamLayout flow_layout(int K, int N, int n_blocks, int width) {
  ParamLayout layout;
  const int c = (K + 1) / 2;
  const int d = K / 2;
  for (int b = 0; b < n_blocks; ++b) Mlp::append_to(layout, block_prefix(b), {c, width, width, 2 * d});
  layout.add("log_sigma", N);
  return layout;
}

FlowParams init_flow(int K, int N, const FlowOptions& options, RngStream& rng) {
  ICON_REQUIRE(K >= 1, "init_flow: K must be at least 1");
  ICON_REQUIRE(N >= 1 && N <= K, "init_flow: need 1 <= N <= K");
  ICON_REQUIRE(options.n_blocks >= 1, "init_flow: need at least one block");
  ICON_REQUIRE(options.width >= 1, "init_flow: width must be positive");
  ICON_REQUIRE(options.init_sigma > 0.0, "init_flow: init_sigma must be positive");

  FlowParams f;
  f.K = K;
  f.N = N;
  f.n_blocks = options.n_blocks;
  f.width = options.width;
  f.params = ParamVector(flow_layout(K, N, options.n_blocks, options.width));
  for (int b = 0; b < f.n_blocks; ++b) {
    const auto p = rng.permutation(static_cast<std::size_t>(K));
    f.permutations.emplace_back(p.begin(), p.end());
    f.subnet(b).init(f.params.values, rng, /*zero_last=*/true);
  }
  f.log_sigma().setConstant(std::log(options.init_sigma));
  return f;
}

Matrix forward(const FlowParams& f, const Matrix& z) {
  check_input(f, z, "flow forward");
  const int c = f.cond_dim(), d = f.trans_dim();
  Matrix u = z;
  for (int b = 0; b < f.n_blocks; ++b) {
    Matrix y = permute_cols(u, f.permutations[b]);
    if (d > 0) {
      const Matrix out = f.subnet(b).forward(f.params.values, y.leftCols(c));
      const Matrix s = centered_scale(out.leftCols(d));
      check_scale(s);
      y.rightCols(d) = (y.rightCols(d).array() * s.array().exp() + out.rightCols(d).array()).matrix();
    }
    u = std::move(y);
  }
  return u;
}

Matrix applied_log_scale_sums(const FlowParams& f, const Matrix& z) {
  check_input(f, z, "applied_log_scale_sums");
  const int c = f.cond_dim(), d = f.trans_dim();
  Matrix sums = Matrix::Zero(z.rows(), f.n_blocks);
  Matrix u = z;
  for (int b = 0; b < f.n_blocks; ++b) {
    Matrix y = permute_cols(u, f.permutations[b]);
    if (d > 0) {
      const Matrix out = f.subnet(b).forward(f.params.values, y.leftCols(c));
      const Matrix s = centered_scale(out.leftCols(d));
      sums.col(b) = s.rowwise().sum();
      y.rightCols(d) = (y.rightCols(d).array() * s.array().exp() + out.rightCols(d).array()).matrix();
    }
    u = std::move(y);
  }
  return sums;
}

InverseTrace inverse_traced(const FlowParams& f, const Matrix& x) {
  check_input(f, x, "flow inverse");
  const int c = f.cond_dim(), d = f.trans_dim();
  InverseTrace trace;
  trace.blocks.resize(static_cast<std::size_t>(f.n_blocks));
  Matrix v = x;
  for (int b = f.n_blocks - 1; b >= 0; --b) {
    auto& blk = trace.blocks[static_cast<std::size_t>(b)];
    Matrix y = v;
    if (d > 0) {
      const Matrix out = f.subnet(b).forward(f.params.values, v.leftCols(c), &blk.cache);
      blk.scale_pre = out.leftCols(d);
      blk.scale = centered_scale(blk.scale_pre);
      check_scale(blk.scale);
      y.rightCols(d) = ((v.rightCols(d) - out.rightCols(d)).array() * (-blk.scale.array()).exp()).matrix();
      blk.y2 = y.rightCols(d);
    }
    v = unpermute_cols(y, f.permutations[b]);
  }
  trace.z = std::move(v);
  return trace;
}

Matrix inverse(const FlowParams& f, const Matrix& x) { return inverse_traced(f, x).z; }

void backprop_inverse(const FlowParams& f, const InverseTrace& trace, const Matrix& grad_z, Vector& grad) {
  ICON_REQUIRE(grad.size() == f.params.values.size(), "backprop_inverse: gradient buffer has wrong length");
  ICON_REQUIRE(grad_z.rows() == trace.z.rows() && grad_z.cols() == f.K, "backprop_inverse: grad_z shape mismatch");
  const int c = f.cond_dim(), d = f.trans_dim();
  Matrix g = grad_z;  // gradient w.r.t. the output of the current inverse block
  for (int b = 0; b < f.n_blocks; ++b) {
    const auto& blk = trace.blocks[static_cast<std::size_t>(b)];
    Matrix gy = permute_cols(g, f.permutations[b]);
    if (d > 0) {
      const Eigen::ArrayXXd inv_scale = (-blk.scale.array()).exp();
      const Eigen::ArrayXXd gy2 = gy.rightCols(d).array();
      Matrix g_out(gy.rows(), 2 * d);
      // y2 = (y2' - t) * exp(-s)
      g_out.rightCols(d) = (-gy2 * inv_scale).matrix();
      Matrix gs = (-gy2 * blk.y2.array()).matrix();
      const Vector mean = gs.rowwise().mean();
      gs.colwise() -= mean;
      const Eigen::ArrayXXd th = tanh_array(blk.scale_pre.array());
      g_out.leftCols(d) = (gs.array() * 2.0 * (1.0 - th.square())).matrix();

      const Matrix g_cond = f.subnet(b).backward(f.params.values, blk.cache, g_out, grad);
      gy.rightCols(d) = (gy2 * inv_scale).matrix();
      gy.leftCols(c) += g_cond;
    }
    g = std::move(gy);
  }
}

GaussianPosterior posterior(const FlowParams& f, const Matrix& x) {
  GaussianPosterior p;
  p.mu = inverse(f, x).leftCols(f.N);
  p.log_sigma = f.log_sigma();
  return p;
}

Vector std_normal_log_density(const Matrix& z) {
  const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi);
  return (-0.5 * z.rowwise().squaredNorm()).array() - static_cast<double>(z.cols()) * log_norm;
}

Vector log_likelihood(const FlowParams& f, const Matrix& x) { return std_normal_log_density(inverse(f, x)); }

void randomize_flow(FlowParams& f, RngStream& rng, double scale) {
  const std::size_t ls = f.log_sigma_offset();
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(ls); ++i) f.params.values(i) = rng.uniform(-scale, scale);
}

void save_flow(const FlowParams& f, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("save_flow: cannot open " + path.string());
  os.write(kFlowMagic, sizeof(kFlowMagic));
  binio::put<std::uint32_t>(os, kFlowVersion);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.K));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.N));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.n_blocks));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.width));
  for (const auto& perm : f.permutations)
    for (int p : perm) binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(p));
  const auto& segs = f.params.layout.segments();
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(segs.size()));
  for (const auto& s : segs) {
    binio::put_string(os, s.name);
    binio::put<std::uint64_t>(os, s.offset);
    binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(s.rows));
    binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(s.cols));
  }
  binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(f.params.values.size()));
  os.write(reinterpret_cast<const char*>(f.params.values.data()),
           static_cast<std::streamsize>(f.params.values.size() * sizeof(double)));
  if (!os) throw Error("save_flow: write failed for " + path.string());
}

FlowParams load_flow(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("load_flow: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kFlowMagic, sizeof(magic)) != 0)
    throw IngestionError("load_flow: bad magic in " + path.string());
  if (binio::get<std::uint32_t>(is, "version") != kFlowVersion)
    throw IngestionError("load_flow: unsupported version in " + path.string());

  FlowParams f;
  f.K = static_cast<int>(binio::get<std::uint32_t>(is, "K"));
  f.N = static_cast<int>(binio::get<std::uint32_t>(is, "N"));
  f.n_blocks = static_cast<int>(binio::get<std::uint32_t>(is, "n_blocks"));
  f.width = static_cast<int>(binio::get<std::uint32_t>(is, "width"));
  if (f.K < 1 || f.N < 1 || f.N > f.K || f.n_blocks < 1 || f.width < 1 || f.K > (1 << 20))
    throw IngestionError("load_flow: invalid dimensions in " + path.string());
  for (int b = 0; b < f.n_blocks; ++b) {
    std::vector<int> perm(static_cast<std::size_t>(f.K));
    std::vector<bool> seen(static_cast<std::size_t>(f.K), false);
    for (auto& p : perm) {
      p = static_cast<int>(binio::get<std::uint32_t>(is, "permutation"));
      if (p < 0 || p >= f.K || seen[static_cast<std::size_t>(p)])
        throw IngestionError("load_flow: permutation of block " + std::to_string(b) + " is not a bijection");
      seen[static_cast<std::size_t>(p)] = true;
    }
    f.permutations.push_back(std::move(perm));
  }

  const ParamLayout expected = flow_layout(f.K, f.N, f.n_blocks, f.width);
  ParamLayout stored;
  const auto n_segs = binio::get<std::uint32_t>(is, "segment count");
  for (std::uint32_t i = 0; i < n_segs; ++i) {
    const std::string name = binio::get_string(is, "segment name");
    const auto offset = binio::get<std::uint64_t>(is, "segment offset");
    const auto rows = binio::get<std::uint64_t>(is, "segment rows");
    const auto cols = binio::get<std::uint64_t>(is, "segment cols");
    if (stored.add(name, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)) != offset)
      throw IngestionError("load_flow: inconsistent layout offset for " + name);
  }
  if (!(stored == expected)) throw IngestionError("load_flow: layout table does not match header dimensions");

  const auto n_params = binio::get<std::uint64_t>(is, "parameter count");
  if (n_params != expected.total()) throw IngestionError("load_flow: parameter count mismatch");
  f.params = ParamVector(expected);
  is.read(reinterpret_cast<char*>(f.params.values.data()), static_cast<std::streamsize>(n_params * sizeof(double)));
  if (!is) throw IngestionError("load_flow: truncated parameter array");
  if (!f.params.values.allFinite()) throw IngestionError("load_flow: non-finite parameters");
  return f;
}

}  // namespace icon
