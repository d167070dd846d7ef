#include "icon/config.hpp"

#include <fstream>
#include <set>

namespace icon {

namespace {

// Reads typed fields from one JSON object and rejects keys that were never read.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>)
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type (" + std::string(v.type_name()) + ")");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_flow(Section s, FlowOptions& f) {
  s.get("n_blocks", f.n_blocks);
  s.get("width", f.width);
  s.get("init_sigma", f.init_sigma);
  s.finish();
}

void read_train(Section& s, TrainConfig& t) {
  s.get("lr0", t.lr0);
  s.get("lr_min", t.lr_min);
  s.get("weight_decay", t.weight_decay);
  s.get("epochs_stage1", t.epochs_stage1);
  s.get("epochs_stage2", t.epochs_stage2);
  s.get("batch_size", t.batch_size);
  s.get("tau", t.tau);
  s.get("replay_size", t.replay_size);
  s.get("use_kl", t.use_kl);
  std::string mode = t.stage2_mode == Stage2Mode::kPerTask ? "per_task" : "at_end";
  s.get("stage2_mode", mode);
  if (mode == "per_task") {
    t.stage2_mode = Stage2Mode::kPerTask;
  } else if (mode == "at_end") {
    t.stage2_mode = Stage2Mode::kAtEnd;
  } else {
    throw ConfigError("train.stage2_mode: expected 'per_task' or 'at_end', got '" + mode + "'");
  }
  s.get("warm_start", t.warm_start);
  s.get("latent_dim", t.latent_dim);
  s.get("stage2_mle_weight", t.stage2_mle_weight);
  s.get("nce_weight", t.nce_weight);
  s.get("nce_flow_grad", t.nce_flow_grad);
  s.get("head_hidden", t.head_hidden);
}

nlohmann::json flow_json(const FlowOptions& f) {
  return {{"n_blocks", f.n_blocks}, {"width", f.width}, {"init_sigma", f.init_sigma}};
}

nlohmann::json train_json(const TrainConfig& t) {
  nlohmann::json j = train_config_to_json(t);
  j.erase("seed");
  j.erase("flow");
  j.erase("head_out");
  return j;
}

template <typename F>
void wrap(F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

ClassifyConfig default_classify_config() {
  ClassifyConfig c;
  c.data.dim = 64;
  c.data.sep = 1.0;
  c.data.noise = 1.5;
  c.train.flow.n_blocks = 4;
  c.train.flow.width = 64;
  c.train.epochs_stage1 = 20;
  c.train.epochs_stage2 = 10;
  c.train.replay_size = 200;
  return c;
}

RunConfig default_config() {
  RunConfig c;
  c.classify = default_classify_config();
  return c;
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  train.seed = s;
  classify.data.seed = s;
  classify.train.seed = s;
}

void RunConfig::validate() const {
  wrap([&] {
    data.validate();
    train.validate();
    classify.data.validate();
    classify.train.validate();
  });
  if (eval.scatter_points < 1) throw ConfigError("eval.scatter_points must be positive");
  const auto& v = verify.options;
  if (!(v.intersection_eps > 0.0)) throw ConfigError("verify.intersection_eps must be positive");
  if (v.line_integral_steps < 1 || v.line_integral_segments < 0 || v.samples < 1 || !(v.line_integral_tol > 0.0))
    throw ConfigError("verify: invalid step, segment, sample count or tolerance");
  if (verify.n_points < 1) throw ConfigError("verify.n_points must be positive");
  if (verify.task_a < 1 || verify.task_b < 1) throw ConfigError("verify: task ids start at 1");
  if (train.latent_dim > data.K) throw ConfigError("train.latent_dim exceeds data.K");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json cls_train = train_json(classify.train);
  cls_train["flow"] = flow_json(classify.train.flow);
  return {{"seed", seed},
          {"data",
           {{"n_tasks", data.n_tasks},
            {"n_per_task", data.n_per_task},
            {"d_inv", data.d_inv},
            {"d_var", data.d_var},
            {"K", data.K},
            {"mu_lo", data.mu_lo},
            {"mu_hi", data.mu_hi},
            {"var_lo", data.var_lo},
            {"var_hi", data.var_hi},
            {"test_fraction", data.test_fraction},
            {"leaky_slope", data.leaky_slope},
            {"max_condition", data.max_condition}}},
          {"flow", flow_json(train.flow)},
          {"train", train_json(train)},
          {"eval", {{"scatter_points", eval.scatter_points}}},
          {"classify",
           {{"n_classes", classify.data.n_classes},
            {"n_tasks", classify.data.n_tasks},
            {"per_class_train", classify.data.per_class_train},
            {"per_class_test", classify.data.per_class_test},
            {"dim", classify.data.dim},
            {"sep", classify.data.sep},
            {"noise", classify.data.noise},
            {"train", cls_train}}},
          {"verify",
           {{"intersection_eps", verify.options.intersection_eps},
            {"connectivity_eps", verify.options.connectivity_eps},
            {"line_integral_steps", verify.options.line_integral_steps},
            {"line_integral_segments", verify.options.line_integral_segments},
            {"line_integral_tol", verify.options.line_integral_tol},
            {"samples", verify.options.samples},
            {"n_points", verify.n_points},
            {"task_a", verify.task_a},
            {"task_b", verify.task_b},
            {"invariant_only", verify.invariant_only}}}};
}

RunConfig parse_config(const nlohmann::json& j, std::optional<std::uint64_t> seed_override) {
  RunConfig c = default_config();
  Section root(j, "config");
  std::optional<std::uint64_t> seed;
  if (root.has("seed")) {
    std::uint64_t s = 0;
    root.get("seed", s);
    seed = s;
  } else {
    root.get("seed", c.seed);  // marks the key as known
  }
  if (seed_override) seed = seed_override;
  if (!seed) throw ConfigError("config: missing mandatory top-level 'seed'");

  {
    Section s = root.sub("data");
    s.get("n_tasks", c.data.n_tasks);
    s.get("n_per_task", c.data.n_per_task);
    s.get("d_inv", c.data.d_inv);
    s.get("d_var", c.data.d_var);
    s.get("K", c.data.K);
    s.get("mu_lo", c.data.mu_lo);
    s.get("mu_hi", c.data.mu_hi);
    s.get("var_lo", c.data.var_lo);
    s.get("var_hi", c.data.var_hi);
    s.get("test_fraction", c.data.test_fraction);
    s.get("leaky_slope", c.data.leaky_slope);
    s.get("max_condition", c.data.max_condition);
    s.finish();
  }
  read_flow(root.sub("flow"), c.train.flow);
  {
    Section s = root.sub("train");
    read_train(s, c.train);
    s.finish();
  }
  {
    Section s = root.sub("eval");
    s.get("scatter_points", c.eval.scatter_points);
    s.finish();
  }
  {
    Section s = root.sub("classify");
    s.get("n_classes", c.classify.data.n_classes);
    s.get("n_tasks", c.classify.data.n_tasks);
    s.get("per_class_train", c.classify.data.per_class_train);
    s.get("per_class_test", c.classify.data.per_class_test);
    s.get("dim", c.classify.data.dim);
    s.get("sep", c.classify.data.sep);
    s.get("noise", c.classify.data.noise);
    Section t = s.sub("train");
    read_train(t, c.classify.train);
    read_flow(t.sub("flow"), c.classify.train.flow);
    t.finish();
    s.finish();
  }
  {
    Section s = root.sub("verify");
    s.get("intersection_eps", c.verify.options.intersection_eps);
    s.get("connectivity_eps", c.verify.options.connectivity_eps);
    s.get("line_integral_steps", c.verify.options.line_integral_steps);
    s.get("line_integral_segments", c.verify.options.line_integral_segments);
    s.get("line_integral_tol", c.verify.options.line_integral_tol);
    s.get("samples", c.verify.options.samples);
    s.get("n_points", c.verify.n_points);
    s.get("task_a", c.verify.task_a);
    s.get("task_b", c.verify.task_b);
    s.get("invariant_only", c.verify.invariant_only);
    s.finish();
  }
  root.finish();
  c.apply_seed(*seed);
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j, seed_override);
}

}  // namespace icon
