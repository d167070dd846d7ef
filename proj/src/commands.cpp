#include "icon/commands.hpp"

#include <algorithm>
#include <ostream>

#include "icon/dataset_io.hpp"
#include "icon/eval.hpp"

namespace icon {

namespace fs = std::filesystem;

RunConfig resolve_config(const CommandOptions& opts) {
  RunConfig cfg;
  if (opts.config_path) {
    cfg = load_config(*opts.config_path, opts.seed);
  } else {
    if (!opts.seed) throw ConfigError("a seed is required: pass --config with a 'seed' key or --seed");
    cfg = parse_config(nlohmann::json::object(), opts.seed);
  }
  if (opts.tasks) cfg.data.n_tasks = *opts.tasks;
  if (opts.n) cfg.data.n_per_task = *opts.n;
  if (opts.no_kl) {
    cfg.train.use_kl = false;
    cfg.classify.train.use_kl = false;
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const fs::path& dir, const ModelBank& bank, const nlohmann::json& meta) {
  bank.validate();
  fs::create_directories(dir);
  save_flow(bank.ata, dir / "ata.flow");
  for (const auto& [t, f] : bank.pta) save_flow(f, dir / ("pta_" + std::to_string(t) + ".flow"));
  nlohmann::json m = meta;
  m["n_tasks"] = bank.pta.size();
  m["K"] = bank.ata.K;
  m["N"] = bank.ata.N;
  write_json(dir / "checkpoint.json", m);
}

ModelBank load_checkpoint(const fs::path& path, nlohmann::json* meta) {
  // Accept either the checkpoint directory or the training run directory above it.
  const fs::path dir = !fs::exists(path / "checkpoint.json") && fs::exists(path / "checkpoint" / "checkpoint.json")
                           ? path / "checkpoint"
                           : path;
  const nlohmann::json m = read_json(dir / "checkpoint.json");
  if (!m.contains("n_tasks")) throw IngestionError((dir / "checkpoint.json").string() + ": missing 'n_tasks'");
  ModelBank bank;
  bank.ata = load_flow(dir / "ata.flow");
  const int T = m.at("n_tasks").get<int>();
  for (int t = 1; t <= T; ++t) bank.pta[t] = load_flow(dir / ("pta_" + std::to_string(t) + ".flow"));
  bank.validate();
  if (meta) *meta = m;
  return bank;
}

namespace {

DataDir load_synthetic(const fs::path& data) {
  if (!fs::exists(data / "manifest.json")) throw IngestionError(data.string() + ": no manifest.json (run `icon gen` first)");
  DataDir d = read_data_dir(data);
  if (d.train.empty()) throw IngestionError(data.string() + ": no training files");
  return d;
}

void check_bank_matches(const ModelBank& bank, const DataDir& d, const std::string& where) {
  if (bank.ata.K != d.train.front().X.cols())
    throw ContractError(where + ": checkpoint K differs from the data dimension");
  if (static_cast<int>(bank.pta.size()) != d.n_tasks())
    throw ContractError(where + ": checkpoint task count differs from the data");
}

std::string arm_name(const nlohmann::json& meta) {
  return meta.value("use_kl", true) ? "with_kl" : "without_kl";
}

nlohmann::json arm_metrics(const ModelBank& bank, const DataDir& d) {
  nlohmann::json per_task = nlohmann::json::array();
  const int T = d.n_tasks();
  for (int t = 1; t <= T; ++t) {
    const TaskDataset& test = d.test.at(static_cast<std::size_t>(t - 1));
    const FlowParams& pta = bank.pta_at(t);
    const Matrix mu_p = posterior(pta, test.X).mu, mu_a = posterior(bank.ata, test.X).mu;
    nlohmann::json e = {{"task", t},
                        {"reconstruction_rmse_ata", reconstruction_rmse(bank.ata, test.X)},
                        {"reconstruction_rmse_pta", reconstruction_rmse(pta, test.X)},
                        {"alignment_mean_abs_pearson", alignment_report(mu_p, mu_a).mean}};
    std::vector<const Matrix*> b{&test.X};
    e["kl_align"] = kl_align_value(bank.ata, pta, b);
    if (test.z_true) {
      e["recovery_r2_ata"] = recovery_r2(mu_a, *test.z_true);
      e["recovery_r2_pta"] = recovery_r2(mu_p, *test.z_true);
    }
    per_task.push_back(e);
  }
  nlohmann::json out = {{"per_task", per_task}, {"forgetting", forgetting(bank, d.test)}};
  if (d.train.front().z_true) {
    const TableArm arm = table1_arm(bank, d.train, d.test);
    out["latent_recovery_rmse"] = {{"pta", arm.pta}, {"ata", arm.ata}, {"per_task_pta", arm.per_task_pta},
                                   {"per_task_ata", arm.per_task_ata}};
  }
  return out;
}

void write_scatter(const ModelBank& bank, const DataDir& d, int n, std::uint64_t seed, const fs::path& out,
                   const std::string& stem) {
  RngStream rng(seed, Stream::kExport);
  const ScatterExport s = make_scatter(bank, d.train, n, rng);
  export_scatter(s, out, stem);
  write_json(out / (stem + ".json"), {{"projection", s.projection},
                                      {"points_per_setup_per_task", n},
                                      {"split", "train"},
                                      {"warnings", s.warnings}});
}

struct LoadedArm {
  std::string name;
  ModelBank bank;
};

std::vector<LoadedArm> load_arms(const std::vector<std::string>& checkpoints, const DataDir& d) {
  if (checkpoints.empty()) throw ConfigError("at least one --checkpoint is required");
  if (checkpoints.size() > 2) throw ConfigError("at most two --checkpoint directories (with and without KL)");
  std::vector<LoadedArm> arms;
  for (const auto& c : checkpoints) {
    nlohmann::json meta;
    ModelBank bank = load_checkpoint(c, &meta);
    check_bank_matches(bank, d, c);
    arms.push_back({arm_name(meta), std::move(bank)});
  }
  if (arms.size() == 2 && arms[0].name == arms[1].name)
    throw ConfigError("the two checkpoints must be one run with KL and one without");
  return arms;
}


}  // namespace

void cmd_gen(const RunConfig& cfg, const fs::path& out) {
  const GeneratedData g = generate(cfg.data);
  write_data_dir(out, g);
}

void cmd_train(const RunConfig& cfg, const fs::path& data, const fs::path& out, bool no_kl) {
  const DataDir d = load_synthetic(data);
  TrainConfig tc = cfg.train;
  if (no_kl) tc.use_kl = false;
  const RunResult res = run_sequence(d.train, tc);
  fs::create_directories(out);
  nlohmann::json metrics = res.to_json();
  save_checkpoint(out / "checkpoint", res.bank,
                  {{"use_kl", tc.use_kl}, {"train", train_config_to_json(tc)}, {"run", metrics}});
  save_optimizer(res.optimizer, out / "checkpoint" / "optimizer.bin");
  metrics["use_kl"] = tc.use_kl;
  metrics["forgetting_test"] = forgetting(res.bank, d.test);
  write_json(out / "metrics.json", metrics);
}

void cmd_eval(const RunConfig& cfg, const fs::path& data, const std::vector<std::string>& checkpoints,
              const fs::path& out) {
  const DataDir d = load_synthetic(data);
  const auto arms = load_arms(checkpoints, d);
  fs::create_directories(out);
  nlohmann::json report = {{"arms", nlohmann::json::object()}};
  for (const auto& a : arms) {
    report["arms"][a.name] = arm_metrics(a.bank, d);
    write_scatter(a.bank, d, cfg.eval.scatter_points, cfg.seed, out, "scatter_" + a.name);
  }
  if (arms.size() == 2 && d.train.front().z_true) {
    const ModelBank& with = arms[0].name == "with_kl" ? arms[0].bank : arms[1].bank;
    const ModelBank& without = arms[0].name == "with_kl" ? arms[1].bank : arms[0].bank;
    report["table1"] = table1(with, without, d.train, d.test).to_json();
  }
  write_json(out / "report.json", report);
}

void cmd_verify(const RunConfig& cfg, const fs::path& data, const std::optional<std::string>& checkpoint,
                const fs::path& out) {
  const DataDir d = load_synthetic(data);
  const auto& v = cfg.verify;
  if (v.task_a > d.n_tasks() || v.task_b > d.n_tasks()) throw ConfigError("verify: task id beyond the data");
  auto first_rows = [&](const Matrix& m) { return Matrix(m.topRows(std::min<Eigen::Index>(m.rows(), v.n_points))); };

  LatentCloud a, b;
  VectorMap g;
  std::string source;
  const Matrix x_a = first_rows(d.train.at(static_cast<std::size_t>(v.task_a - 1)).X);
  std::optional<ModelBank> bank;
  if (checkpoint) {
    bank = load_checkpoint(*checkpoint);
    check_bank_matches(*bank, d, *checkpoint);
    const FlowParams& pta = bank->pta_at(d.n_tasks());
    a = {posterior(pta, x_a).mu, CloudSource::kPta, v.task_a};
    b = {posterior(bank->ata, x_a).mu, CloudSource::kAta, v.task_a};
    const FlowParams* ata = &bank->ata;
    g = [ata](const Vector& z) {
      Matrix full = Matrix::Zero(1, ata->K);
      full.leftCols(z.size()) = z.transpose();
      return Vector(forward(*ata, full).row(0).transpose());
    };
    source = "model";
  } else {
    if (!d.mixer) throw IngestionError(data.string() + ": no mixer.json; pass --checkpoint to verify a trained model");
    const auto& ta = d.train.at(static_cast<std::size_t>(v.task_a - 1));
    const auto& tb = d.train.at(static_cast<std::size_t>(v.task_b - 1));
    if (!ta.z_true || !tb.z_true) throw IngestionError(data.string() + ": ground-truth latents missing");
    const MixerParams mixer = *d.mixer;
    Matrix za = first_rows(*ta.z_true), zb = first_rows(*tb.z_true);
    if (v.invariant_only) {
      const int d_inv = d.manifest.at("spec").at("d_inv").get<int>();
      za = Matrix(za.leftCols(d_inv));
      zb = Matrix(zb.leftCols(d_inv));
      const int K = static_cast<int>(mixer.w1.cols());
      g = [mixer, K](const Vector& z) {
        Vector full = Vector::Zero(K);
        full.head(z.size()) = z;
        return mixer.apply(full);
      };
    } else {
      g = [mixer](const Vector& z) { return mixer.apply(z); };
    }
    a = {za, CloudSource::kTruth, v.task_a};
    b = {zb, CloudSource::kTruth, v.task_b};
    source = "ground-truth";
  }
  RngStream rng(cfg.seed, Stream::kTheory);
  const TheoremReport rep = verify_theorem(g, a, b, &x_a, v.options, rng);
  nlohmann::json j = rep.to_json();
  j["source"] = source;
  j["cloud_a"] = {{"source", cloud_source_name(a.source)}, {"task", a.task_id}, {"n", a.size()}};
  j["cloud_b"] = {{"source", cloud_source_name(b.source)}, {"task", b.task_id}, {"n", b.size()}};
  fs::create_directories(out);
  write_json(out / "theorem_report.json", j);
}

void cmd_export(const RunConfig& cfg, const fs::path& data, const std::vector<std::string>& checkpoints,
                const fs::path& out) {
  const DataDir d = load_synthetic(data);
  const auto arms = load_arms(checkpoints, d);
  fs::create_directories(out);
  for (const auto& a : arms) write_scatter(a.bank, d, cfg.eval.scatter_points, cfg.seed, out, "scatter_" + a.name);
}

void cmd_classify(const RunConfig& cfg, const std::optional<std::string>& data, const fs::path& out, bool no_kl) {
  EmbeddingDataset ds;
  Matrix emb;
  TrainConfig tc = cfg.classify.train;
  if (no_kl) tc.use_kl = false;
  if (data) {
    ds = load_embeddings(*data);
    emb = load_class_embeddings(*data, ds.n_classes);
  } else {
    SynthEmbeddings s = synth_embeddings(cfg.classify.data);
    ds = std::move(s.data);
    emb = std::move(s.class_emb);
  }
  const ClassifyRun run = continual_classify(ds, emb, tc);
  fs::create_directories(out);
  if (!data) write_embeddings(out / "embeddings", ds, emb);
  save_flow(run.run.bank.ata, out / "ata.flow");
  nlohmann::json rep = run.report.to_json();
  rep["use_kl"] = tc.use_kl;
  rep["n_classes"] = ds.n_classes;
  rep["chance_accuracy"] = 100.0 / ds.n_classes;
  rep["training"] = run.run.to_json();
  write_json(out / "report.json", rep);
}

namespace {

// Output staged in a sibling directory and renamed into place on success.
class StagedOutput {
 public:
  explicit StagedOutput(const fs::path& out) : out_(fs::absolute(out).lexically_normal()) {
    if (out_.filename().empty()) out_ = out_.parent_path();
    staging_ = out_.parent_path() / ("." + out_.filename().string() + ".partial");
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  ~StagedOutput() {
    std::error_code ec;
    if (!committed_) fs::remove_all(staging_, ec);
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  const fs::path& path() const { return staging_; }

  void commit() {
    fs::remove_all(out_);
    fs::rename(staging_, out_);
    committed_ = true;
  }

 private:
  fs::path out_;
  fs::path staging_;
  bool committed_ = false;
};

}  // namespace

int run_command(const std::string& name, const CommandOptions& opts, std::ostream& err) {
  try {
    static const std::vector<std::string> known = {"gen", "train", "eval", "verify", "export", "classify"};
    if (std::find(known.begin(), known.end(), name) == known.end()) throw ConfigError("unknown command '" + name + "'");
    const RunConfig cfg = resolve_config(opts);
    if (opts.out.empty()) throw ConfigError("--out is required");
    const bool needs_data = name != "gen" && name != "classify";
    if (needs_data && !opts.data) throw ConfigError("--data is required for '" + name + "'");
    if ((name == "eval" || name == "export") && opts.checkpoints.empty())
      throw ConfigError("--checkpoint is required for '" + name + "'");
    if (name == "verify" && opts.checkpoints.size() > 1) throw ConfigError("verify takes at most one --checkpoint");
    if (opts.data && !fs::is_directory(*opts.data)) throw IngestionError(*opts.data + ": not a directory");
    for (const auto& c : opts.checkpoints)
      if (!fs::is_directory(c)) throw IngestionError(c + ": not a directory");

    StagedOutput staged(opts.out);
    const fs::path& out = staged.path();
    if (name == "gen") {
      cmd_gen(cfg, out);
    } else if (name == "train") {
      cmd_train(cfg, *opts.data, out, opts.no_kl);
    } else if (name == "eval") {
      cmd_eval(cfg, *opts.data, opts.checkpoints, out);
    } else if (name == "verify") {
      cmd_verify(cfg, *opts.data,
                 opts.checkpoints.empty() ? std::nullopt : std::optional<std::string>(opts.checkpoints.front()), out);
    } else if (name == "export") {
      cmd_export(cfg, *opts.data, opts.checkpoints, out);
    } else {
      cmd_classify(cfg, opts.data, out, opts.no_kl);
    }
    write_json(out / "config.json", cfg.to_json());
    staged.commit();
    return kExitOk;
  } catch (const DivergenceError& e) {
    err << "error: numeric divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const NumericDomainError& e) {
    err << "error: numeric failure: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IngestionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const GenerationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace icon
