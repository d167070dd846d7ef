#pragma once

#include <optional>
#include <string>

#include "icon/classify.hpp"
#include "icon/synthdata.hpp"
#include "icon/theory.hpp"
#include "icon/trainer.hpp"
#include "json.hpp"

namespace icon {

class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

struct EvalOptions {
  int scatter_points = 1000;
};

struct VerifyConfig {
  VerifyOptions options;
  int n_points = 2000;  // rows per cloud
  int task_a = 1;
  int task_b = 2;
  bool invariant_only = false;  // ground-truth clouds restricted to the task-invariant dims
};

struct ClassifyConfig {
  SynthEmbeddingSpec data;
  TrainConfig train;
};

struct RunConfig {
  std::uint64_t seed = 0;
  SynthSpec data;
  TrainConfig train;
  EvalOptions eval;
  ClassifyConfig classify;
  VerifyConfig verify;

  // Propagates the top-level seed into every section.
  void apply_seed(std::uint64_t s);
  void validate() const;
  nlohmann::json to_json() const;
};

RunConfig default_config();
ClassifyConfig default_classify_config();

// Unknown keys and type mismatches raise ConfigError. A missing seed raises
// unless `seed_override` supplies one.
RunConfig parse_config(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = std::nullopt);
RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace icon
