#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icon/objectives.hpp"
#include "icon/synthdata.hpp"
#include "json.hpp"

namespace icon {

// Binary dataset file:
//   "ICON" | u32 version | u64 n | u32 K | u32 N | u32 flags
//   X       n*K little-endian float32, row-major
//   Z_true  n*N float32            (flags & kHasLatents)
//   labels  n   int32              (flags & kHasLabels)
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kHasLatents = 1u;
inline constexpr std::uint32_t kHasLabels = 2u;

struct DatasetHeader {
  std::uint32_t version = kDatasetVersion;
  std::uint64_t n = 0;
  std::uint32_t K = 0;
  std::uint32_t N = 0;
  std::uint32_t flags = 0;
};

void write_dataset(const TaskDataset& d, const std::filesystem::path& path);
TaskDataset read_dataset(const std::filesystem::path& path, int task_id = 1, const std::string& split = "train");
DatasetHeader read_dataset_header(const std::filesystem::path& path);

std::string dataset_filename(int task_id, const std::string& split);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// A directory of per-task train/test files plus manifest.json (and mixer.json
// for synthetic data).
struct DataDir {
  std::vector<TaskDataset> train;
  std::vector<TaskDataset> test;
  nlohmann::json manifest;
  std::optional<MixerParams> mixer;

  int n_tasks() const { return static_cast<int>(train.size()); }
};

void write_data_dir(const std::filesystem::path& dir, const GeneratedData& data);
DataDir read_data_dir(const std::filesystem::path& dir);

}  // namespace icon
