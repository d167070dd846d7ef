#include "icon/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "icon/binio.hpp"

namespace icon {
namespace fs = std::filesystem;

namespace {

void write_f32(std::ostream& os, const Matrix& m) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Matrix read_f32(std::istream& is, std::uint64_t rows, std::uint64_t cols, const std::string& what) {
  std::vector<float> buf(rows * cols);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!is) throw IngestionError("truncated " + what);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < buf.size(); ++i) {
    if (!std::isfinite(buf[i]))
      throw IngestionError(what + ": non-finite value at row " + std::to_string(i / cols));
    m.data()[i] = buf[i];
  }
  return m;
}

DatasetHeader read_header(std::istream& is, const fs::path& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "ICON") throw IngestionError("malformed header in " + path.string() + ": bad magic");
  DatasetHeader h;
  h.version = binio::get<std::uint32_t>(is, "version");
  if (h.version != kDatasetVersion)
    throw IngestionError("malformed header in " + path.string() + ": unsupported version " + std::to_string(h.version));
  h.n = binio::get<std::uint64_t>(is, "n");
  h.K = binio::get<std::uint32_t>(is, "K");
  h.N = binio::get<std::uint32_t>(is, "N");
  h.flags = binio::get<std::uint32_t>(is, "flags");
  if (h.n == 0 || h.K == 0 || h.n > (1ULL << 32) || h.K > (1u << 16) || h.N > (1u << 16))
    throw IngestionError("malformed header in " + path.string() + ": implausible dimensions");
  if ((h.flags & ~(kHasLatents | kHasLabels)) != 0)
    throw IngestionError("malformed header in " + path.string() + ": unknown flag bits");
  if ((h.flags & kHasLatents) && h.N == 0)
    throw IngestionError("malformed header in " + path.string() + ": latent flag set with N = 0");
  return h;
}

}  // namespace

std::string dataset_filename(int task_id, const std::string& split) {
  return "task" + std::to_string(task_id) + "_" + split + ".bin";
}

void write_dataset(const TaskDataset& d, const fs::path& path) {
  d.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os.write("ICON", 4);
  std::uint32_t flags = 0;
  if (d.z_true) flags |= kHasLatents;
  if (d.labels) flags |= kHasLabels;
  binio::put<std::uint32_t>(os, kDatasetVersion);
  binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(d.X.rows()));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.X.cols()));
  binio::put<std::uint32_t>(os, d.z_true ? static_cast<std::uint32_t>(d.z_true->cols()) : 0u);
  binio::put<std::uint32_t>(os, flags);
  write_f32(os, d.X);
  if (d.z_true) write_f32(os, *d.z_true);
  if (d.labels)
    for (int y : *d.labels) binio::put<std::int32_t>(os, y);
  if (!os) throw Error("write failed for " + path.string());
}

DatasetHeader read_dataset_header(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open " + path.string());
  return read_header(is, path);
}

TaskDataset read_dataset(const fs::path& path, int task_id, const std::string& split) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open " + path.string());
  const DatasetHeader h = read_header(is, path);
  TaskDataset d;
  d.task_id = task_id;
  d.split = split;
  d.X = read_f32(is, h.n, h.K, path.string() + " observations");
  if (h.flags & kHasLatents) d.z_true = read_f32(is, h.n, h.N, path.string() + " latents");
  if (h.flags & kHasLabels) {
    std::vector<int> labels(h.n);
    for (std::uint64_t i = 0; i < h.n; ++i) {
      const auto y = binio::get<std::int32_t>(is, "labels");
      if (y < 0) throw IngestionError(path.string() + ": negative label at record " + std::to_string(i));
      labels[i] = y;
    }
    d.labels = std::move(labels);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IngestionError(path.string() + ": trailing bytes after payload");
  return d;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
}

void write_data_dir(const fs::path& dir, const GeneratedData& data) {
  fs::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (const auto* split : {&data.train, &data.test}) {
    for (const auto& d : *split) {
      const auto name = dataset_filename(d.task_id, d.split);
      write_dataset(d, dir / name);
      files.push_back({{"task", d.task_id}, {"split", d.split}, {"file", name}, {"n", d.X.rows()}});
    }
  }
  nlohmann::json manifest = data.manifest;
  manifest["files"] = files;
  manifest["mixer_file"] = "mixer.json";
  write_json(dir / "mixer.json", mixer_to_json(data.mixer));
  write_json(dir / "manifest.json", manifest);
}

DataDir read_data_dir(const fs::path& dir) {
  DataDir out;
  out.manifest = read_json(dir / "manifest.json");
  if (!out.manifest.contains("files")) throw IngestionError(dir.string() + "/manifest.json: missing 'files'");
  for (const auto& f : out.manifest.at("files")) {
    const int task = f.at("task").get<int>();
    const std::string split = f.at("split").get<std::string>();
    TaskDataset d = read_dataset(dir / f.at("file").get<std::string>(), task, split);
    (split == "test" ? out.test : out.train).push_back(std::move(d));
  }
  auto by_task = [](const TaskDataset& a, const TaskDataset& b) { return a.task_id < b.task_id; };
  std::sort(out.train.begin(), out.train.end(), by_task);
  std::sort(out.test.begin(), out.test.end(), by_task);
  for (std::size_t i = 0; i < out.train.size(); ++i)
    if (out.train[i].task_id != static_cast<int>(i) + 1)
      throw IngestionError(dir.string() + ": train task ids are not contiguous from 1");
  if (out.manifest.contains("mixer_file"))
    out.mixer = mixer_from_json(read_json(dir / out.manifest.at("mixer_file").get<std::string>()));
  return out;
}

}  // namespace icon
