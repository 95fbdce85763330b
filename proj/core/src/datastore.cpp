// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/datastore.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "jerkrom/error.hpp"

namespace jerkrom::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";

template <typename T>
const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "float32";
  else return "float64";
}

template <typename T>
void to_little_endian(std::vector<T>& v) {
  if constexpr (std::endian::native == std::endian::big) {
    for (T& x : v) {
      auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(x);
      std::reverse(bytes.begin(), bytes.end());
      x = std::bit_cast<T>(bytes);
    }
  }
}

template <typename T>
void write_array(const fs::path& file, std::vector<T> data) {
  to_little_endian(data);
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!os) throw IoError("write failed for " + file.string());
}

std::int64_t shape_count(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

json array_entry(const std::string& file, const char* dtype, const std::vector<std::int64_t>& shape,
                 const char* order = "C") {
  return json{{"file", file}, {"dtype", dtype}, {"byte_order", "little"}, {"order", order},
              {"shape", shape}};
}

// Reads `count` values of T starting at `offset_bytes`, checking that the file
// holds exactly `expected_file_bytes` when that is non-negative.
template <typename T>
std::vector<T> read_array(const fs::path& file, std::int64_t count, std::int64_t offset_bytes = 0,
                          std::int64_t expected_file_bytes = -1) {
  std::error_code ec;
  const auto size = static_cast<std::int64_t>(fs::file_size(file, ec));
  if (ec) throw CorruptionError("missing array file " + file.string());
  const std::int64_t need = offset_bytes + count * static_cast<std::int64_t>(sizeof(T));
  if (expected_file_bytes >= 0 && size != expected_file_bytes) {
    throw CorruptionError("array file " + file.string() + " holds " + std::to_string(size) +
                          " bytes, manifest declares " + std::to_string(expected_file_bytes));
  }
  if (size < need) {
    throw CorruptionError("array file " + file.string() + " truncated: " + std::to_string(size) +
                          " bytes, need " + std::to_string(need));
  }
  std::vector<T> out(static_cast<std::size_t>(count));
  std::ifstream is(file, std::ios::binary);
  is.seekg(offset_bytes);
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (!is) throw CorruptionError("short read from " + file.string());
  to_little_endian(out);  // involution on big-endian hosts
  return out;
}

void check_entry(const json& entry, const char* dtype, const std::string& what) {
  if (!entry.is_object() || !entry.contains("file") || !entry.contains("shape") ||
      !entry.contains("dtype")) {
    throw CorruptionError("manifest entry for " + what + " is incomplete");
  }
  if (entry.at("dtype").get<std::string>() != dtype) {
    throw CorruptionError(what + " has dtype " + entry.at("dtype").get<std::string>() +
                          ", expected " + dtype);
  }
  if (entry.value("byte_order", "little") != "little") {
    throw CorruptionError(what + " is not little-endian");
  }
}

json read_manifest(const fs::path& dir, const std::string& format) {
  const fs::path file = dir / kManifest;
  std::ifstream is(file);
  if (!is) throw IoError("cannot open " + file.string());
  json m;
  try {
    is >> m;
  } catch (const json::exception& e) {
    throw CorruptionError("malformed manifest " + file.string() + ": " + e.what());
  }
  if (m.value("format", "") != format) {
    throw CorruptionError(dir.string() + " is not a " + format + " container");
  }
  const int version = m.value("version", -1);
  if (version != kFormatVersion) {
    throw VersionError(dir.string() + " has format version " + std::to_string(version) +
                       ", this build reads version " + std::to_string(kFormatVersion));
  }
  return m;
}

// Writes into a fresh temporary sibling directory, then renames it into place.
template <typename Fn>
void atomic_directory_write(const fs::path& path, bool overwrite, Fn&& fill) {
  static std::atomic<unsigned> counter{0};
  if (fs::exists(path) && !overwrite) {
    throw IoError(path.string() + " already exists (use overwrite/--force)");
  }
  const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
  fs::create_directories(parent);
  const fs::path tmp =
      parent / (path.filename().string() + ".tmp-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter++));
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    fill(tmp);
    if (fs::exists(path)) fs::remove_all(path);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

void write_manifest(const fs::path& dir, const json& m) {
  std::ofstream os(dir / kManifest, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + dir.string());
  os << m.dump(2) << '\n';
}

} // namespace

Normalization compute_normalization(const DatasetBundle& bundle) {
  double sum = 0.0;
  std::size_t count = 0;
  const TimeWindow w = bundle.splits.train_window;
  for (int id : bundle.splits.train_ids) {
    const Trajectory& t = bundle.trajectories.at(static_cast<std::size_t>(id));
    for (int s = w.begin; s < w.end; ++s) {
      for (float v : t.snapshots.at(static_cast<std::size_t>(s)).values) sum += v;
      count += t.snapshots[static_cast<std::size_t>(s)].values.size();
    }
  }
  if (count == 0) throw ConfigError("training split is empty; cannot compute statistics", "data.n_train");
  const double mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (int id : bundle.splits.train_ids) {
    const Trajectory& t = bundle.trajectories[static_cast<std::size_t>(id)];
    for (int s = w.begin; s < w.end; ++s) {
      for (float v : t.snapshots[static_cast<std::size_t>(s)].values) {
        const double d = v - mean;
        ss += d * d;
      }
    }
  }
  return Normalization{mean, std::sqrt(ss / static_cast<double>(count))};
}

namespace {
void require_positive_std(const Normalization& norm) {
  if (!(norm.std > 0.0) || !std::isfinite(norm.std)) {
    throw ConfigError("normalisation std must be positive, got " + std::to_string(norm.std), "data");
  }
}
} // namespace

void normalize_inplace(std::span<float> field, const Normalization& norm) {
  require_positive_std(norm);
  for (float& v : field) v = static_cast<float>((v - norm.mean) / norm.std);
}

void denormalize_inplace(std::span<float> field, const Normalization& norm) {
  require_positive_std(norm);
  for (float& v : field) v = static_cast<float>(v * norm.std + norm.mean);
}

std::vector<float> normalize(std::span<const float> field, const Normalization& norm) {
  std::vector<float> out(field.begin(), field.end());
  normalize_inplace(out, norm);
  return out;
}

std::vector<float> denormalize(std::span<const float> field, const Normalization& norm) {
  std::vector<float> out(field.begin(), field.end());
  denormalize_inplace(out, norm);
  return out;
}

void save_dataset(const DatasetBundle& b, const fs::path& path, bool overwrite) {
  b.grid.validate();
  const std::int64_t n = static_cast<std::int64_t>(b.trajectories.size());
  const std::int64_t length = n > 0 ? static_cast<std::int64_t>(b.trajectories.front().size()) : 0;
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(n * length) * b.grid.points());
  for (const Trajectory& t : b.trajectories) {
    if (static_cast<std::int64_t>(t.size()) != length) {
      throw ShapeError("all trajectories in a bundle must have the same length");
    }
    check_trajectory(t, b.grid);
    for (const FieldSnapshot& s : t.snapshots) values.insert(values.end(), s.values.begin(), s.values.end());
  }
  std::vector<double> times;
  if (n > 0) {
    for (const FieldSnapshot& s : b.trajectories.front().snapshots) times.push_back(s.time);
  }

  std::vector<std::int64_t> shape{n, length, b.grid.nx};
  if (b.grid.ndim == 2) shape.push_back(b.grid.nx);

  json m;
  m["format"] = "jerkrom-dataset";
  m["version"] = kFormatVersion;
  m["grid"] = {{"nx", b.grid.nx}, {"ndim", b.grid.ndim}, {"length", 1.0}, {"periodic", true}};
  m["dt"] = b.dt;
  m["burn_in"] = b.burn_in;
  m["norm"] = {{"mean", b.norm.mean}, {"std", b.norm.std}};
  m["splits"] = {{"train", b.splits.train_ids},
                 {"test", b.splits.test_ids},
                 {"train_window", {b.splits.train_window.begin, b.splits.train_window.end}},
                 {"extrap_window", {b.splits.extrap_window.begin, b.splits.extrap_window.end}}};
  m["arrays"] = {{"trajectories", array_entry("trajectories.bin", "float32", shape)},
                 {"times", array_entry("times.bin", "float64", {length})}};

  atomic_directory_write(path, overwrite, [&](const fs::path& dir) {
    write_array(dir / "trajectories.bin", std::move(values));
    write_array(dir / "times.bin", std::move(times));
    write_manifest(dir, m);
  });
}

DatasetBundle load_dataset(const fs::path& path) {
  const json m = read_manifest(path, "jerkrom-dataset");
  DatasetBundle b;
  try {
    b.grid.nx = m.at("grid").at("nx").get<int>();
    b.grid.ndim = m.at("grid").at("ndim").get<int>();
    b.dt = m.at("dt").get<double>();
    b.burn_in = m.at("burn_in").get<int>();
    b.norm.mean = m.at("norm").at("mean").get<double>();
    b.norm.std = m.at("norm").at("std").get<double>();
    const json& sp = m.at("splits");
    b.splits.train_ids = sp.at("train").get<std::vector<int>>();
    b.splits.test_ids = sp.at("test").get<std::vector<int>>();
    const auto tw = sp.at("train_window").get<std::array<int, 2>>();
    const auto ew = sp.at("extrap_window").get<std::array<int, 2>>();
    b.splits.train_window = {tw[0], tw[1]};
    b.splits.extrap_window = {ew[0], ew[1]};
  } catch (const json::exception& e) {
    throw CorruptionError("dataset manifest in " + path.string() + " is missing fields: " + e.what());
  }
  try {
    b.grid.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("dataset manifest declares an invalid grid: ") + e.what());
  }

  const json& traj = m.at("arrays").at("trajectories");
  check_entry(traj, "float32", "trajectories");
  const auto shape = traj.at("shape").get<std::vector<std::int64_t>>();
  if (static_cast<int>(shape.size()) != 2 + b.grid.ndim || shape[2] != b.grid.nx ||
      (b.grid.ndim == 2 && shape[3] != b.grid.nx)) {
    throw CorruptionError("trajectory array shape does not match the declared grid");
  }
  const std::int64_t count = shape_count(shape);
  const auto values = read_array<float>(path / traj.at("file").get<std::string>(), count, 0,
                                        count * static_cast<std::int64_t>(sizeof(float)));

  const json& times_entry = m.at("arrays").at("times");
  check_entry(times_entry, "float64", "times");
  const auto tshape = times_entry.at("shape").get<std::vector<std::int64_t>>();
  if (tshape.size() != 1 || tshape[0] != shape[1]) {
    throw CorruptionError("times array shape does not match trajectory length");
  }
  const auto times = read_array<double>(path / times_entry.at("file").get<std::string>(), shape[1], 0,
                                        shape[1] * static_cast<std::int64_t>(sizeof(double)));

  const std::size_t pts = b.grid.points();
  std::size_t cursor = 0;
  b.trajectories.resize(static_cast<std::size_t>(shape[0]));
  for (Trajectory& t : b.trajectories) {
    t.dt = b.dt;
    t.snapshots.resize(static_cast<std::size_t>(shape[1]));
    for (std::size_t s = 0; s < t.snapshots.size(); ++s) {
      t.snapshots[s].time = times[s];
      t.snapshots[s].values.assign(values.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   values.begin() + static_cast<std::ptrdiff_t>(cursor + pts));
      cursor += pts;
    }
  }
  const auto max_id = static_cast<int>(b.trajectories.size());
  for (int id : b.splits.train_ids) {
    if (id < 0 || id >= max_id) throw CorruptionError("train split references a missing trajectory");
  }
  for (int id : b.splits.test_ids) {
    if (id < 0 || id >= max_id) throw CorruptionError("test split references a missing trajectory");
  }
  return b;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path, bool overwrite) {
  if (ckpt.stage != "I" && ckpt.stage != "II") {
    throw ConfigError("checkpoint stage must be I or II, got '" + ckpt.stage + "'", "stage");
  }
  json m;
  m["format"] = "jerkrom-checkpoint";
  m["version"] = kFormatVersion;
  m["stage"] = ckpt.stage;
  m["architecture"] = json::parse(ckpt.architecture_json);
  m["config_fingerprint"] = ckpt.config_fingerprint;
  m["train_config"] = ckpt.train_config_json.empty() ? json::object() : json::parse(ckpt.train_config_json);
  json arrays = json::array();
  std::vector<float> blob;
  for (const NamedArray& a : ckpt.arrays) {
    if (shape_count(a.shape) != static_cast<std::int64_t>(a.values.size())) {
      throw ShapeError("array " + a.name + " has " + std::to_string(a.values.size()) +
                       " values but shape declares " + std::to_string(shape_count(a.shape)));
    }
    json e = array_entry("params.bin", "float32", a.shape, "F");
    e["name"] = a.name;
    e["offset_bytes"] = blob.size() * sizeof(float);
    arrays.push_back(std::move(e));
    blob.insert(blob.end(), a.values.begin(), a.values.end());
  }
  m["arrays"] = std::move(arrays);
  m["total_bytes"] = blob.size() * sizeof(float);
  atomic_directory_write(path, overwrite, [&](const fs::path& dir) {
    write_array(dir / "params.bin", std::move(blob));
    write_manifest(dir, m);
  });
}

Checkpoint load_checkpoint(const fs::path& path, const std::string& expected_fingerprint,
                           bool allow_mismatch) {
  const json m = read_manifest(path, "jerkrom-checkpoint");
  Checkpoint c;
  try {
    c.stage = m.at("stage").get<std::string>();
    c.architecture_json = m.at("architecture").dump();
    c.config_fingerprint = m.at("config_fingerprint").get<std::string>();
    c.train_config_json = m.at("train_config").dump();
  } catch (const json::exception& e) {
    throw CorruptionError("checkpoint manifest in " + path.string() + " is missing fields: " + e.what());
  }
  if (!expected_fingerprint.empty() && expected_fingerprint != c.config_fingerprint && !allow_mismatch) {
    throw ConfigError("checkpoint " + path.string() + " was written with config fingerprint " +
                          c.config_fingerprint + ", current config is " + expected_fingerprint,
                      "config_fingerprint");
  }
  const std::int64_t total = m.value("total_bytes", std::int64_t{-1});
  for (const json& e : m.at("arrays")) {
    check_entry(e, "float32", e.value("name", std::string("<unnamed>")));
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<std::vector<std::int64_t>>();
    a.values = read_array<float>(path / e.at("file").get<std::string>(), shape_count(a.shape),
                                 e.at("offset_bytes").get<std::int64_t>(), total);
    c.arrays.push_back(std::move(a));
  }
  return c;
}

void save_latents(const LatentDataset& d, const fs::path& path, bool overwrite) {
  const std::int64_t n = static_cast<std::int64_t>(d.trajectories.size());
  std::int64_t length = 0, dim = 0;
  double dt = 1.0, t0 = 0.0;
  if (n > 0) {
    length = d.trajectories.front().length();
    dim = d.trajectories.front().dim();
    dt = d.trajectories.front().dt;
    t0 = d.trajectories.front().t0;
  }
  std::vector<double> values;
  std::vector<int> sources;
  values.reserve(static_cast<std::size_t>(n * length * dim));
  for (const LatentTrajectory& t : d.trajectories) {
    if (t.length() != length || t.dim() != dim || t.dt != dt || t.t0 != t0) {
      throw ShapeError("latent trajectories must share length, dimension and time grid");
    }
    for (int j = 0; j < t.length(); ++j) {
      for (int i = 0; i < t.dim(); ++i) values.push_back(t.states(i, j));
    }
    sources.push_back(t.source_id);
  }
  json m;
  m["format"] = "jerkrom-latents";
  m["version"] = kFormatVersion;
  m["window"] = d.window;
  m["model_fingerprint"] = d.model_fingerprint;
  m["train_ids"] = d.train_ids;
  m["test_ids"] = d.test_ids;
  m["dt"] = dt;
  m["t0"] = t0;
  m["source_ids"] = sources;
  m["arrays"] = {{"states", array_entry("states.bin", "float64", {n, length, dim})}};
  atomic_directory_write(path, overwrite, [&](const fs::path& dir) {
    write_array(dir / "states.bin", std::move(values));
    write_manifest(dir, m);
  });
}

LatentDataset load_latents(const fs::path& path) {
  const json m = read_manifest(path, "jerkrom-latents");
  LatentDataset d;
  std::vector<int> sources;
  double dt = 1.0, t0 = 0.0;
  try {
    d.window = m.at("window").get<std::string>();
    d.model_fingerprint = m.at("model_fingerprint").get<std::string>();
    d.train_ids = m.at("train_ids").get<std::vector<int>>();
    d.test_ids = m.at("test_ids").get<std::vector<int>>();
    sources = m.at("source_ids").get<std::vector<int>>();
    dt = m.at("dt").get<double>();
    t0 = m.at("t0").get<double>();
  } catch (const json::exception& e) {
    throw CorruptionError("latent manifest in " + path.string() + " is missing fields: " + e.what());
  }
  const json& e = m.at("arrays").at("states");
  check_entry(e, "float64", "states");
  const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
  if (shape.size() != 3 || shape[0] != static_cast<std::int64_t>(sources.size())) {
    throw CorruptionError("latent state array shape does not match source id list");
  }
  const std::int64_t count = shape_count(shape);
  const auto values = read_array<double>(path / e.at("file").get<std::string>(), count, 0,
                                         count * static_cast<std::int64_t>(sizeof(double)));
  std::size_t cursor = 0;
  for (std::int64_t r = 0; r < shape[0]; ++r) {
    LatentTrajectory t;
    t.dt = dt;
    t.t0 = t0;
    t.source_id = sources[static_cast<std::size_t>(r)];
    t.states.resize(shape[2], shape[1]);
    for (std::int64_t j = 0; j < shape[1]; ++j) {
      for (std::int64_t i = 0; i < shape[2]; ++i) t.states(i, j) = values[cursor++];
    }
    d.trajectories.push_back(std::move(t));
  }
  return d;
}

void write_raw_field(const fs::path& path, std::span<const float> values) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_array(path, std::vector<float>(values.begin(), values.end()));
}

std::vector<float> read_raw_field(const fs::path& path, std::size_t expected_count) {
  const auto n = static_cast<std::int64_t>(expected_count);
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw IoError("cannot open " + path.string());
  if (size != expected_count * sizeof(float)) {
    throw ShapeError(path.string() + " holds " + std::to_string(size / sizeof(float)) + " float32 values, expected " +
                     std::to_string(expected_count));
  }
  return read_array<float>(path, n, 0, n * static_cast<std::int64_t>(sizeof(float)));
}

std::string container_kind(const fs::path& path) {
  std::ifstream is(path / kManifest);
  if (!is) return {};
  try {
    json m;
    is >> m;
    const std::string f = m.value("format", "");
    if (f == "jerkrom-dataset") return "dataset";
    if (f == "jerkrom-checkpoint") return "checkpoint";
    if (f == "jerkrom-latents") return "latents";
  } catch (const json::exception&) {
  }
  return {};
}

std::string describe(const fs::path& path) {
  const std::string kind = container_kind(path);
  std::ostringstream os;
  if (kind == "dataset") {
    const DatasetBundle b = load_dataset(path);
    const std::size_t length = b.trajectories.empty() ? 0 : b.trajectories.front().size();
    os << "dataset " << path.string() << "\n"
       << "  grid: nx=" << b.grid.nx << " ndim=" << b.grid.ndim << "\n"
       << "  trajectories: " << b.trajectories.size() << " x " << length << " snapshots, dt=" << b.dt
       << ", burn_in=" << b.burn_in << "\n"
       << "  splits: train=" << b.splits.train_ids.size() << " test=" << b.splits.test_ids.size()
       << " train_window=[" << b.splits.train_window.begin << "," << b.splits.train_window.end << ")"
       << " extrap_window=[" << b.splits.extrap_window.begin << "," << b.splits.extrap_window.end << ")\n"
       << "  norm: mean=" << b.norm.mean << " std=" << b.norm.std << "\n";
    float lo = 0.0f, hi = 0.0f;
    bool first = true;
    for (const Trajectory& t : b.trajectories) {
      for (const FieldSnapshot& s : t.snapshots) {
        const auto [mn, mx] = std::minmax_element(s.values.begin(), s.values.end());
        lo = first ? *mn : std::min(lo, *mn);
        hi = first ? *mx : std::max(hi, *mx);
        first = false;
      }
    }
    os << "  value range: [" << lo << ", " << hi << "]\n";
  } else if (kind == "checkpoint") {
    const Checkpoint c = load_checkpoint(path);
    std::size_t total = 0;
    for (const NamedArray& a : c.arrays) total += a.values.size();
    os << "checkpoint " << path.string() << "\n"
       << "  stage: " << c.stage << "\n"
       << "  config fingerprint: " << c.config_fingerprint << "\n"
       << "  arrays: " << c.arrays.size() << " (" << total << " parameters)\n"
       << "  architecture: " << c.architecture_json << "\n";
  } else if (kind == "latents") {
    const LatentDataset d = load_latents(path);
    os << "latents " << path.string() << "\n"
       << "  trajectories: " << d.trajectories.size();
    if (!d.trajectories.empty()) {
      os << " x " << d.trajectories.front().length() << " states, d_z=" << d.trajectories.front().dim()
         << ", dt=" << d.trajectories.front().dt;
    }
    os << "\n  window: " << d.window << "\n"
       << "  splits: train=" << d.train_ids.size() << " test=" << d.test_ids.size() << "\n";
  } else {
    throw IoError(path.string() + " is not a dataset, checkpoint or latent container");
  }
  return os.str();
}

} // namespace jerkrom::store
