#pragma once

// Checkpoint container (version 1), all integers and floats little-endian:
//
//   offset  size        field
//   0       8           magic "MGSCKPT\0"
//   8       4   u32     format version (1)
//   12      4   u32     number of layer sizes L
//   16      4*L u32     layer sizes, input (data + embedding) to output
//   ..      4   u32     timestep embedding width
//   ..      8   u64     base schedule fingerprint
//   ..      8   u64     training stream key
//   ..      8   u64     optimizer steps taken
//   ..      8   u64     parameter count P
//   ..      8*P f64     flattened parameters (MlpEpsModel::parameters order)
//   ..      8   u64     FNV-1a hash of every preceding byte

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "minority/errors.hpp"
#include "minority/mlp.hpp"
#include "minority/schedule.hpp"

namespace minority {

inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'G', 'S', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint64_t schedule_fingerprint = 0;
  std::uint64_t training_seed = 0;
  std::uint64_t steps_trained = 0;
};

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    std::uint64_t bits = 0;
    if constexpr (std::is_floating_point_v<T>) {
      bits = std::bit_cast<std::uint64_t>(static_cast<double>(value));
    } else {
      bits = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  std::vector<char> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw FormatError("checkpoint is truncated");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::size_t position() const noexcept { return pos_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const MlpEpsModel& model, const NoiseSchedule& sched, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
  w.put<std::uint32_t>(kCheckpointVersion);
  const auto sizes = model.architecture().layer_sizes();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sizes.size()));
  for (int s : sizes) w.put<std::uint32_t>(static_cast<std::uint32_t>(s));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.architecture().embed_dim));
  w.put<std::uint64_t>(sched.base_fingerprint());
  w.put<std::uint64_t>(model.training_seed());
  w.put<std::uint64_t>(model.steps_trained());
  const Vec params = model.parameters();
  w.put<std::uint64_t>(static_cast<std::uint64_t>(params.size()));
  for (Eigen::Index i = 0; i < params.size(); ++i) w.put<double>(params[i]);
  w.put<std::uint64_t>(detail::fnv1a(w.bytes.data(), w.bytes.size()));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

/// Reads a checkpoint without checking which schedule it was trained on.
inline MlpEpsModel load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kCheckpointMagic.size() ||
      !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw FormatError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  detail::ByteReader r(bytes);
  for (std::size_t i = 0; i < kCheckpointMagic.size(); ++i) r.get<std::uint8_t>();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto n_sizes = r.get<std::uint32_t>();
  if (n_sizes < 2 || n_sizes > 64) throw FormatError("checkpoint has an invalid layer count");
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i < n_sizes; ++i) sizes.push_back(static_cast<int>(r.get<std::uint32_t>()));
  const auto embed = static_cast<int>(r.get<std::uint32_t>());
  CheckpointInfo meta;
  meta.schedule_fingerprint = r.get<std::uint64_t>();
  meta.training_seed = r.get<std::uint64_t>();
  meta.steps_trained = r.get<std::uint64_t>();
  const auto count = r.get<std::uint64_t>();

  MlpArchitecture arch;
  arch.dim = sizes.back();
  arch.embed_dim = embed;
  arch.hidden_layers = static_cast<int>(n_sizes) - 2;
  arch.width = n_sizes > 2 ? sizes[1] : 1;
  if (arch.layer_sizes() != sizes) throw FormatError("checkpoint layer sizes are inconsistent");

  if (count > bytes.size() / sizeof(double)) throw FormatError("checkpoint is truncated");
  Vec params(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) params[static_cast<Eigen::Index>(i)] = r.get<double>();
  const std::size_t hashed = r.position();
  const auto stored_hash = r.get<std::uint64_t>();
  if (stored_hash != detail::fnv1a(bytes.data(), hashed)) throw FormatError("checkpoint checksum mismatch");
  if (r.position() != bytes.size()) throw FormatError("checkpoint has trailing bytes");

  MlpEpsModel model(arch, params);
  model.record_training(meta.steps_trained, {}, meta.training_seed);
  if (info) *info = meta;
  return model;
}

/// Reads a checkpoint and requires it to match the base of `sched`.
inline MlpEpsModel load_checkpoint(const std::filesystem::path& path, const NoiseSchedule& sched) {
  CheckpointInfo info;
  MlpEpsModel model = load_checkpoint(path, &info);
  if (info.schedule_fingerprint != sched.base_fingerprint()) {
    throw FormatError("checkpoint was trained on a different noise schedule");
  }
  return model;
}

}  // namespace minority
