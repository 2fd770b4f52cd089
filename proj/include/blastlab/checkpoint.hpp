#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "blastlab/nn.hpp"
#include "blastlab/tensor.hpp"

namespace blastlab {

/// Self-describing parameter container. Byte layout (all little-endian, see
/// docs/formats.md):
///   magic "BLABCKPT" | u32 version | u32 topology_len | topology bytes |
///   u64 seed | u64 train_step | u32 entry_count |
///   per entry: u32 name_len | name | u32 ndim | u64 dims[] | f64 data[]
/// Round-trips are bit-exact: doubles are written raw.
struct CheckpointMeta {
  std::string topology;
  std::uint64_t seed = 0;
  std::uint64_t train_step = 0;
};

struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Convenience wrappers for RecurrentQNetwork parameters.
Checkpoint checkpoint_of(RecurrentQNetwork& net, const CheckpointMeta& meta);
void restore_into(RecurrentQNetwork& net, const Checkpoint& ckpt);

}  // namespace blastlab
