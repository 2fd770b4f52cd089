#include "blastlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "blastlab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace blastlab {

namespace {

constexpr char kMagic[8] = {'B', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_str(std::istream& is) {
  const std::uint32_t len = read_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  return s;
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof kMagic);
  write_u32(os, kVersion);
  write_str(os, ckpt.meta.topology);
  write_u64(os, ckpt.meta.seed);
  write_u64(os, ckpt.meta.train_step);
  write_u32(os, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    write_str(os, e.name);
    write_u32(os, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) write_u64(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size() * sizeof(double)));
  }
  if (!os) throw ConfigError("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ConfigError("not a checkpoint file: " + path);
  const std::uint32_t version = read_u32(is);
  if (version != kVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.meta.topology = read_str(is);
  ckpt.meta.seed = read_u64(is);
  ckpt.meta.train_step = read_u64(is);
  const std::uint32_t count = read_u32(is);
  ckpt.entries.resize(count);
  for (auto& e : ckpt.entries) {
    e.name = read_str(is);
    const std::uint32_t ndim = read_u32(is);
    e.shape.resize(ndim);
    std::size_t numel = 1;
    for (auto& d : e.shape) {
      d = static_cast<int>(read_u64(is));
      numel *= static_cast<std::size_t>(d);
    }
    e.data.resize(numel);
    is.read(reinterpret_cast<char*>(e.data.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
  }
  if (!is) throw ConfigError("truncated checkpoint: " + path);
  return ckpt;
}

Checkpoint checkpoint_of(RecurrentQNetwork& net, const CheckpointMeta& meta) {
  Checkpoint ckpt;
  ckpt.meta = meta;
  ckpt.meta.topology = net.topology();
  for (auto& [name, t] : net.named_parameters()) {
    ckpt.entries.push_back(
        {name, t.shape(), std::vector<double>(t.values().begin(), t.values().end())});
  }
  return ckpt;
}

void restore_into(RecurrentQNetwork& net, const Checkpoint& ckpt) {
  if (ckpt.meta.topology != net.topology())
    throw ContractError("checkpoint topology " + ckpt.meta.topology +
                        " does not match network " + net.topology());
  for (auto& [name, t] : net.named_parameters()) {
    const CheckpointEntry* e = ckpt.find(name);
    if (!e) throw ContractError("checkpoint missing entry: " + name);
    if (e->shape != t.shape())
      throw ShapeError("checkpoint entry " + name + " shape " + shape_str(e->shape) +
                       " vs network " + shape_str(t.shape()));
    std::copy(e->data.begin(), e->data.end(), t.mutable_values().begin());
  }
}

}  // namespace blastlab
