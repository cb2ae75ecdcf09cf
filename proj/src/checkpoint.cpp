#include "respec/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "respec/errors.hpp"

namespace respec::ckpt {

namespace {

constexpr char kMagic[8] = {'R', 'S', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kMaxNameLen = 4096;
constexpr uint32_t kMaxRank = 8;
constexpr uint32_t kMaxDim = 1u << 30;

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

// Bounds-checked reader over the raw file bytes.
struct Cursor {
  const uint8_t* p;
  size_t n;
  size_t off = 0;

  void need(size_t k, const char* what) const {
    if (off + k > n)
      throw LoadError(LoadError::Kind::truncated,
                      std::string("checkpoint ends inside ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = static_cast<uint32_t>(p[off]) | (static_cast<uint32_t>(p[off + 1]) << 8) |
                 (static_cast<uint32_t>(p[off + 2]) << 16) |
                 (static_cast<uint32_t>(p[off + 3]) << 24);
    off += 4;
    return v;
  }
  std::string bytes(size_t k, const char* what) {
    need(k, what);
    std::string s(reinterpret_cast<const char*>(p + off), k);
    off += k;
    return s;
  }
};

}  // namespace

const TensorEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::string out;
  out.append(kMagic, sizeof kMagic);

  const std::string meta = c.meta.dump();  // sorted keys: stable bytes
  put_u32(out, static_cast<uint32_t>(meta.size()));
  out += meta;

  put_u32(out, static_cast<uint32_t>(c.tensors.size()));
  size_t payload = 0;
  for (const auto& t : c.tensors) {
    if (t.name.empty() || t.name.size() > kMaxNameLen)
      throw SaveError("checkpoint tensor has an empty or oversized name");
    put_u32(out, static_cast<uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    size_t numel = 1;
    for (int64_t d : t.shape) {
      if (d <= 0 || d > static_cast<int64_t>(kMaxDim))
        throw SaveError("checkpoint tensor " + t.name + " has a bad dimension");
      put_u32(out, static_cast<uint32_t>(d));
      numel *= static_cast<size_t>(d);
    }
    if (numel != t.values.size())
      throw SaveError("checkpoint tensor " + t.name + " shape does not match its data");
    payload += numel;
  }
  out.reserve(out.size() + 4 * payload);
  for (const auto& t : c.tensors)
    for (float f : t.values) put_u32(out, std::bit_cast<uint32_t>(f));

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw SaveError("cannot open " + path + " for writing");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  os.flush();
  if (!os) throw SaveError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError(LoadError::Kind::io, "cannot open " + path);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
  Cursor cur{raw.data(), raw.size()};

  std::string magic = cur.bytes(sizeof kMagic, "the magic");
  if (magic != std::string(kMagic, sizeof kMagic))
    throw LoadError(LoadError::Kind::bad_magic, path + " is not a checkpoint file");

  Checkpoint c;
  uint32_t meta_len = cur.u32("the meta length");
  std::string meta = cur.bytes(meta_len, "the meta block");
  c.meta = nlohmann::json::parse(meta, nullptr, /*allow_exceptions=*/false);
  if (c.meta.is_discarded() || !c.meta.is_object())
    throw LoadError(LoadError::Kind::malformed, "checkpoint meta is not a JSON object");

  uint32_t count = cur.u32("the tensor count");
  size_t payload = 0;
  c.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    TensorEntry t;
    uint32_t name_len = cur.u32("a tensor name length");
    if (name_len == 0 || name_len > kMaxNameLen)
      throw LoadError(LoadError::Kind::malformed, "checkpoint tensor name length is insane");
    t.name = cur.bytes(name_len, "a tensor name");
    uint32_t rank = cur.u32("a tensor rank");
    if (rank == 0 || rank > kMaxRank)
      throw LoadError(LoadError::Kind::malformed,
                      "checkpoint tensor " + t.name + " has an insane rank");
    size_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      uint32_t d = cur.u32("a tensor dimension");
      if (d == 0 || d > kMaxDim)
        throw LoadError(LoadError::Kind::malformed,
                        "checkpoint tensor " + t.name + " has a bad dimension");
      t.shape.push_back(static_cast<int64_t>(d));
      numel *= d;
      // An element count beyond the file size can never be satisfied; bail
      // before the running products can overflow.
      if (numel > raw.size())
        throw LoadError(LoadError::Kind::truncated, "checkpoint ends inside the payload");
    }
    payload += numel;
    if (payload > raw.size())
      throw LoadError(LoadError::Kind::truncated, "checkpoint ends inside the payload");
    c.tensors.push_back(std::move(t));
  }

  // Validate the payload size before allocating anything payload-sized, so a
  // corrupt dimension cannot trigger a giant allocation.
  size_t remaining = raw.size() - cur.off;
  if (remaining < 4 * payload)
    throw LoadError(LoadError::Kind::truncated, "checkpoint ends inside the payload");
  if (remaining > 4 * payload)
    throw LoadError(LoadError::Kind::malformed, "checkpoint has trailing bytes");

  for (auto& t : c.tensors) {
    size_t numel = 1;
    for (int64_t d : t.shape) numel *= static_cast<size_t>(d);
    t.values.resize(numel);
    for (size_t k = 0; k < numel; ++k)
      t.values[k] = std::bit_cast<float>(cur.u32("the payload"));
  }
  return c;
}

void add_params(Checkpoint& c, const std::vector<nn::ParamView<float>>& params) {
  for (const auto& p : params) {
    TensorEntry t;
    t.name = p.name;
    t.shape.assign(p.value->shape.begin(), p.value->shape.end());
    t.values.assign(p.value->data.begin(), p.value->data.end());
    c.tensors.push_back(std::move(t));
  }
}

void restore_params(const Checkpoint& c, const std::vector<nn::ParamView<float>>& params) {
  std::unordered_map<std::string, const TensorEntry*> by_name;
  for (const auto& t : c.tensors) {
    if (!by_name.emplace(t.name, &t).second)
      throw LoadError(LoadError::Kind::malformed,
                      "checkpoint has duplicate tensor " + t.name);
  }
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw LoadError(LoadError::Kind::malformed,
                      "checkpoint is missing tensor " + p.name);
    const TensorEntry& t = *it->second;
    std::vector<int64_t> want(p.value->shape.begin(), p.value->shape.end());
    if (t.shape != want)
      throw LoadError(LoadError::Kind::malformed,
                      "checkpoint tensor " + p.name + " has the wrong shape");
    std::copy(t.values.begin(), t.values.end(), p.value->data.begin());
  }
}

}  // namespace respec::ckpt
