#pragma once

// Flat binary parameter checkpoints, shared by every model family.
//
// Layout (all integers little-endian, independent of host byte order):
//   bytes 0..7   magic "RSPCKPT1" (version is part of the magic)
//   u32          meta length M, then M bytes of UTF-8 JSON (one object)
//   u32          tensor count T
//   T records    u32 name length + name bytes, u32 rank, rank x u32 dims
//   payload      for each tensor in record order, numel x f32 (LE bit pattern)
// The file ends exactly at the end of the payload; trailing bytes are an
// error. JSON meta is dumped with sorted keys, so identical contents produce
// identical files.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "respec/nn.hpp"

namespace respec::ckpt {

struct TensorEntry {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> values;  // flat, row-major
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorEntry> tensors;

  // nullptr when absent.
  const TensorEntry* find(const std::string& name) const;
};

// Throws SaveError if the file cannot be written.
void save_checkpoint(const std::string& path, const Checkpoint& c);

// Throws LoadError: io (unreadable), bad_magic, truncated (header or payload
// cut short), malformed (bad meta JSON, insane table entry, trailing bytes).
Checkpoint load_checkpoint(const std::string& path);

// Append every parameter's current value to the checkpoint, preserving the
// params() order and names.
void add_params(Checkpoint& c, const std::vector<nn::ParamView<float>>& params);

// Copy values back into a model's parameters. Every parameter must be present
// in the checkpoint with an identical shape; throws LoadError::malformed on a
// missing name, duplicate name, or shape mismatch.
void restore_params(const Checkpoint& c, const std::vector<nn::ParamView<float>>& params);

}  // namespace respec::ckpt
