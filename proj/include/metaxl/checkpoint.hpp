#pragma once

// Checkpoint files. Layout (little-endian):
//   "MXLCKPT1"
//   u64 manifest length, manifest JSON bytes
//   u64 tensor count, then per tensor in key order:
//     u64 name length, name, u64 rank, u64 dims[rank], f64 data[numel]
// Encoder tensors are keyed "theta/<name>", RTN tensors "phi/<name>".

#include <filesystem>
#include <string>
#include <vector>

#include "metaxl/autograd.hpp"
#include "metaxl/encoder.hpp"

namespace metaxl {

struct CheckpointManifest {
  std::string config_hash;
  std::string cell;
  std::size_t step = 0;
  double metric = 0.0;  // NaN allowed; stored as null
  EncoderConfig encoder;
  std::vector<std::string> label_names;
};

struct Checkpoint {
  CheckpointManifest manifest;
  ParamSet theta;
  ParamSet phi;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// Throws IoError on unreadable files and ParseError on corrupt ones.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metaxl
