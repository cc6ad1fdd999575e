#pragma once

#include <iosfwd>
#include <string>

#include "evoad/nn.hpp"

// Model checkpoint container:
//
//   bytes 0..7   magic "EVOADNN\0"
//   u32 LE       format version (1)
//   u64 LE       header length H
//   H bytes      UTF-8 JSON header: input shape, per-layer kind and
//                hyperparameters, and the ordered tensor table (name, rows, cols)
//   payload      every tensor from the table as little-endian IEEE-754 float32,
//                row-major, in table order (parameters then buffers per layer)
namespace evoad::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const Network<float>& net);
Network<float> load_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const Network<float>& net);
Network<float> load_checkpoint(const std::string& path);

// Serialized bytes, handy for bit-exact comparisons.
std::string checkpoint_bytes(const Network<float>& net);

}  // namespace evoad::nn
