#pragma once

#include <cstdint>
#include <string>

#include "ripple/grad_vector.hpp"
#include "ripple/model.hpp"

namespace ripple::store {

// Checkpoint container: magic "RIPL0001", 4-byte little-endian header length,
// JSON header with one (name, shape, dtype, offset) entry per tensor plus a
// payload CRC, then the raw little-endian f64 payload. Tensors are written in
// canonical (name-sorted) order; save -> load round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ad::NamedParams& tensors);
ad::NamedParams load_checkpoint(const std::string& path);

std::uint32_t crc32(const void* data, size_t len);

// Model persistence: checkpoint plus a JSON config sidecar at `path`.meta.json.
void save_model(const std::string& path, const models::Model& model);
models::Model load_model(const std::string& path);

}  // namespace ripple::store
