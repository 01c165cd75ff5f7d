#pragma once

#include "dca/model.hpp"

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace dca {

// Named-tensor container with a JSON metadata block. The on-disk format is
// fixed: magic "DCA1", u32 version, u64-length-prefixed UTF-8 JSON metadata,
// a tensor directory (name, dtype, shape, payload offset) and raw
// little-endian float32 payloads.
struct Checkpoint {
    static constexpr uint32_t kFormatVersion = 1;

    nlohmann::json meta;
    std::vector<std::pair<std::string, Mat>> tensors;  // sorted by name

    const Mat* find(const std::string& name) const;
};

// Digest identifying the architecture a tensor set belongs to
// (model config + vocabulary), hex-encoded.
std::string model_config_digest(const ModelConfig& cfg, const Vocab& vocab);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Snapshot of the full parameter set plus enough metadata to rebuild it.
Checkpoint snapshot(const ModelState& state);
ModelState to_model_state(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Convenience wrappers over the spec operations.
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_model_state(const std::string& path);

// Elementwise alpha*a + (1-alpha)*b; endpoint alphas copy the respective
// parent bit-for-bit. Metadata records both parents and alpha.
Checkpoint interpolate_weights(const Checkpoint& a, const Checkpoint& b, double alpha);

} // namespace dca
