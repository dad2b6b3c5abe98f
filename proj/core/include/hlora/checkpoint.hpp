#pragma once

#include <string>

#include "hlora/model.hpp"

namespace hlora {

// Text header (format tag, stage, config hash, adapter mode, entry manifest
// with shapes) followed by a raw little-endian float32 payload, one entry per
// named parameter. save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const UnifiedModel& model,
                     const std::string& stage, uint64_t config_hash);

struct CheckpointInfo {
    std::string stage;
    uint64_t config_hash = 0;
    AdapterMode mode = AdapterMode::task_gated;
};

// Reads only the header.
CheckpointInfo peek_checkpoint(const std::string& path);

// Restores every named parameter. The stored config hash must match
// expected_hash unless force is set; the adapter mode must always match.
CheckpointInfo load_checkpoint(const std::string& path, UnifiedModel& model,
                               uint64_t expected_hash, bool force = false);

}  // namespace hlora
