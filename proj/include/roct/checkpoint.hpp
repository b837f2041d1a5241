// Binary parameter container. Layout, all little-endian: magic "ROCTCKPT",
// u32 format version, u32 metadata pair count followed by length-prefixed
// UTF-8 key/value strings, u32 parameter count, then per parameter: name,
// u32 rank, u32 extents, raw float64 payload.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "roct/model.hpp"

namespace roct {

constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadReport {
    std::vector<std::string> copied;
    std::vector<std::string> skipped_shape;  // name exists on both sides, shapes conflict
    std::vector<std::string> only_in_file;   // ignored payload
    std::vector<std::string> only_in_model;  // parameters left at their current values
    bool clean() const { return skipped_shape.empty() && only_in_file.empty() && only_in_model.empty(); }
};

// Writes every registered parameter (trainable or not) plus enough metadata
// to rebuild the graph. extra_meta entries are stored verbatim.
void save_checkpoint(const ModelGraph& m, const std::string& path,
                     const std::map<std::string, std::string>& extra_meta = {});

// strict=true demands a perfect one-to-one match and throws otherwise;
// strict=false copies what matches and reports the rest, which is how a
// 4-class checkpoint seeds a 5-class model.
LoadReport load_checkpoint(const std::string& path, ModelGraph& m, bool strict);

std::map<std::string, std::string> read_checkpoint_metadata(const std::string& path);

// Reconstructs the architecture recorded in checkpoint metadata (weights are
// freshly initialized; follow with load_checkpoint).
ModelGraph model_from_metadata(const std::map<std::string, std::string>& meta, std::uint64_t seed);

}  // namespace roct
