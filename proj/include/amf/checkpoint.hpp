#pragma once

#include <string>
#include <vector>

#include "amf/optimizer.hpp"
#include "amf/tensor.hpp"

namespace amf {

// Checkpoint format: `<stem>.manifest` (text: version line, then one line per
// array with name, shape and byte offset) plus `<stem>.blob` (raw
// little-endian float64 in manifest order). The same format carries
// precomputed image embeddings.

void save_arrays(const std::string& stem,
                 const std::vector<std::pair<std::string, Tensor>>& arrays);

std::vector<std::pair<std::string, Tensor>> load_arrays(const std::string& stem);

inline void save_checkpoint(const std::string& stem, const ParamList& params) {
    save_arrays(stem, params.items);
}

// Copies loaded values into the existing parameter tensors; names and shapes
// must match exactly.
void load_checkpoint(const std::string& stem, ParamList& params);

}  // namespace amf
