#pragma once

// Binary parameter checkpoints:
//   "ACTNETCK" | u32 version | u64 header length | JSON header | f64 payload | u64 FNV-1a
// The header holds the model kind, its config and the ordered (name, shape)
// table. Values are raw little-endian doubles, so round trips are bit-exact.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "actnet/tensor.h"
#include "json.hpp"

namespace actnet {

class CheckpointError : public std::runtime_error {
public:
    CheckpointError(std::string source, const std::string& what)
        : std::runtime_error(source + ": " + what), source_(std::move(source)) {}
    const std::string& source() const { return source_; }

private:
    std::string source_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct Checkpoint {
    std::string kind;  // "cnn" or "gcn"
    nlohmann::json config;
    std::vector<NamedTensor> tensors;
};

std::string encode_checkpoint(const std::string& kind, const nlohmann::json& config, const ParameterSet& params);
// `source` names the input in error messages. Nothing is returned unless the
// whole buffer validates.
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::string& path, const std::string& kind, const nlohmann::json& config,
                     const ParameterSet& params);
Checkpoint load_checkpoint(const std::string& path);

// Copies values into `params` after checking every name and shape; on any
// mismatch nothing is written. Optimizer moments are reset.
void restore_parameters(const Checkpoint& ckpt, ParameterSet& params);

}  // namespace actnet
