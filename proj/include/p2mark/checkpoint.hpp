#pragma once

#include "p2mark/io.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace p2mark {

struct TensorEntry {
    std::string name;
    std::vector<int64_t> shape;
    std::string dtype = "f32";
    uint64_t offset = 0;
    uint64_t nbytes = 0;
};

// Plain-text description of a checkpoint directory:
//   p2mark-checkpoint 1
//   meta <key> <value>
//   tensor <name> f32 <d0,d1,...> <byte offset> <byte count>
// Blobs live in tensors.bin as little-endian IEEE-754 float32, row-major.
struct CheckpointManifest {
    std::map<std::string, std::string> metadata;
    std::vector<TensorEntry> tensors;

    std::string serialize() const;
    static CheckpointManifest parse(const std::string& text);

    std::optional<std::string> get(const std::string& key) const;
    std::string require(const std::string& key) const;
};

enum class CheckpointKind { kPretrained, kAdapter, kInstance };

std::string_view checkpoint_kind_name(CheckpointKind kind);

using NamedTensorList = std::vector<std::pair<std::string, torch::Tensor>>;

struct Checkpoint {
    CheckpointManifest manifest;
    NamedTensorList tensors;
    std::string config_json;

    CheckpointKind kind() const;
    const torch::Tensor& tensor(const std::string& name) const;
    bool has(const std::string& name) const;
    // sha256 over the manifest text and the tensor blob.
    std::string content_hash() const;
};

// Builds an in-memory checkpoint, laying out the manifest exactly as it will be written.
// Instance checkpoints must carry a "watermark" entry; adapter checkpoints must not.
Checkpoint make_checkpoint(CheckpointKind kind, std::map<std::string, std::string> metadata,
                           const NamedTensorList& tensors, const std::string& config_json);

// Writes <dir>.partial/ and renames it to <dir>. Throws Error when <dir> exists and overwrite
// is false.
void write_checkpoint(const fs::path& dir, const Checkpoint& ckpt, bool overwrite = false);

Checkpoint read_checkpoint(const fs::path& dir);

// Parameters (and buffers) of `module` as "<prefix><name>" entries, detached copies.
NamedTensorList module_state(const torch::nn::Module& module, const std::string& prefix);

// Copies "<prefix><name>" tensors into the matching parameters of `module`. Every parameter must
// be present with the same shape.
void load_module_state(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& prefix);

// Raw float32 bytes of a tensor, row-major.
std::string tensor_bytes(const torch::Tensor& t);

}  // namespace p2mark
