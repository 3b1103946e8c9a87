#include "p2mark/checkpoint.hpp"

#include "p2mark/errors.hpp"

#include <cstring>
#include <set>
#include <sstream>

namespace p2mark {

namespace {

constexpr std::string_view kMagic = "p2mark-checkpoint 1";

std::string join_shape(const std::vector<int64_t>& shape) {
    if (shape.empty()) return "scalar";
    std::string s;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(shape[i]);
    }
    return s;
}

std::vector<int64_t> split_shape(const std::string& s) {
    std::vector<int64_t> shape;
    if (s == "scalar") return shape;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) shape.push_back(std::stoll(tok));
    return shape;
}

}  // namespace

std::string CheckpointManifest::serialize() const {
    std::ostringstream os;
    os << kMagic << '\n';
    for (const auto& [k, v] : metadata) os << "meta " << k << ' ' << v << '\n';
    for (const auto& t : tensors)
        os << "tensor " << t.name << ' ' << t.dtype << ' ' << join_shape(t.shape) << ' ' << t.offset << ' ' << t.nbytes
           << '\n';
    return os.str();
}

CheckpointManifest CheckpointManifest::parse(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kMagic) throw IngestionError("checkpoint: bad manifest header");
    CheckpointManifest m;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "meta") {
            std::string key, value;
            ls >> key;
            std::getline(ls >> std::ws, value);
            m.metadata[key] = value;
        } else if (tag == "tensor") {
            TensorEntry e;
            std::string shape;
            ls >> e.name >> e.dtype >> shape >> e.offset >> e.nbytes;
            if (!ls || e.dtype != "f32") throw IngestionError("checkpoint: malformed tensor line '" + line + "'");
            if (!seen.insert(e.name).second) throw IngestionError("checkpoint: duplicate tensor '" + e.name + "'");
            e.shape = split_shape(shape);
            m.tensors.push_back(std::move(e));
        } else {
            throw IngestionError("checkpoint: unknown manifest line '" + line + "'");
        }
    }
    return m;
}

std::optional<std::string> CheckpointManifest::get(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end()) return std::nullopt;
    return it->second;
}

std::string CheckpointManifest::require(const std::string& key) const {
    auto v = get(key);
    if (!v) throw IngestionError("checkpoint: manifest lacks '" + key + "'");
    return *v;
}

std::string_view checkpoint_kind_name(CheckpointKind kind) {
    switch (kind) {
        case CheckpointKind::kPretrained: return "pretrained";
        case CheckpointKind::kAdapter: return "adapter";
        case CheckpointKind::kInstance: return "instance";
    }
    return "unknown";
}

CheckpointKind Checkpoint::kind() const {
    const auto k = manifest.require("kind");
    if (k == "pretrained") return CheckpointKind::kPretrained;
    if (k == "adapter") return CheckpointKind::kAdapter;
    if (k == "instance") return CheckpointKind::kInstance;
    throw IngestionError("checkpoint: unknown kind '" + k + "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

const torch::Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw IngestionError("checkpoint: missing tensor '" + name + "'");
}

std::string tensor_bytes(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    return {reinterpret_cast<const char*>(c.data_ptr<float>()), static_cast<size_t>(c.numel()) * sizeof(float)};
}

std::string Checkpoint::content_hash() const {
    std::string all = manifest.serialize();
    for (const auto& [n, t] : tensors) all += tensor_bytes(t);
    return sha256_hex(all);
}

Checkpoint make_checkpoint(CheckpointKind kind, std::map<std::string, std::string> metadata,
                           const NamedTensorList& tensors, const std::string& config_json) {
    if (kind == CheckpointKind::kInstance && !metadata.contains("watermark"))
        throw StructuralError("checkpoint: instance checkpoints must carry a watermark");
    if (kind == CheckpointKind::kAdapter && metadata.contains("watermark"))
        throw StructuralError("checkpoint: adapter checkpoints must not carry a watermark");

    Checkpoint ck;
    ck.manifest.metadata = std::move(metadata);
    ck.manifest.metadata["kind"] = std::string(checkpoint_kind_name(kind));
    ck.config_json = config_json;
    std::set<std::string> names;
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        if (!names.insert(name).second) throw StructuralError("checkpoint: duplicate tensor '" + name + "'");
        TensorEntry e;
        e.name = name;
        e.shape = t.sizes().vec();
        e.offset = offset;
        e.nbytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
        offset += e.nbytes;
        ck.manifest.tensors.push_back(std::move(e));
        ck.tensors.emplace_back(name, t.detach().to(torch::kCPU, torch::kFloat32).contiguous().clone());
    }
    return ck;
}

void write_checkpoint(const fs::path& dir, const Checkpoint& ckpt, bool overwrite) {
    if (fs::exists(dir) && !overwrite)
        throw Error("refusing to overwrite existing '" + dir.string() + "' (use --force)");
    std::string blob;
    for (const auto& [name, t] : ckpt.tensors) blob += tensor_bytes(t);

    auto staging = dir;
    staging += ".partial";
    fs::remove_all(staging);
    fs::create_directories(staging);
    atomic_write_file(staging / "tensors.bin", blob);
    atomic_write_file(staging / "config.json", ckpt.config_json);
    atomic_write_file(staging / "manifest.txt", ckpt.manifest.serialize());
    if (fs::exists(dir)) fs::remove_all(dir);
    fs::rename(staging, dir);
}

Checkpoint read_checkpoint(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IngestionError("checkpoint: '" + dir.string() + "' is not a directory");
    Checkpoint ck;
    ck.manifest = CheckpointManifest::parse(read_file(dir / "manifest.txt"));
    ck.config_json = read_file(dir / "config.json");
    const std::string blob = read_file(dir / "tensors.bin");
    for (const auto& e : ck.manifest.tensors) {
        int64_t numel = 1;
        for (auto d : e.shape) numel *= d;
        if (e.nbytes != static_cast<uint64_t>(numel) * sizeof(float) || e.offset + e.nbytes > blob.size())
            throw IngestionError("checkpoint: tensor '" + e.name + "' does not fit the blob");
        auto t = torch::empty(e.shape, torch::kFloat32);
        std::memcpy(t.data_ptr<float>(), blob.data() + e.offset, e.nbytes);
        ck.tensors.emplace_back(e.name, t);
    }
    const auto kind = ck.kind();
    if (kind == CheckpointKind::kInstance && !ck.manifest.get("watermark"))
        throw IngestionError("checkpoint: instance without a watermark");
    if (kind == CheckpointKind::kAdapter && ck.manifest.get("watermark"))
        throw IngestionError("checkpoint: adapter checkpoint carries a watermark");
    return ck;
}

NamedTensorList module_state(const torch::nn::Module& module, const std::string& prefix) {
    NamedTensorList out;
    for (const auto& item : module.named_parameters(/*recurse=*/true))
        out.emplace_back(prefix + item.key(), item.value().detach().clone());
    for (const auto& item : module.named_buffers(/*recurse=*/true))
        out.emplace_back(prefix + item.key(), item.value().detach().clone());
    return out;
}

void load_module_state(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& prefix) {
    torch::NoGradGuard no_grad;
    for (auto& item : module.named_parameters(/*recurse=*/true)) {
        const auto& src = ckpt.tensor(prefix + item.key());
        if (!src.sizes().equals(item.value().sizes()))
            throw StructuralError("checkpoint: shape mismatch for '" + prefix + item.key() + "'");
        item.value().copy_(src);
    }
    for (auto& item : module.named_buffers(/*recurse=*/true)) item.value().copy_(ckpt.tensor(prefix + item.key()));
}

}  // namespace p2mark
