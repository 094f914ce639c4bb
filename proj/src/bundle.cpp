#include "mmfs/bundle.hpp"

#include "mmfs/errors.hpp"
#include "mmfs/util.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace mmfs {

static_assert(std::endian::native == std::endian::little, "bundle blobs are written in host order");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

} // namespace

void write_bundle(const fs::path& dir, const TensorBundle& bundle) {
    fs::create_directories(dir);
    std::string blob;
    json table = json::object();
    for (const auto& [name, tensor] : bundle.tensors) {
        auto t = tensor.detach().to(torch::kCPU, torch::kFloat).contiguous();
        const auto bytes = static_cast<size_t>(t.numel()) * sizeof(float);
        std::string_view view(static_cast<const char*>(t.data_ptr()), bytes);
        table[name] = {
            {"dtype", "f32"},
            {"shape", t.sizes().vec()},
            {"file", kBlobName},
            {"byte_offset", blob.size()},
            {"byte_length", bytes},
            {"checksum", sha256_hex(view)},
        };
        blob.append(view);
    }
    json manifest = {
        {"format_version", kBundleFormatVersion},
        {"kind", bundle.kind},
        {"config", bundle.config},
        {"tensors", table},
    };
    write_file(dir / kBlobName, blob);
    write_file(dir / kManifestName, manifest.dump(2) + "\n");
}

TensorBundle read_bundle(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_file(dir / kManifestName));
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!manifest.contains("format_version") || !manifest["format_version"].is_number_integer()) {
        throw FormatError("manifest lacks format_version");
    }
    const int version = manifest["format_version"].get<int>();
    if (version != kBundleFormatVersion) {
        throw MigrationError("bundle format_version " + std::to_string(version) + " requires migration to " +
                             std::to_string(kBundleFormatVersion));
    }

    TensorBundle bundle;
    bundle.kind = manifest.value("kind", "");
    bundle.config = manifest.value("config", json::object());

    std::map<std::string, std::string> blobs;
    for (const auto& [name, entry] : manifest.at("tensors").items()) {
        try {
            if (entry.at("dtype") != "f32") throw FormatError("unsupported dtype for tensor '" + name + "'", name);
            const auto file = entry.at("file").get<std::string>();
            if (file.find('/') != std::string::npos || file.find("..") != std::string::npos) {
                throw FormatError("tensor '" + name + "' references a file outside the bundle", name);
            }
            if (!blobs.contains(file)) blobs[file] = read_file(dir / file);
            const auto& blob = blobs[file];
            const auto offset = entry.at("byte_offset").get<size_t>();
            const auto length = entry.at("byte_length").get<size_t>();
            const auto shape = entry.at("shape").get<std::vector<int64_t>>();
            int64_t numel = 1;
            for (auto s : shape) numel *= s;
            if (static_cast<size_t>(numel) * sizeof(float) != length) {
                throw FormatError("tensor '" + name + "' byte_length disagrees with its shape", name);
            }
            if (offset + length > blob.size()) {
                throw FormatError("tensor '" + name + "' is truncated (missing bytes in " + file + ")", name);
            }
            std::string_view view(blob.data() + offset, length);
            if (sha256_hex(view) != entry.at("checksum").get<std::string>()) {
                throw CorruptionError("checksum mismatch for tensor '" + name + "'", name);
            }
            auto t = torch::empty(shape, torch::kFloat);
            std::memcpy(t.data_ptr(), view.data(), length);
            bundle.tensors.emplace(name, std::move(t));
        } catch (const json::exception& e) {
            throw FormatError("malformed manifest entry for tensor '" + name + "': " + e.what(), name);
        }
    }
    return bundle;
}

void add_module(TensorBundle& bundle, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& p : module.named_parameters()) bundle.tensors[prefix + "." + p.key()] = p.value();
    for (const auto& b : module.named_buffers()) bundle.tensors[prefix + "." + b.key()] = b.value();
}

void load_module(const TensorBundle& bundle, const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard guard;
    auto assign = [&](const std::string& key, torch::Tensor& target) {
        const auto name = prefix + "." + key;
        auto it = bundle.tensors.find(name);
        if (it == bundle.tensors.end()) throw FormatError("missing tensor '" + name + "'", name);
        if (it->second.sizes() != target.sizes()) {
            throw FormatError("shape mismatch for tensor '" + name + "'", name);
        }
        target.copy_(it->second);
    };
    for (auto& p : module.named_parameters()) assign(p.key(), p.value());
    for (auto& b : module.named_buffers()) assign(b.key(), b.value());
}

} // namespace mmfs
