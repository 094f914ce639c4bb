#include "mmfs/util.hpp"

#include "mmfs/errors.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>

namespace mmfs {

namespace {

std::string to_hex(const unsigned char* data, size_t len) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (size_t i = 0; i < len; ++i) {
        out.push_back(digits[data[i] >> 4]);
        out.push_back(digits[data[i] & 0xF]);
    }
    return out;
}

struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr); }
    void update(const void* data, size_t len) { EVP_DigestUpdate(ctx_.get(), data, len); }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
        return to_hex(md.data(), len);
    }

private:
    std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx_;
};

void hash_tensor(Sha256& h, const std::string& name, const torch::Tensor& t) {
    h.update(name.data(), name.size());
    for (auto s : t.sizes()) h.update(&s, sizeof(s));
    auto c = t.detach().contiguous().cpu();
    h.update(c.data_ptr(), c.numel() * c.element_size());
}

} // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_hex(std::string_view bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string module_hash(const torch::nn::Module& module) {
    Sha256 h;
    for (const auto& p : module.named_parameters()) hash_tensor(h, p.key(), p.value());
    for (const auto& b : module.named_buffers()) hash_tensor(h, b.key(), b.value());
    return h.hex();
}

void set_trainable(torch::nn::Module& module, bool trainable) {
    for (auto& p : module.parameters()) p.set_requires_grad(trainable);
}

void copy_state(const torch::nn::Module& src, torch::nn::Module& dst) {
    torch::NoGradGuard guard;
    auto dst_params = dst.named_parameters();
    for (const auto& p : src.named_parameters()) {
        auto* target = dst_params.find(p.key());
        if (target == nullptr || target->sizes() != p.value().sizes()) {
            throw InvalidArgument("copy_state: parameter mismatch at '" + p.key() + "'");
        }
        target->copy_(p.value());
    }
    auto dst_buffers = dst.named_buffers();
    for (const auto& b : src.named_buffers()) {
        auto* target = dst_buffers.find(b.key());
        if (target == nullptr || target->sizes() != b.value().sizes()) {
            throw InvalidArgument("copy_state: buffer mismatch at '" + b.key() + "'");
        }
        target->copy_(b.value());
    }
}

std::string base64_encode(std::span<const unsigned char> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<size_t>(n));
    return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
    std::string clean;
    clean.reserve(text.size());
    for (char c : text) {
        if (c != '\n' && c != '\r' && c != ' ') clean.push_back(c);
    }
    if (clean.size() % 4 != 0) throw InvalidArgument("base64: length is not a multiple of 4");
    std::vector<unsigned char> out(3 * clean.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                  static_cast<int>(clean.size()));
    if (n < 0) throw InvalidArgument("base64: invalid characters");
    size_t pad = 0;
    if (!clean.empty() && clean.back() == '=') ++pad;
    if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
    out.resize(static_cast<size_t>(n) - pad);
    return out;
}

} // namespace mmfs
