#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mmfs {

// Runs `fn` with torch's default CPU generator seeded to `seed`, restoring the
// previous generator state afterwards. All parameter initialization goes
// through here so model construction never leaks RNG state.
template <class Fn>
auto with_seed(uint64_t seed, Fn&& fn) {
    auto gen = at::detail::getDefaultCPUGenerator();
    auto saved = gen.get_state();
    struct Restore {
        at::Generator gen;
        at::Tensor state;
        ~Restore() { gen.set_state(state); }
    } restore{gen, saved};
    {
        std::lock_guard<std::mutex> lock(gen.mutex());
        gen.set_current_seed(seed);
    }
    return std::forward<Fn>(fn)();
}

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view bytes);

// Hash of every named parameter and buffer (names, shapes, raw bytes).
std::string module_hash(const torch::nn::Module& module);

void set_trainable(torch::nn::Module& module, bool trainable);

// Copies parameter and buffer values by name; shapes must match.
void copy_state(const torch::nn::Module& src, torch::nn::Module& dst);

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(std::string_view text);

} // namespace mmfs
