#pragma once

#include <torch/torch.h>

// libtorch defines a glog-style CHECK; the test macros take precedence.
#undef CHECK
#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

namespace mmfs::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("mmfs-" + tag + "-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
    return (a.to(torch::kDouble) - b.to(torch::kDouble)).abs().max().item<double>();
}

inline double max_rel_diff(const torch::Tensor& a, const torch::Tensor& b) {
    auto da = a.to(torch::kDouble), db = b.to(torch::kDouble);
    return ((da - db).abs().max() / db.abs().max().clamp_min(1e-30)).item<double>();
}

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
    return a.sizes() == b.sizes() && a.dtype() == b.dtype() && torch::equal(a, b);
}

inline torch::Generator seeded(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

// Central finite-difference gradient of a scalar function at x (double).
inline torch::Tensor numeric_gradient(const std::function<double(const torch::Tensor&)>& f, const torch::Tensor& x,
                                      double h = 1e-6) {
    auto flat = x.detach().clone().to(torch::kDouble).reshape({-1});
    auto grad = torch::zeros_like(flat);
    auto* g = grad.data_ptr<double>();
    for (int64_t i = 0; i < flat.numel(); ++i) {
        auto plus = flat.clone(), minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        g[i] = (f(plus.view(x.sizes())) - f(minus.view(x.sizes()))) / (2.0 * h);
    }
    return grad.view(x.sizes());
}

// Relative error ||a - n|| / max(||a||, ||n||) between analytic and numeric gradients.
inline double gradient_error(const torch::Tensor& analytic, const torch::Tensor& numeric) {
    auto a = analytic.to(torch::kDouble), n = numeric.to(torch::kDouble);
    const double denom = std::max({a.norm().item<double>(), n.norm().item<double>(), 1e-30});
    return (a - n).norm().item<double>() / denom;
}

inline std::string fixture_path(const std::string& name) { return std::string(MMFS_FIXTURE_DIR) + "/" + name; }

} // namespace mmfs::testing
