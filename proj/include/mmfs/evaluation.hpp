#pragma once

#include "mmfs/backbone.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <functional>

namespace mmfs {

struct ModelSet;

// Gaussian fit of a feature set; tensors are float64.
struct GaussianStats {
    torch::Tensor mean;  // [d]
    torch::Tensor cov;   // [d, d], unbiased
    int64_t count = 0;
};

// features [n, d] with n >= 2.
GaussianStats gaussian_stats(const torch::Tensor& features);

// Negative eigenvalues of the inner product matrix down to this value are
// treated as round-off and clipped; anything lower is reported.
inline constexpr double kFidEigenTolerance = 1e-6;

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
// The trace term is evaluated as tr((A^(1/2) S_b A^(1/2))^(1/2)) with
// A = S_a, using symmetric eigendecompositions only.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// 1 - cos(a, b) for two vectors (any norm, non-zero).
double arcface_dist(const torch::Tensor& a, const torch::Tensor& b);
// Row-wise version: [N, d] x [N, d] -> [N].
torch::Tensor arcface_dist_rows(const torch::Tensor& a, const torch::Tensor& b);

// Per-item LPIPS-style distance [N]: sum over embedder layers of the spatial
// mean of squared differences between channel-normalized features.
torch::Tensor lpips_rows(const torch::Tensor& a, const torch::Tensor& b, PerceptualEmbedder& embedder);
// Batch mean of lpips_rows.
double lpips_distance(const torch::Tensor& a, const torch::Tensor& b, PerceptualEmbedder& embedder);

struct StylizationMetrics {
    double fid = 0.0;
    double arcface_dist_mean = 0.0;
    double lpips_mean = 0.0;
    int64_t samples = 0;
    nlohmann::json to_json() const;
};

// (images [N, 3, R, R], z [N, d_z]) -> stylized images.
using RandomStylizer = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;

struct EvaluationEmbedders {
    FeatureBackbone& fid;       // global embedding used as the FID feature
    FeatureBackbone& identity;  // identity embedding for Arcface-Dist
    PerceptualEmbedder& perceptual;
};

// Random-stylization protocol: the first n_samples real images are each
// stylized twice with independent z. FID compares the first stylization with
// the style set; Arcface-Dist compares input and first stylization; LPIPS
// compares the two stylizations.
StylizationMetrics eval_random_stylization(const RandomStylizer& stylize, const torch::Tensor& real_images,
                                           const torch::Tensor& style_images, int64_t n_samples, uint64_t seed,
                                           EvaluationEmbedders embedders, int64_t z_dim, int64_t batch = 8);

// Same protocol with the model set's own encoder/decoder and toy embedders
// (clip for FID and identity, perceptual net for LPIPS).
StylizationMetrics eval_random_stylization(const ModelSet& models, const torch::Tensor& real_images,
                                           const torch::Tensor& style_images, int64_t n_samples, uint64_t seed);

} // namespace mmfs
