#include "mmfs/evaluation.hpp"

#include "mmfs/errors.hpp"
#include "mmfs/models.hpp"

#include <cmath>

namespace mmfs {

GaussianStats gaussian_stats(const torch::Tensor& features) {
    if (features.dim() != 2) throw InvalidArgument("gaussian_stats: expected [n, d] features");
    const auto n = features.size(0);
    if (n < 2) throw InvalidArgument("gaussian_stats: need at least two samples");
    auto x = features.detach().to(torch::kDouble);
    GaussianStats s;
    s.count = n;
    s.mean = x.mean(0);
    auto centered = x - s.mean;
    auto cov = torch::matmul(centered.t(), centered) / static_cast<double>(n - 1);
    s.cov = 0.5 * (cov + cov.t());
    return s;
}

namespace {

// Eigen-decomposition of a symmetric matrix with round-off clipping.
std::pair<torch::Tensor, torch::Tensor> checked_eigh(const torch::Tensor& m, const char* what) {
    auto [vals, vecs] = torch::linalg_eigh(0.5 * (m + m.t()));
    const double lowest = vals.min().item<double>();
    if (lowest < -kFidEigenTolerance) {
        throw NumericalHealthError(std::string("frechet_distance: ") + what + " has eigenvalue " +
                                   std::to_string(lowest));
    }
    return {vals.clamp_min(0.0), vecs};
}

} // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (!a.mean.defined() || !b.mean.defined()) throw InvalidArgument("frechet_distance: empty statistics");
    if (a.mean.size(0) != b.mean.size(0)) throw InvalidArgument("frechet_distance: feature dimensions differ");
    auto mu_a = a.mean.to(torch::kDouble), mu_b = b.mean.to(torch::kDouble);
    auto sa = a.cov.to(torch::kDouble), sb = b.cov.to(torch::kDouble);

    auto [va, qa] = checked_eigh(sa, "first covariance");
    auto sqrt_a = torch::matmul(qa * va.sqrt().unsqueeze(0), qa.t());
    auto inner = torch::matmul(torch::matmul(sqrt_a, sb), sqrt_a);
    auto [vi, qi] = checked_eigh(inner, "covariance product");
    const double tr_sqrt = vi.sqrt().sum().item<double>();

    const double mean_term = (mu_a - mu_b).square().sum().item<double>();
    const double value = mean_term + sa.trace().item<double>() + sb.trace().item<double>() - 2.0 * tr_sqrt;
    return std::max(value, 0.0);
}

torch::Tensor arcface_dist_rows(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes() || a.dim() != 2) throw InvalidArgument("arcface_dist: expected matching [N, d] inputs");
    auto na = a.norm(2, 1), nb = b.norm(2, 1);
    if ((na == 0).any().item<bool>() || (nb == 0).any().item<bool>()) {
        throw DegenerateInput("arcface_dist: zero embedding");
    }
    auto cos = (a * b).sum(1) / (na * nb);
    return (1.0 - cos).clamp(0.0, 2.0);
}

double arcface_dist(const torch::Tensor& a, const torch::Tensor& b) {
    return arcface_dist_rows(a.reshape({1, -1}), b.reshape({1, -1})).item<double>();
}

torch::Tensor lpips_rows(const torch::Tensor& a, const torch::Tensor& b, PerceptualEmbedder& embedder) {
    if (a.sizes() != b.sizes()) throw InvalidArgument("lpips_distance: image shapes differ");
    auto fa = embedder.features(a);
    auto fb = embedder.features(b);
    auto total = torch::zeros({a.size(0)}, a.options());
    constexpr double eps = 1e-10;
    for (size_t l = 0; l < fa.size(); ++l) {
        auto na = fa[l] / (fa[l].norm(2, 1, true) + eps);
        auto nb = fb[l] / (fb[l].norm(2, 1, true) + eps);
        total = total + (na - nb).square().sum(1).mean({1, 2});
    }
    return total;
}

double lpips_distance(const torch::Tensor& a, const torch::Tensor& b, PerceptualEmbedder& embedder) {
    torch::NoGradGuard guard;
    return lpips_rows(a, b, embedder).mean().item<double>();
}

nlohmann::json StylizationMetrics::to_json() const {
    return {{"fid", fid}, {"arcface_dist_mean", arcface_dist_mean}, {"lpips_mean", lpips_mean}, {"samples", samples}};
}

StylizationMetrics eval_random_stylization(const RandomStylizer& stylize, const torch::Tensor& real_images,
                                           const torch::Tensor& style_images, int64_t n_samples, uint64_t seed,
                                           EvaluationEmbedders embedders, int64_t z_dim, int64_t batch) {
    if (n_samples < 1) throw InvalidArgument("eval_random_stylization: n_samples must be positive");
    if (!style_images.defined() || style_images.size(0) == 0) {
        throw InvalidArgument("eval_random_stylization: empty style set");
    }
    if (n_samples > real_images.size(0)) {
        throw InvalidArgument("eval_random_stylization: n_samples exceeds the available real images");
    }
    torch::NoGradGuard guard;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    const auto side = embedders.fid.dims().resolution;
    const auto id_side = embedders.identity.dims().resolution;

    std::vector<torch::Tensor> gen_features, identity, lpips;
    for (int64_t start = 0; start < n_samples; start += batch) {
        const auto count = std::min(batch, n_samples - start);
        auto real = real_images.narrow(0, start, count);
        auto z1 = torch::randn({count, z_dim}, gen);
        auto z2 = torch::randn({count, z_dim}, gen);
        auto s1 = stylize(real, z1);
        auto s2 = stylize(real, z2);
        gen_features.push_back(embedders.fid.embed_image(resize_for_backbone(s1, side)));
        identity.push_back(arcface_dist_rows(embedders.identity.embed_image(resize_for_backbone(real, id_side)),
                                             embedders.identity.embed_image(resize_for_backbone(s1, id_side))));
        lpips.push_back(lpips_rows(s1, s2, embedders.perceptual));
    }
    std::vector<torch::Tensor> style_features;
    for (int64_t start = 0; start < style_images.size(0); start += batch) {
        const auto count = std::min(batch, style_images.size(0) - start);
        style_features.push_back(embedders.fid.embed_image(resize_for_backbone(style_images.narrow(0, start, count), side)));
    }

    StylizationMetrics m;
    m.samples = n_samples;
    m.fid = frechet_distance(gaussian_stats(torch::cat(gen_features)), gaussian_stats(torch::cat(style_features)));
    m.arcface_dist_mean = torch::cat(identity).to(torch::kDouble).mean().item<double>();
    m.lpips_mean = torch::cat(lpips).to(torch::kDouble).mean().item<double>();
    return m;
}

StylizationMetrics eval_random_stylization(const ModelSet& models, const torch::Tensor& real_images,
                                           const torch::Tensor& style_images, int64_t n_samples, uint64_t seed) {
    if (!models.clip || !models.perceptual) throw UnavailableState("evaluation needs the clip and perceptual embedders");
    auto stylize = [&models](const torch::Tensor& images, const torch::Tensor& z) {
        return models.stylize(images, models.styles_from_z(z));
    };
    return eval_random_stylization(stylize, real_images, style_images, n_samples, seed,
                                   EvaluationEmbedders{*models.clip, *models.clip, *models.perceptual},
                                   models.profile.z_dim);
}

} // namespace mmfs
