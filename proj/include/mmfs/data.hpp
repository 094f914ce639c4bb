#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace mmfs {

// Random-access collection of same-size images, each [3, R, R] in [-1, 1].
class ImageSet {
public:
    virtual ~ImageSet() = default;
    virtual int64_t size() const = 0;
    virtual int64_t resolution() const = 0;
    virtual torch::Tensor get(int64_t index) const = 0;
    // Stacks the given indices into [N, 3, R, R].
    torch::Tensor gather(const std::vector<int64_t>& indices) const;
    torch::Tensor all() const;
};

// PNG/JPEG files of a directory (non-recursive), sorted by file name, each
// center-cropped and resized. Files that fail to decode are skipped.
class DirectoryImageSet final : public ImageSet {
public:
    DirectoryImageSet(const std::filesystem::path& dir, int64_t resolution);
    int64_t size() const override { return static_cast<int64_t>(images_.size()); }
    int64_t resolution() const override { return resolution_; }
    torch::Tensor get(int64_t index) const override;
    const std::vector<std::filesystem::path>& files() const { return files_; }

private:
    int64_t resolution_;
    std::vector<std::filesystem::path> files_;
    std::vector<torch::Tensor> images_;
};

enum class FaceStyle { photo, cartoon };

// Parametric ellipse faces. Image i depends only on (seed, i, style); the
// cartoon variant renders the same kind of geometry with exaggerated eyes,
// posterized saturated colors and dark outlines.
class ProceduralFaces final : public ImageSet {
public:
    ProceduralFaces(int64_t count, uint64_t seed, FaceStyle style, int64_t resolution);
    int64_t size() const override { return count_; }
    int64_t resolution() const override { return resolution_; }
    torch::Tensor get(int64_t index) const override;

private:
    int64_t count_;
    uint64_t seed_;
    FaceStyle style_;
    int64_t resolution_;
    torch::Tensor grid_u_, grid_v_;
};

// `count` face images written as PNG files face_00000.png, ... into `dir`.
void synthesize_dataset(const std::filesystem::path& dir, int64_t count, uint64_t seed, FaceStyle style,
                        int64_t resolution);

// Default toy-scale training sets: photo faces and their cartoon counterpart
// domain, with fixed generation seeds.
inline constexpr uint64_t kToyRealSeed = 7;
inline constexpr uint64_t kToyStyleSeed = 11;
inline constexpr int64_t kToySetSize = 512;

// Directory when given, otherwise the procedural fallback.
std::shared_ptr<ImageSet> open_image_set(const std::string& dir, int64_t resolution, int64_t fallback_count,
                                         uint64_t fallback_seed, FaceStyle fallback_style);

// Seed-determined minibatch stream over an image set: each epoch is a fresh
// permutation drawn from the sampler's own generator; optional random
// horizontal flips come from the same generator.
class DatasetSource {
public:
    DatasetSource(std::shared_ptr<const ImageSet> images, uint64_t seed, bool hflip = false);
    torch::Tensor next(int64_t batch);
    int64_t size() const { return images_->size(); }
    const ImageSet& images() const { return *images_; }

private:
    void reshuffle();

    std::shared_ptr<const ImageSet> images_;
    bool hflip_;
    at::Generator gen_;
    torch::Tensor order_;
    int64_t cursor_ = 0;
};

} // namespace mmfs
