#include "mmfs/data.hpp"

#include "mmfs/errors.hpp"
#include "mmfs/image_io.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <random>

namespace mmfs {

torch::Tensor ImageSet::gather(const std::vector<int64_t>& indices) const {
    if (indices.empty()) throw InvalidArgument("gather: no indices");
    std::vector<torch::Tensor> items;
    items.reserve(indices.size());
    for (auto i : indices) items.push_back(get(i));
    return torch::stack(items);
}

torch::Tensor ImageSet::all() const {
    std::vector<int64_t> idx(static_cast<size_t>(size()));
    for (int64_t i = 0; i < size(); ++i) idx[static_cast<size_t>(i)] = i;
    return gather(idx);
}

// ---------------------------------------------------------------------------

DirectoryImageSet::DirectoryImageSet(const std::filesystem::path& dir, int64_t resolution) : resolution_(resolution) {
    if (!std::filesystem::is_directory(dir)) throw InvalidArgument("dataset directory not found: " + dir.string());
    std::vector<std::filesystem::path> candidates;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") candidates.push_back(entry.path());
    }
    std::sort(candidates.begin(), candidates.end());
    for (const auto& path : candidates) {
        try {
            images_.push_back(load_image(path, resolution).squeeze(0));
            files_.push_back(path);
        } catch (const FormatError&) {
            // Not decodable: not part of the dataset.
        }
    }
}

torch::Tensor DirectoryImageSet::get(int64_t index) const {
    if (index < 0 || index >= size()) throw InvalidArgument("image index out of range");
    return images_[static_cast<size_t>(index)];
}

// ---------------------------------------------------------------------------
// Procedural faces

namespace {

uint64_t splitmix(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Portable uniform draws (std distributions differ across standard libraries).
class Uniform {
public:
    explicit Uniform(uint64_t seed) : eng_(seed) {}
    double operator()(double lo, double hi) {
        const double unit = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * unit;
    }

private:
    std::mt19937_64 eng_;
};

using Color = std::array<float, 3>;

struct FaceParams {
    Color bg_top, bg_bottom, skin, hair, iris, lips;
    double cx, cy, rx, ry;
    double hair_scale, fringe;
    double eye_y, eye_dx, eye_rx, eye_ry;
    double brow_lift;
    double mouth_y, mouth_rx, mouth_ry;
};

Color random_color(Uniform& u, double lo, double hi) {
    return {static_cast<float>(u(lo, hi)), static_cast<float>(u(lo, hi)), static_cast<float>(u(lo, hi))};
}

FaceParams sample_params(uint64_t seed, int64_t index) {
    Uniform u(splitmix(seed * 0x100000001B3ull + static_cast<uint64_t>(index)));
    FaceParams p;
    p.bg_top = random_color(u, 0.2, 0.9);
    p.bg_bottom = random_color(u, 0.1, 0.8);
    const double r = u(0.55, 0.95);
    const double g = r * u(0.62, 0.85);
    const double b = g * u(0.6, 0.9);
    p.skin = {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
    const double h = u(0.05, 0.55);
    p.hair = {static_cast<float>(h), static_cast<float>(h * u(0.6, 0.95)), static_cast<float>(h * u(0.4, 0.9))};
    p.iris = random_color(u, 0.1, 0.6);
    p.lips = {static_cast<float>(u(0.55, 0.85)), static_cast<float>(u(0.2, 0.4)), static_cast<float>(u(0.25, 0.45))};
    p.cx = u(-0.08, 0.08);
    p.cy = u(0.0, 0.1);
    p.rx = u(0.38, 0.5);
    p.ry = u(0.5, 0.62);
    p.hair_scale = u(1.08, 1.22);
    p.fringe = u(0.45, 0.7);
    p.eye_y = p.cy - p.ry * u(0.08, 0.22);
    p.eye_dx = p.rx * u(0.4, 0.52);
    p.eye_rx = u(0.075, 0.105);
    p.eye_ry = u(0.045, 0.065);
    p.brow_lift = u(0.08, 0.13);
    p.mouth_y = p.cy + p.ry * u(0.42, 0.58);
    p.mouth_rx = u(0.11, 0.2);
    p.mouth_ry = u(0.03, 0.05);
    return p;
}

struct Canvas {
    const torch::Tensor& u;
    const torch::Tensor& v;
    bool cartoon;
    torch::Tensor image;     // [3, R, R] in [0, 1]
    torch::Tensor outlines;  // [R, R] coverage of dark contour lines

    // Normalized radius of an axis-aligned ellipse.
    torch::Tensor radius(double cx, double cy, double rx, double ry) const {
        return torch::sqrt(torch::square((u - cx) / rx) + torch::square((v - cy) / ry));
    }
    torch::Tensor coverage(const torch::Tensor& r, double scale) const {
        const double sharp = cartoon ? 400.0 : 150.0;
        return torch::sigmoid((1.0 - r) * scale * sharp);
    }
    void fill(const torch::Tensor& mask, const Color& c) {
        auto col = torch::tensor({c[0], c[1], c[2]}).view({3, 1, 1});
        image = image * (1.0 - mask) + col * mask;
    }
    void outline(const torch::Tensor& r, double scale, double width) {
        if (!cartoon) return;
        auto d = (1.0 - r).abs() * scale;
        outlines = torch::maximum(outlines, torch::sigmoid((width - d) * 300.0));
    }
    // Ellipse with optional contour; returns its coverage.
    torch::Tensor ellipse(double cx, double cy, double rx, double ry, const Color& c, double line = 0.0) {
        auto r = radius(cx, cy, rx, ry);
        auto m = coverage(r, std::min(rx, ry));
        fill(m, c);
        if (line > 0.0) outline(r, std::min(rx, ry), line);
        return m;
    }
};

Color scale(const Color& c, double s) {
    return {static_cast<float>(c[0] * s), static_cast<float>(c[1] * s), static_cast<float>(c[2] * s)};
}

torch::Tensor render_face(const FaceParams& p, bool cartoon, const torch::Tensor& u, const torch::Tensor& v) {
    const auto side = u.size(0);
    Canvas cv{u, v, cartoon, torch::empty({3, side, side}), torch::zeros({side, side})};

    auto top = torch::tensor({p.bg_top[0], p.bg_top[1], p.bg_top[2]}).view({3, 1, 1});
    auto bottom = torch::tensor({p.bg_bottom[0], p.bg_bottom[1], p.bg_bottom[2]}).view({3, 1, 1});
    auto t = ((v + 1.0) * 0.5).unsqueeze(0);
    cv.image = top * (1.0 - t) + bottom * t;
    if (cartoon) cv.image = torch::where(t < 0.5, top.expand_as(cv.image), bottom.expand_as(cv.image));

    const double eye_gain = cartoon ? 1.6 : 1.0;
    const double eye_rx = p.eye_rx * eye_gain, eye_ry = p.eye_ry * eye_gain * 1.12;

    // Hair behind the head.
    const double hrx = p.rx * p.hair_scale, hry = p.ry * p.hair_scale;
    const double hcy = p.cy - 0.06;
    auto hair_r = cv.radius(p.cx, hcy, hrx, hry);
    auto hair_back = cv.coverage(hair_r, std::min(hrx, hry)) * torch::sigmoid((p.cy + 0.15 - v) * 40.0);
    cv.fill(hair_back, p.hair);

    // Face with simple shading for the photo variant.
    auto face_r = cv.radius(p.cx, p.cy, p.rx, p.ry);
    auto face = cv.coverage(face_r, std::min(p.rx, p.ry));
    if (cartoon) {
        cv.fill(face, p.skin);
        cv.outline(face_r, std::min(p.rx, p.ry), 0.018);
    } else {
        auto skin = torch::tensor({p.skin[0], p.skin[1], p.skin[2]}).view({3, 1, 1});
        auto shade = 1.0 - 0.28 * torch::square((u - p.cx) / p.rx) - 0.1 * (v - p.cy) / p.ry;
        auto shaded = skin * shade.unsqueeze(0);
        cv.image = cv.image * (1.0 - face) + shaded * face;
    }

    // Fringe over the forehead.
    auto fringe = cv.coverage(hair_r, std::min(hrx, hry)) * torch::sigmoid((p.cy - p.ry * p.fringe - v) * 60.0);
    cv.fill(fringe, p.hair);

    // Eyes, irises, pupils, brows.
    for (double side_sign : {-1.0, 1.0}) {
        const double ex = p.cx + side_sign * p.eye_dx;
        cv.ellipse(ex, p.eye_y, eye_rx, eye_ry, Color{0.95f, 0.95f, 0.95f}, 0.012);
        cv.ellipse(ex, p.eye_y, eye_ry * 0.85, eye_ry * 0.85, p.iris);
        cv.ellipse(ex, p.eye_y, eye_ry * 0.4, eye_ry * 0.4, Color{0.05f, 0.05f, 0.05f});
        if (cartoon) cv.ellipse(ex - eye_ry * 0.3, p.eye_y - eye_ry * 0.35, eye_ry * 0.2, eye_ry * 0.2, Color{1, 1, 1});
        cv.ellipse(ex, p.eye_y - p.brow_lift - eye_ry * (eye_gain - 1.0), eye_rx * 1.05, 0.018, scale(p.hair, 0.8));
    }

    // Nose shadow and mouth.
    if (!cartoon) cv.ellipse(p.cx, (p.eye_y + p.mouth_y) * 0.5, 0.035, 0.06, scale(p.skin, 0.85));
    cv.ellipse(p.cx, p.mouth_y, p.mouth_rx, p.mouth_ry, p.lips, 0.012);

    auto img = cv.image;
    if (cartoon) {
        auto mean = img.mean(0, true);
        img = (mean + (img - mean) * 1.5).clamp(0.0, 1.0);
        img = torch::round(img * 4.0) / 4.0;
        img = img * (1.0 - cv.outlines) + 0.08 * cv.outlines;
    }
    return (img.clamp(0.0, 1.0) * 2.0 - 1.0).contiguous();
}

} // namespace

ProceduralFaces::ProceduralFaces(int64_t count, uint64_t seed, FaceStyle style, int64_t resolution)
    : count_(count), seed_(seed), style_(style), resolution_(resolution) {
    if (count < 1) throw InvalidArgument("ProceduralFaces: count must be positive");
    if (resolution < 8) throw InvalidArgument("ProceduralFaces: resolution too small");
    auto axis = (torch::arange(resolution, torch::kFloat) + 0.5) / static_cast<double>(resolution) * 2.0 - 1.0;
    auto mesh = torch::meshgrid({axis, axis}, "ij");
    grid_v_ = mesh[0];
    grid_u_ = mesh[1];
}

torch::Tensor ProceduralFaces::get(int64_t index) const {
    if (index < 0 || index >= count_) throw InvalidArgument("image index out of range");
    torch::NoGradGuard guard;
    return render_face(sample_params(seed_, index), style_ == FaceStyle::cartoon, grid_u_, grid_v_);
}

void synthesize_dataset(const std::filesystem::path& dir, int64_t count, uint64_t seed, FaceStyle style,
                        int64_t resolution) {
    ProceduralFaces faces(count, seed, style, resolution);
    std::filesystem::create_directories(dir);
    for (int64_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "face_%05lld.png", static_cast<long long>(i));
        write_png(dir / name, faces.get(i));
    }
}

std::shared_ptr<ImageSet> open_image_set(const std::string& dir, int64_t resolution, int64_t fallback_count,
                                         uint64_t fallback_seed, FaceStyle fallback_style) {
    if (!dir.empty()) return std::make_shared<DirectoryImageSet>(dir, resolution);
    return std::make_shared<ProceduralFaces>(fallback_count, fallback_seed, fallback_style, resolution);
}

// ---------------------------------------------------------------------------

DatasetSource::DatasetSource(std::shared_ptr<const ImageSet> images, uint64_t seed, bool hflip)
    : images_(std::move(images)), hflip_(hflip), gen_(at::make_generator<at::CPUGeneratorImpl>(seed)) {
    if (!images_ || images_->size() == 0) throw InvalidArgument("dataset is empty");
    reshuffle();
}

void DatasetSource::reshuffle() {
    order_ = torch::randperm(images_->size(), gen_, torch::TensorOptions().dtype(torch::kLong));
    cursor_ = 0;
}

torch::Tensor DatasetSource::next(int64_t batch) {
    if (batch < 1) throw InvalidArgument("batch size must be positive");
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(batch));
    while (static_cast<int64_t>(idx.size()) < batch) {
        if (cursor_ >= order_.size(0)) reshuffle();
        idx.push_back(order_[cursor_++].item<int64_t>());
    }
    auto x = images_->gather(idx);
    if (hflip_) {
        auto flip = torch::rand({batch}, gen_) < 0.5;
        x = torch::where(flip.view({batch, 1, 1, 1}), x.flip({3}), x);
    }
    return x;
}

} // namespace mmfs
