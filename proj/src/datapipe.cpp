#include "cmae/datapipe.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>

namespace cmae {

namespace fs = std::filesystem;

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    throw ConfigError("unknown split '" + std::string(text) + "'");
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "val"; }

CropMode parse_crop_mode(std::string_view text) {
    if (text == "random") return CropMode::random;
    if (text == "contrastive") return CropMode::contrastive;
    throw ConfigError("unknown crop mode '" + std::string(text) + "'");
}

std::string_view to_string(CropMode mode) { return mode == CropMode::random ? "random" : "contrastive"; }

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".jpeg" || ext == ".jpg" || ext == ".png";
}

ImageRecord decode_image(const fs::path& path, int image_size) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw RuntimeFailure("cannot decode image " + path.string());
    if (bgr.rows != image_size || bgr.cols != image_size) {
        cv::Mat resized;
        cv::resize(bgr, resized, cv::Size(image_size, image_size), 0, 0, cv::INTER_LINEAR);
        bgr = resized;
    }
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    ImageRecord rec;
    rec.height = rgb.rows;
    rec.width = rgb.cols;
    rec.pixels.resize(static_cast<std::size_t>(rgb.rows) * rgb.cols * 3);
    for (int y = 0; y < rgb.rows; ++y) {
        const auto* row = rgb.ptr<std::uint8_t>(y);
        std::copy(row, row + rgb.cols * 3, rec.pixels.begin() + static_cast<std::ptrdiff_t>(y) * rgb.cols * 3);
    }
    return rec;
}

}  // namespace

Dataset load_dataset(const fs::path& root, Split split, int image_size, std::size_t per_class_limit) {
    if (root.empty() || !fs::is_directory(root))
        throw ConfigError("dataset root does not exist: '" + root.string() + "'");
    const fs::path split_dir = root / std::string(to_string(split));
    if (!fs::is_directory(split_dir)) throw ConfigError("no classes found: missing split directory " + split_dir.string());

    std::vector<std::string> classes;
    for (const auto& entry : fs::directory_iterator(split_dir))
        if (entry.is_directory()) classes.push_back(entry.path().filename().string());
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) throw ConfigError("no classes found under " + split_dir.string());

    struct Pending {
        std::string rel;
        fs::path path;
        int label;
    };
    std::vector<Pending> files;
    for (std::size_t label = 0; label < classes.size(); ++label) {
        std::vector<Pending> mine;
        for (const auto& entry : fs::recursive_directory_iterator(split_dir / classes[label]))
            if (entry.is_regular_file() && is_image_file(entry.path()))
                mine.push_back({fs::relative(entry.path(), split_dir).generic_string(), entry.path(), static_cast<int>(label)});
        if (mine.empty()) log_warning("class '" + classes[label] + "' has no images");
        std::sort(mine.begin(), mine.end(), [](const Pending& a, const Pending& b) { return a.rel < b.rel; });
        if (per_class_limit > 0 && mine.size() > per_class_limit) mine.resize(per_class_limit);
        files.insert(files.end(), mine.begin(), mine.end());
    }
    std::sort(files.begin(), files.end(), [](const Pending& a, const Pending& b) { return a.rel < b.rel; });

    Dataset ds;
    ds.class_names = std::move(classes);
    ds.records.reserve(files.size());
    for (const auto& f : files) {
        ImageRecord rec = decode_image(f.path, image_size);
        rec.label = f.label;
        rec.source_id = f.rel;
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

fs::path default_data_root() {
    const char* env = std::getenv("CMAE_DATA_ROOT");
    return env ? fs::path(env) : fs::path();
}

void write_class_manifest(const fs::path& path, std::span<const std::string> class_names) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    for (const auto& name : class_names) out << name << '\n';
}

std::vector<std::string> read_class_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot read " + path.string());
    std::vector<std::string> names;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) names.push_back(line);
    return names;
}

PatchSpec PatchSpec::for_image(int height, int width, int patch_size) {
    if (patch_size <= 0 || height % patch_size != 0 || width % patch_size != 0)
        throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by patch size " + std::to_string(patch_size));
    return {patch_size, height / patch_size, width / patch_size};
}

Matrix patchify(const ImageBatch& images, const PatchSpec& spec) {
    if (images.height != spec.image_h() || images.width != spec.image_w())
        throw ConfigError("patchify: image size does not match the patch grid");
    const int p = spec.patch_size;
    const int n = spec.num_tokens();
    Matrix tokens(static_cast<Index>(images.batch) * n, spec.patch_dim());
    for (int b = 0; b < images.batch; ++b)
        for (int gr = 0; gr < spec.grid_h; ++gr)
            for (int gc = 0; gc < spec.grid_w; ++gc) {
                auto row = tokens.row(static_cast<Index>(b) * n + gr * spec.grid_w + gc);
                Index k = 0;
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        for (int c = 0; c < 3; ++c) row(k++) = images.at(b, c, gr * p + py, gc * p + px);
            }
    return tokens;
}

ImageBatch unpatchify(const Matrix& tokens, int batch, const PatchSpec& spec) {
    const int n = spec.num_tokens();
    if (tokens.rows() != static_cast<Index>(batch) * n || tokens.cols() != spec.patch_dim())
        throw ConfigError("unpatchify: token count does not match the patch grid");
    const int p = spec.patch_size;
    ImageBatch images(batch, spec.image_h(), spec.image_w());
    for (int b = 0; b < batch; ++b)
        for (int gr = 0; gr < spec.grid_h; ++gr)
            for (int gc = 0; gc < spec.grid_w; ++gc) {
                const auto row = tokens.row(static_cast<Index>(b) * n + gr * spec.grid_w + gc);
                Index k = 0;
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        for (int c = 0; c < 3; ++c) images.at(b, c, gr * p + py, gc * p + px) = row(k++);
            }
    return images;
}

NormStats compute_norm_stats(const Dataset& dataset) {
    std::array<double, 3> sum{};
    std::array<double, 3> sq{};
    double count = 0.0;
    for (const auto& rec : dataset.records) {
        for (std::size_t i = 0; i < rec.pixels.size(); ++i) {
            const double v = rec.pixels[i] / 255.0;
            sum[i % 3] += v;
            sq[i % 3] += v * v;
        }
        count += static_cast<double>(rec.height) * rec.width;
    }
    NormStats stats;
    if (count == 0.0) return stats;
    for (int c = 0; c < 3; ++c) {
        stats.mean[c] = sum[c] / count;
        const double var = sq[c] / count - stats.mean[c] * stats.mean[c];
        stats.std[c] = std::sqrt(std::max(var, 1e-12));
    }
    return stats;
}

ImageBatch normalize_images(std::span<const ImageRecord* const> records, const NormStats& stats) {
    if (records.empty()) return {};
    ImageBatch out(static_cast<int>(records.size()), records[0]->height, records[0]->width);
    for (std::size_t b = 0; b < records.size(); ++b)
        render_view(*records[b], CropBox::full(records[b]->width, records[b]->height), false, stats, out,
                    static_cast<int>(b));
    return out;
}

ImageBatch denormalize(const ImageBatch& images, const NormStats& stats) {
    ImageBatch out = images;
    for (int b = 0; b < images.batch; ++b)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < images.height; ++y)
                for (int x = 0; x < images.width; ++x)
                    out.at(b, c, y, x) = images.at(b, c, y, x) * stats.std[c] + stats.mean[c];
    return out;
}

void AugPolicy::validate() const {
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip probability must be in [0,1]");
    if (!(scale.lo > 0.0 && scale.lo <= scale.hi && scale.hi <= 1.0)) throw ConfigError("scale range must lie in (0,1]");
    if (!(ratio.lo > 0.0 && ratio.lo <= ratio.hi)) throw ConfigError("aspect range must be positive");
}

CropSampler random_crop_sampler(const AugPolicy& policy, const PatchSpec& spec) {
    const GridShape grid = spec.grid();
    return [scale = policy.scale, ratio = policy.ratio, grid](const ImageRecord& rec, std::size_t, Rng& rng) {
        return sample_crop(scale, ratio, BoundingRect::full(grid), grid, rec.width, rec.height, rng);
    };
}

void render_view(const ImageRecord& rec, const CropBox& box, bool flip, const NormStats& stats, ImageBatch& out, int b) {
    const int oh = out.height;
    const int ow = out.width;
    const double sy = static_cast<double>(box.height()) / oh;
    const double sx = static_cast<double>(box.width()) / ow;
    for (int oy = 0; oy < oh; ++oy) {
        const double fy = std::clamp(box.y1 + (oy + 0.5) * sy - 0.5, static_cast<double>(box.y1), static_cast<double>(box.y2 - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, box.y2 - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < ow; ++ox) {
            const double fx = std::clamp(box.x1 + (ox + 0.5) * sx - 0.5, static_cast<double>(box.x1), static_cast<double>(box.x2 - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, box.x2 - 1);
            const double wx = fx - x0;
            const int dx = flip ? ow - 1 - ox : ox;
            for (int c = 0; c < 3; ++c) {
                const double top = rec.at(y0, x0, c) * (1.0 - wx) + rec.at(y0, x1, c) * wx;
                const double bot = rec.at(y1, x0, c) * (1.0 - wx) + rec.at(y1, x1, c) * wx;
                const double v = (top * (1.0 - wy) + bot * wy) / 255.0;
                out.at(b, c, oy, dx) = (v - stats.mean[c]) / stats.std[c];
            }
        }
    }
}

ViewPair make_views(const Dataset& dataset, std::span<const std::size_t> indices, const AugPolicy& policy,
                    const CropSampler& sampler, const PatchSpec& spec, std::uint64_t seed, int epoch) {
    const int batch = static_cast<int>(indices.size());
    ViewPair views;
    views.view_q = ImageBatch(batch, spec.image_h(), spec.image_w());
    views.view_k = ImageBatch(batch, spec.image_h(), spec.image_w());
    views.box_q.resize(indices.size());
    views.box_k.resize(indices.size());
    std::bernoulli_distribution flip_dist(policy.flip_prob);
    for (int b = 0; b < batch; ++b) {
        const std::size_t idx = indices[static_cast<std::size_t>(b)];
        const ImageRecord& rec = dataset.records.at(idx);
        for (int v = 0; v < 2; ++v) {
            Rng rng = keyed_rng({static_cast<std::uint64_t>(Stream::view), seed, static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(idx), static_cast<std::uint64_t>(v)});
            const CropSample crop = sampler(rec, idx, rng);
            if (!crop.box.within(rec.width, rec.height))
                throw RuntimeFailure("crop sampler returned a box outside the image for " + rec.source_id);
            views.fallback_count += crop.fallback ? 1 : 0;
            const bool flip = flip_dist(rng);
            ImageBatch& target = v == 0 ? views.view_q : views.view_k;
            (v == 0 ? views.box_q : views.box_k)[static_cast<std::size_t>(b)] = crop.box;
            render_view(rec, crop.box, flip, policy.norm, target, b);
        }
    }
    return views;
}

}  // namespace cmae
