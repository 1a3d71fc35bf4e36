#pragma once

// Dataset ingestion, two-view augmentation and patch tokenisation.

#include "cmae/common.hpp"
#include "cmae/crop_geometry.hpp"
#include "cmae/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cmae {

/// Decoded RGB image, row-major H x W x 3 bytes.
struct ImageRecord {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;
    int label = 0;
    std::string source_id;

    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

struct Dataset {
    std::vector<ImageRecord> records;
    std::vector<std::string> class_names;

    std::size_t size() const { return records.size(); }
    int num_classes() const { return static_cast<int>(class_names.size()); }
};

enum class Split { train, val };
Split parse_split(std::string_view text);
std::string_view to_string(Split split);

/// Walks `<root>/<split>/<class>/**/*.{jpeg,jpg,png}`; classes and files are
/// ordered lexicographically and images resized bilinearly to image_size.
/// `per_class_limit` > 0 keeps only the first that many files of each class.
Dataset load_dataset(const std::filesystem::path& root, Split split, int image_size,
                     std::size_t per_class_limit = 0);

/// Default dataset root from CMAE_DATA_ROOT, empty when unset.
std::filesystem::path default_data_root();

void write_class_manifest(const std::filesystem::path& path, std::span<const std::string> class_names);
std::vector<std::string> read_class_manifest(const std::filesystem::path& path);

struct PatchSpec {
    int patch_size = 8;
    int grid_h = 8;
    int grid_w = 8;

    static PatchSpec for_image(int height, int width, int patch_size);
    int num_tokens() const { return grid_h * grid_w; }
    int patch_dim() const { return patch_size * patch_size * 3; }
    int image_h() const { return grid_h * patch_size; }
    int image_w() const { return grid_w * patch_size; }
    GridShape grid() const { return {grid_h, grid_w}; }
};

/// Dense float images, B x 3 x H x W.
struct ImageBatch {
    int batch = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    ImageBatch() = default;
    ImageBatch(int b, int h, int w) : batch(b), height(h), width(w), data(static_cast<std::size_t>(b) * 3 * h * w, 0.0) {}

    double& at(int b, int c, int y, int x) { return data[index(b, c, y, x)]; }
    double at(int b, int c, int y, int x) const { return data[index(b, c, y, x)]; }

private:
    std::size_t index(int b, int c, int y, int x) const {
        return ((static_cast<std::size_t>(b) * 3 + c) * height + y) * width + x;
    }
};

/// (B*N) x (P*P*3). Token i covers grid cell i in row-major order; within a
/// token pixels are ordered (row, col, channel).
Matrix patchify(const ImageBatch& images, const PatchSpec& spec);
ImageBatch unpatchify(const Matrix& tokens, int batch, const PatchSpec& spec);

struct NormStats {
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
};

/// Per-channel statistics of the [0,1]-scaled pixels of every record.
NormStats compute_norm_stats(const Dataset& dataset);

ImageBatch normalize_images(std::span<const ImageRecord* const> records, const NormStats& stats);
/// Inverse of the normalisation, back to [0,1] intensities.
ImageBatch denormalize(const ImageBatch& images, const NormStats& stats);

enum class CropMode { random, contrastive };
CropMode parse_crop_mode(std::string_view text);
std::string_view to_string(CropMode mode);

struct AugPolicy {
    double flip_prob = 0.5;
    Range scale{0.2, 1.0};
    Range ratio{3.0 / 4.0, 4.0 / 3.0};
    NormStats norm;
    CropMode crop_mode = CropMode::random;

    void validate() const;
};

/// Supplies the crop for one view of one record from the view's generator.
using CropSampler = std::function<CropSample(const ImageRecord&, std::size_t record_index, Rng&)>;

/// Unconstrained random-resized-crop sampler for `policy`.
CropSampler random_crop_sampler(const AugPolicy& policy, const PatchSpec& spec);

struct ViewPair {
    ImageBatch view_q;
    ImageBatch view_k;
    std::vector<CropBox> box_q;
    std::vector<CropBox> box_k;
    int fallback_count = 0;
};

/// Crops, flips and normalises two independent views per record. The draws
/// for record index i and view v depend only on (seed, epoch, i, v).
ViewPair make_views(const Dataset& dataset, std::span<const std::size_t> indices, const AugPolicy& policy,
                    const CropSampler& sampler, const PatchSpec& spec, std::uint64_t seed, int epoch);

/// Bilinear crop-and-resize of one record into slot b of `out`, optionally
/// mirrored horizontally, followed by normalisation.
void render_view(const ImageRecord& record, const CropBox& box, bool flip, const NormStats& stats, ImageBatch& out,
                 int b);

}  // namespace cmae
