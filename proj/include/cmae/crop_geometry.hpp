#pragma once

// Heatmap thresholding and constrained random-resized-crop sampling.

#include "cmae/common.hpp"
#include "cmae/tensor.hpp"

#include <string_view>

namespace cmae {

enum class HeatmapSource { encoder_features, attention_map };

HeatmapSource parse_heatmap_source(std::string_view text);
std::string_view to_string(HeatmapSource source);

struct GridShape {
    Index rows = 0;
    Index cols = 0;
    Index cells() const { return rows * cols; }
};

/// Token-grid scores min-max normalised into [0, 1], rows x cols.
struct HeatMap {
    Matrix scores;
    HeatmapSource source = HeatmapSource::encoder_features;

    GridShape grid() const { return {scores.rows(), scores.cols()}; }
};

/// Min-max normalises a raw grid. A constant grid becomes all ones.
HeatMap make_heatmap(Matrix raw, HeatmapSource source);

/// Inclusive token-grid rectangle.
struct BoundingRect {
    Index row_min = 0;
    Index row_max = 0;
    Index col_min = 0;
    Index col_max = 0;

    static BoundingRect full(GridShape grid) { return {0, grid.rows - 1, 0, grid.cols - 1}; }
    bool contains(const BoundingRect& other) const {
        return row_min <= other.row_min && row_max >= other.row_max && col_min <= other.col_min &&
               col_max >= other.col_max;
    }
    bool valid_for(GridShape grid) const {
        return 0 <= row_min && row_min <= row_max && row_max < grid.rows && 0 <= col_min &&
               col_min <= col_max && col_max < grid.cols;
    }
    friend bool operator==(const BoundingRect&, const BoundingRect&) = default;
};

/// Tight rectangle around every cell scoring above k; the full grid when
/// nothing passes.
BoundingRect localize(const HeatMap& map, double k);

/// Pixel crop [x1, x2) x [y1, y2).
struct CropBox {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    int width() const { return x2 - x1; }
    int height() const { return y2 - y1; }
    double center_x() const { return 0.5 * (x1 + x2); }
    double center_y() const { return 0.5 * (y1 + y2); }
    bool within(int image_w, int image_h) const {
        return 0 <= x1 && x1 < x2 && x2 <= image_w && 0 <= y1 && y1 < y2 && y2 <= image_h;
    }
    static CropBox full(int image_w, int image_h) { return {0, 0, image_w, image_h}; }
    friend bool operator==(const CropBox&, const CropBox&) = default;
};

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Pixel extent of a grid rectangle: [x_lo, x_hi] x [y_lo, y_hi].
struct PixelRect {
    double x_lo = 0.0;
    double x_hi = 0.0;
    double y_lo = 0.0;
    double y_hi = 0.0;

    bool contains(double x, double y) const { return x_lo <= x && x <= x_hi && y_lo <= y && y <= y_hi; }
};

PixelRect to_pixels(const BoundingRect& rect, GridShape grid, int image_w, int image_h);

struct CropSample {
    CropBox box;
    bool fallback = false;
};

inline constexpr int kDefaultCropAttempts = 10;

/// Random-resized-crop of area fraction in `scale` and log-uniform aspect in
/// `ratio`, redrawn until the crop centre lies inside `rect`. After
/// `max_attempts` rejections the last drawn size is centred on the rect.
CropSample sample_crop(Range scale, Range ratio, const BoundingRect& rect, GridShape grid, int image_w,
                       int image_h, Rng& rng, int max_attempts = kDefaultCropAttempts);

}  // namespace cmae
