#include "cmae/crop_geometry.hpp"

#include <algorithm>
#include <cmath>

namespace cmae {

HeatmapSource parse_heatmap_source(std::string_view text) {
    if (text == "encoder_features" || text == "features") return HeatmapSource::encoder_features;
    if (text == "attention_map" || text == "attention") return HeatmapSource::attention_map;
    throw ConfigError("unknown heatmap source '" + std::string(text) + "'");
}

std::string_view to_string(HeatmapSource source) {
    return source == HeatmapSource::encoder_features ? "encoder_features" : "attention_map";
}

HeatMap make_heatmap(Matrix raw, HeatmapSource source) {
    const double lo = raw.minCoeff();
    const double hi = raw.maxCoeff();
    if (!(hi > lo)) {
        raw.setOnes();
    } else {
        raw = (raw.array() - lo) / (hi - lo);
    }
    return {std::move(raw), source};
}

BoundingRect localize(const HeatMap& map, double k) {
    const GridShape grid = map.grid();
    BoundingRect rect{grid.rows, -1, grid.cols, -1};
    for (Index r = 0; r < grid.rows; ++r)
        for (Index c = 0; c < grid.cols; ++c)
            if (map.scores(r, c) > k) {
                rect.row_min = std::min(rect.row_min, r);
                rect.row_max = std::max(rect.row_max, r);
                rect.col_min = std::min(rect.col_min, c);
                rect.col_max = std::max(rect.col_max, c);
            }
    if (rect.row_max < 0) return BoundingRect::full(grid);
    return rect;
}

PixelRect to_pixels(const BoundingRect& rect, GridShape grid, int image_w, int image_h) {
    const double cw = static_cast<double>(image_w) / static_cast<double>(grid.cols);
    const double ch = static_cast<double>(image_h) / static_cast<double>(grid.rows);
    return {static_cast<double>(rect.col_min) * cw, static_cast<double>(rect.col_max + 1) * cw,
            static_cast<double>(rect.row_min) * ch, static_cast<double>(rect.row_max + 1) * ch};
}

CropSample sample_crop(Range scale, Range ratio, const BoundingRect& rect, GridShape grid, int image_w,
                       int image_h, Rng& rng, int max_attempts) {
    const double area = static_cast<double>(image_w) * static_cast<double>(image_h);
    const PixelRect target = to_pixels(rect, grid, image_w, image_h);
    std::uniform_real_distribution<double> scale_dist(scale.lo, scale.hi);
    std::uniform_real_distribution<double> log_ratio_dist(std::log(ratio.lo), std::log(ratio.hi));

    int w = image_w;
    int h = image_h;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        const double s = scale_dist(rng);
        const double r = std::exp(log_ratio_dist(rng));
        w = static_cast<int>(std::lround(std::sqrt(area * s * r)));
        h = static_cast<int>(std::lround(std::sqrt(area * s / r)));
        if (w <= 0 || h <= 0 || w > image_w || h > image_h) continue;
        const int x1 = std::uniform_int_distribution<int>(0, image_w - w)(rng);
        const int y1 = std::uniform_int_distribution<int>(0, image_h - h)(rng);
        CropBox box{x1, y1, x1 + w, y1 + h};
        if (target.contains(box.center_x(), box.center_y())) return {box, false};
    }

    w = std::clamp(w, 1, image_w);
    h = std::clamp(h, 1, image_h);
    const double cx = 0.5 * (target.x_lo + target.x_hi);
    const double cy = 0.5 * (target.y_lo + target.y_hi);
    const int x1 = std::clamp(static_cast<int>(std::lround(cx - 0.5 * w)), 0, image_w - w);
    const int y1 = std::clamp(static_cast<int>(std::lround(cy - 0.5 * h)), 0, image_h - h);
    return {CropBox{x1, y1, x1 + w, y1 + h}, true};
}

}  // namespace cmae
