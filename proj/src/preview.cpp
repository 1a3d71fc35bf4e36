#include "cmae/preview.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>

namespace cmae {

void write_crop_preview(const std::filesystem::path& path, const ImageRecord& record, const HeatMap& heatmap,
                        const BoundingRect& rect, int scale) {
    if (scale < 1) throw ConfigError("preview scale must be positive");
    const GridShape grid = heatmap.grid();
    if (!rect.valid_for(grid)) throw RuntimeFailure("rectangle does not fit the heatmap grid");

    cv::Mat rgb(record.height, record.width, CV_8UC3, const_cast<std::uint8_t*>(record.pixels.data()));
    cv::Mat image;
    cv::cvtColor(rgb, image, cv::COLOR_RGB2BGR);
    cv::resize(image, image, {record.width * scale, record.height * scale}, 0, 0, cv::INTER_NEAREST);

    cv::Mat heat(static_cast<int>(grid.rows), static_cast<int>(grid.cols), CV_8UC1);
    for (int r = 0; r < heat.rows; ++r)
        for (int c = 0; c < heat.cols; ++c)
            heat.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(std::lround(255.0 * heatmap.scores(r, c)));
    cv::resize(heat, heat, image.size(), 0, 0, cv::INTER_NEAREST);
    cv::Mat colored;
    cv::applyColorMap(heat, colored, cv::COLORMAP_JET);
    cv::Mat blended;
    cv::addWeighted(image, 0.5, colored, 0.5, 0.0, blended);

    const PixelRect px = to_pixels(rect, grid, record.width * scale, record.height * scale);
    const cv::Rect box(cv::Point(static_cast<int>(px.x_lo), static_cast<int>(px.y_lo)),
                       cv::Point(static_cast<int>(px.x_hi), static_cast<int>(px.y_hi)));
    cv::rectangle(image, box, {0, 255, 0}, 2);
    cv::rectangle(blended, box, {0, 255, 0}, 2);

    cv::Mat out;
    cv::hconcat(image, blended, out);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), out)) throw RuntimeFailure("cannot write " + path.string());
}

}  // namespace cmae
