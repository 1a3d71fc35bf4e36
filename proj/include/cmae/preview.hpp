#pragma once

#include "cmae/crop_geometry.hpp"
#include "cmae/datapipe.hpp"

#include <filesystem>

namespace cmae {

/// Writes a PNG with the image on the left and the heatmap blended over it on
/// the right, the localized rectangle outlined on both. `scale` enlarges the
/// output with nearest-neighbour sampling.
void write_crop_preview(const std::filesystem::path& path, const ImageRecord& record, const HeatMap& heatmap,
                        const BoundingRect& rect, int scale = 4);

}  // namespace cmae
