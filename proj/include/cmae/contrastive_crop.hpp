#pragma once

// Encoder-driven heatmaps, the per-image rectangle cache and the sampler that
// constrains crops to it.

#include "cmae/backbone.hpp"
#include "cmae/crop_geometry.hpp"
#include "cmae/datapipe.hpp"

#include <climits>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cmae {

/// When rectangle-constrained cropping is switched on and how often the
/// rectangles are recomputed.
struct CropSchedule {
    static constexpr int never = INT_MAX;

    int warmup_epochs = 0;
    int refresh_interval = 20;

    void validate() const;
    bool active_at(int epoch) const { return warmup_epochs != never && epoch >= warmup_epochs; }
    bool refresh_at(int epoch) const {
        return active_at(epoch) && (epoch - warmup_epochs) % refresh_interval == 0;
    }
};

/// Heatmaps for a batch of full, unmasked images (no gradient recorded).
/// tokens: (B*N) x P*P*3 pixel tokens in grid order. encoder_features scores
/// each token by the distance of its last-block feature from the image's mean
/// token; attention_map uses the head-averaged cls attention of the last block.
/// encoder_features score of one image from its patch-token features (n x D,
/// grid order).
HeatMap heatmap_from_features(const Matrix& features, GridShape grid);

std::vector<HeatMap> compute_heatmaps(const VisionTransformer& encoder, const Matrix& tokens, Index batch,
                                      HeatmapSource source);

struct CachedRect {
    BoundingRect rect;
    int epoch = 0;
    friend bool operator==(const CachedRect&, const CachedRect&) = default;
};

using CropCache = std::map<std::string, CachedRect>;

/// One no-gradient pass over `dataset`, returning a rectangle per source_id.
CropCache refresh_boxes(const Dataset& dataset, const VisionTransformer& encoder, const NormStats& norm, double k,
                        HeatmapSource source, int epoch, Index chunk = 64);

/// Tab-separated: source_id, row_min, row_max, col_min, col_max, epoch.
void save_crop_cache(const std::filesystem::path& path, const CropCache& cache);
CropCache load_crop_cache(const std::filesystem::path& path);

/// Sampler constrained to the cached rectangle of each record. A missing
/// entry falls back to the full image with a warning.
CropSampler contrastive_crop_sampler(const AugPolicy& policy, const PatchSpec& spec, const CropCache& cache);

}  // namespace cmae
