#include "cmae/contrastive_crop.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

namespace cmae {

void CropSchedule::validate() const {
    if (warmup_epochs < 0) throw ConfigError("crop warmup epochs must be non-negative");
    if (refresh_interval < 1) throw ConfigError("crop refresh interval must be at least 1");
}

HeatMap heatmap_from_features(const Matrix& features, GridShape grid) {
    if (features.rows() != grid.cells()) throw ConfigError("heatmap: one feature row per grid cell required");
    // distance of each token from the image's mean token
    const RowVector centre = features.colwise().mean();
    Matrix raw(grid.rows, grid.cols);
    for (Index i = 0; i < features.rows(); ++i) raw(i / grid.cols, i % grid.cols) = (features.row(i) - centre).norm();
    return make_heatmap(std::move(raw), HeatmapSource::encoder_features);
}

std::vector<HeatMap> compute_heatmaps(const VisionTransformer& encoder, const Matrix& tokens, Index batch,
                                      HeatmapSource source) {
    const ViTConfig& cfg = encoder.config();
    const PatchSpec spec = cfg.patch_spec();
    const Index n = spec.num_tokens();
    if (tokens.rows() != batch * n) throw ConfigError("heatmap pass needs the full token sequence of every image");
    if (source == HeatmapSource::attention_map && !cfg.cls_token)
        throw ConfigError("attention-map heatmaps need an encoder with a cls token");
    if (source == HeatmapSource::attention_map && cfg.depth == 0)
        throw ConfigError("attention-map heatmaps need at least one encoder block");

    ag::NoGradGuard guard;
    std::vector<Index> positions(static_cast<std::size_t>(batch * n));
    for (Index i = 0; i < batch * n; ++i) positions[static_cast<std::size_t>(i)] = i % n;
    const bool use_cls = cfg.cls_token;
    const EncoderOutput out = encoder.encode(ag::Var::constant(tokens), positions, batch, use_cls,
                                             source == HeatmapSource::attention_map);
    const Index offset = use_cls ? 1 : 0;

    std::vector<HeatMap> maps;
    maps.reserve(static_cast<std::size_t>(batch));
    for (Index b = 0; b < batch; ++b) {
        if (source == HeatmapSource::encoder_features) {
            maps.push_back(heatmap_from_features(out.last_block.value().middleRows(b * out.seq + offset, n), spec.grid()));
            continue;
        }
        Matrix raw = Matrix::Zero(spec.grid_h, spec.grid_w);
        const Index heads = cfg.heads;
        for (Index h = 0; h < heads; ++h) {
            const Matrix& p = out.last_attention[static_cast<std::size_t>(b * heads + h)];
            for (Index i = 0; i < n; ++i) raw(i / spec.grid_w, i % spec.grid_w) += p(0, offset + i);
        }
        raw /= static_cast<double>(heads);
        maps.push_back(make_heatmap(std::move(raw), source));
    }
    return maps;
}

CropCache refresh_boxes(const Dataset& dataset, const VisionTransformer& encoder, const NormStats& norm, double k,
                        HeatmapSource source, int epoch, Index chunk) {
    if (!(k > 0.0 && k < 1.0)) throw ConfigError("crop threshold must lie in (0,1)");
    const PatchSpec spec = encoder.config().patch_spec();
    CropCache cache;
    for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(chunk)) {
        const std::size_t stop = std::min(dataset.size(), start + static_cast<std::size_t>(chunk));
        std::vector<const ImageRecord*> recs;
        for (std::size_t i = start; i < stop; ++i) recs.push_back(&dataset.records[i]);
        const ImageBatch images = normalize_images(recs, norm);
        const auto maps = compute_heatmaps(encoder, patchify(images, spec), static_cast<Index>(recs.size()), source);
        for (std::size_t i = 0; i < recs.size(); ++i) cache[recs[i]->source_id] = {localize(maps[i], k), epoch};
    }
    return cache;
}

void save_crop_cache(const std::filesystem::path& path, const CropCache& cache) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    for (const auto& [id, entry] : cache)
        out << id << '\t' << entry.rect.row_min << '\t' << entry.rect.row_max << '\t' << entry.rect.col_min << '\t'
            << entry.rect.col_max << '\t' << entry.epoch << '\n';
}

CropCache load_crop_cache(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot read " + path.string());
    CropCache cache;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string id;
        CachedRect entry;
        if (!std::getline(fields, id, '\t') ||
            !(fields >> entry.rect.row_min >> entry.rect.row_max >> entry.rect.col_min >> entry.rect.col_max >> entry.epoch))
            throw RuntimeFailure(path.string() + ":" + std::to_string(lineno) + ": malformed crop box row");
        cache[id] = entry;
    }
    return cache;
}

CropSampler contrastive_crop_sampler(const AugPolicy& policy, const PatchSpec& spec, const CropCache& cache) {
    const GridShape grid = spec.grid();
    return [scale = policy.scale, ratio = policy.ratio, grid, &cache](const ImageRecord& rec, std::size_t, Rng& rng) {
        BoundingRect rect = BoundingRect::full(grid);
        if (auto it = cache.find(rec.source_id); it != cache.end()) {
            rect = it->second.rect;
        } else {
            log_warning("no cached crop box for '" + rec.source_id + "'; using the full image");
        }
        return sample_crop(scale, ratio, rect, grid, rec.width, rec.height, rng);
    };
}

}  // namespace cmae
