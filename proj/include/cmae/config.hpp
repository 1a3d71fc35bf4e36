#pragma once

// Run configuration and its flat key=value text format.

#include "cmae/backbone.hpp"
#include "cmae/contrastive_crop.hpp"
#include "cmae/datapipe.hpp"
#include "cmae/decoder_zoo.hpp"
#include "cmae/objectives.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cmae {

enum class EvalMode { linear_probe, fine_tune };
EvalMode parse_eval_mode(std::string_view text);
std::string_view to_string(EvalMode mode);

struct EvalConfig {
    EvalMode mode = EvalMode::linear_probe;
    int epochs = 100;
    double lr = 1e-3;
    int batch = 64;
    double weight_decay = 0.0;
};

struct CropConfig {
    CropMode mode = CropMode::random;
    int warmup_epochs = -1;  // -1: 20% of the pretraining epochs
    int refresh_interval = 20;
    double threshold = 0.1;
    HeatmapSource source = HeatmapSource::encoder_features;
};

struct SweepConfig {
    std::vector<DecoderKind> kinds{DecoderKind::transformer, DecoderKind::mlp, DecoderKind::conv,
                                   DecoderKind::hybrid_mlp, DecoderKind::hybrid_conv};
    std::vector<int> depths{8, 6, 4, 2};
    std::vector<int> dims{512, 256, 128, 64};
    int epochs = 1;
};

struct TrainConfig {
    int epochs = 300;
    int batch = 64;
    double base_lr = 1e-3;
    double min_lr = 0.0;
    double weight_decay = 0.05;
    int warmup_epochs = 10;
    double beta1 = 0.9;
    double beta2 = 0.95;

    double mask_ratio = 0.75;
    double momentum = 0.99;
    double temperature = 0.2;
    LossWeights weights;
    bool loc_squared = false;
    int loc_hidden = 0;  // 0: encoder width
    bool norm_pix_loss = true;
    bool symmetric_recon = false;

    ViTConfig vit;
    ProjectionSpec proj;
    DecoderSpec decoder{DecoderKind::transformer, 4, 128, 4};
    CropConfig crop;
    double flip_prob = 0.5;
    Range scale{0.2, 1.0};
    Range ratio{3.0 / 4.0, 4.0 / 3.0};

    std::uint64_t seed = 0;

    std::string data_root;
    std::size_t per_class_limit = 0;
    std::string output_dir = "runs/cmae";
    int checkpoint_interval = 0;  // epochs; 0 writes only the final checkpoint
    int log_interval = 1;         // steps between metric records

    EvalConfig eval;
    SweepConfig sweep;

    void validate() const;
    CropSchedule crop_schedule() const;
    AugPolicy aug_policy(const NormStats& norm) const;
};

/// Parses key=value lines; '#' starts a comment. Unknown keys and malformed
/// values raise ConfigError naming the line.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path);

/// Every field as key=value, one per line, in a fixed order.
std::string serialize_config(const TrainConfig& config);

/// Hash over the fields that shape the model and the optimisation.
std::string config_fingerprint(const TrainConfig& config);

/// Every addressable key.
std::vector<std::string> config_keys();

}  // namespace cmae
