#pragma once

// Linear probe, fine-tuning and the decoder sweep.

#include "cmae/trainer.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace cmae {

/// Rebuilds the model stored in a checkpoint.
std::unique_ptr<CmaeModel> model_from_checkpoint(const CheckpointData& data);

/// Pixel tokens of full, unaugmented images, (B*N) x P*P*3.
Matrix full_image_tokens(const Dataset& dataset, std::span<const std::size_t> indices, const NormStats& norm,
                         const PatchSpec& spec);

/// Mean of the patch-token features of every image, no gradient. rows = images.
Matrix extract_features(const VisionTransformer& encoder, const Dataset& dataset, const NormStats& norm,
                        Index chunk = 64);

struct EvalResult {
    EvalMode mode = EvalMode::linear_probe;
    double top1 = 0.0;        // percent
    double train_top1 = 0.0;  // percent, on the training split
};

/// Affine classifier on standardised frozen features.
EvalResult linear_probe(const Matrix& train_x, std::span<const int> train_y, const Matrix& val_x,
                        std::span<const int> val_y, int num_classes, const EvalConfig& config, std::uint64_t seed);

/// Encoder plus affine head, all trainable, on full unaugmented images.
EvalResult fine_tune(VisionTransformer& encoder, const Dataset& train, const Dataset& val, const NormStats& norm,
                     const EvalConfig& config, std::uint64_t seed);

/// Evaluates a checkpoint. The datasets must carry the checkpoint's class list.
EvalResult evaluate(const CheckpointData& checkpoint, const Dataset& train, const Dataset& val,
                    const EvalConfig& config);

struct SweepRow {
    DecoderSpec spec;
    Index param_count = 0;
    double final_recon_loss = 0.0;
    double probe_top1 = 0.0;
};

/// Grid points of the sweep; invalid combinations (hybrid stacks too shallow
/// to hold both block types) are skipped.
std::vector<DecoderSpec> sweep_grid(const TrainConfig& config);

/// Pretrains one model per grid point for sweep.epochs and probes it.
std::vector<SweepRow> sweep_decoders(const TrainConfig& config, const Dataset& train, const Dataset& val,
                                     const std::function<void(const SweepRow&)>& on_row = {});

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

}  // namespace cmae
