#pragma once

// Pretraining: batch preparation, the combined forward pass, the optimiser
// and momentum updates, crop-box refreshes and checkpoints.

#include "cmae/backbone.hpp"
#include "cmae/config.hpp"
#include "cmae/contrastive_crop.hpp"
#include "cmae/decoder_zoo.hpp"
#include "cmae/metrics.hpp"
#include "cmae/objectives.hpp"
#include "cmae/optim.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cmae {

/// Every learnable piece of the pipeline.
struct CmaeModel {
    CmaeModel(const TrainConfig& config, Rng& rng);

    EncoderState state;
    LocationHead location;
    Decoder decoder;

    /// Everything persisted in a checkpoint, in a fixed order.
    ag::ParameterList all_parameters();
};

struct Batch {
    long step = 0;
    int epoch = 0;
    std::vector<std::size_t> indices;
    Matrix tokens_q;
    Matrix tokens_k;
    MaskBatch plans_q;
    MaskBatch plans_k;
    int crop_fallbacks = 0;
};

struct ForwardOptions {
    BranchOptions branch;
};

struct ForwardResult {
    BranchOutput branch;
    ag::Var location_scores;
    PatchPrediction prediction;
    ag::Var l_ctr;
    ag::Var l_loc;
    ag::Var l_con;
    ag::Var total;
    LossReport report;
};

class Trainer {
public:
    /// `norm` defaults to statistics computed over `dataset`.
    Trainer(TrainConfig config, const Dataset& dataset, std::optional<NormStats> norm = std::nullopt);

    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    long steps_per_epoch() const { return steps_per_epoch_; }
    long total_steps() const { return steps_per_epoch_ * config_.epochs; }
    long current_step() const { return step_; }
    int epoch_of(long step) const { return static_cast<int>(step / steps_per_epoch_); }
    LrSchedule lr_schedule() const;

    /// Views, tokens and masks of iteration `step`; a pure function of the
    /// config, the dataset and the current crop cache.
    Batch prepare_batch(long step) const;

    /// Forward pass and losses for a prepared batch. Records a graph unless
    /// gradients are disabled by the caller.
    ForwardResult forward(const Batch& batch, const ForwardOptions& options = {});

    /// One full iteration: refresh boxes at scheduled epoch starts, forward,
    /// backward, optimiser step, momentum update.
    StepRecord step();

    /// Runs until `until_step` (default: the end of training).
    void train(std::optional<long> until_step = std::nullopt, const std::function<void(const StepRecord&)>& on_step = {});

    /// Online parameters that receive optimiser updates. A head whose loss
    /// weight is zero is frozen.
    ag::ParameterList trainable_parameters();

    void maybe_refresh_crops(int epoch);

    CmaeModel& model() { return model_; }
    AdamW& optimizer() { return optimizer_; }
    const CropCache& crop_cache() const { return crop_cache_; }
    void set_crop_cache(CropCache cache) { crop_cache_ = std::move(cache); }
    MetricsLog& metrics() { return metrics_; }
    const TrainConfig& config() const { return config_; }
    const NormStats& norm() const { return norm_; }
    const Dataset& dataset() const { return dataset_; }
    const PatchSpec& patch_spec() const { return patch_; }

    /// Rewinds the step counter (checkpoint restore).
    void set_step(long step) { step_ = step; }

private:
    TrainConfig config_;
    const Dataset& dataset_;
    NormStats norm_;
    PatchSpec patch_;
    Rng init_rng_;
    CmaeModel model_;
    AdamW optimizer_;
    CropCache crop_cache_;
    MetricsLog metrics_;
    long steps_per_epoch_ = 1;
    long step_ = 0;
    int refreshed_epoch_ = -1;
};

// ---- checkpoints ---------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    std::uint32_t version = kCheckpointVersion;
    std::string fingerprint;
    std::string config_text;
    long step = 0;
    int epoch = 0;
    std::vector<std::string> class_names;
    NormStats norm;
    std::vector<std::pair<std::string, Matrix>> tensors;
    long optimizer_steps = 0;
    std::map<std::string, AdamW::Moments> moments;
    CropCache crop_cache;

    const Matrix* find(const std::string& name) const;
    TrainConfig config() const { return parse_config(config_text); }
};

class CheckpointError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

CheckpointData capture_checkpoint(Trainer& trainer);
void save_checkpoint(const CheckpointData& data, const std::filesystem::path& path);
void save_checkpoint(Trainer& trainer, const std::filesystem::path& path);
CheckpointData load_checkpoint(const std::filesystem::path& path);

/// Copies `data` into `params`; fails on the first missing tensor or shape
/// mismatch, naming it.
void load_parameters(const CheckpointData& data, const ag::ParameterList& params);

/// Restores model, optimiser, crop cache and step counter. A fingerprint that
/// differs from the trainer's config is refused unless `force`.
void restore(Trainer& trainer, const CheckpointData& data, bool force = false);

struct PretrainOptions {
    std::optional<std::filesystem::path> resume;
    bool force = false;
    bool quiet = false;
};

/// Full pretraining run writing checkpoints, metrics.jsonl, classes.txt and
/// crop_boxes.tsv under config.output_dir. Returns the final checkpoint path.
std::filesystem::path pretrain(const TrainConfig& config, const Dataset& dataset, const PretrainOptions& options = {});

}  // namespace cmae
