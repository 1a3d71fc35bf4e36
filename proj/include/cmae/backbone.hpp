#pragma once

// ViT encoder, projection heads, and the online/momentum quartet.

#include "cmae/common.hpp"
#include "cmae/datapipe.hpp"
#include "cmae/masking.hpp"
#include "cmae/nn.hpp"

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace cmae {

enum class PosEmbedKind { sincos, learned };
PosEmbedKind parse_pos_embed(std::string_view text);
std::string_view to_string(PosEmbedKind kind);

struct ViTConfig {
    int depth = 4;
    int dim = 192;
    int heads = 4;
    double mlp_ratio = 4.0;
    int patch_size = 8;
    int image_size = 64;
    bool cls_token = true;
    PosEmbedKind pos_embed = PosEmbedKind::sincos;

    void validate() const;
    PatchSpec patch_spec() const { return PatchSpec::for_image(image_size, image_size, patch_size); }
    int num_tokens() const { return patch_spec().num_tokens(); }
};

struct EncoderOutput {
    ag::Var features;    // after the final norm, (B*seq) x D
    ag::Var last_block;  // residual stream leaving the last block (embeddings when depth is 0)
    Index batch = 0;
    Index seq = 0;       // tokens per sample including cls
    bool has_cls = false;
    std::vector<Matrix> last_attention;  // B*heads (seq x seq), only when requested

    /// Patch-token rows only, (B*n) x D.
    ag::Var patch_features() const;
    ag::Var cls_features() const;
};

class VisionTransformer {
public:
    VisionTransformer(const ViTConfig& config, Rng& rng);

    /// pixel_tokens: (B*n) x P*P*3; positions: grid slot of every row.
    EncoderOutput encode(const ag::Var& pixel_tokens, std::span<const Index> positions, Index batch, bool use_cls,
                         bool keep_attention = false) const;

    ag::ParameterList parameters();
    const ViTConfig& config() const { return config_; }

private:
    ViTConfig config_;
    nn::Linear patch_embed_;
    ag::Parameter cls_token_;
    ag::Parameter pos_embed_;  // learned mode
    Matrix pos_table_;         // sincos mode
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm norm_;
};

enum class Pooling { mean, cls };
Pooling parse_pooling(std::string_view text);
std::string_view to_string(Pooling pooling);

struct ProjectionSpec {
    int hidden_dim = 0;  // 0 means the encoder width
    int out_dim = 128;
    Pooling pooling = Pooling::mean;
    bool normalize = true;

    void validate() const;
};

/// Pool -> Linear -> GELU -> Linear -> optional L2 normalisation.
class ProjectionHead {
public:
    ProjectionHead(int in_dim, const ProjectionSpec& spec, Rng& rng);

    /// h: restored patch sequence (B*N) x D. `cls` (B x D) is consulted in cls pooling.
    ag::Var project(const ag::Var& h, Index batch, const ag::Var& cls = {}) const;

    ag::ParameterList parameters();
    const ProjectionSpec& spec() const { return spec_; }

private:
    ProjectionSpec spec_;
    nn::Mlp mlp_;
};

/// Online encoder/projector and their momentum copies.
struct EncoderState {
    EncoderState(const ViTConfig& vit, const ProjectionSpec& proj, double momentum, Rng& rng);

    VisionTransformer encoder;
    VisionTransformer momentum_encoder;
    ProjectionHead projector;
    ProjectionHead momentum_projector;
    double momentum = 0.99;

    ag::ParameterList online_parameters();
    ag::ParameterList momentum_parameters();
};

/// theta_m <- m * theta_m + (1 - m) * theta, elementwise, for both pairs.
void momentum_update(EncoderState& state, double m);

struct BranchOptions {
    /// Debug: build the q2 graph and cut it with detach instead of encoding
    /// without recording.
    bool record_q2_graph = false;
    /// Replaces the masked-token features of the online branch.
    const Matrix* q2_override = nullptr;
};

struct BranchOutput {
    ag::Var z_q;
    ag::Var z_k;
    ag::Var q1;       // visible patch features of view q, (B*keep) x D, with gradient
    ag::Var q1_cls;   // B x D when the encoder has a cls token
    ag::Var q2;       // masked patch features of view q as produced (before detach)
    ag::Var h1;
    ag::Var h2;
};

/// Online pass over view q (visible with gradient, masked without) and
/// momentum pass over view k, merged per sample and projected.
BranchOutput run_contrastive_branches(EncoderState& state, const Matrix& tokens_q, const Matrix& tokens_k,
                                      const MaskBatch& plans_q, const MaskBatch& plans_k,
                                      const BranchOptions& options = {});

/// Pixel tokens of the selected rows as a constant.
ag::Var select_tokens(const Matrix& tokens, std::span<const Index> rows);

}  // namespace cmae
