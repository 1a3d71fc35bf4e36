#pragma once

// Interchangeable pixel decoders: reduced transformer, token-wise MLP,
// depthwise convolutional and hybrid stacks.

#include "cmae/common.hpp"
#include "cmae/datapipe.hpp"
#include "cmae/masking.hpp"
#include "cmae/nn.hpp"

#include <string_view>
#include <variant>
#include <vector>

namespace cmae {

enum class DecoderKind { transformer, mlp, conv, hybrid_mlp, hybrid_conv };
DecoderKind parse_decoder_kind(std::string_view text);
std::string_view to_string(DecoderKind kind);
inline constexpr DecoderKind kAllDecoderKinds[] = {DecoderKind::transformer, DecoderKind::mlp, DecoderKind::conv,
                                                   DecoderKind::hybrid_mlp, DecoderKind::hybrid_conv};

struct DecoderSpec {
    DecoderKind kind = DecoderKind::transformer;
    int depth = 8;
    int dim = 512;
    int heads = 16;
    double mlp_ratio = 4.0;
    bool dense_conv = false;  // plain 3x3 instead of depthwise + pointwise

    void validate() const;
};

/// Shapes the decoder is attached to.
struct DecoderGeometry {
    int encoder_dim = 192;
    PatchSpec patch;
};

/// Token-wise residual block: x + fc2(gelu(fc1(norm(x)))), width 4*dim.
struct MlpBlock {
    MlpBlock() = default;
    MlpBlock(Index dim, Rng& rng);

    ag::Var forward(const ag::Var& x) const;
    ag::ParameterList parameters();

    nn::LayerNorm norm;
    nn::Mlp mlp;
};

/// Residual 3x3 block over the token grid: x + pw(gelu(conv(norm(x)))).
/// conv is depthwise (stride 1, pad 1) unless `dense` is set.
struct ConvBlock {
    ConvBlock() = default;
    ConvBlock(Index dim, bool dense, Rng& rng);

    ag::Var forward(const ag::Var& x, Index batch, GridShape grid) const;
    ag::ParameterList parameters();

    nn::LayerNorm norm;
    ag::Parameter conv_weight;
    ag::Parameter conv_bias;
    nn::Linear pointwise;
    bool dense = false;
};

using DecoderBlock = std::variant<nn::TransformerBlock, MlpBlock, ConvBlock>;

/// Per-token pixel predictions, (B*N) x P*P*3.
struct PatchPrediction {
    ag::Var pixels;
    Index batch = 0;
};

class Decoder {
public:
    Decoder(const DecoderSpec& spec, const DecoderGeometry& geometry, Rng& rng);

    /// visible: encoder features of visible patch tokens, (B*keep) x encoder_dim.
    PatchPrediction decode(const ag::Var& visible, const MaskBatch& plans) const;

    /// The block stack alone over a full (B*N) x dim sequence.
    ag::Var run_blocks(const ag::Var& x, Index batch) const;

    ag::ParameterList parameters();
    const DecoderSpec& spec() const { return spec_; }
    const DecoderGeometry& geometry() const { return geometry_; }
    std::size_t num_blocks() const { return blocks_.size(); }
    const DecoderBlock& block(std::size_t i) const { return blocks_[i]; }

private:
    DecoderSpec spec_;
    DecoderGeometry geometry_;
    nn::Linear embed_;
    ag::Parameter mask_token_;
    Matrix pos_table_;
    std::vector<DecoderBlock> blocks_;
    nn::LayerNorm norm_;
    nn::Linear head_;
};

Decoder build_decoder(const DecoderSpec& spec, const DecoderGeometry& geometry, Rng& rng);

/// Closed-form count of learnable scalars of the decoder built from `spec`.
Index param_count(const DecoderSpec& spec, const DecoderGeometry& geometry);

}  // namespace cmae
