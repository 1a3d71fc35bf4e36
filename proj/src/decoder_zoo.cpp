#include "cmae/decoder_zoo.hpp"

#include <cmath>
#include <string>

namespace cmae {

DecoderKind parse_decoder_kind(std::string_view text) {
    if (text == "transformer") return DecoderKind::transformer;
    if (text == "mlp") return DecoderKind::mlp;
    if (text == "conv") return DecoderKind::conv;
    if (text == "hybrid_mlp") return DecoderKind::hybrid_mlp;
    if (text == "hybrid_conv") return DecoderKind::hybrid_conv;
    throw ConfigError("unknown decoder kind '" + std::string(text) + "'");
}

std::string_view to_string(DecoderKind kind) {
    switch (kind) {
        case DecoderKind::transformer: return "transformer";
        case DecoderKind::mlp: return "mlp";
        case DecoderKind::conv: return "conv";
        case DecoderKind::hybrid_mlp: return "hybrid_mlp";
        case DecoderKind::hybrid_conv: return "hybrid_conv";
    }
    return "transformer";
}

namespace {

bool has_attention(DecoderKind kind) { return kind != DecoderKind::mlp && kind != DecoderKind::conv; }

enum class BlockType { transformer, mlp, conv };

BlockType block_type(DecoderKind kind, int index, int depth) {
    switch (kind) {
        case DecoderKind::transformer: return BlockType::transformer;
        case DecoderKind::mlp: return BlockType::mlp;
        case DecoderKind::conv: return BlockType::conv;
        case DecoderKind::hybrid_mlp:
        case DecoderKind::hybrid_conv:
            if (index == 0 || index == depth - 1) return BlockType::transformer;
            return kind == DecoderKind::hybrid_mlp ? BlockType::mlp : BlockType::conv;
    }
    return BlockType::transformer;
}

Index hidden_width(Index dim, double ratio) { return static_cast<Index>(std::lround(static_cast<double>(dim) * ratio)); }

}  // namespace

void DecoderSpec::validate() const {
    if (depth < 1) throw ConfigError("decoder depth must be at least 1");
    if ((kind == DecoderKind::hybrid_mlp || kind == DecoderKind::hybrid_conv) && depth < 3)
        throw ConfigError("hybrid decoders need depth >= 3 (first and last blocks stay transformer)");
    if (dim <= 0 || dim % 4 != 0) throw ConfigError("decoder dim must be a positive multiple of 4");
    if (has_attention(kind) && (heads <= 0 || dim % heads != 0))
        throw ConfigError("decoder dim must be divisible by decoder heads");
    if (mlp_ratio <= 0.0) throw ConfigError("decoder mlp_ratio must be positive");
}

MlpBlock::MlpBlock(Index dim, Rng& rng) : norm(dim), mlp(dim, 4 * dim, dim, rng) {}

ag::Var MlpBlock::forward(const ag::Var& x) const { return ag::add(x, mlp(norm(x))); }

ag::ParameterList MlpBlock::parameters() {
    ag::ParameterList out;
    ag::append(out, "norm", norm.parameters());
    ag::append(out, "mlp", mlp.parameters());
    return out;
}

ConvBlock::ConvBlock(Index dim, bool dense_, Rng& rng) : norm(dim), pointwise(dim, dim, rng), dense(dense_) {
    if (dense) {
        const double limit = std::sqrt(6.0 / static_cast<double>(18 * dim));
        std::uniform_real_distribution<double> dist(-limit, limit);
        Matrix w(9 * dim, dim);
        for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
        conv_weight = ag::Parameter("conv.weight", std::move(w));
    } else {
        // fan-in of a depthwise tap set is 9
        const double limit = std::sqrt(6.0 / 18.0);
        std::uniform_real_distribution<double> dist(-limit, limit);
        Matrix w(dim, 9);
        for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
        conv_weight = ag::Parameter("conv.weight", std::move(w));
    }
    conv_bias = ag::Parameter("conv.bias", Matrix::Zero(1, dim), false);
}

ag::Var ConvBlock::forward(const ag::Var& x, Index batch, GridShape grid) const {
    const ag::Var h = norm(x);
    const ag::Var c = dense ? ag::conv3x3(h, conv_weight.var(), conv_bias.var(), batch, grid.rows, grid.cols)
                            : ag::depthwise_conv3x3(h, conv_weight.var(), conv_bias.var(), batch, grid.rows, grid.cols);
    return ag::add(x, pointwise(ag::gelu(c)));
}

ag::ParameterList ConvBlock::parameters() {
    ag::ParameterList out;
    ag::append(out, "norm", norm.parameters());
    ag::append(out, "", conv_weight);
    ag::append(out, "", conv_bias);
    ag::append(out, "pointwise", pointwise.parameters());
    return out;
}

Decoder::Decoder(const DecoderSpec& spec, const DecoderGeometry& geometry, Rng& rng)
    : spec_(spec), geometry_(geometry) {
    spec_.validate();
    const Index dim = spec_.dim;
    embed_ = nn::Linear(geometry_.encoder_dim, dim, rng);
    mask_token_ = ag::Parameter("mask_token", nn::normal(1, dim, 0.02, rng), false);
    pos_table_ = nn::sincos_pos_embed_2d(dim, geometry_.patch.grid_h, geometry_.patch.grid_w);
    blocks_.reserve(static_cast<std::size_t>(spec_.depth));
    for (int i = 0; i < spec_.depth; ++i) {
        switch (block_type(spec_.kind, i, spec_.depth)) {
            case BlockType::transformer:
                blocks_.emplace_back(std::in_place_type<nn::TransformerBlock>, dim, spec_.heads, spec_.mlp_ratio, rng);
                break;
            case BlockType::mlp: blocks_.emplace_back(std::in_place_type<MlpBlock>, dim, rng); break;
            case BlockType::conv: blocks_.emplace_back(std::in_place_type<ConvBlock>, dim, spec_.dense_conv, rng); break;
        }
    }
    norm_ = nn::LayerNorm(dim);
    head_ = nn::Linear(dim, geometry_.patch.patch_dim(), rng);
}

ag::Var Decoder::run_blocks(const ag::Var& x, Index batch) const {
    const Index n = geometry_.patch.num_tokens();
    const GridShape grid = geometry_.patch.grid();
    ag::Var h = x;
    for (const auto& block : blocks_) {
        h = std::visit(
            [&](const auto& b) -> ag::Var {
                using T = std::decay_t<decltype(b)>;
                if constexpr (std::is_same_v<T, nn::TransformerBlock>) return b.forward(h, batch, n);
                else if constexpr (std::is_same_v<T, MlpBlock>) return b.forward(h);
                else return b.forward(h, batch, grid);
            },
            block);
    }
    return h;
}

PatchPrediction Decoder::decode(const ag::Var& visible, const MaskBatch& plans) const {
    const Index batch = static_cast<Index>(plans.size());
    const Index n = geometry_.patch.num_tokens();
    if (plans.empty() || plans[0].num_tokens != n) throw ConfigError("decode: mask plans do not match the patch grid");
    if (visible.rows() != batch * plans[0].keep || visible.cols() != geometry_.encoder_dim)
        throw ConfigError("decode: visible features do not match the mask plans");

    const ag::Var projected = embed_(visible);
    const Index drop = plans[0].num_masked();
    const ag::Var fill = drop > 0 ? ag::repeat_rows(mask_token_.var(), batch * drop)
                                  : ag::Var::constant(Matrix(0, spec_.dim));
    ag::Var x = restore_merge(projected, fill, plans, false);
    x = ag::add(x, ag::Var::constant(pos_table_.replicate(batch, 1)));
    x = run_blocks(x, batch);
    return {head_(norm_(x)), batch};
}

ag::ParameterList Decoder::parameters() {
    ag::ParameterList out;
    ag::append(out, "embed", embed_.parameters());
    ag::append(out, "", mask_token_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string prefix = "blocks." + std::to_string(i);
        std::visit([&](auto& b) { ag::append(out, prefix, b.parameters()); }, blocks_[i]);
    }
    ag::append(out, "norm", norm_.parameters());
    ag::append(out, "head", head_.parameters());
    return out;
}

Decoder build_decoder(const DecoderSpec& spec, const DecoderGeometry& geometry, Rng& rng) {
    return Decoder(spec, geometry, rng);
}

Index param_count(const DecoderSpec& spec, const DecoderGeometry& geometry) {
    spec.validate();
    const Index d = spec.dim;
    const Index pd = geometry.patch.patch_dim();
    Index total = geometry.encoder_dim * d + d;  // embed
    total += d;                                  // mask token
    for (int i = 0; i < spec.depth; ++i) {
        switch (block_type(spec.kind, i, spec.depth)) {
            case BlockType::transformer: {
                const Index h = hidden_width(d, spec.mlp_ratio);
                total += 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d);
                break;
            }
            case BlockType::mlp: total += 2 * d + (4 * d * d + 4 * d) + (4 * d * d + d); break;
            case BlockType::conv:
                total += 2 * d + (spec.dense_conv ? 9 * d * d : 9 * d) + d + (d * d + d);
                break;
        }
    }
    total += 2 * d;       // final norm
    total += d * pd + pd;  // head
    return total;
}

}  // namespace cmae
