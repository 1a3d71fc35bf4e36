#include "cmae/backbone.hpp"

#include <string>

namespace cmae {

PosEmbedKind parse_pos_embed(std::string_view text) {
    if (text == "sincos") return PosEmbedKind::sincos;
    if (text == "learned") return PosEmbedKind::learned;
    throw ConfigError("unknown position embedding '" + std::string(text) + "'");
}

std::string_view to_string(PosEmbedKind kind) { return kind == PosEmbedKind::sincos ? "sincos" : "learned"; }

Pooling parse_pooling(std::string_view text) {
    if (text == "mean") return Pooling::mean;
    if (text == "cls") return Pooling::cls;
    throw ConfigError("unknown pooling '" + std::string(text) + "'");
}

std::string_view to_string(Pooling pooling) { return pooling == Pooling::mean ? "mean" : "cls"; }

void ViTConfig::validate() const {
    if (depth < 0) throw ConfigError("encoder depth must be non-negative");
    if (dim <= 0 || heads <= 0 || dim % heads != 0) throw ConfigError("encoder dim must be divisible by heads");
    if (pos_embed == PosEmbedKind::sincos && dim % 4 != 0)
        throw ConfigError("sincos position embedding needs encoder dim divisible by 4");
    if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
    (void)patch_spec();
}

namespace {

std::vector<Index> drop_first_rows(Index batch, Index seq) {
    std::vector<Index> rows;
    rows.reserve(static_cast<std::size_t>(batch * (seq - 1)));
    for (Index b = 0; b < batch; ++b)
        for (Index i = 1; i < seq; ++i) rows.push_back(b * seq + i);
    return rows;
}

}  // namespace

ag::Var EncoderOutput::patch_features() const {
    if (!has_cls) return features;
    const auto rows = drop_first_rows(batch, seq);
    return ag::gather_rows(features, rows);
}

ag::Var EncoderOutput::cls_features() const {
    if (!has_cls) throw ConfigError("encoder output has no cls token");
    std::vector<Index> rows;
    for (Index b = 0; b < batch; ++b) rows.push_back(b * seq);
    return ag::gather_rows(features, rows);
}

VisionTransformer::VisionTransformer(const ViTConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const PatchSpec spec = config_.patch_spec();
    patch_embed_ = nn::Linear(spec.patch_dim(), config_.dim, rng);
    cls_token_ = ag::Parameter("cls_token", nn::normal(1, config_.dim, 0.02, rng), false);
    if (config_.pos_embed == PosEmbedKind::learned) {
        pos_embed_ = ag::Parameter("pos_embed", nn::normal(spec.num_tokens(), config_.dim, 0.02, rng), false);
    } else {
        pos_table_ = nn::sincos_pos_embed_2d(config_.dim, spec.grid_h, spec.grid_w);
    }
    blocks_.reserve(static_cast<std::size_t>(config_.depth));
    for (int i = 0; i < config_.depth; ++i) blocks_.emplace_back(config_.dim, config_.heads, config_.mlp_ratio, rng);
    norm_ = nn::LayerNorm(config_.dim);
}

EncoderOutput VisionTransformer::encode(const ag::Var& pixel_tokens, std::span<const Index> positions, Index batch,
                                        bool use_cls, bool keep_attention) const {
    const Index total = pixel_tokens.rows();
    const Index n_tokens = config_.num_tokens();
    if (batch <= 0 || total % batch != 0) throw ConfigError("encode: token rows not divisible by batch");
    if (static_cast<Index>(positions.size()) != total) throw ConfigError("encode: one position per token required");
    for (Index p : positions)
        if (p < 0 || p >= n_tokens)
            throw ConfigError("encode: position index " + std::to_string(p) + " outside [0," + std::to_string(n_tokens) + ")");
    if (use_cls && !config_.cls_token) throw ConfigError("encode: cls token requested but the encoder has none");

    const Index n = total / batch;
    ag::Var pos = config_.pos_embed == PosEmbedKind::learned ? pos_embed_.var() : ag::Var::constant(pos_table_);
    ag::Var x = ag::add(patch_embed_(pixel_tokens), ag::gather_rows(pos, positions));

    Index seq = n;
    if (use_cls) {
        seq = n + 1;
        ag::Var stacked = ag::concat_rows(ag::repeat_rows(cls_token_.var(), batch), x);
        std::vector<Index> order;
        order.reserve(static_cast<std::size_t>(batch * seq));
        for (Index b = 0; b < batch; ++b) {
            order.push_back(b);
            for (Index i = 0; i < n; ++i) order.push_back(batch + b * n + i);
        }
        x = ag::gather_rows(stacked, order);
    }

    EncoderOutput out;
    out.batch = batch;
    out.seq = seq;
    out.has_cls = use_cls;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const bool last = i + 1 == blocks_.size();
        x = blocks_[i].forward(x, batch, seq, keep_attention && last ? &out.last_attention : nullptr);
    }
    out.last_block = x;
    out.features = norm_(x);
    return out;
}

ag::ParameterList VisionTransformer::parameters() {
    ag::ParameterList out;
    ag::append(out, "patch_embed", patch_embed_.parameters());
    if (config_.cls_token) ag::append(out, "", cls_token_);
    if (config_.pos_embed == PosEmbedKind::learned) ag::append(out, "", pos_embed_);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        ag::append(out, "blocks." + std::to_string(i), blocks_[i].parameters());
    ag::append(out, "norm", norm_.parameters());
    return out;
}

void ProjectionSpec::validate() const {
    if (out_dim < 2) throw ConfigError("projection output dim must be at least 2");
    if (hidden_dim < 0) throw ConfigError("projection hidden dim must be non-negative");
}

ProjectionHead::ProjectionHead(int in_dim, const ProjectionSpec& spec, Rng& rng) : spec_(spec) {
    spec_.validate();
    const int hidden = spec_.hidden_dim > 0 ? spec_.hidden_dim : in_dim;
    mlp_ = nn::Mlp(in_dim, hidden, spec_.out_dim, rng);
}

ag::Var ProjectionHead::project(const ag::Var& h, Index batch, const ag::Var& cls) const {
    ag::Var pooled;
    if (spec_.pooling == Pooling::cls) {
        if (!cls.defined()) throw ConfigError("cls pooling requires an encoder with a cls token");
        pooled = cls;
    } else {
        pooled = ag::segment_mean(h, h.rows() / batch);
    }
    ag::Var z = mlp_(pooled);
    return spec_.normalize ? ag::l2_normalize_rows(z) : z;
}

ag::ParameterList ProjectionHead::parameters() { return mlp_.parameters(); }

EncoderState::EncoderState(const ViTConfig& vit, const ProjectionSpec& proj, double m, Rng& rng)
    : encoder(vit, rng),
      momentum_encoder(vit, rng),
      projector(vit.dim, proj, rng),
      momentum_projector(vit.dim, proj, rng),
      momentum(m) {
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("momentum must lie in [0,1]");
    auto online = online_parameters();
    auto shadow = momentum_parameters();
    for (std::size_t i = 0; i < online.size(); ++i) shadow[i].param->value() = online[i].param->value();
}

ag::ParameterList EncoderState::online_parameters() {
    ag::ParameterList out;
    ag::append(out, "encoder", encoder.parameters());
    ag::append(out, "projector", projector.parameters());
    return out;
}

ag::ParameterList EncoderState::momentum_parameters() {
    ag::ParameterList out;
    ag::append(out, "momentum_encoder", momentum_encoder.parameters());
    ag::append(out, "momentum_projector", momentum_projector.parameters());
    return out;
}

void momentum_update(EncoderState& state, double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("momentum must lie in [0,1]");
    auto online = state.online_parameters();
    auto shadow = state.momentum_parameters();
    for (std::size_t i = 0; i < online.size(); ++i) {
        Matrix& target = shadow[i].param->value();
        target = m * target + (1.0 - m) * online[i].param->value();
    }
}

ag::Var select_tokens(const Matrix& tokens, std::span<const Index> rows) {
    Matrix out(static_cast<Index>(rows.size()), tokens.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = tokens.row(rows[i]);
    return ag::Var::constant(std::move(out));
}

BranchOutput run_contrastive_branches(EncoderState& state, const Matrix& tokens_q, const Matrix& tokens_k,
                                      const MaskBatch& plans_q, const MaskBatch& plans_k,
                                      const BranchOptions& options) {
    const Index batch = static_cast<Index>(plans_q.size());
    if (plans_k.size() != plans_q.size()) throw ConfigError("view q and view k plan counts differ");
    const bool use_cls = state.encoder.config().cls_token;
    const bool cls_pool = state.projector.spec().pooling == Pooling::cls;

    BranchOutput out;

    const auto vis_slots_q = visible_slots(plans_q);
    const EncoderOutput enc_q1 = state.encoder.encode(select_tokens(tokens_q, visible_rows(plans_q)), vis_slots_q, batch, use_cls);
    out.q1 = enc_q1.patch_features();
    if (use_cls) out.q1_cls = enc_q1.cls_features();

    const Index drop = plans_q[0].num_masked();
    if (options.q2_override != nullptr) {
        out.q2 = ag::Var::constant(*options.q2_override);
    } else if (drop > 0) {
        const auto run = [&] {
            return state.encoder.encode(select_tokens(tokens_q, masked_rows(plans_q)), masked_slots(plans_q), batch, use_cls)
                .patch_features();
        };
        if (options.record_q2_graph) {
            out.q2 = run();
        } else {
            ag::NoGradGuard guard;
            out.q2 = run();
        }
    } else {
        out.q2 = ag::Var::constant(Matrix(0, state.encoder.config().dim));
    }
    out.h1 = restore_merge(out.q1, out.q2, plans_q, true);
    out.z_q = state.projector.project(out.h1, batch, cls_pool ? out.q1_cls : ag::Var{});

    {
        ag::NoGradGuard guard;
        const EncoderOutput k1 = state.momentum_encoder.encode(select_tokens(tokens_k, visible_rows(plans_k)),
                                                               visible_slots(plans_k), batch, use_cls);
        ag::Var k2 = ag::Var::constant(Matrix(0, state.encoder.config().dim));
        if (plans_k[0].num_masked() > 0)
            k2 = state.momentum_encoder.encode(select_tokens(tokens_k, masked_rows(plans_k)), masked_slots(plans_k), batch, use_cls)
                     .patch_features();
        out.h2 = restore_merge(k1.patch_features(), k2, plans_k, false);
        out.z_k = state.momentum_projector.project(out.h2, batch, cls_pool ? k1.cls_features() : ag::Var{});
    }
    return out;
}

}  // namespace cmae
