#include "cmae/decoder_zoo.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace cmae;
using cmae::testing::random_matrix;

namespace {

DecoderGeometry small_geometry() { return {32, PatchSpec::for_image(16, 16, 4)}; }

MaskBatch plans_for(Index batch, Index n, double ratio) {
    MaskBatch plans;
    for (Index b = 0; b < batch; ++b) {
        Rng rng(static_cast<std::uint64_t>(100 + b));
        plans.push_back(make_mask(n, ratio, rng));
    }
    return plans;
}

DecoderSpec spec_of(DecoderKind kind, int depth, int dim) {
    DecoderSpec s;
    s.kind = kind;
    s.depth = depth;
    s.dim = dim;
    s.heads = std::max(1, dim / 32);
    return s;
}

bool valid(const DecoderSpec& s) {
    try {
        s.validate();
        return true;
    } catch (const ConfigError&) {
        return false;
    }
}

}  // namespace

TEST(DecoderKind, ParseRoundtrip) {
    for (DecoderKind k : kAllDecoderKinds) EXPECT_EQ(parse_decoder_kind(to_string(k)), k);
    EXPECT_THROW(parse_decoder_kind("lstm"), ConfigError);
}

TEST(DecoderSpec, Validation) {
    EXPECT_THROW(spec_of(DecoderKind::hybrid_mlp, 2, 64).validate(), ConfigError);
    EXPECT_THROW(spec_of(DecoderKind::hybrid_conv, 2, 64).validate(), ConfigError);
    EXPECT_NO_THROW(spec_of(DecoderKind::hybrid_conv, 3, 64).validate());
    EXPECT_THROW(spec_of(DecoderKind::mlp, 0, 64).validate(), ConfigError);
    DecoderSpec bad_heads = spec_of(DecoderKind::transformer, 2, 64);
    bad_heads.heads = 5;
    EXPECT_THROW(bad_heads.validate(), ConfigError);
    bad_heads.kind = DecoderKind::mlp;
    EXPECT_NO_THROW(bad_heads.validate());
}

TEST(Decoder, HybridKeepsTransformerEnds) {
    Rng rng(1);
    const Decoder d(spec_of(DecoderKind::hybrid_conv, 4, 64), small_geometry(), rng);
    ASSERT_EQ(d.num_blocks(), 4u);
    EXPECT_TRUE(std::holds_alternative<nn::TransformerBlock>(d.block(0)));
    EXPECT_TRUE(std::holds_alternative<ConvBlock>(d.block(1)));
    EXPECT_TRUE(std::holds_alternative<ConvBlock>(d.block(2)));
    EXPECT_TRUE(std::holds_alternative<nn::TransformerBlock>(d.block(3)));
    Rng rng2(1);
    const Decoder m(spec_of(DecoderKind::hybrid_mlp, 3, 64), small_geometry(), rng2);
    EXPECT_TRUE(std::holds_alternative<MlpBlock>(m.block(1)));
}

TEST(Decoder, EveryGridPointGivesPatchShapedOutput) {
    const DecoderGeometry geo = small_geometry();
    const MaskBatch plans = plans_for(2, geo.patch.num_tokens(), 0.75);
    const ag::Var visible = ag::Var::constant(random_matrix(2 * plans[0].keep, geo.encoder_dim, 2));
    ag::NoGradGuard no_grad;
    for (DecoderKind kind : kAllDecoderKinds)
        for (int depth : {8, 6, 4, 2})
            for (int dim : {512, 256, 128, 64}) {
                const DecoderSpec spec = spec_of(kind, depth, dim);
                if (!valid(spec)) {
                    EXPECT_TRUE(depth == 2 && (kind == DecoderKind::hybrid_mlp || kind == DecoderKind::hybrid_conv));
                    continue;
                }
                Rng rng(3);
                Decoder d(spec, geo, rng);
                const PatchPrediction p = d.decode(visible, plans);
                EXPECT_EQ(p.pixels.rows(), 2 * geo.patch.num_tokens());
                EXPECT_EQ(p.pixels.cols(), geo.patch.patch_dim());
                EXPECT_TRUE(p.pixels.value().allFinite());
                EXPECT_EQ(count_scalars(d.parameters()), param_count(spec, geo))
                    << to_string(kind) << " " << depth << " " << dim;
            }
}

TEST(ParamCount, StrictlyDecreasesAlongDimsAndDepths) {
    const DecoderGeometry geo{192, PatchSpec::for_image(64, 64, 8)};
    for (DecoderKind kind : kAllDecoderKinds) {
        const int min_depth = valid(spec_of(kind, 2, 64)) ? 2 : 4;
        for (int depth : {8, 6, 4, 2}) {
            if (depth < min_depth) continue;
            Index prev = std::numeric_limits<Index>::max();
            for (int dim : {512, 256, 128, 64}) {
                const Index c = param_count(spec_of(kind, depth, dim), geo);
                EXPECT_LT(c, prev);
                prev = c;
            }
        }
        for (int dim : {512, 256, 128, 64}) {
            Index prev = std::numeric_limits<Index>::max();
            for (int depth : {8, 6, 4, 2}) {
                if (depth < min_depth) continue;
                const Index c = param_count(spec_of(kind, depth, dim), geo);
                EXPECT_LT(c, prev);
                prev = c;
            }
        }
    }
}

TEST(ParamCount, WeakerBlocksAreCheaper) {
    const DecoderGeometry geo{192, PatchSpec::for_image(64, 64, 8)};
    const Index t = param_count(spec_of(DecoderKind::transformer, 4, 128), geo);
    EXPECT_LT(param_count(spec_of(DecoderKind::conv, 4, 128), geo), param_count(spec_of(DecoderKind::mlp, 4, 128), geo));
    EXPECT_LT(param_count(spec_of(DecoderKind::hybrid_conv, 4, 128), geo), t);
    DecoderSpec dense = spec_of(DecoderKind::conv, 4, 128);
    dense.dense_conv = true;
    EXPECT_GT(param_count(dense, geo), param_count(spec_of(DecoderKind::conv, 4, 128), geo));
}

TEST(Decoder, VisibleTokensDoNotLeakAcrossSamplesInTokenwiseStacks) {
    // an MLP decoder sees each token alone, so changing sample 1 leaves sample 0 unchanged
    const DecoderGeometry geo = small_geometry();
    const MaskBatch plans = plans_for(2, geo.patch.num_tokens(), 0.5);
    Rng rng(4);
    const Decoder d(spec_of(DecoderKind::mlp, 2, 64), geo, rng);
    Matrix v = random_matrix(2 * plans[0].keep, geo.encoder_dim, 5);
    ag::NoGradGuard no_grad;
    const Matrix a = d.decode(ag::Var::constant(v), plans).pixels.value();
    v.bottomRows(plans[0].keep).setRandom();
    const Matrix b = d.decode(ag::Var::constant(v), plans).pixels.value();
    const Index n = geo.patch.num_tokens();
    EXPECT_EQ(a.topRows(n), b.topRows(n));
    EXPECT_NE(a.bottomRows(n), b.bottomRows(n));
}

TEST(Decoder, GradientsReachEveryBlockType) {
    const DecoderGeometry geo = small_geometry();
    const MaskBatch plans = plans_for(2, geo.patch.num_tokens(), 0.75);
    for (DecoderKind kind : kAllDecoderKinds) {
        Rng rng(6);
        Decoder d(spec_of(kind, 3, 32), geo, rng);
        const ag::Var v = ag::Var::constant(random_matrix(2 * plans[0].keep, geo.encoder_dim, 7));
        ag::backward(ag::mean_all(d.decode(v, plans).pixels));
        for (const auto& np : d.parameters()) EXPECT_GT(np.param->grad().squaredNorm(), 0.0) << np.name;
    }
}

TEST(ConvBlock, DepthwiseGradientMatchesFiniteDifferences) {
    Rng rng(8);
    const ConvBlock block(8, false, rng);
    const auto [analytic, numeric] = cmae::testing::check_op(
        [&](const ag::Var& x) { return block.forward(x, 2, {3, 3}); }, random_matrix(18, 8, 9));
    EXPECT_LT(cmae::testing::max_relative_error(analytic, numeric), 1e-6);
}
