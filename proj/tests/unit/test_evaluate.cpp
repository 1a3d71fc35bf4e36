#include "cmae/evaluate.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace cmae;
using cmae::testing::random_matrix;

namespace {

TrainConfig tiny_config() {
    TrainConfig c = parse_config(
        "epochs=2\nbatch=4\nwarmup_epochs=0\n"
        "encoder.depth=1\nencoder.dim=16\nencoder.heads=2\nencoder.patch_size=4\nencoder.image_size=16\n"
        "proj.out_dim=8\ndecoder.depth=1\ndecoder.dim=16\ndecoder.heads=2\n"
        "eval.epochs=30\neval.batch=8\neval.lr=0.01\n"
        "sweep.kinds=transformer,mlp,hybrid_conv\nsweep.depths=3,2\nsweep.dims=32\nsweep.epochs=1\n");
    c.validate();
    return c;
}

std::vector<int> labels(const Dataset& ds) {
    std::vector<int> out;
    for (const auto& r : ds.records) out.push_back(r.label);
    return out;
}

}  // namespace

TEST(LinearProbe, SeparableClassesReachFullAccuracy) {
    Rng rng(1);
    std::normal_distribution<double> noise(0.0, 0.3);
    const auto make = [&](int n, Matrix& x, std::vector<int>& y) {
        x.resize(n, 6);
        y.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            y[static_cast<std::size_t>(i)] = i % 2;
            for (Index c = 0; c < 6; ++c) x(i, c) = noise(rng) + (c == 0 ? (i % 2 ? 2.0 : -2.0) : 0.0) + 10.0;
        }
    };
    Matrix tx, vx;
    std::vector<int> ty, vy;
    make(64, tx, ty);
    make(32, vx, vy);
    EvalConfig cfg;
    cfg.epochs = 20;
    cfg.batch = 16;
    cfg.lr = 0.01;
    const EvalResult r = linear_probe(tx, ty, vx, vy, 2, cfg, 3);
    EXPECT_EQ(r.top1, 100.0);
    EXPECT_EQ(r.train_top1, 100.0);
    EXPECT_EQ(linear_probe(tx, ty, vx, vy, 2, cfg, 3).top1, r.top1);
}

TEST(LinearProbe, RejectsBadInput) {
    const Matrix x = random_matrix(4, 3, 2);
    EvalConfig cfg;
    EXPECT_THROW(linear_probe(x, std::vector<int>{0, 1, 0}, x, std::vector<int>{0, 1, 0, 1}, 2, cfg, 0), ConfigError);
    EXPECT_THROW(linear_probe(x, std::vector<int>{0, 1, 0, 5}, x, std::vector<int>{0, 1, 0, 1}, 2, cfg, 0), ConfigError);
}

TEST(ExtractFeatures, OneRowPerImageAndChunkInvariant) {
    const Dataset ds = cmae::testing::colored_squares(10, 2, 16, 4);
    Rng rng(5);
    const CmaeModel model(tiny_config(), rng);
    const NormStats norm = compute_norm_stats(ds);
    const Matrix a = extract_features(model.state.encoder, ds, norm, 3);
    const Matrix b = extract_features(model.state.encoder, ds, norm, 64);
    EXPECT_EQ(a.rows(), 10);
    EXPECT_EQ(a.cols(), 16);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Evaluate, ClassCountMismatchIsAConfigError) {
    const Dataset two = cmae::testing::colored_squares(8, 2, 16, 6);
    const Dataset three = cmae::testing::colored_squares(9, 3, 16, 7);
    Trainer t(tiny_config(), two);
    const CheckpointData ckpt = capture_checkpoint(t);
    EXPECT_THROW(evaluate(ckpt, three, three, tiny_config().eval), ConfigError);
}

TEST(Evaluate, ModelFromCheckpointReproducesTheEncoder) {
    const Dataset ds = cmae::testing::colored_squares(8, 2, 16, 8);
    Trainer t(tiny_config(), ds);
    t.train(2);
    const auto rebuilt = model_from_checkpoint(capture_checkpoint(t));
    const Matrix a = extract_features(t.model().state.encoder, ds, t.norm());
    const Matrix b = extract_features(rebuilt->state.encoder, ds, t.norm());
    EXPECT_TRUE(cmae::testing::bit_identical(a, b));
}

TEST(Evaluate, ColourClassesAreLinearlySeparableEvenAtInit) {
    const Dataset train = cmae::testing::colored_squares(48, 2, 16, 9);
    const Dataset val = cmae::testing::colored_squares(24, 2, 16, 10);
    Trainer t(tiny_config(), train);
    const EvalResult r = evaluate(capture_checkpoint(t), train, val, tiny_config().eval);
    EXPECT_GE(r.top1, 90.0);
}

TEST(Evaluate, RandomEncoderOnNoiseIsNearChance) {
    const Dataset train = cmae::testing::noise_images(160, 4, 16, 11);
    const Dataset val = cmae::testing::noise_images(400, 4, 16, 12);
    Trainer t(tiny_config(), train);
    const EvalResult r = evaluate(capture_checkpoint(t), train, val, tiny_config().eval);
    EXPECT_NEAR(r.top1, 25.0, 8.0);
}

TEST(Evaluate, FineTuneRunsAndLearns) {
    const Dataset train = cmae::testing::colored_squares(32, 2, 16, 13);
    const Dataset val = cmae::testing::colored_squares(16, 2, 16, 14);
    Trainer t(tiny_config(), train);
    EvalConfig cfg = tiny_config().eval;
    cfg.mode = EvalMode::fine_tune;
    cfg.epochs = 10;
    cfg.lr = 1e-3;
    const EvalResult r = evaluate(capture_checkpoint(t), train, val, cfg);
    EXPECT_EQ(r.mode, EvalMode::fine_tune);
    EXPECT_GE(r.train_top1, 90.0);
}

TEST(Sweep, GridSkipsShallowHybrids) {
    const auto grid = sweep_grid(tiny_config());
    ASSERT_EQ(grid.size(), 5u);
    for (const auto& s : grid) {
        EXPECT_FALSE(s.kind == DecoderKind::hybrid_conv && s.depth == 2);
        EXPECT_EQ(s.heads, 1);
    }
}

TEST(Sweep, RowsCarryCountsLossesAndAccuracy) {
    TrainConfig cfg = tiny_config();
    cfg.sweep.kinds = {DecoderKind::mlp, DecoderKind::conv};
    cfg.sweep.depths = {1};
    cfg.eval.epochs = 5;
    const Dataset train = cmae::testing::colored_squares(8, 2, 16, 15);
    const Dataset val = cmae::testing::colored_squares(8, 2, 16, 16);
    int callbacks = 0;
    const auto rows = sweep_decoders(cfg, train, val, [&](const SweepRow&) { ++callbacks; });
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(callbacks, 2);
    const DecoderGeometry geo{cfg.vit.dim, cfg.vit.patch_spec()};
    for (const auto& r : rows) {
        EXPECT_EQ(r.param_count, param_count(r.spec, geo));
        EXPECT_TRUE(std::isfinite(r.final_recon_loss));
        EXPECT_GT(r.final_recon_loss, 0.0);
        EXPECT_GE(r.probe_top1, 0.0);
        EXPECT_LE(r.probe_top1, 100.0);
    }
    EXPECT_GT(rows[0].param_count, rows[1].param_count);

    cmae::testing::TempDir dir("sweep");
    write_sweep_csv(dir.path() / "s.csv", rows);
    std::ifstream in(dir.path() / "s.csv");
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    EXPECT_EQ(header, "kind,depth,dim,param_count,final_recon_loss,probe_top1");
    EXPECT_EQ(first.rfind("mlp,1,32," + std::to_string(rows[0].param_count) + ",", 0), 0u) << first;
}
