#include "cmae/config.hpp"
#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace cmae;

TEST(Config, DefaultsValidate) { EXPECT_NO_THROW(TrainConfig{}.validate()); }

TEST(Config, ParsesKeysCommentsAndWhitespace) {
    const TrainConfig c = parse_config(
        "# desk run\n"
        "epochs = 12\n"
        "\n"
        "  encoder.depth=2   # shallow\n"
        "decoder.kind = hybrid_conv\n"
        "crop.mode = contrastive\n"
        "crop.warmup_epochs = never\n"
        "sweep.kinds = mlp,conv\n"
        "sweep.depths = 4,2\n"
        "recon.norm_pix = off\n"
        "seed = 42\n");
    EXPECT_EQ(c.epochs, 12);
    EXPECT_EQ(c.vit.depth, 2);
    EXPECT_EQ(c.decoder.kind, DecoderKind::hybrid_conv);
    EXPECT_EQ(c.crop.warmup_epochs, CropSchedule::never);
    EXPECT_EQ(c.sweep.kinds, (std::vector<DecoderKind>{DecoderKind::mlp, DecoderKind::conv}));
    EXPECT_EQ(c.sweep.depths, (std::vector<int>{4, 2}));
    EXPECT_FALSE(c.norm_pix_loss);
    EXPECT_EQ(c.seed, 42u);
}

TEST(Config, UnknownKeyIsFatalAndNamesTheLine) {
    try {
        parse_config("epochs=1\nencoder.widht=3\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("encoder.widht"), std::string::npos);
    }
}

TEST(Config, MalformedValuesAreFatal) {
    EXPECT_THROW(parse_config("epochs=ten\n"), ConfigError);
    EXPECT_THROW(parse_config("epochs=3.5\n"), ConfigError);
    EXPECT_THROW(parse_config("base_lr=fast\n"), ConfigError);
    EXPECT_THROW(parse_config("encoder.cls_token=maybe\n"), ConfigError);
    EXPECT_THROW(parse_config("decoder.kind=rnn\n"), ConfigError);
    EXPECT_THROW(parse_config("just a line\n"), ConfigError);
}

TEST(Config, ValidationCatchesInconsistentSettings) {
    EXPECT_THROW(parse_config("mask_ratio=1.0\n").validate(), ConfigError);
    EXPECT_THROW(parse_config("encoder.heads=5\n").validate(), ConfigError);
    EXPECT_THROW(parse_config("lambda_loc=-1\n").validate(), ConfigError);
    EXPECT_THROW(parse_config("crop.threshold=1.5\n").validate(), ConfigError);
    EXPECT_THROW(parse_config("decoder.kind=hybrid_mlp\ndecoder.depth=2\n").validate(), ConfigError);
    EXPECT_THROW(parse_config("min_lr=1\nbase_lr=0.1\n").validate(), ConfigError);
}

TEST(Config, SerializeRoundtrip) {
    TrainConfig c = parse_config("epochs=7\nbase_lr=0.00123456789\ntemperature=0.3\ncrop.warmup_epochs=never\n"
                                 "sweep.dims=64,32\nencoder.pos_embed=learned\n");
    const std::string text = serialize_config(c);
    const TrainConfig back = parse_config(text);
    EXPECT_EQ(serialize_config(back), text);
    EXPECT_EQ(config_fingerprint(back), config_fingerprint(c));
    EXPECT_EQ(back.base_lr, c.base_lr);
    for (const auto& key : config_keys()) EXPECT_NE(text.find(key + "="), std::string::npos) << key;
}

TEST(Config, FingerprintTracksModelFieldsOnly) {
    const TrainConfig base;
    const std::string fp = config_fingerprint(base);
    EXPECT_NE(config_fingerprint(parse_config("encoder.dim=96\n")), fp);
    EXPECT_NE(config_fingerprint(parse_config("base_lr=0.01\n")), fp);
    EXPECT_NE(config_fingerprint(parse_config("seed=1\n")), fp);
    EXPECT_EQ(config_fingerprint(parse_config("data_root=/elsewhere\n")), fp);
    EXPECT_EQ(config_fingerprint(parse_config("output_dir=/tmp/x\nlog_interval=5\n")), fp);
    EXPECT_EQ(config_fingerprint(parse_config("eval.epochs=3\nsweep.epochs=2\n")), fp);
}

TEST(Config, CropScheduleDefaultsToFifthOfTraining) {
    TrainConfig c = parse_config("epochs=50\ncrop.mode=contrastive\n");
    EXPECT_EQ(c.crop_schedule().warmup_epochs, 10);
    c.crop.mode = CropMode::random;
    EXPECT_EQ(c.crop_schedule().warmup_epochs, CropSchedule::never);
}

TEST(Config, LoadFromFile) {
    cmae::testing::TempDir dir("cfg");
    {
        std::ofstream(dir.path() / "a.cfg") << "batch=8\n";
    }
    EXPECT_EQ(load_config(dir.path() / "a.cfg").batch, 8);
    EXPECT_THROW(load_config(dir.path() / "missing.cfg"), ConfigError);
}

TEST(Config, ShippedConfigsParseAndValidate) {
    for (const char* name : {"desk.cfg", "smoke.cfg", "table1.cfg"}) {
        const auto path = std::filesystem::path(CMAE_SOURCE_DIR) / "configs" / name;
        EXPECT_NO_THROW(load_config(path).validate()) << name;
    }
}

TEST(EvalMode, ParseAliases) {
    EXPECT_EQ(parse_eval_mode("probe"), EvalMode::linear_probe);
    EXPECT_EQ(parse_eval_mode("finetune"), EvalMode::fine_tune);
    EXPECT_THROW(parse_eval_mode("knn"), ConfigError);
}
