#include "cmae/config.hpp"
#include "cmae/metrics.hpp"
#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace cmae;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(CMAE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new cmae::testing::TempDir("cli");
        cmae::testing::write_image_tree(root() / "data", "train", cmae::testing::colored_squares(12, 2, 16, 1));
        cmae::testing::write_image_tree(root() / "data", "val", cmae::testing::colored_squares(8, 2, 16, 2));
        write(root() / "tiny.cfg",
              "epochs=2\nbatch=4\nwarmup_epochs=1\n"
              "encoder.depth=1\nencoder.dim=16\nencoder.heads=2\nencoder.patch_size=4\nencoder.image_size=16\n"
              "proj.out_dim=8\ndecoder.depth=1\ndecoder.dim=16\ndecoder.heads=2\n"
              "crop.mode=contrastive\ncrop.warmup_epochs=1\ncrop.refresh_interval=1\n"
              "checkpoint_interval=1\neval.epochs=3\neval.batch=4\n"
              "sweep.kinds=mlp,hybrid_conv\nsweep.depths=3,1\nsweep.dims=32\n"
              "data_root=" + (root() / "data").string() + "\noutput_dir=" + (root() / "run").string() + "\n");
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path root() { return dir_->path(); }
    static void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

    static cmae::testing::TempDir* dir_;
};

cmae::testing::TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, UsageErrorsExitWithOne) {
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("pretrain"), 1);
    EXPECT_EQ(run("eval --ckpt x --mode knn"), 1);
    EXPECT_EQ(run("frobnicate"), 1);
}

TEST_F(Cli, ConfigErrorsExitWithOne) {
    write(root() / "bad.cfg", "epochs=2\nnot_a_key=3\n");
    EXPECT_EQ(run("pretrain --config " + (root() / "bad.cfg").string()), 1);
    EXPECT_EQ(run("pretrain --config " + (root() / "missing.cfg").string()), 1);
    write(root() / "invalid.cfg", "mask_ratio=1.5\n");
    EXPECT_EQ(run("pretrain --config " + (root() / "invalid.cfg").string() + " --data-root " + (root() / "data").string()), 1);
}

TEST_F(Cli, RuntimeFailuresExitWithTwo) {
    write(root() / "junk.ckpt", "garbage");
    EXPECT_EQ(run("eval --ckpt " + (root() / "junk.ckpt").string() + " --mode probe"), 2);
    const fs::path broken = root() / "broken";
    fs::create_directories(broken / "train" / "a");
    write(broken / "train" / "a" / "x.png", "not a png");
    EXPECT_EQ(run("pretrain --config " + (root() / "tiny.cfg").string() + " --data-root " + broken.string()), 2);
    EXPECT_EQ(run("pretrain --config " + (root() / "tiny.cfg").string() + " --data-root " + (root() / "nowhere").string()), 1);
}

TEST_F(Cli, PretrainEvalPreviewSweep) {
    const fs::path cfg = root() / "tiny.cfg";
    const fs::path run_dir = root() / "run";
    ASSERT_EQ(run("pretrain --config " + cfg.string()), 0);
    EXPECT_TRUE(fs::exists(run_dir / "final.ckpt"));
    EXPECT_TRUE(fs::exists(run_dir / "checkpoint-epoch0001.ckpt"));
    EXPECT_EQ(read_class_manifest(run_dir / "classes.txt").size(), 2u);
    EXPECT_EQ(MetricsLog::read(run_dir / "metrics.jsonl").steps().size(), 6u);

    ASSERT_EQ(run("pretrain --config " + cfg.string() + " --resume " + (run_dir / "checkpoint-epoch0001.ckpt").string()), 0);
    EXPECT_EQ(MetricsLog::read(run_dir / "metrics.jsonl").steps().size(), 6u);

    write(root() / "changed.cfg", std::string(std::istreambuf_iterator<char>(std::ifstream(cfg).rdbuf()), {}) + "base_lr=0.01\n");
    EXPECT_EQ(run("pretrain --config " + (root() / "changed.cfg").string() + " --resume " +
                  (run_dir / "checkpoint-epoch0001.ckpt").string()),
              1);

    ASSERT_EQ(run("eval --ckpt " + (run_dir / "final.ckpt").string() + " --mode probe"), 0);
    ASSERT_EQ(run("eval --ckpt " + (run_dir / "final.ckpt").string() + " --mode finetune"), 0);
    const auto evals = MetricsLog::read(run_dir / "metrics.jsonl").evals();
    ASSERT_EQ(evals.size(), 2u);
    EXPECT_EQ(evals[0].mode, "probe");
    EXPECT_EQ(evals[1].mode, "finetune");

    const fs::path preview = root() / "preview";
    ASSERT_EQ(run("crop-preview --config " + cfg.string() + " --out " + preview.string() + " --ckpt " +
                  (run_dir / "final.ckpt").string() + " --count 3"),
              0);
    EXPECT_EQ(load_crop_cache(preview / "crop_boxes.tsv").size(), 3u);
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(preview)) pngs += e.path().extension() == ".png";
    EXPECT_EQ(pngs, 3);

    ASSERT_EQ(run("sweep-decoders --config " + cfg.string() + " --out " + (root() / "sweep.csv").string()), 0);
    std::ifstream csv(root() / "sweep.csv");
    std::string line;
    int lines = 0;
    while (std::getline(csv, line)) ++lines;
    EXPECT_EQ(lines, 1 + 3);
}
