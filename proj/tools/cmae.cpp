// cmae: pretraining, evaluation, decoder sweeps and crop previews.

#include "cmae/evaluate.hpp"
#include "cmae/preview.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;
using namespace cmae;

namespace {

fs::path data_root_for(const TrainConfig& config, const std::string& override_root) {
    if (!override_root.empty()) return override_root;
    if (!config.data_root.empty()) return config.data_root;
    fs::path env = default_data_root();
    if (env.empty()) throw ConfigError("no data_root in the config and CMAE_DATA_ROOT is unset");
    return env;
}

Dataset load_split(const TrainConfig& config, const fs::path& root, Split split) {
    return load_dataset(root, split, config.vit.image_size, config.per_class_limit);
}

int run_pretrain(const std::string& config_path, const std::string& resume, bool force, const std::string& root) {
    const TrainConfig config = load_config(config_path);
    const Dataset train = load_split(config, data_root_for(config, root), Split::train);
    PretrainOptions options;
    if (!resume.empty()) options.resume = resume;
    options.force = force;
    const fs::path ckpt = pretrain(config, train, options);
    std::cout << ckpt.string() << '\n';
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& mode, const std::string& root,
             const std::string& config_path) {
    const CheckpointData ckpt = load_checkpoint(ckpt_path);
    TrainConfig config = ckpt.config();
    if (!config_path.empty()) config = load_config(config_path);
    EvalConfig eval = config.eval;
    eval.mode = parse_eval_mode(mode);

    const fs::path data_root = data_root_for(config, root);
    const Dataset train = load_split(config, data_root, Split::train);
    const Dataset val = load_split(config, data_root, Split::val);

    const fs::path manifest = fs::path(ckpt_path).parent_path() / "classes.txt";
    if (fs::exists(manifest) && read_class_manifest(manifest).size() != train.class_names.size())
        throw ConfigError("class manifest " + manifest.string() + " lists " +
                          std::to_string(read_class_manifest(manifest).size()) + " classes, the dataset has " +
                          std::to_string(train.class_names.size()));

    const EvalResult result = evaluate(ckpt, train, val, eval);
    MetricsLog log;
    log.open(fs::path(ckpt_path).parent_path() / "metrics.jsonl");
    log.append(EvalRecord{ckpt.epoch, std::string(to_string(eval.mode)), result.top1});
    nlohmann::json out{{"mode", to_string(eval.mode)},
                       {"epoch", ckpt.epoch},
                       {"top1", result.top1},
                       {"train_top1", result.train_top1}};
    std::cout << out.dump() << '\n';
    return 0;
}

int run_sweep(const std::string& config_path, const std::string& out_path, const std::string& root) {
    const TrainConfig config = load_config(config_path);
    const fs::path data_root = data_root_for(config, root);
    const Dataset train = load_split(config, data_root, Split::train);
    const Dataset val = load_split(config, data_root, Split::val);
    const fs::path csv = out_path.empty() ? fs::path(config.output_dir) / "decoder_sweep.csv" : fs::path(out_path);
    std::vector<SweepRow> rows;
    sweep_decoders(config, train, val, [&](const SweepRow& row) {
        rows.push_back(row);
        write_sweep_csv(csv, rows);
        log_info("sweep: " + std::string(to_string(row.spec.kind)) + " depth " + std::to_string(row.spec.depth) +
                 " dim " + std::to_string(row.spec.dim) + " recon " + std::to_string(row.final_recon_loss) +
                 " top1 " + std::to_string(row.probe_top1));
    });
    write_sweep_csv(csv, rows);
    std::cout << csv.string() << '\n';
    return 0;
}

int run_crop_preview(const std::string& config_path, const std::string& out_dir, const std::string& ckpt_path,
                     int count, const std::string& root) {
    const TrainConfig config = load_config(config_path);
    const Dataset train = load_split(config, data_root_for(config, root), Split::train);
    if (count < 1) throw ConfigError("--count must be positive");

    std::unique_ptr<CmaeModel> model;
    NormStats norm;
    if (!ckpt_path.empty()) {
        const CheckpointData ckpt = load_checkpoint(ckpt_path);
        model = model_from_checkpoint(ckpt);
        norm = ckpt.norm;
    } else {
        Rng rng = keyed_rng({static_cast<std::uint64_t>(Stream::init), config.seed});
        model = std::make_unique<CmaeModel>(config, rng);
        norm = compute_norm_stats(train);
        log_warning("no --ckpt given; previewing a freshly initialised encoder");
    }
    const VisionTransformer& encoder = model->state.encoder;
    const PatchSpec spec = encoder.config().patch_spec();

    const std::size_t n = std::min(train.records.size(), static_cast<std::size_t>(count));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const Matrix tokens = full_image_tokens(train, idx, norm, spec);
    const auto maps = compute_heatmaps(encoder, tokens, static_cast<Index>(n), config.crop.source);

    CropCache cache;
    for (std::size_t i = 0; i < n; ++i) {
        const BoundingRect rect = localize(maps[i], config.crop.threshold);
        const ImageRecord& rec = train.records[i];
        std::string name = rec.source_id;
        for (char& c : name)
            if (c == '/' || c == '\\') c = '_';
        write_crop_preview(fs::path(out_dir) / (fs::path(name).stem().string() + ".png"), rec, maps[i], rect);
        cache[rec.source_id] = CachedRect{rect, 0};
    }
    save_crop_cache(fs::path(out_dir) / "crop_boxes.tsv", cache);
    std::cout << out_dir << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive masked autoencoder pretraining and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string root;
    app.add_option("--data-root", root, "Dataset root (overrides data_root and CMAE_DATA_ROOT)");

    std::string config_path, resume, ckpt, mode, out, sweep_out;
    bool force = false;
    int count = 16;

    auto* pre = app.add_subcommand("pretrain", "Pretrain an encoder");
    pre->add_option("--config", config_path, "Config file")->required();
    pre->add_option("--resume", resume, "Checkpoint to resume from");
    pre->add_flag("--force", force, "Resume even when the config fingerprint differs");

    auto* ev = app.add_subcommand("eval", "Linear probe or fine-tune a checkpoint");
    ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    ev->add_option("--mode", mode, "probe or finetune")->required()->check(CLI::IsMember({"probe", "finetune"}));
    ev->add_option("--config", config_path, "Config overriding the one stored in the checkpoint");

    auto* sw = app.add_subcommand("sweep-decoders", "Train and probe every decoder in the sweep grid");
    sw->add_option("--config", config_path, "Config file")->required();
    sw->add_option("--out", sweep_out, "CSV path (default <output_dir>/decoder_sweep.csv)");

    auto* cp = app.add_subcommand("crop-preview", "Write heatmap and rectangle overlays");
    cp->add_option("--config", config_path, "Config file")->required();
    cp->add_option("--out", out, "Output directory")->required();
    cp->add_option("--ckpt", ckpt, "Checkpoint whose encoder produces the heatmaps");
    cp->add_option("--count", count, "Number of images");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*pre) return run_pretrain(config_path, resume, force, root);
        if (*ev) return run_eval(ckpt, mode, root, config_path);
        if (*sw) return run_sweep(config_path, sweep_out, root);
        if (*cp) return run_crop_preview(config_path, out, ckpt, count, root);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
