#include "cmae/evaluate.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace cmae {

std::unique_ptr<CmaeModel> model_from_checkpoint(const CheckpointData& data) {
    const TrainConfig config = data.config();
    Rng rng = keyed_rng({static_cast<std::uint64_t>(Stream::init), config.seed});
    auto model = std::make_unique<CmaeModel>(config, rng);
    load_parameters(data, model->all_parameters());
    return model;
}

Matrix full_image_tokens(const Dataset& dataset, std::span<const std::size_t> indices, const NormStats& norm,
                         const PatchSpec& spec) {
    std::vector<const ImageRecord*> records;
    records.reserve(indices.size());
    for (std::size_t i : indices) {
        const ImageRecord& r = dataset.records.at(i);
        if (r.height != spec.image_h() || r.width != spec.image_w())
            throw ConfigError("image " + r.source_id + " is " + std::to_string(r.height) + "x" +
                              std::to_string(r.width) + ", the encoder expects " + std::to_string(spec.image_h()) +
                              "x" + std::to_string(spec.image_w()));
        records.push_back(&r);
    }
    return patchify(normalize_images(records, norm), spec);
}

namespace {

std::vector<Index> all_slots(Index batch, Index n) {
    std::vector<Index> out(static_cast<std::size_t>(batch * n));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Index>(i) % n;
    return out;
}

ag::Var pooled_features(const VisionTransformer& encoder, const Matrix& tokens, Index batch) {
    const Index n = encoder.config().num_tokens();
    const auto slots = all_slots(batch, n);
    const EncoderOutput out =
        encoder.encode(ag::Var::constant(tokens), slots, batch, encoder.config().cls_token);
    return ag::segment_mean(out.patch_features(), n);
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    return order;
}

double top1(const Matrix& logits, std::span<const int> labels) {
    if (labels.empty()) return 0.0;
    long hits = 0;
    for (Index i = 0; i < logits.rows(); ++i) {
        Index best = 0;
        logits.row(i).maxCoeff(&best);
        hits += best == labels[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

long steps_for(std::size_t n, int batch, int epochs) {
    const long per_epoch = static_cast<long>((n + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
    return per_epoch * epochs;
}

void check_eval_config(const EvalConfig& config) {
    if (config.epochs < 1) throw ConfigError("eval.epochs must be at least 1");
    if (config.batch < 1) throw ConfigError("eval.batch must be at least 1");
    if (!(config.lr > 0.0)) throw ConfigError("eval.lr must be positive");
}

std::vector<int> labels_of(const Dataset& ds) {
    std::vector<int> out;
    out.reserve(ds.records.size());
    for (const auto& r : ds.records) out.push_back(r.label);
    return out;
}

}  // namespace

Matrix extract_features(const VisionTransformer& encoder, const Dataset& dataset, const NormStats& norm, Index chunk) {
    ag::NoGradGuard guard;
    const PatchSpec spec = encoder.config().patch_spec();
    Matrix out(static_cast<Index>(dataset.records.size()), encoder.config().dim);
    for (std::size_t start = 0; start < dataset.records.size(); start += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(dataset.records.size(), start + static_cast<std::size_t>(chunk));
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Matrix tokens = full_image_tokens(dataset, idx, norm, spec);
        out.middleRows(static_cast<Index>(start), static_cast<Index>(idx.size())) =
            pooled_features(encoder, tokens, static_cast<Index>(idx.size())).value();
    }
    return out;
}

EvalResult linear_probe(const Matrix& train_x, std::span<const int> train_y, const Matrix& val_x,
                        std::span<const int> val_y, int num_classes, const EvalConfig& config, std::uint64_t seed) {
    check_eval_config(config);
    if (train_x.rows() == 0) throw ConfigError("linear probe needs at least one training example");
    if (static_cast<std::size_t>(train_x.rows()) != train_y.size() ||
        static_cast<std::size_t>(val_x.rows()) != val_y.size())
        throw ConfigError("feature and label counts differ");
    for (std::span<const int> ys : {train_y, val_y})
        for (int y : ys)
            if (y < 0 || y >= num_classes)
                throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");

    const RowVector mean = train_x.colwise().mean();
    RowVector stddev = ((train_x.rowwise() - mean).array().square().colwise().sum() /
                        static_cast<double>(std::max<Index>(1, train_x.rows())))
                           .sqrt();
    stddev = stddev.array().max(1e-6);
    const auto standardise = [&](const Matrix& x) -> Matrix {
        return ((x.rowwise() - mean).array().rowwise() / stddev.array()).matrix();
    };
    const Matrix xs = standardise(train_x);
    const Matrix vs = standardise(val_x);

    Rng init = keyed_rng({static_cast<std::uint64_t>(Stream::probe), seed, 0});
    nn::Linear head(train_x.cols(), num_classes, init);
    ag::ParameterList params;
    ag::append(params, "head", head.parameters());
    AdamW opt(0.9, 0.999, config.weight_decay);

    const std::size_t n = train_y.size();
    const LrSchedule schedule{config.lr, 0.0, 0, steps_for(n, config.batch, config.epochs)};
    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng = keyed_rng({static_cast<std::uint64_t>(Stream::probe), seed, static_cast<std::uint64_t>(epoch) + 1});
        const auto order = shuffled(n, rng);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch));
            Matrix xb(static_cast<Index>(end - start), xs.cols());
            std::vector<Index> yb;
            for (std::size_t i = start; i < end; ++i) {
                xb.row(static_cast<Index>(i - start)) = xs.row(static_cast<Index>(order[i]));
                yb.push_back(train_y[order[i]]);
            }
            ag::zero_grad(params);
            const ag::Var loss = ag::softmax_cross_entropy(head(ag::Var::constant(std::move(xb))), yb);
            ag::backward(loss);
            opt.step(params, lr_at(step++, schedule));
        }
    }

    ag::NoGradGuard guard;
    EvalResult result;
    result.mode = EvalMode::linear_probe;
    result.train_top1 = top1(head(ag::Var::constant(xs)).value(), train_y);
    result.top1 = top1(head(ag::Var::constant(vs)).value(), val_y);
    return result;
}

EvalResult fine_tune(VisionTransformer& encoder, const Dataset& train, const Dataset& val, const NormStats& norm,
                     const EvalConfig& config, std::uint64_t seed) {
    check_eval_config(config);
    if (train.records.empty()) throw ConfigError("fine-tuning needs at least one training image");
    const PatchSpec spec = encoder.config().patch_spec();
    const int num_classes = static_cast<int>(train.class_names.size());
    const auto train_y = labels_of(train);

    Rng init = keyed_rng({static_cast<std::uint64_t>(Stream::probe), seed, 0});
    nn::Linear head(encoder.config().dim, num_classes, init);
    ag::ParameterList params;
    ag::append(params, "encoder", encoder.parameters());
    ag::append(params, "head", head.parameters());
    AdamW opt(0.9, 0.999, config.weight_decay);

    const std::size_t n = train.records.size();
    const LrSchedule schedule{config.lr, 0.0, 0, steps_for(n, config.batch, config.epochs)};
    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng = keyed_rng({static_cast<std::uint64_t>(Stream::probe), seed, static_cast<std::uint64_t>(epoch) + 1});
        const auto order = shuffled(n, rng);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch));
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<Index> yb;
            for (std::size_t i : idx) yb.push_back(train_y[i]);
            const Matrix tokens = full_image_tokens(train, idx, norm, spec);
            ag::zero_grad(params);
            const ag::Var feats = pooled_features(encoder, tokens, static_cast<Index>(idx.size()));
            const ag::Var loss = ag::softmax_cross_entropy(head(feats), yb);
            ag::backward(loss);
            opt.step(params, lr_at(step++, schedule));
        }
    }
    ag::zero_grad(params);

    EvalResult result;
    result.mode = EvalMode::fine_tune;
    ag::NoGradGuard guard;
    result.train_top1 = top1(head(ag::Var::constant(extract_features(encoder, train, norm))).value(), train_y);
    result.top1 = top1(head(ag::Var::constant(extract_features(encoder, val, norm))).value(), labels_of(val));
    return result;
}

EvalResult evaluate(const CheckpointData& checkpoint, const Dataset& train, const Dataset& val,
                    const EvalConfig& config) {
    const std::size_t expected = checkpoint.class_names.size();
    for (const Dataset* ds : {&train, &val})
        if (ds->class_names.size() != expected)
            throw ConfigError("dataset has " + std::to_string(ds->class_names.size()) +
                              " classes but the checkpoint was trained on " + std::to_string(expected));
    auto model = model_from_checkpoint(checkpoint);
    const std::uint64_t seed = checkpoint.config().seed;
    if (config.mode == EvalMode::fine_tune)
        return fine_tune(model->state.encoder, train, val, checkpoint.norm, config, seed);
    const Matrix train_x = extract_features(model->state.encoder, train, checkpoint.norm);
    const Matrix val_x = extract_features(model->state.encoder, val, checkpoint.norm);
    return linear_probe(train_x, labels_of(train), val_x, labels_of(val), static_cast<int>(expected), config, seed);
}

std::vector<DecoderSpec> sweep_grid(const TrainConfig& config) {
    std::vector<DecoderSpec> out;
    for (DecoderKind kind : config.sweep.kinds)
        for (int depth : config.sweep.depths)
            for (int dim : config.sweep.dims) {
                DecoderSpec spec = config.decoder;
                spec.kind = kind;
                spec.depth = depth;
                spec.dim = dim;
                spec.heads = std::max(1, dim / 32);
                try {
                    spec.validate();
                } catch (const ConfigError& e) {
                    log_info("sweep: skipping " + std::string(to_string(kind)) + " depth " + std::to_string(depth) +
                             " dim " + std::to_string(dim) + " (" + e.what() + ")");
                    continue;
                }
                out.push_back(spec);
            }
    return out;
}

std::vector<SweepRow> sweep_decoders(const TrainConfig& config, const Dataset& train, const Dataset& val,
                                     const std::function<void(const SweepRow&)>& on_row) {
    std::vector<SweepRow> rows;
    const NormStats norm = compute_norm_stats(train);
    EvalConfig probe = config.eval;
    probe.mode = EvalMode::linear_probe;
    for (const DecoderSpec& spec : sweep_grid(config)) {
        TrainConfig cfg = config;
        cfg.decoder = spec;
        cfg.epochs = config.sweep.epochs;
        cfg.warmup_epochs = std::min(config.warmup_epochs, cfg.epochs - 1);
        cfg.checkpoint_interval = 0;

        Trainer trainer(cfg, train, norm);
        double recon_sum = 0.0;
        long recon_count = 0;
        const int last_epoch = cfg.epochs - 1;
        trainer.train(std::nullopt, [&](const StepRecord& rec) {
            if (rec.epoch == last_epoch) {
                recon_sum += rec.l_con;
                ++recon_count;
            }
        });

        SweepRow row;
        row.spec = spec;
        row.param_count = ag::count_scalars(trainer.model().decoder.parameters());
        row.final_recon_loss = recon_sum / static_cast<double>(std::max(1L, recon_count));
        const auto& encoder = trainer.model().state.encoder;
        const Matrix tx = extract_features(encoder, train, norm);
        const Matrix vx = extract_features(encoder, val, norm);
        row.probe_top1 = linear_probe(tx, labels_of(train), vx, labels_of(val),
                                      static_cast<int>(train.class_names.size()), probe, cfg.seed)
                             .top1;
        rows.push_back(row);
        if (on_row) on_row(row);
    }
    return rows;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out.precision(10);
    out << "kind,depth,dim,param_count,final_recon_loss,probe_top1\n";
    for (const auto& r : rows)
        out << to_string(r.spec.kind) << ',' << r.spec.depth << ',' << r.spec.dim << ',' << r.param_count << ','
            << r.final_recon_loss << ',' << r.probe_top1 << '\n';
}

}  // namespace cmae
