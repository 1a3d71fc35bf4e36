#include "cmae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace cmae {

namespace fs = std::filesystem;

CmaeModel::CmaeModel(const TrainConfig& config, Rng& rng)
    : state(config.vit, config.proj, config.momentum, rng),
      location(config.vit.dim, config.loc_hidden, config.vit.num_tokens(), rng),
      decoder(build_decoder(config.decoder, DecoderGeometry{config.vit.dim, config.vit.patch_spec()}, rng)) {}

ag::ParameterList CmaeModel::all_parameters() {
    ag::ParameterList out = state.online_parameters();
    ag::append(out, "", state.momentum_parameters());
    ag::append(out, "location", location.parameters());
    ag::append(out, "decoder", decoder.parameters());
    return out;
}

namespace {

long checked_steps_per_epoch(const TrainConfig& config, const Dataset& dataset) {
    config.validate();
    if (dataset.records.size() < static_cast<std::size_t>(config.batch))
        throw ConfigError("dataset has " + std::to_string(dataset.records.size()) + " images, fewer than batch " +
                          std::to_string(config.batch));
    return static_cast<long>(dataset.records.size() / static_cast<std::size_t>(config.batch));
}

std::string loss_dump(const LossReport& r, long step) {
    std::ostringstream os;
    os.precision(17);
    os << "non-finite loss at step " << step << ": L_ctr=" << r.ctr << " L_loc=" << r.loc << " L_con=" << r.con
       << " L_total=" << r.total;
    return os.str();
}

}  // namespace

Trainer::Trainer(TrainConfig config, const Dataset& dataset, std::optional<NormStats> norm)
    : config_(std::move(config)),
      dataset_(dataset),
      norm_(norm ? *norm : compute_norm_stats(dataset)),
      patch_(config_.vit.patch_spec()),
      init_rng_(keyed_rng({static_cast<std::uint64_t>(Stream::init), config_.seed})),
      model_(config_, init_rng_),
      optimizer_(config_.beta1, config_.beta2, config_.weight_decay),
      steps_per_epoch_(checked_steps_per_epoch(config_, dataset)) {}

LrSchedule Trainer::lr_schedule() const {
    return LrSchedule{config_.base_lr, config_.min_lr, steps_per_epoch_ * config_.warmup_epochs, total_steps()};
}

Batch Trainer::prepare_batch(long step) const {
    Batch batch;
    batch.step = step;
    batch.epoch = epoch_of(step);

    std::vector<std::size_t> order(dataset_.records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = keyed_rng({static_cast<std::uint64_t>(Stream::shuffle), config_.seed,
                             static_cast<std::uint64_t>(batch.epoch)});
    for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(shuffle)]);
    }
    const std::size_t offset = static_cast<std::size_t>(step % steps_per_epoch_) * config_.batch;
    batch.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(offset),
                         order.begin() + static_cast<std::ptrdiff_t>(offset + config_.batch));

    const AugPolicy policy = config_.aug_policy(norm_);
    const bool constrained = config_.crop_schedule().active_at(batch.epoch);
    const CropSampler sampler =
        constrained ? contrastive_crop_sampler(policy, patch_, crop_cache_) : random_crop_sampler(policy, patch_);
    const ViewPair views = make_views(dataset_, batch.indices, policy, sampler, patch_, config_.seed, batch.epoch);
    batch.tokens_q = patchify(views.view_q, patch_);
    batch.tokens_k = patchify(views.view_k, patch_);
    batch.crop_fallbacks = views.fallback_count;

    const Index n = patch_.num_tokens();
    for (int b = 0; b < config_.batch; ++b) {
        for (int v = 0; v < 2; ++v) {
            Rng rng = keyed_rng({static_cast<std::uint64_t>(Stream::mask), config_.seed,
                                 static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b),
                                 static_cast<std::uint64_t>(v)});
            (v == 0 ? batch.plans_q : batch.plans_k).push_back(make_mask(n, config_.mask_ratio, rng));
        }
    }
    return batch;
}

ForwardResult Trainer::forward(const Batch& batch, const ForwardOptions& options) {
    ForwardResult r;
    r.branch = run_contrastive_branches(model_.state, batch.tokens_q, batch.tokens_k, batch.plans_q, batch.plans_k,
                                        options.branch);
    r.l_ctr = info_nce(r.branch.z_q, r.branch.z_k, config_.temperature);

    r.location_scores = model_.location.forward(r.branch.q1, batch.plans_q);
    r.l_loc = location_loss(r.location_scores, location_targets(batch.plans_q), config_.loc_squared);

    const auto target_of = [&](const Matrix& tokens) {
        return config_.norm_pix_loss ? normalize_patch_targets(tokens) : tokens;
    };
    r.prediction = model_.decoder.decode(r.branch.q1, batch.plans_q);
    r.l_con = reconstruction_loss(r.prediction.pixels, target_of(batch.tokens_q), batch.plans_q);
    if (config_.symmetric_recon) {
        const auto& encoder = model_.state.encoder;
        const Index b = static_cast<Index>(batch.plans_k.size());
        const EncoderOutput enc = encoder.encode(select_tokens(batch.tokens_k, visible_rows(batch.plans_k)),
                                                 visible_slots(batch.plans_k), b, encoder.config().cls_token);
        const PatchPrediction pred_k = model_.decoder.decode(enc.patch_features(), batch.plans_k);
        const ag::Var l_k = reconstruction_loss(pred_k.pixels, target_of(batch.tokens_k), batch.plans_k);
        r.l_con = ag::scale(ag::add(r.l_con, l_k), 0.5);
    }

    r.total = total_loss(r.l_ctr, r.l_loc, r.l_con, config_.weights);
    r.report = LossReport{r.l_ctr.item(), r.l_loc.item(), r.l_con.item(), r.total.item()};
    return r;
}

ag::ParameterList Trainer::trainable_parameters() {
    ag::ParameterList out;
    ag::append(out, "encoder", model_.state.encoder.parameters());
    if (config_.weights.ctr != 0.0) ag::append(out, "projector", model_.state.projector.parameters());
    if (config_.weights.loc != 0.0) ag::append(out, "location", model_.location.parameters());
    if (config_.weights.con != 0.0) ag::append(out, "decoder", model_.decoder.parameters());
    return out;
}

void Trainer::maybe_refresh_crops(int epoch) {
    if (refreshed_epoch_ == epoch || !config_.crop_schedule().refresh_at(epoch)) return;
    crop_cache_ = refresh_boxes(dataset_, model_.state.encoder, norm_, config_.crop.threshold, config_.crop.source,
                                epoch);
    refreshed_epoch_ = epoch;
}

StepRecord Trainer::step() {
    if (step_ >= total_steps()) throw RuntimeFailure("training already finished");
    const int epoch = epoch_of(step_);
    if (step_ % steps_per_epoch_ == 0) maybe_refresh_crops(epoch);

    const Batch batch = prepare_batch(step_);
    const double lr = lr_at(step_, lr_schedule());

    const auto all = model_.all_parameters();
    ag::zero_grad(all);
    const ForwardResult r = forward(batch);
    const LossReport& rep = r.report;
    if (!std::isfinite(rep.ctr) || !std::isfinite(rep.loc) || !std::isfinite(rep.con) || !std::isfinite(rep.total))
        throw RuntimeFailure(loss_dump(rep, step_));

    ag::backward(r.total);
    optimizer_.step(trainable_parameters(), lr);
    ag::zero_grad(all);
    momentum_update(model_.state, config_.momentum);

    const StepRecord record{step_, epoch, lr, rep.ctr, rep.loc, rep.con, rep.total};
    if (config_.log_interval > 0 && step_ % config_.log_interval == 0) metrics_.append(record);
    ++step_;
    return record;
}

void Trainer::train(std::optional<long> until_step, const std::function<void(const StepRecord&)>& on_step) {
    const long end = std::min(until_step.value_or(total_steps()), total_steps());
    while (step_ < end) {
        const StepRecord record = step();
        if (on_step) on_step(record);
    }
}

// ---- checkpoints ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'M', 'A', 'E', 'C', 'K', 'P', 'T'};

class Writer {
public:
    template <typename T>
    void pod(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        buf_.append(s);
    }
    void matrix(const Matrix& m) {
        pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
        pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
        buf_.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
    }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& data, std::string origin) : data_(data), origin_(std::move(origin)) {}

    template <typename T>
    T pod() {
        T v;
        need(sizeof(T));
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Matrix matrix() {
        const auto rows = pod<std::uint64_t>();
        const auto cols = pod<std::uint64_t>();
        if (rows > (1u << 28) || cols > (1u << 28)) fail("implausible tensor shape");
        const std::size_t bytes = sizeof(double) * rows * cols;
        need(bytes);
        Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
        std::memcpy(m.data(), data_.data() + pos_, bytes);
        pos_ += bytes;
        return m;
    }
    bool done() const { return pos_ == data_.size(); }
    [[noreturn]] void fail(const std::string& what) const {
        throw CheckpointError("corrupt checkpoint " + origin_ + " at byte " + std::to_string(pos_) + ": " + what);
    }

private:
    void need(std::size_t n) const {
        if (n > data_.size() - pos_) fail("unexpected end of data");
    }
    const std::string& data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

}  // namespace

const Matrix* CheckpointData::find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return &m;
    return nullptr;
}

CheckpointData capture_checkpoint(Trainer& trainer) {
    CheckpointData data;
    data.fingerprint = config_fingerprint(trainer.config());
    data.config_text = serialize_config(trainer.config());
    data.step = trainer.current_step();
    data.epoch = trainer.epoch_of(trainer.current_step());
    data.class_names = trainer.dataset().class_names;
    data.norm = trainer.norm();
    for (const auto& np : trainer.model().all_parameters()) data.tensors.emplace_back(np.name, np.param->value());
    data.optimizer_steps = trainer.optimizer().steps();
    data.moments = trainer.optimizer().moments();
    data.crop_cache = trainer.crop_cache();
    return data;
}

void save_checkpoint(const CheckpointData& data, const fs::path& path) {
    Writer w;
    w.pod(data.version);
    w.str(data.fingerprint);
    w.str(data.config_text);
    w.pod<std::int64_t>(data.step);
    w.pod<std::int32_t>(data.epoch);
    w.pod<std::uint64_t>(data.class_names.size());
    for (const auto& c : data.class_names) w.str(c);
    for (int c = 0; c < 3; ++c) w.pod(data.norm.mean[c]);
    for (int c = 0; c < 3; ++c) w.pod(data.norm.std[c]);
    w.pod<std::uint64_t>(data.tensors.size());
    for (const auto& [name, m] : data.tensors) {
        w.str(name);
        w.matrix(m);
    }
    w.pod<std::int64_t>(data.optimizer_steps);
    w.pod<std::uint64_t>(data.moments.size());
    for (const auto& [name, mom] : data.moments) {
        w.str(name);
        w.matrix(mom.m);
        w.matrix(mom.v);
    }
    w.pod<std::uint64_t>(data.crop_cache.size());
    for (const auto& [id, entry] : data.crop_cache) {
        w.str(id);
        w.pod<std::int32_t>(entry.rect.row_min);
        w.pod<std::int32_t>(entry.rect.row_max);
        w.pod<std::int32_t>(entry.rect.col_min);
        w.pod<std::int32_t>(entry.rect.col_max);
        w.pod<std::int32_t>(entry.epoch);
    }

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
        out.write(kMagic, sizeof(kMagic));
        const std::uint64_t sum = fnv1a(w.bytes());
        out.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
    }
    fs::rename(tmp, path);
}

void save_checkpoint(Trainer& trainer, const fs::path& path) { save_checkpoint(capture_checkpoint(trainer), path); }

CheckpointData load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t header = sizeof(kMagic) + sizeof(std::uint64_t);
    if (file.size() < header || std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("corrupt checkpoint " + path.string() + ": bad magic");
    std::uint64_t sum = 0;
    std::memcpy(&sum, file.data() + sizeof(kMagic), sizeof(sum));
    const std::string body = file.substr(header);
    if (fnv1a(body) != sum) throw CheckpointError("corrupt checkpoint " + path.string() + ": checksum mismatch");

    Reader r(body, path.string());
    CheckpointData data;
    data.version = r.pod<std::uint32_t>();
    if (data.version != kCheckpointVersion)
        throw CheckpointError("checkpoint " + path.string() + " has version " + std::to_string(data.version) +
                              ", expected " + std::to_string(kCheckpointVersion));
    data.fingerprint = r.str();
    data.config_text = r.str();
    data.step = r.pod<std::int64_t>();
    data.epoch = r.pod<std::int32_t>();
    data.class_names.resize(r.pod<std::uint64_t>());
    for (auto& c : data.class_names) c = r.str();
    for (int c = 0; c < 3; ++c) data.norm.mean[c] = r.pod<double>();
    for (int c = 0; c < 3; ++c) data.norm.std[c] = r.pod<double>();
    data.tensors.resize(r.pod<std::uint64_t>());
    for (auto& [name, m] : data.tensors) {
        name = r.str();
        m = r.matrix();
    }
    data.optimizer_steps = r.pod<std::int64_t>();
    const auto n_moments = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_moments; ++i) {
        std::string name = r.str();
        AdamW::Moments mom;
        mom.m = r.matrix();
        mom.v = r.matrix();
        data.moments.emplace(std::move(name), std::move(mom));
    }
    const auto n_rects = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_rects; ++i) {
        std::string id = r.str();
        CachedRect entry;
        entry.rect.row_min = r.pod<std::int32_t>();
        entry.rect.row_max = r.pod<std::int32_t>();
        entry.rect.col_min = r.pod<std::int32_t>();
        entry.rect.col_max = r.pod<std::int32_t>();
        entry.epoch = r.pod<std::int32_t>();
        data.crop_cache.emplace(std::move(id), entry);
    }
    if (!r.done()) r.fail("trailing bytes");
    return data;
}

void load_parameters(const CheckpointData& data, const ag::ParameterList& params) {
    for (const auto& np : params) {
        const Matrix* m = data.find(np.name);
        if (m == nullptr) throw CheckpointError("checkpoint has no tensor '" + np.name + "'");
        const Matrix& cur = np.param->value();
        if (m->rows() != cur.rows() || m->cols() != cur.cols())
            throw CheckpointError("shape mismatch for tensor '" + np.name + "': checkpoint " +
                                 std::to_string(m->rows()) + "x" + std::to_string(m->cols()) + ", model " +
                                 std::to_string(cur.rows()) + "x" + std::to_string(cur.cols()));
    }
    for (const auto& np : params) np.param->value() = *data.find(np.name);
}

void restore(Trainer& trainer, const CheckpointData& data, bool force) {
    const std::string expected = config_fingerprint(trainer.config());
    if (data.fingerprint != expected) {
        if (!force)
            throw ConfigError("checkpoint fingerprint " + data.fingerprint + " does not match the run config (" +
                              expected + "); pass --force to load anyway");
        log_warning("loading checkpoint with mismatched fingerprint " + data.fingerprint);
    }
    load_parameters(data, trainer.model().all_parameters());
    trainer.optimizer().set_steps(data.optimizer_steps);
    trainer.optimizer().moments() = data.moments;
    trainer.set_crop_cache(data.crop_cache);
    trainer.set_step(data.step);
}

namespace {

std::string epoch_checkpoint_name(int epoch) {
    std::ostringstream os;
    os << "checkpoint-epoch" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
    return os.str();
}

// Drops records at or after `from_step` so a resumed run appends cleanly.
void truncate_metrics(const fs::path& path, long from_step) {
    if (!fs::exists(path)) return;
    std::ifstream in(path);
    std::vector<std::string> keep;
    for (std::string line; std::getline(in, line);) {
        const auto pos = line.find("\"step\":");
        if (pos != std::string::npos && std::stol(line.substr(pos + 7)) >= from_step) continue;
        if (!line.empty()) keep.push_back(line);
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& line : keep) out << line << '\n';
}

}  // namespace

fs::path pretrain(const TrainConfig& config, const Dataset& dataset, const PretrainOptions& options) {
    const fs::path out_dir = config.output_dir;
    fs::create_directories(out_dir);

    std::optional<CheckpointData> resume;
    std::optional<NormStats> norm;
    if (options.resume) {
        resume = load_checkpoint(*options.resume);
        if (resume->class_names != dataset.class_names)
            throw ConfigError("checkpoint class list differs from the dataset being trained on");
        norm = resume->norm;
    }

    Trainer trainer(config, dataset, norm);
    if (resume) restore(trainer, *resume, options.force);

    write_class_manifest(out_dir / "classes.txt", dataset.class_names);
    const fs::path metrics_path = out_dir / "metrics.jsonl";
    if (resume)
        truncate_metrics(metrics_path, trainer.current_step());
    else
        fs::remove(metrics_path);
    trainer.metrics().open(metrics_path);
    {
        std::ofstream cfg(out_dir / "config.cfg", std::ios::trunc);
        cfg << serialize_config(config);
    }

    const long spe = trainer.steps_per_epoch();
    if (!options.quiet)
        log_info("pretraining " + std::to_string(trainer.total_steps()) + " steps (" + std::to_string(spe) +
                 " per epoch) from step " + std::to_string(trainer.current_step()));
    std::size_t crop_entries = trainer.crop_cache().size();
    trainer.train(std::nullopt, [&](const StepRecord& rec) {
        if (trainer.crop_cache().size() != crop_entries || (rec.step % spe == 0 && config.crop_schedule().refresh_at(rec.epoch))) {
            save_crop_cache(out_dir / "crop_boxes.tsv", trainer.crop_cache());
            crop_entries = trainer.crop_cache().size();
        }
        const long done = rec.step + 1;
        if (!options.quiet && (done % spe == 0 || done == trainer.total_steps())) {
            std::ostringstream os;
            os.precision(6);
            os << "epoch " << rec.epoch << " step " << rec.step << " lr " << rec.lr << " L_total " << rec.l_total;
            log_info(os.str());
        }
        if (config.checkpoint_interval > 0 && done % spe == 0 && (done / spe) % config.checkpoint_interval == 0 &&
            done != trainer.total_steps())
            save_checkpoint(trainer, out_dir / epoch_checkpoint_name(static_cast<int>(done / spe)));
    });

    save_crop_cache(out_dir / "crop_boxes.tsv", trainer.crop_cache());
    const fs::path final_path = out_dir / "final.ckpt";
    save_checkpoint(trainer, final_path);
    return final_path;
}

}  // namespace cmae
