#include "cmae/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace cmae {

EvalMode parse_eval_mode(std::string_view text) {
    if (text == "probe" || text == "linear_probe") return EvalMode::linear_probe;
    if (text == "finetune" || text == "fine_tune") return EvalMode::fine_tune;
    throw ConfigError("unknown eval mode '" + std::string(text) + "'");
}

std::string_view to_string(EvalMode mode) { return mode == EvalMode::linear_probe ? "probe" : "finetune"; }

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("expected a number, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
    return out;
}

long long to_int(const std::string& v) {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("expected a boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& f) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + std::string(f(items[i]));
    return out;
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');)
        if (auto t = trim(item); !t.empty()) out.push_back(t);
    return out;
}

struct Field {
    std::string key;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
    bool fingerprinted = true;
};

#define CMAE_INT(KEY, MEMBER, FP)                                                                  \
    Field { KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = static_cast<decltype(c.MEMBER)>(to_int(v)); }, \
            [](const TrainConfig& c) { return std::to_string(c.MEMBER); }, FP }
#define CMAE_DOUBLE(KEY, MEMBER, FP)                                                               \
    Field { KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = to_double(v); },               \
            [](const TrainConfig& c) { return fmt_double(c.MEMBER); }, FP }
#define CMAE_BOOL(KEY, MEMBER, FP)                                                                 \
    Field { KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = to_bool(v); },                 \
            [](const TrainConfig& c) { return fmt_bool(c.MEMBER); }, FP }
#define CMAE_ENUM(KEY, MEMBER, PARSE, FP)                                                          \
    Field { KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = PARSE(v); },                   \
            [](const TrainConfig& c) { return std::string(to_string(c.MEMBER)); }, FP }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        CMAE_INT("epochs", epochs, true),
        CMAE_INT("batch", batch, true),
        CMAE_DOUBLE("base_lr", base_lr, true),
        CMAE_DOUBLE("min_lr", min_lr, true),
        CMAE_DOUBLE("weight_decay", weight_decay, true),
        CMAE_INT("warmup_epochs", warmup_epochs, true),
        CMAE_DOUBLE("beta1", beta1, true),
        CMAE_DOUBLE("beta2", beta2, true),
        CMAE_DOUBLE("mask_ratio", mask_ratio, true),
        CMAE_DOUBLE("momentum", momentum, true),
        CMAE_DOUBLE("temperature", temperature, true),
        CMAE_DOUBLE("lambda_ctr", weights.ctr, true),
        CMAE_DOUBLE("lambda_loc", weights.loc, true),
        CMAE_DOUBLE("lambda_con", weights.con, true),
        CMAE_BOOL("loc.squared", loc_squared, true),
        CMAE_INT("loc.hidden_dim", loc_hidden, true),
        CMAE_BOOL("recon.norm_pix", norm_pix_loss, true),
        CMAE_BOOL("recon.symmetric", symmetric_recon, true),
        CMAE_INT("encoder.depth", vit.depth, true),
        CMAE_INT("encoder.dim", vit.dim, true),
        CMAE_INT("encoder.heads", vit.heads, true),
        CMAE_DOUBLE("encoder.mlp_ratio", vit.mlp_ratio, true),
        CMAE_INT("encoder.patch_size", vit.patch_size, true),
        CMAE_INT("encoder.image_size", vit.image_size, true),
        CMAE_BOOL("encoder.cls_token", vit.cls_token, true),
        CMAE_ENUM("encoder.pos_embed", vit.pos_embed, parse_pos_embed, true),
        CMAE_INT("proj.hidden_dim", proj.hidden_dim, true),
        CMAE_INT("proj.out_dim", proj.out_dim, true),
        CMAE_ENUM("proj.pooling", proj.pooling, parse_pooling, true),
        CMAE_BOOL("proj.normalize", proj.normalize, true),
        CMAE_ENUM("decoder.kind", decoder.kind, parse_decoder_kind, true),
        CMAE_INT("decoder.depth", decoder.depth, true),
        CMAE_INT("decoder.dim", decoder.dim, true),
        CMAE_INT("decoder.heads", decoder.heads, true),
        CMAE_DOUBLE("decoder.mlp_ratio", decoder.mlp_ratio, true),
        CMAE_BOOL("decoder.dense_conv", decoder.dense_conv, true),
        CMAE_ENUM("crop.mode", crop.mode, parse_crop_mode, true),
        Field{"crop.warmup_epochs",
              [](TrainConfig& c, const std::string& v) {
                  c.crop.warmup_epochs = (v == "never" || v == "inf") ? CropSchedule::never : static_cast<int>(to_int(v));
              },
              [](const TrainConfig& c) {
                  return c.crop.warmup_epochs == CropSchedule::never ? std::string("never") : std::to_string(c.crop.warmup_epochs);
              },
              true},
        CMAE_INT("crop.refresh_interval", crop.refresh_interval, true),
        CMAE_DOUBLE("crop.threshold", crop.threshold, true),
        CMAE_ENUM("crop.heatmap_source", crop.source, parse_heatmap_source, true),
        CMAE_DOUBLE("aug.flip_prob", flip_prob, true),
        CMAE_DOUBLE("aug.scale_min", scale.lo, true),
        CMAE_DOUBLE("aug.scale_max", scale.hi, true),
        CMAE_DOUBLE("aug.ratio_min", ratio.lo, true),
        CMAE_DOUBLE("aug.ratio_max", ratio.hi, true),
        Field{"seed", [](TrainConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(to_int(v)); },
              [](const TrainConfig& c) { return std::to_string(c.seed); }, true},
        Field{"data_root", [](TrainConfig& c, const std::string& v) { c.data_root = v; },
              [](const TrainConfig& c) { return c.data_root; }, false},
        CMAE_INT("data.per_class_limit", per_class_limit, true),
        Field{"output_dir", [](TrainConfig& c, const std::string& v) { c.output_dir = v; },
              [](const TrainConfig& c) { return c.output_dir; }, false},
        CMAE_INT("checkpoint_interval", checkpoint_interval, false),
        CMAE_INT("log_interval", log_interval, false),
        CMAE_ENUM("eval.mode", eval.mode, parse_eval_mode, false),
        CMAE_INT("eval.epochs", eval.epochs, false),
        CMAE_DOUBLE("eval.lr", eval.lr, false),
        CMAE_INT("eval.batch", eval.batch, false),
        CMAE_DOUBLE("eval.weight_decay", eval.weight_decay, false),
        Field{"sweep.kinds",
              [](TrainConfig& c, const std::string& v) {
                  c.sweep.kinds.clear();
                  for (const auto& k : split_list(v)) c.sweep.kinds.push_back(parse_decoder_kind(k));
              },
              [](const TrainConfig& c) { return join(c.sweep.kinds, [](DecoderKind k) { return to_string(k); }); },
              false},
        Field{"sweep.depths",
              [](TrainConfig& c, const std::string& v) {
                  c.sweep.depths.clear();
                  for (const auto& k : split_list(v)) c.sweep.depths.push_back(static_cast<int>(to_int(k)));
              },
              [](const TrainConfig& c) { return join(c.sweep.depths, [](int d) { return std::to_string(d); }); },
              false},
        Field{"sweep.dims",
              [](TrainConfig& c, const std::string& v) {
                  c.sweep.dims.clear();
                  for (const auto& k : split_list(v)) c.sweep.dims.push_back(static_cast<int>(to_int(k)));
              },
              [](const TrainConfig& c) { return join(c.sweep.dims, [](int d) { return std::to_string(d); }); },
              false},
        CMAE_INT("sweep.epochs", sweep.epochs, false),
    };
    return table;
}

#undef CMAE_INT
#undef CMAE_DOUBLE
#undef CMAE_BOOL
#undef CMAE_ENUM

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch < 1) throw ConfigError("batch must be at least 1");
    if (!(base_lr > 0.0) || min_lr < 0.0 || min_lr > base_lr) throw ConfigError("need 0 <= min_lr <= base_lr, base_lr > 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0,1)");
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in [0,1)");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("momentum must lie in [0,1]");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(crop.threshold > 0.0 && crop.threshold < 1.0)) throw ConfigError("crop.threshold must lie in (0,1)");
    if (log_interval < 1) throw ConfigError("log_interval must be at least 1");
    weights.validate();
    vit.validate();
    proj.validate();
    decoder.validate();
    crop_schedule().validate();
    aug_policy(NormStats{}).validate();
    if (keep_count(vit.num_tokens(), mask_ratio) < 1) throw ConfigError("mask_ratio leaves no visible token");
}

CropSchedule TrainConfig::crop_schedule() const {
    if (crop.mode == CropMode::random) return {CropSchedule::never, crop.refresh_interval};
    const int warmup = crop.warmup_epochs >= 0 ? crop.warmup_epochs : epochs / 5;
    return {warmup, crop.refresh_interval};
}

AugPolicy TrainConfig::aug_policy(const NormStats& norm) const {
    return AugPolicy{flip_prob, scale, ratio, norm, crop.mode};
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        const auto& table = fields();
        auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        try {
            it->set(base, value);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + " (" + key + "): " + e.what());
        }
    }
    return base;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string serialize_config(const TrainConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += f.key + "=" + f.get(config) + "\n";
    return out;
}

std::string config_fingerprint(const TrainConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& f : fields()) {
        if (!f.fingerprinted) continue;
        for (char ch : f.key + "=" + f.get(config) + "\n") {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ULL;
        }
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

}  // namespace cmae
