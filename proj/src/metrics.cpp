#include "cmae/metrics.hpp"

#include "cmae/common.hpp"

#include <json.hpp>

namespace cmae {

using nlohmann::json;

void MetricsLog::open(const std::filesystem::path& path) {
    out_ = std::ofstream(path, std::ios::app);
    if (!out_) throw RuntimeFailure("cannot open metrics log " + path.string());
}

void MetricsLog::append(const StepRecord& r) {
    if (!steps_.empty() && r.step <= steps_.back().step) throw RuntimeFailure("metrics step index must increase");
    steps_.push_back(r);
    if (out_.is_open()) {
        json j = {{"type", "step"}, {"step", r.step},   {"epoch", r.epoch}, {"lr", r.lr},
                  {"L_ctr", r.l_ctr}, {"L_loc", r.l_loc}, {"L_con", r.l_con}, {"L_total", r.l_total}};
        out_ << j.dump() << '\n';
        out_.flush();
    }
}

void MetricsLog::append(const EvalRecord& r) {
    evals_.push_back(r);
    if (out_.is_open()) {
        json j = {{"type", "eval"}, {"epoch", r.epoch}, {"mode", r.mode}, {"top1", r.top1}};
        out_ << j.dump() << '\n';
        out_.flush();
    }
}

MetricsLog MetricsLog::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot read metrics log " + path.string());
    MetricsLog log;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (j.at("type") == "step") {
            log.steps_.push_back({j.at("step").get<long>(), j.at("epoch").get<int>(), j.at("lr").get<double>(),
                                  j.at("L_ctr").get<double>(), j.at("L_loc").get<double>(), j.at("L_con").get<double>(),
                                  j.at("L_total").get<double>()});
        } else {
            log.evals_.push_back({j.at("epoch").get<int>(), j.at("mode").get<std::string>(), j.at("top1").get<double>()});
        }
    }
    return log;
}

}  // namespace cmae
