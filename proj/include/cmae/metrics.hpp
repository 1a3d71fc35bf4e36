#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace cmae {

struct StepRecord {
    long step = 0;
    int epoch = 0;
    double lr = 0.0;
    double l_ctr = 0.0;
    double l_loc = 0.0;
    double l_con = 0.0;
    double l_total = 0.0;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EvalRecord {
    int epoch = 0;
    std::string mode;
    double top1 = 0.0;

    friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

/// Append-only JSON-lines log, mirrored in memory.
class MetricsLog {
public:
    MetricsLog() = default;

    /// Starts writing to `path` (appending when it exists).
    void open(const std::filesystem::path& path);
    void append(const StepRecord& record);
    void append(const EvalRecord& record);

    const std::vector<StepRecord>& steps() const { return steps_; }
    const std::vector<EvalRecord>& evals() const { return evals_; }

    /// Reads a log written by this class.
    static MetricsLog read(const std::filesystem::path& path);

private:
    std::vector<StepRecord> steps_;
    std::vector<EvalRecord> evals_;
    std::ofstream out_;
};

}  // namespace cmae
