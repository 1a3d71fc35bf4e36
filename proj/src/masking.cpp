#include "cmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace cmae {

namespace {

void check_uniform(const MaskBatch& plans) {
    if (plans.empty()) throw ConfigError("empty mask batch");
    for (const auto& p : plans)
        if (p.num_tokens != plans[0].num_tokens || p.keep != plans[0].keep)
            throw ConfigError("mask plans in one batch must share token and keep counts");
}

}  // namespace

Index keep_count(Index num_tokens, double ratio) {
    // The guard absorbs representation error in (1 - ratio), e.g. 10 * (1 - 0.9).
    return static_cast<Index>(std::floor(static_cast<double>(num_tokens) * (1.0 - ratio) + 1e-9));
}

MaskPlan make_mask(Index num_tokens, double ratio, Rng& rng) {
    if (num_tokens <= 0) throw ConfigError("mask needs at least one token");
    if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in [0, 1)");
    const Index keep = keep_count(num_tokens, ratio);
    if (keep < 1) throw ConfigError("mask ratio leaves no visible token for N=" + std::to_string(num_tokens));
    MaskPlan plan{num_tokens, ratio, std::vector<Index>(static_cast<std::size_t>(num_tokens)), keep};
    std::iota(plan.perm.begin(), plan.perm.end(), Index{0});
    // Fisher-Yates with explicit draws; std::shuffle's draw pattern is unspecified.
    for (Index i = num_tokens - 1; i > 0; --i) {
        const Index j = std::uniform_int_distribution<Index>(0, i)(rng);
        std::swap(plan.perm[static_cast<std::size_t>(i)], plan.perm[static_cast<std::size_t>(j)]);
    }
    return plan;
}

MaskPlan mask_from_permutation(std::vector<Index> perm, double ratio) {
    const Index n = static_cast<Index>(perm.size());
    std::vector<Index> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (Index i = 0; i < n; ++i)
        if (sorted[static_cast<std::size_t>(i)] != i) throw ConfigError("mask permutation is not a permutation");
    const Index keep = keep_count(n, ratio);
    if (keep < 1) throw ConfigError("mask ratio leaves no visible token");
    return {n, ratio, std::move(perm), keep};
}

std::vector<Index> visible_rows(const MaskBatch& plans) {
    check_uniform(plans);
    std::vector<Index> rows;
    rows.reserve(plans.size() * static_cast<std::size_t>(plans[0].keep));
    for (std::size_t b = 0; b < plans.size(); ++b)
        for (Index slot : plans[b].visible()) rows.push_back(static_cast<Index>(b) * plans[b].num_tokens + slot);
    return rows;
}

std::vector<Index> masked_rows(const MaskBatch& plans) {
    check_uniform(plans);
    std::vector<Index> rows;
    for (std::size_t b = 0; b < plans.size(); ++b)
        for (Index slot : plans[b].masked()) rows.push_back(static_cast<Index>(b) * plans[b].num_tokens + slot);
    return rows;
}

std::vector<Index> visible_slots(const MaskBatch& plans) {
    std::vector<Index> out;
    for (const auto& p : plans) out.insert(out.end(), p.visible().begin(), p.visible().end());
    return out;
}

std::vector<Index> masked_slots(const MaskBatch& plans) {
    std::vector<Index> out;
    for (const auto& p : plans) out.insert(out.end(), p.masked().begin(), p.masked().end());
    return out;
}

SplitTokens split(const ag::Var& tokens, const MaskBatch& plans) {
    check_uniform(plans);
    if (tokens.rows() != static_cast<Index>(plans.size()) * plans[0].num_tokens)
        throw ConfigError("split: token rows do not match the mask plans");
    const auto vis = visible_rows(plans);
    const auto msk = masked_rows(plans);
    return {ag::gather_rows(tokens, vis), ag::gather_rows(tokens, msk)};
}

ag::Var restore_merge(const ag::Var& visible, const ag::Var& masked, const MaskBatch& plans, bool stop_grad_masked) {
    check_uniform(plans);
    const Index batch = static_cast<Index>(plans.size());
    const Index n = plans[0].num_tokens;
    const Index keep = plans[0].keep;
    const Index drop = n - keep;
    if (visible.rows() != batch * keep || masked.rows() != batch * drop)
        throw ConfigError("restore_merge: part sizes do not add up to the token count");

    const ag::Var tail = stop_grad_masked ? ag::detach(masked) : masked;
    const ag::Var merged = drop == 0 ? visible : ag::concat_rows(visible, tail);
    std::vector<Index> source(static_cast<std::size_t>(batch * n));
    for (Index b = 0; b < batch; ++b) {
        const auto& perm = plans[static_cast<std::size_t>(b)].perm;
        for (Index i = 0; i < n; ++i) {
            const Index slot = perm[static_cast<std::size_t>(i)];
            source[static_cast<std::size_t>(b * n + slot)] = i < keep ? b * keep + i : batch * keep + b * drop + (i - keep);
        }
    }
    return ag::gather_rows(merged, source);
}

}  // namespace cmae
