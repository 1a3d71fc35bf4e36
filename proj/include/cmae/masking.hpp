#pragma once

// Random token masking and the merge-and-restore of visible/masked features.

#include "cmae/common.hpp"
#include "cmae/tensor.hpp"

#include <span>
#include <vector>

namespace cmae {

/// Number of visible tokens, floor(N * (1 - ratio)).
Index keep_count(Index num_tokens, double ratio);

/// Random permutation of [0, N); the first keep_count entries are visible.
struct MaskPlan {
    Index num_tokens = 0;
    double ratio = 0.0;
    std::vector<Index> perm;
    Index keep = 0;

    std::span<const Index> visible() const { return {perm.data(), static_cast<std::size_t>(keep)}; }
    std::span<const Index> masked() const {
        return {perm.data() + keep, static_cast<std::size_t>(num_tokens - keep)};
    }
    Index num_masked() const { return num_tokens - keep; }
};

MaskPlan make_mask(Index num_tokens, double ratio, Rng& rng);

/// Plan with an explicit permutation (tests, replay).
MaskPlan mask_from_permutation(std::vector<Index> perm, double ratio);

/// Per-sample plans of one batch. All plans share N and ratio.
using MaskBatch = std::vector<MaskPlan>;

/// Global row indices b*N + slot of every visible (resp. masked) token,
/// sample-major, in permutation order within a sample.
std::vector<Index> visible_rows(const MaskBatch& plans);
std::vector<Index> masked_rows(const MaskBatch& plans);
/// Grid slots of visible (resp. masked) tokens in the same order.
std::vector<Index> visible_slots(const MaskBatch& plans);
std::vector<Index> masked_slots(const MaskBatch& plans);

struct SplitTokens {
    ag::Var visible;  // (B*keep) x D
    ag::Var masked;   // (B*(N-keep)) x D
};

SplitTokens split(const ag::Var& tokens, const MaskBatch& plans);

/// Inverse of split: output row b*N + j holds original token j. With
/// `stop_grad_masked` no gradient reaches the producer of `masked`.
ag::Var restore_merge(const ag::Var& visible, const ag::Var& masked, const MaskBatch& plans, bool stop_grad_masked);

}  // namespace cmae
