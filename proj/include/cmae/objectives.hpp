#pragma once

// Contrastive, location and reconstruction losses and their weighted sum.

#include "cmae/common.hpp"
#include "cmae/masking.hpp"
#include "cmae/nn.hpp"

namespace cmae {

/// Mean over i of -log softmax_j(z_q[i] . z_k[j] / tau)[i]; the other rows
/// of z_k are the negatives.
ag::Var info_nce(const ag::Var& z_q, const ag::Var& z_k, double tau);

/// Two affine layers with a GELU between them, emitting raw scores over the
/// N grid slots for each visible patch token.
class LocationHead {
public:
    LocationHead(int in_dim, int hidden_dim, int num_tokens, Rng& rng);

    /// q1: visible patch-token features only, (B*keep) x D.
    ag::Var forward(const ag::Var& q1, const MaskBatch& plans) const;

    ag::ParameterList parameters();
    nn::Mlp& mlp() { return mlp_; }

private:
    nn::Mlp mlp_;
    int num_tokens_ = 0;
};

/// One-hot rows marking the grid slot of every visible token, (B*keep) x N.
Matrix location_targets(const MaskBatch& plans);

inline constexpr double kNormGuard = 1e-8;

/// Mean over tokens of ||p_i - t_i||_2 (or its square when `squared`).
ag::Var location_loss(const ag::Var& p, const Matrix& t, bool squared = false);

/// Per-token standardisation (mean 0, unit unbiased variance, eps 1e-6).
Matrix normalize_patch_targets(const Matrix& tokens);

/// Mean squared error over the masked tokens only. Returns 0 with a warning
/// when nothing is masked.
ag::Var reconstruction_loss(const ag::Var& pred, const Matrix& target, const MaskBatch& plans);

struct LossWeights {
    double ctr = 1.0;
    double loc = 1.0;
    double con = 1.0;

    void validate() const;
};

struct LossReport {
    double ctr = 0.0;
    double loc = 0.0;
    double con = 0.0;
    double total = 0.0;
};

ag::Var total_loss(const ag::Var& l_ctr, const ag::Var& l_loc, const ag::Var& l_con, const LossWeights& weights);

}  // namespace cmae
