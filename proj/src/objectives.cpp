#include "cmae/objectives.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace cmae {

ag::Var info_nce(const ag::Var& z_q, const ag::Var& z_k, double tau) {
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
    if (z_q.rows() < 1 || z_q.rows() != z_k.rows() || z_q.cols() != z_k.cols())
        throw ConfigError("info_nce: z_q and z_k must be matching non-empty batches");
    std::vector<Index> labels(static_cast<std::size_t>(z_q.rows()));
    std::iota(labels.begin(), labels.end(), Index{0});
    return ag::softmax_cross_entropy(ag::scale(ag::matmul_nt(z_q, z_k), 1.0 / tau), labels);
}

LocationHead::LocationHead(int in_dim, int hidden_dim, int num_tokens, Rng& rng)
    : mlp_(in_dim, hidden_dim > 0 ? hidden_dim : in_dim, num_tokens, rng), num_tokens_(num_tokens) {}

ag::Var LocationHead::forward(const ag::Var& q1, const MaskBatch& plans) const {
    const Index batch = static_cast<Index>(plans.size());
    if (plans.empty() || plans[0].num_tokens != num_tokens_) throw ConfigError("location head: plans do not match N");
    if (q1.rows() == batch * (plans[0].keep + 1))
        throw ConfigError("location head input still contains the cls token; strip it before predicting locations");
    if (q1.rows() != batch * plans[0].keep) throw ConfigError("location head: input rows do not match visible tokens");
    return mlp_(q1);
}

ag::ParameterList LocationHead::parameters() { return mlp_.parameters(); }

Matrix location_targets(const MaskBatch& plans) {
    const auto slots = visible_slots(plans);
    Matrix t = Matrix::Zero(static_cast<Index>(slots.size()), plans.empty() ? 0 : plans[0].num_tokens);
    for (std::size_t i = 0; i < slots.size(); ++i) t(static_cast<Index>(i), slots[i]) = 1.0;
    return t;
}

ag::Var location_loss(const ag::Var& p, const Matrix& t, bool squared) {
    if (p.rows() != t.rows() || p.cols() != t.cols()) throw ConfigError("location_loss: shape mismatch");
    for (Index r = 0; r < t.rows(); ++r) {
        Index ones = 0;
        for (Index c = 0; c < t.cols(); ++c) {
            const double v = t(r, c);
            if (v == 1.0) ++ones;
            else if (v != 0.0) ones = -1000;
        }
        if (ones != 1) throw ConfigError("location target row " + std::to_string(r) + " is not one-hot");
    }
    const ag::Var residual = ag::sub(p, ag::Var::constant(t));
    return ag::mean_all(squared ? ag::row_squared_norms(residual) : ag::row_norms(residual, kNormGuard));
}

Matrix normalize_patch_targets(const Matrix& tokens) {
    Matrix out(tokens.rows(), tokens.cols());
    const double denom = static_cast<double>(std::max<Index>(tokens.cols() - 1, 1));
    for (Index r = 0; r < tokens.rows(); ++r) {
        const double mean = tokens.row(r).mean();
        const double var = (tokens.row(r).array() - mean).square().sum() / denom;
        out.row(r) = (tokens.row(r).array() - mean) / std::sqrt(var + 1e-6);
    }
    return out;
}

ag::Var reconstruction_loss(const ag::Var& pred, const Matrix& target, const MaskBatch& plans) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw ConfigError("reconstruction_loss: prediction and target shapes differ");
    const auto rows = masked_rows(plans);
    if (rows.empty()) {
        log_warning("reconstruction loss over an empty masked set; returning 0");
        return ag::Var::constant(Matrix::Zero(1, 1));
    }
    Matrix picked(static_cast<Index>(rows.size()), target.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) picked.row(static_cast<Index>(i)) = target.row(rows[i]);
    const ag::Var diff = ag::sub(ag::gather_rows(pred, rows), ag::Var::constant(std::move(picked)));
    return ag::mean_all(ag::hadamard(diff, diff));
}

void LossWeights::validate() const {
    if (ctr < 0.0 || loc < 0.0 || con < 0.0) throw ConfigError("loss weights must be non-negative");
}

ag::Var total_loss(const ag::Var& l_ctr, const ag::Var& l_loc, const ag::Var& l_con, const LossWeights& w) {
    w.validate();
    return ag::add(ag::add(ag::scale(l_ctr, w.ctr), ag::scale(l_loc, w.loc)), ag::scale(l_con, w.con));
}

}  // namespace cmae
