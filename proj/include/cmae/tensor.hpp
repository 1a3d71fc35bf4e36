#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every tensor in the pipeline is a 2-D matrix. Token sequences B x n x D are
// stored as (B*n) x D with sample b occupying rows [b*n, (b+1)*n).

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cmae {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

namespace ag {

struct Node {
    Matrix value;
    Matrix grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    // Allocates a zero gradient of matching shape on first use.
    Matrix& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Matrix value);

    const Matrix& value() const { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    double item() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Global switch consulted by every op. Disabled results carry no graph.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Named learnable leaf. Gradients accumulate across backward() calls until
/// zero_grad(). Move-only: modules hand out pointers to their parameters.
class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, Matrix init, bool decay = true);
    Parameter(Parameter&&) noexcept = default;
    Parameter& operator=(Parameter&&) noexcept = default;
    Parameter(const Parameter&) = delete;
    Parameter& operator=(const Parameter&) = delete;

    Var var() const { return Var(node_); }
    Matrix& value() { return node_->value; }
    const Matrix& value() const { return node_->value; }
    Matrix& grad() { return node_->grad; }
    const Matrix& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.setZero(); }
    const std::string& name() const { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }
    bool decay() const { return decay_; }
    Index size() const { return node_->value.size(); }

private:
    std::string name_;
    std::shared_ptr<Node> node_;
    bool decay_ = true;
};

struct NamedParameter {
    std::string name;
    Parameter* param;
};
using ParameterList = std::vector<NamedParameter>;

void append(ParameterList& out, const std::string& prefix, Parameter& p);
void append(ParameterList& out, const std::string& prefix, const ParameterList& sub);
void zero_grad(const ParameterList& params);
Index count_scalars(const ParameterList& params);

/// Runs reverse accumulation from a 1x1 root.
void backward(const Var& root);

// ---- ops -----------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row_broadcast(const Var& a, const Var& row);  // a + 1 x cols row
Var hadamard(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var linear(const Var& x, const Var& weight, const Var& bias);  // x W + b, W in x out
Var gelu(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var detach(const Var& x);

Var gather_rows(const Var& x, std::span<const Index> rows);
Var concat_rows(const Var& a, const Var& b);
Var repeat_rows(const Var& row, Index count);

/// Mean over consecutive groups of `group` rows: (B*group) x D -> B x D.
Var segment_mean(const Var& x, Index group);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
/// Per-row Euclidean norm, r x c -> r x 1. The value is exact; the
/// derivative uses sqrt(sum x^2 + eps) so it stays finite at zero.
Var row_norms(const Var& x, double eps);
Var row_squared_norms(const Var& x);
Var mean_all(const Var& x);
Var sum_all(const Var& x);
/// Mean over rows of -log softmax(logits)[row, labels[row]].
Var softmax_cross_entropy(const Var& logits, std::span<const Index> labels);

/// Multi-head self-attention core over a fused (B*seq) x 3D qkv matrix.
/// When `probs_out` is non-null it receives B*heads matrices (seq x seq).
Var attention(const Var& qkv, Index batch, Index seq, Index heads,
              std::vector<Matrix>* probs_out = nullptr);

/// Depthwise 3x3 convolution, stride 1, zero padding 1, over a token grid.
/// x: (B*gh*gw) x C in row-major grid order, weight: C x 9, bias: 1 x C.
Var depthwise_conv3x3(const Var& x, const Var& weight, const Var& bias, Index batch, Index grid_h,
                      Index grid_w);
/// Dense 3x3 convolution, stride 1, zero padding 1. weight: (9*C_in) x C_out.
Var conv3x3(const Var& x, const Var& weight, const Var& bias, Index batch, Index grid_h,
            Index grid_w);

}  // namespace ag
}  // namespace cmae
