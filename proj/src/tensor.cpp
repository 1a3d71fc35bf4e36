#include "cmae/tensor.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace cmae::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const char* what) {
    if (!cond) throw std::invalid_argument(what);
}

Var make(Matrix value, std::initializer_list<Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (!g_grad_enabled) return Var(std::move(node));
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return Var(std::move(node));
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(fn);
    return Var(std::move(node));
}

// Parent accessor used inside backward closures.
inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Matrix& Node::grad_buffer() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
        grad = Matrix::Zero(value.rows(), value.cols());
    }
    return grad;
}

Var Var::constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

double Var::item() const {
    require(node_ && node_->value.size() == 1, "item() requires a 1x1 tensor");
    return node_->value(0, 0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Parameter::Parameter(std::string name, Matrix init, bool decay)
    : name_(std::move(name)), node_(std::make_shared<Node>()), decay_(decay) {
    node_->value = std::move(init);
    node_->requires_grad = true;
    node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
}

void append(ParameterList& out, const std::string& prefix, Parameter& p) {
    out.push_back({prefix.empty() ? p.name() : prefix + "." + p.name(), &p});
}

void append(ParameterList& out, const std::string& prefix, const ParameterList& sub) {
    for (const auto& np : sub) out.push_back({prefix.empty() ? np.name : prefix + "." + np.name, np.param});
}

void zero_grad(const ParameterList& params) {
    for (const auto& np : params) np.param->zero_grad();
}

Index count_scalars(const ParameterList& params) {
    Index n = 0;
    for (const auto& np : params) n += np.param->size();
    return n;
}

void backward(const Var& root) {
    require(root.defined() && root.value().size() == 1, "backward() requires a 1x1 root");
    if (!root.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer().setConstant(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    return make(a.value() + b.value(), {a, b}, [](Node& self) {
        for (std::size_t i = 0; i < 2; ++i)
            if (parent(self, i).requires_grad) parent(self, i).grad_buffer() += self.grad;
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    return make(a.value() - b.value(), {a, b}, [](Node& self) {
        if (parent(self, 0).requires_grad) parent(self, 0).grad_buffer() += self.grad;
        if (parent(self, 1).requires_grad) parent(self, 1).grad_buffer() -= self.grad;
    });
}

Var scale(const Var& a, double s) {
    return make(a.value() * s, {a}, [s](Node& self) { parent(self, 0).grad_buffer() += s * self.grad; });
}

Var add_row_broadcast(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row_broadcast: shape mismatch");
    Matrix out = a.value();
    out.rowwise() += row.value().row(0);
    return make(std::move(out), {a, row}, [](Node& self) {
        if (parent(self, 0).requires_grad) parent(self, 0).grad_buffer() += self.grad;
        if (parent(self, 1).requires_grad) parent(self, 1).grad_buffer() += self.grad.colwise().sum();
    });
}

Var hadamard(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
    return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.grad_buffer() += self.grad.cwiseProduct(pb.value);
        if (pb.requires_grad) pb.grad_buffer() += self.grad.cwiseProduct(pa.value);
    });
}

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
    Matrix out(a.rows(), b.cols());
    out.noalias() = a.value() * b.value();
    return make(std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.grad_buffer().noalias() += self.grad * pb.value.transpose();
        if (pb.requires_grad) pb.grad_buffer().noalias() += pa.value.transpose() * self.grad;
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
    Matrix out(a.rows(), b.rows());
    out.noalias() = a.value() * b.value().transpose();
    return make(std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.grad_buffer().noalias() += self.grad * pb.value;
        if (pb.requires_grad) pb.grad_buffer().noalias() += self.grad.transpose() * pa.value;
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require(x.cols() == weight.rows(), "linear: input width mismatch");
    require(bias.rows() == 1 && bias.cols() == weight.cols(), "linear: bias shape mismatch");
    Matrix out(x.rows(), weight.cols());
    out.noalias() = x.value() * weight.value();
    out.rowwise() += bias.value().row(0);
    return make(std::move(out), {x, weight, bias}, [](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        Node& pb = parent(self, 2);
        if (px.requires_grad) px.grad_buffer().noalias() += self.grad * pw.value.transpose();
        if (pw.requires_grad) pw.grad_buffer().noalias() += px.value.transpose() * self.grad;
        if (pb.requires_grad) pb.grad_buffer() += self.grad.colwise().sum();
    });
}

Var gelu(const Var& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    Matrix out = x.value().unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
    return make(std::move(out), {x}, [](Node& self) {
        Node& px = parent(self, 0);
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        Matrix d = px.value.unaryExpr([inv_sqrt_2pi](double v) {
            return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
        px.grad_buffer() += self.grad.cwiseProduct(d);
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Index rows = x.rows();
    const Index cols = x.cols();
    require(gamma.rows() == 1 && gamma.cols() == cols && beta.rows() == 1 && beta.cols() == cols,
            "layer_norm: affine shape mismatch");
    Matrix xhat(rows, cols);
    Eigen::VectorXd rstd(rows);
    for (Index r = 0; r < rows; ++r) {
        const auto row = x.value().row(r);
        const double mean = row.mean();
        const double var = (row.array() - mean).square().mean();
        rstd(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (row.array() - mean) * rstd(r);
    }
    Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
    out.rowwise() += beta.value().row(0);
    return make(std::move(out), {x, gamma, beta},
                [xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                    Node& px = parent(self, 0);
                    Node& pg = parent(self, 1);
                    Node& pb = parent(self, 2);
                    if (pg.requires_grad) pg.grad_buffer() += self.grad.cwiseProduct(xhat).colwise().sum();
                    if (pb.requires_grad) pb.grad_buffer() += self.grad.colwise().sum();
                    if (!px.requires_grad) return;
                    Matrix dxhat = self.grad.array().rowwise() * pg.value.row(0).array();
                    const double inv_cols = 1.0 / static_cast<double>(xhat.cols());
                    Matrix& gx = px.grad_buffer();
                    for (Index r = 0; r < xhat.rows(); ++r) {
                        const double m1 = dxhat.row(r).sum() * inv_cols;
                        const double m2 = dxhat.row(r).dot(xhat.row(r)) * inv_cols;
                        gx.row(r).array() += rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                });
}

Var detach(const Var& x) { return Var::constant(x.value()); }

Var gather_rows(const Var& x, std::span<const Index> rows) {
    Matrix out(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < x.rows(), "gather_rows: index out of range");
        out.row(static_cast<Index>(i)) = x.value().row(rows[i]);
    }
    std::vector<Index> idx(rows.begin(), rows.end());
    return make(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
        Matrix& g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    });
}

Var concat_rows(const Var& a, const Var& b) {
    require(a.cols() == b.cols() || a.rows() == 0 || b.rows() == 0, "concat_rows: width mismatch");
    const Index cols = a.rows() > 0 ? a.cols() : b.cols();
    Matrix out(a.rows() + b.rows(), cols);
    if (a.rows() > 0) out.topRows(a.rows()) = a.value();
    if (b.rows() > 0) out.bottomRows(b.rows()) = b.value();
    const Index split = a.rows();
    return make(std::move(out), {a, b}, [split](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad && split > 0) pa.grad_buffer() += self.grad.topRows(split);
        if (pb.requires_grad && self.grad.rows() > split)
            pb.grad_buffer() += self.grad.bottomRows(self.grad.rows() - split);
    });
}

Var repeat_rows(const Var& row, Index count) {
    require(row.rows() == 1, "repeat_rows: expects a single row");
    Matrix out = row.value().replicate(count, 1);
    return make(std::move(out), {row}, [](Node& self) {
        parent(self, 0).grad_buffer() += self.grad.colwise().sum();
    });
}

Var segment_mean(const Var& x, Index group) {
    require(group > 0 && x.rows() % group == 0, "segment_mean: rows not divisible by group");
    const Index segments = x.rows() / group;
    Matrix out(segments, x.cols());
    for (Index s = 0; s < segments; ++s) out.row(s) = x.value().middleRows(s * group, group).colwise().mean();
    return make(std::move(out), {x}, [group](Node& self) {
        Matrix& g = parent(self, 0).grad_buffer();
        const double inv = 1.0 / static_cast<double>(group);
        for (Index s = 0; s < self.grad.rows(); ++s)
            g.middleRows(s * group, group).rowwise() += self.grad.row(s) * inv;
    });
}

Var l2_normalize_rows(const Var& x, double eps) {
    Eigen::VectorXd norms = x.value().rowwise().norm().cwiseMax(eps);
    Matrix out = x.value().array().colwise() / norms.array();
    Matrix y = out;
    return make(std::move(out), {x}, [y = std::move(y), norms = std::move(norms)](Node& self) {
        Matrix& g = parent(self, 0).grad_buffer();
        for (Index r = 0; r < y.rows(); ++r) {
            const double proj = y.row(r).dot(self.grad.row(r));
            g.row(r) += (self.grad.row(r) - proj * y.row(r)) / norms(r);
        }
    });
}

Var row_norms(const Var& x, double eps) {
    const Eigen::VectorXd sq = x.value().rowwise().squaredNorm();
    Matrix out = sq.cwiseSqrt();
    Eigen::VectorXd guarded = (sq.array() + eps).sqrt().matrix();
    return make(std::move(out), {x}, [guarded = std::move(guarded)](Node& self) {
        Node& px = parent(self, 0);
        Matrix& g = px.grad_buffer();
        for (Index r = 0; r < guarded.size(); ++r) g.row(r) += px.value.row(r) * (self.grad(r, 0) / guarded(r));
    });
}

Var row_squared_norms(const Var& x) {
    Matrix out = x.value().rowwise().squaredNorm();
    return make(std::move(out), {x}, [](Node& self) {
        Node& px = parent(self, 0);
        Matrix& g = px.grad_buffer();
        for (Index r = 0; r < px.value.rows(); ++r) g.row(r) += 2.0 * self.grad(r, 0) * px.value.row(r);
    });
}

Var mean_all(const Var& x) {
    require(x.value().size() > 0, "mean_all: empty tensor");
    Matrix out(1, 1);
    out(0, 0) = x.value().mean();
    return make(std::move(out), {x}, [](Node& self) {
        Node& px = parent(self, 0);
        px.grad_buffer().array() += self.grad(0, 0) / static_cast<double>(px.value.size());
    });
}

Var sum_all(const Var& x) {
    Matrix out(1, 1);
    out(0, 0) = x.value().sum();
    return make(std::move(out), {x}, [](Node& self) { parent(self, 0).grad_buffer().array() += self.grad(0, 0); });
}

Var softmax_cross_entropy(const Var& logits, std::span<const Index> labels) {
    const Index rows = logits.rows();
    require(rows > 0 && static_cast<Index>(labels.size()) == rows, "softmax_cross_entropy: label count mismatch");
    Matrix probs(rows, logits.cols());
    double total = 0.0;
    for (Index r = 0; r < rows; ++r) {
        require(labels[r] >= 0 && labels[r] < logits.cols(), "softmax_cross_entropy: label out of range");
        const auto row = logits.value().row(r);
        const double mx = row.maxCoeff();
        probs.row(r) = (row.array() - mx).exp();
        const double z = probs.row(r).sum();
        probs.row(r) /= z;
        total += (std::log(z) + mx) - row(labels[r]);
    }
    Matrix out(1, 1);
    out(0, 0) = total / static_cast<double>(rows);
    std::vector<Index> lab(labels.begin(), labels.end());
    return make(std::move(out), {logits}, [probs = std::move(probs), lab = std::move(lab)](Node& self) {
        Matrix d = probs;
        for (std::size_t r = 0; r < lab.size(); ++r) d(static_cast<Index>(r), lab[r]) -= 1.0;
        parent(self, 0).grad_buffer() += d * (self.grad(0, 0) / static_cast<double>(lab.size()));
    });
}

Var attention(const Var& qkv, Index batch, Index seq, Index heads, std::vector<Matrix>* probs_out) {
    require(qkv.rows() == batch * seq, "attention: row count != batch * seq");
    require(qkv.cols() % 3 == 0, "attention: qkv width not divisible by 3");
    const Index dim = qkv.cols() / 3;
    require(heads > 0 && dim % heads == 0, "attention: dim not divisible by heads");
    const Index hd = dim / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
    const Matrix& in = qkv.value();

    Matrix out(batch * seq, dim);
    std::vector<Matrix> probs(static_cast<std::size_t>(batch * heads));
    for (Index b = 0; b < batch; ++b) {
        for (Index h = 0; h < heads; ++h) {
            const auto q = in.block(b * seq, h * hd, seq, hd);
            const auto k = in.block(b * seq, dim + h * hd, seq, hd);
            const auto v = in.block(b * seq, 2 * dim + h * hd, seq, hd);
            Matrix s(seq, seq);
            s.noalias() = q * k.transpose();
            s *= sc;
            for (Index r = 0; r < seq; ++r) {
                const double mx = s.row(r).maxCoeff();
                s.row(r) = (s.row(r).array() - mx).exp();
                s.row(r) /= s.row(r).sum();
            }
            out.block(b * seq, h * hd, seq, hd).noalias() = s * v;
            probs[static_cast<std::size_t>(b * heads + h)] = std::move(s);
        }
    }
    if (probs_out != nullptr) *probs_out = probs;

    return make(std::move(out), {qkv}, [probs = std::move(probs), batch, seq, heads, hd, dim, sc](Node& self) {
        Node& px = parent(self, 0);
        const Matrix& in = px.value;
        Matrix& g = px.grad_buffer();
        Matrix dp(seq, seq);
        Matrix ds(seq, seq);
        for (Index b = 0; b < batch; ++b) {
            for (Index h = 0; h < heads; ++h) {
                const Matrix& p = probs[static_cast<std::size_t>(b * heads + h)];
                const auto q = in.block(b * seq, h * hd, seq, hd);
                const auto k = in.block(b * seq, dim + h * hd, seq, hd);
                const auto v = in.block(b * seq, 2 * dim + h * hd, seq, hd);
                const auto dout = self.grad.block(b * seq, h * hd, seq, hd);
                g.block(b * seq, 2 * dim + h * hd, seq, hd).noalias() += p.transpose() * dout;
                dp.noalias() = dout * v.transpose();
                for (Index r = 0; r < seq; ++r) {
                    const double dot = dp.row(r).dot(p.row(r));
                    ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
                }
                ds *= sc;
                g.block(b * seq, h * hd, seq, hd).noalias() += ds * k;
                g.block(b * seq, dim + h * hd, seq, hd).noalias() += ds.transpose() * q;
            }
        }
    });
}

Var depthwise_conv3x3(const Var& x, const Var& weight, const Var& bias, Index batch, Index grid_h,
                      Index grid_w) {
    const Index ch = x.cols();
    const Index cells = grid_h * grid_w;
    require(x.rows() == batch * cells, "depthwise_conv3x3: rows != batch * grid");
    require(weight.rows() == ch && weight.cols() == 9, "depthwise_conv3x3: weight must be C x 9");
    require(bias.rows() == 1 && bias.cols() == ch, "depthwise_conv3x3: bias must be 1 x C");
    const Matrix& in = x.value();
    const Matrix& w = weight.value();
    Matrix out(x.rows(), ch);
    out.rowwise() = bias.value().row(0);
    for (Index b = 0; b < batch; ++b)
        for (Index r = 0; r < grid_h; ++r)
            for (Index c = 0; c < grid_w; ++c) {
                auto dst = out.row(b * cells + r * grid_w + c);
                for (Index dr = -1; dr <= 1; ++dr)
                    for (Index dc = -1; dc <= 1; ++dc) {
                        const Index rr = r + dr;
                        const Index cc = c + dc;
                        if (rr < 0 || rr >= grid_h || cc < 0 || cc >= grid_w) continue;
                        const Index tap = (dr + 1) * 3 + (dc + 1);
                        dst.array() += in.row(b * cells + rr * grid_w + cc).array() * w.col(tap).transpose().array();
                    }
            }
    return make(std::move(out), {x, weight, bias}, [batch, grid_h, grid_w, cells](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        Node& pb = parent(self, 2);
        if (pb.requires_grad) pb.grad_buffer() += self.grad.colwise().sum();
        const bool gx = px.requires_grad;
        const bool gw = pw.requires_grad;
        if (!gx && !gw) return;
        Matrix* dx = gx ? &px.grad_buffer() : nullptr;
        Matrix* dw = gw ? &pw.grad_buffer() : nullptr;
        for (Index b = 0; b < batch; ++b)
            for (Index r = 0; r < grid_h; ++r)
                for (Index c = 0; c < grid_w; ++c) {
                    const auto go = self.grad.row(b * cells + r * grid_w + c);
                    for (Index dr = -1; dr <= 1; ++dr)
                        for (Index dc = -1; dc <= 1; ++dc) {
                            const Index rr = r + dr;
                            const Index cc = c + dc;
                            if (rr < 0 || rr >= grid_h || cc < 0 || cc >= grid_w) continue;
                            const Index tap = (dr + 1) * 3 + (dc + 1);
                            const Index src = b * cells + rr * grid_w + cc;
                            if (dx) dx->row(src).array() += go.array() * pw.value.col(tap).transpose().array();
                            if (dw) dw->col(tap).array() += (go.array() * px.value.row(src).array()).transpose();
                        }
                }
    });
}

namespace {

// Rows of the 3x3 neighbourhood, zero where the tap falls outside the grid.
Matrix im2col3x3(const Matrix& in, Index batch, Index grid_h, Index grid_w) {
    const Index ch = in.cols();
    const Index cells = grid_h * grid_w;
    Matrix cols = Matrix::Zero(batch * cells, 9 * ch);
    for (Index b = 0; b < batch; ++b)
        for (Index r = 0; r < grid_h; ++r)
            for (Index c = 0; c < grid_w; ++c)
                for (Index dr = -1; dr <= 1; ++dr)
                    for (Index dc = -1; dc <= 1; ++dc) {
                        const Index rr = r + dr;
                        const Index cc = c + dc;
                        if (rr < 0 || rr >= grid_h || cc < 0 || cc >= grid_w) continue;
                        const Index tap = (dr + 1) * 3 + (dc + 1);
                        cols.block(b * cells + r * grid_w + c, tap * ch, 1, ch) = in.row(b * cells + rr * grid_w + cc);
                    }
    return cols;
}

}  // namespace

Var conv3x3(const Var& x, const Var& weight, const Var& bias, Index batch, Index grid_h, Index grid_w) {
    const Index ch = x.cols();
    require(x.rows() == batch * grid_h * grid_w, "conv3x3: rows != batch * grid");
    require(weight.rows() == 9 * ch, "conv3x3: weight must be (9*C_in) x C_out");
    require(bias.rows() == 1 && bias.cols() == weight.cols(), "conv3x3: bias shape mismatch");
    Matrix cols = im2col3x3(x.value(), batch, grid_h, grid_w);
    Matrix out(x.rows(), weight.cols());
    out.noalias() = cols * weight.value();
    out.rowwise() += bias.value().row(0);
    return make(std::move(out), {x, weight, bias}, [cols = std::move(cols), batch, grid_h, grid_w, ch](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        Node& pb = parent(self, 2);
        if (pb.requires_grad) pb.grad_buffer() += self.grad.colwise().sum();
        if (pw.requires_grad) pw.grad_buffer().noalias() += cols.transpose() * self.grad;
        if (!px.requires_grad) return;
        Matrix dcols(cols.rows(), cols.cols());
        dcols.noalias() = self.grad * pw.value.transpose();
        Matrix& g = px.grad_buffer();
        const Index cells = grid_h * grid_w;
        for (Index b = 0; b < batch; ++b)
            for (Index r = 0; r < grid_h; ++r)
                for (Index c = 0; c < grid_w; ++c)
                    for (Index dr = -1; dr <= 1; ++dr)
                        for (Index dc = -1; dc <= 1; ++dc) {
                            const Index rr = r + dr;
                            const Index cc = c + dc;
                            if (rr < 0 || rr >= grid_h || cc < 0 || cc >= grid_w) continue;
                            const Index tap = (dr + 1) * 3 + (dc + 1);
                            g.row(b * cells + rr * grid_w + cc) += dcols.block(b * cells + r * grid_w + c, tap * ch, 1, ch);
                        }
    });
}

}  // namespace cmae::ag
