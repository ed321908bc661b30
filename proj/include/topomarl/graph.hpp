#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "topomarl/params.hpp"
#include "topomarl/tensor.hpp"

namespace topomarl {

// Dynamic reverse-mode tape. Build a computation with the op methods, call
// backward() on a 1x1 root, then read grad() or export parameter gradients.
// One Graph instance is single-threaded; independent graphs may run in
// parallel.
class Graph {
public:
    using Id = int;

    // Constant leaf, no gradient tracked.
    Id value(Tensor2 v) { return make_leaf(std::move(v), false); }

    // Leaf whose gradient is wanted (designated input).
    Id input(Tensor2 v) { return make_leaf(std::move(v), true); }

    // Leaf bound to a named parameter; gradients flow to export_param_grads().
    Id param(const ParamStore& ps, const std::string& name) {
        Id id = make_leaf(ps.get(name), true);
        nodes_[id].param_name = name;
        return id;
    }

    const Tensor2& val(Id id) const { return nodes_[id].val; }
    const Tensor2& grad(Id id) const { return nodes_[id].grad; }

    Id matmul(Id a, Id b) {
        const Tensor2 &A = v(a), &B = v(b);
        if (A.cols != B.rows) throw std::runtime_error("shape error: matmul");
        Id out = make_node(topomarl::matmul(A, B), {a, b});
        set_back(out, [this, out, a, b] {
            if (wants(a)) matmul_a_bt_accum(g(out), nodes_[b].val, nodes_[a].grad);
            if (wants(b)) matmul_at_b_accum(nodes_[a].val, g(out), nodes_[b].grad);
        });
        return out;
    }

    // b may be a 1xC row vector broadcast over rows of a.
    Id add(Id a, Id b) { return add_sub(a, b, +1.0, "add"); }
    Id sub(Id a, Id b) { return add_sub(a, b, -1.0, "sub"); }

    Id mul(Id a, Id b) {
        const Tensor2 &A = v(a), &B = v(b);
        if (!A.same_shape(B)) throw std::runtime_error("shape error: mul");
        Tensor2 out(A.rows, A.cols);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = A.data[i] * B.data[i];
        Id o = make_node(std::move(out), {a, b});
        set_back(o, [this, o, a, b] {
            const Tensor2& go = g(o);
            if (wants(a))
                for (std::size_t i = 0; i < go.size(); ++i)
                    nodes_[a].grad.data[i] += go.data[i] * nodes_[b].val.data[i];
            if (wants(b))
                for (std::size_t i = 0; i < go.size(); ++i)
                    nodes_[b].grad.data[i] += go.data[i] * nodes_[a].val.data[i];
        });
        return o;
    }

    Id scale(Id a, double s) {
        Tensor2 out = v(a);
        for (double& x : out.data) x *= s;
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a, s] {
            if (!wants(a)) return;
            const Tensor2& go = g(o);
            for (std::size_t i = 0; i < go.size(); ++i) nodes_[a].grad.data[i] += s * go.data[i];
        });
        return o;
    }

    Id add_scalar(Id a, double s) {
        Tensor2 out = v(a);
        for (double& x : out.data) x += s;
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a] { pass_through(o, a); });
        return o;
    }

    Id relu(Id a) {
        Tensor2 out = v(a);
        for (double& x : out.data) x = x > 0.0 ? x : 0.0;
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a] {
            if (!wants(a)) return;
            const Tensor2& go = g(o);
            for (std::size_t i = 0; i < go.size(); ++i)
                if (nodes_[a].val.data[i] > 0.0) nodes_[a].grad.data[i] += go.data[i];
        });
        return o;
    }

    Id elu(Id a) {
        Tensor2 out = v(a);
        for (double& x : out.data) x = x > 0.0 ? x : std::expm1(x);
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a] {
            if (!wants(a)) return;
            const Tensor2& go = g(o);
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double x = nodes_[a].val.data[i];
                nodes_[a].grad.data[i] += go.data[i] * (x > 0.0 ? 1.0 : std::exp(x));
            }
        });
        return o;
    }

    Id tanh_(Id a) {
        Tensor2 out = v(a);
        for (double& x : out.data) x = std::tanh(x);
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a] {
            if (!wants(a)) return;
            const Tensor2& go = g(o);
            const Tensor2& y = nodes_[o].val;
            for (std::size_t i = 0; i < go.size(); ++i)
                nodes_[a].grad.data[i] += go.data[i] * (1.0 - y.data[i] * y.data[i]);
        });
        return o;
    }

    Id sigmoid(Id a) {
        Tensor2 out = v(a);
        for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a] {
            if (!wants(a)) return;
            const Tensor2& go = g(o);
            const Tensor2& y = nodes_[o].val;
            for (std::size_t i = 0; i < go.size(); ++i)
                nodes_[a].grad.data[i] += go.data[i] * y.data[i] * (1.0 - y.data[i]);
        });
        return o;
    }

    Id abs_(Id a) {
        Tensor2 out = v(a);
        for (double& x : out.data) x = std::fabs(x);
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a] {
            if (!wants(a)) return;
            const Tensor2& go = g(o);
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double x = nodes_[a].val.data[i];
                const double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                nodes_[a].grad.data[i] += go.data[i] * s;
            }
        });
        return o;
    }

    Id exp_(Id a) {
        Tensor2 out = v(a);
        for (double& x : out.data) x = std::exp(x);
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a] {
            if (!wants(a)) return;
            const Tensor2& go = g(o);
            const Tensor2& y = nodes_[o].val;
            for (std::size_t i = 0; i < go.size(); ++i)
                nodes_[a].grad.data[i] += go.data[i] * y.data[i];
        });
        return o;
    }

    Id concat_cols(const std::vector<Id>& parts) {
        if (parts.empty()) throw std::runtime_error("shape error: concat (empty)");
        const std::size_t rows = v(parts[0]).rows;
        std::size_t cols = 0;
        for (Id p : parts) {
            if (v(p).rows != rows) throw std::runtime_error("shape error: concat");
            cols += v(p).cols;
        }
        Tensor2 out(rows, cols);
        std::size_t off = 0;
        for (Id p : parts) {
            const Tensor2& t = v(p);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < t.cols; ++j) out.at(i, off + j) = t.at(i, j);
            off += t.cols;
        }
        Id o = make_node(std::move(out), parts);
        set_back(o, [this, o, parts] {
            const Tensor2& go = g(o);
            std::size_t off2 = 0;
            for (Id p : parts) {
                Tensor2& gp = nodes_[p].grad;
                if (wants(p))
                    for (std::size_t i = 0; i < gp.rows; ++i)
                        for (std::size_t j = 0; j < gp.cols; ++j)
                            gp.at(i, j) += go.at(i, off2 + j);
                off2 += nodes_[p].val.cols;
            }
        });
        return o;
    }

    Id slice_cols(Id a, std::size_t c0, std::size_t c1) {
        const Tensor2& A = v(a);
        if (c0 >= c1 || c1 > A.cols) throw std::runtime_error("shape error: slice_cols");
        Tensor2 out(A.rows, c1 - c0);
        for (std::size_t i = 0; i < A.rows; ++i)
            for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = A.at(i, j);
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a, c0] {
            if (!wants(a)) return;
            const Tensor2& go = g(o);
            for (std::size_t i = 0; i < go.rows; ++i)
                for (std::size_t j = 0; j < go.cols; ++j)
                    nodes_[a].grad.at(i, c0 + j) += go.at(i, j);
        });
        return o;
    }

    Id slice_rows(Id a, std::size_t r0, std::size_t r1) {
        const Tensor2& A = v(a);
        if (r0 >= r1 || r1 > A.rows) throw std::runtime_error("shape error: slice_rows");
        Tensor2 out(r1 - r0, A.cols);
        std::copy(A.data.begin() + r0 * A.cols, A.data.begin() + r1 * A.cols, out.data.begin());
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a, r0] {
            if (!wants(a)) return;
            const Tensor2& go = g(o);
            const std::size_t c = go.cols;
            for (std::size_t i = 0; i < go.size(); ++i)
                nodes_[a].grad.data[r0 * c + i] += go.data[i];
        });
        return o;
    }

    // Row-major reshape; total size must be preserved.
    Id reshape(Id a, std::size_t r, std::size_t c) {
        const Tensor2& A = v(a);
        if (A.size() != r * c) throw std::runtime_error("shape error: reshape");
        Tensor2 out(r, c);
        out.data = A.data;
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a] { pass_through(o, a); });
        return o;
    }

    Id rowsum(Id a) {
        const Tensor2& A = v(a);
        Tensor2 out(A.rows, 1);
        for (std::size_t i = 0; i < A.rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < A.cols; ++j) s += A.at(i, j);
            out.at(i, 0) = s;
        }
        Id o = make_node(std::move(out), {a});
        set_back(o, [this, o, a] {
            if (!wants(a)) return;
            const Tensor2& go = g(o);
            Tensor2& ga = nodes_[a].grad;
            for (std::size_t i = 0; i < ga.rows; ++i)
                for (std::size_t j = 0; j < ga.cols; ++j) ga.at(i, j) += go.at(i, 0);
        });
        return o;
    }

    // Batched row-wise matmul: x (B x n), w (B x n*m) -> out (B x m),
    // out[b,j] = sum_a x[b,a] * w[b, a*m + j].
    Id bmm_rowwise(Id x, Id w, std::size_t n, std::size_t m) {
        const Tensor2 &X = v(x), &W = v(w);
        if (X.cols != n || W.cols != n * m || X.rows != W.rows)
            throw std::runtime_error("shape error: bmm_rowwise");
        Tensor2 out(X.rows, m);
        for (std::size_t b = 0; b < X.rows; ++b)
            for (std::size_t a = 0; a < n; ++a) {
                const double xv = X.at(b, a);
                if (xv == 0.0) continue;
                for (std::size_t j = 0; j < m; ++j) out.at(b, j) += xv * W.at(b, a * m + j);
            }
        Id o = make_node(std::move(out), {x, w});
        set_back(o, [this, o, x, w, n, m] {
            const Tensor2& go = g(o);
            const Tensor2& X2 = nodes_[x].val;
            const Tensor2& W2 = nodes_[w].val;
            for (std::size_t b = 0; b < X2.rows; ++b)
                for (std::size_t a = 0; a < n; ++a) {
                    double gx = 0.0;
                    for (std::size_t j = 0; j < m; ++j) {
                        const double gj = go.at(b, j);
                        gx += gj * W2.at(b, a * m + j);
                        if (wants(w)) nodes_[w].grad.at(b, a * m + j) += X2.at(b, a) * gj;
                    }
                    if (wants(x)) nodes_[x].grad.at(b, a) += gx;
                }
        });
        return o;
    }

    // Scalar mean over all elements of (a-b)^2.
    Id mse(Id a, Id b) {
        const Tensor2 &A = v(a), &B = v(b);
        if (!A.same_shape(B)) throw std::runtime_error("shape error: mse");
        const double inv = 1.0 / static_cast<double>(A.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < A.size(); ++i) {
            const double d = A.data[i] - B.data[i];
            acc += d * d;
        }
        Tensor2 out(1, 1);
        out.data[0] = acc * inv;
        Id o = make_node(std::move(out), {a, b});
        set_back(o, [this, o, a, b, inv] {
            const double go = g(o).data[0];
            const Tensor2& A2 = nodes_[a].val;
            const Tensor2& B2 = nodes_[b].val;
            for (std::size_t i = 0; i < A2.size(); ++i) {
                const double d = 2.0 * inv * (A2.data[i] - B2.data[i]) * go;
                if (wants(a)) nodes_[a].grad.data[i] += d;
                if (wants(b)) nodes_[b].grad.data[i] -= d;
            }
        });
        return o;
    }

    // Unit-variance Gaussian log-likelihood with the additive constant dropped:
    // scalar mean over rows of -1/2 * sum_cols (target - mean)^2.
    Id gauss_loglik(Id mean, Id target) {
        const Tensor2 &M = v(mean), &T = v(target);
        if (!M.same_shape(T)) throw std::runtime_error("shape error: gauss_loglik");
        const double inv = 1.0 / static_cast<double>(M.rows);
        double acc = 0.0;
        for (std::size_t i = 0; i < M.size(); ++i) {
            const double d = T.data[i] - M.data[i];
            acc += d * d;
        }
        Tensor2 out(1, 1);
        out.data[0] = -0.5 * acc * inv;
        Id o = make_node(std::move(out), {mean, target});
        set_back(o, [this, o, mean, target, inv] {
            const double go = g(o).data[0];
            const Tensor2& M2 = nodes_[mean].val;
            const Tensor2& T2 = nodes_[target].val;
            for (std::size_t i = 0; i < M2.size(); ++i) {
                const double d = inv * (T2.data[i] - M2.data[i]) * go;
                if (wants(mean)) nodes_[mean].grad.data[i] += d;
                if (wants(target)) nodes_[target].grad.data[i] -= d;
            }
        });
        return o;
    }

    // KL(N(mu, diag(exp(logvar))) || N(0, I)) averaged over rows:
    // mean_rows 1/2 * sum_cols (mu^2 + exp(lv) - lv - 1).
    Id kl_std_normal(Id mu, Id logvar) {
        const Tensor2 &M = v(mu), &L = v(logvar);
        if (!M.same_shape(L)) throw std::runtime_error("shape error: kl_std_normal");
        const double inv = 1.0 / static_cast<double>(M.rows);
        double acc = 0.0;
        for (std::size_t i = 0; i < M.size(); ++i)
            acc += M.data[i] * M.data[i] + std::exp(L.data[i]) - L.data[i] - 1.0;
        Tensor2 out(1, 1);
        out.data[0] = 0.5 * acc * inv;
        Id o = make_node(std::move(out), {mu, logvar});
        set_back(o, [this, o, mu, logvar, inv] {
            const double go = g(o).data[0];
            const Tensor2& M2 = nodes_[mu].val;
            const Tensor2& L2 = nodes_[logvar].val;
            for (std::size_t i = 0; i < M2.size(); ++i) {
                if (wants(mu)) nodes_[mu].grad.data[i] += inv * M2.data[i] * go;
                if (wants(logvar))
                    nodes_[logvar].grad.data[i] += 0.5 * inv * (std::exp(L2.data[i]) - 1.0) * go;
            }
        });
        return o;
    }

    // x*W + b, b broadcast per row.
    Id affine(Id x, Id W, Id b) { return add(matmul(x, W), b); }

    struct GruParams {
        Id wz, uz, bz, wr, ur, br, wh, uh, bh;
    };

    GruParams gru_params(const ParamStore& ps, const std::string& prefix) {
        return GruParams{param(ps, prefix + ".wz"), param(ps, prefix + ".uz"),
                         param(ps, prefix + ".bz"), param(ps, prefix + ".wr"),
                         param(ps, prefix + ".ur"), param(ps, prefix + ".br"),
                         param(ps, prefix + ".wh"), param(ps, prefix + ".uh"),
                         param(ps, prefix + ".bh")};
    }

    // One gated-recurrent step: returns the new hidden state.
    Id gru_step(Id x, Id h, const GruParams& p) {
        Id z = sigmoid(add(add(matmul(x, p.wz), matmul(h, p.uz)), p.bz));
        Id r = sigmoid(add(add(matmul(x, p.wr), matmul(h, p.ur)), p.br));
        Id hh = tanh_(add(add(matmul(x, p.wh), matmul(mul(r, h), p.uh)), p.bh));
        Id one_minus_z = add_scalar(scale(z, -1.0), 1.0);
        return add(mul(one_minus_z, h), mul(z, hh));
    }

    // Reverse-mode pass from a 1x1 root.
    void backward(Id root) {
        if (v(root).rows != 1 || v(root).cols != 1)
            throw std::runtime_error("shape error: backward root must be 1x1");
        nodes_[root].grad.data[0] = 1.0;
        for (int i = root; i >= 0; --i)
            if (nodes_[i].back && nodes_[i].needs_grad) nodes_[i].back();
    }

    void zero_grads() {
        for (auto& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
    }

    // Accumulates gradients of all bound parameters into `out`.
    void export_param_grads(GradMap& out) const {
        for (const auto& n : nodes_)
            if (!n.param_name.empty()) out.accumulate(n.param_name, n.grad);
    }

private:
    struct Node {
        Tensor2 val;
        Tensor2 grad;
        bool needs_grad = false;
        std::string param_name;
        std::function<void()> back;
    };

    std::vector<Node> nodes_;

    const Tensor2& v(Id id) const { return nodes_[id].val; }
    const Tensor2& g(Id id) const { return nodes_[id].grad; }
    bool wants(Id id) const { return nodes_[id].needs_grad; }

    Id make_leaf(Tensor2 v, bool needs_grad) {
        Node n;
        n.grad = Tensor2(v.rows, v.cols);
        n.val = std::move(v);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    Id make_node(Tensor2 v, const std::vector<Id>& parents) {
        Node n;
        n.grad = Tensor2(v.rows, v.cols);
        n.val = std::move(v);
        for (Id p : parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    void set_back(Id id, std::function<void()> f) {
        if (nodes_[id].needs_grad) nodes_[id].back = std::move(f);
    }

    void pass_through(Id o, Id a) {
        if (!wants(a)) return;
        const Tensor2& go = g(o);
        for (std::size_t i = 0; i < go.size(); ++i) nodes_[a].grad.data[i] += go.data[i];
    }

    Id add_sub(Id a, Id b, double sgn, const char* opname) {
        const Tensor2 &A = v(a), &B = v(b);
        const bool broadcast = B.rows == 1 && A.rows > 1 && B.cols == A.cols;
        if (!broadcast && !A.same_shape(B))
            throw std::runtime_error(std::string("shape error: ") + opname);
        Tensor2 out(A.rows, A.cols);
        for (std::size_t i = 0; i < A.rows; ++i)
            for (std::size_t j = 0; j < A.cols; ++j)
                out.at(i, j) = A.at(i, j) + sgn * B.at(broadcast ? 0 : i, j);
        Id o = make_node(std::move(out), {a, b});
        set_back(o, [this, o, a, b, sgn, broadcast] {
            const Tensor2& go = g(o);
            if (wants(a))
                for (std::size_t i = 0; i < go.size(); ++i)
                    nodes_[a].grad.data[i] += go.data[i];
            if (wants(b)) {
                Tensor2& gb = nodes_[b].grad;
                if (broadcast) {
                    for (std::size_t i = 0; i < go.rows; ++i)
                        for (std::size_t j = 0; j < go.cols; ++j)
                            gb.at(0, j) += sgn * go.at(i, j);
                } else {
                    for (std::size_t i = 0; i < go.size(); ++i)
                        gb.data[i] += sgn * go.data[i];
                }
            }
        });
        return o;
    }
};

}  // namespace topomarl
