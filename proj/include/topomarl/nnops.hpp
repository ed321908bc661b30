#pragma once

// Plain (tape-free) forward helpers for rollouts, target networks, and other
// paths that need values but no gradients.

#include <cmath>

#include "topomarl/params.hpp"
#include "topomarl/tensor.hpp"

namespace topomarl {

inline Tensor2 affine_plain(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
    Tensor2 out = matmul(x, w);
    if (b.rows != 1 || b.cols != out.cols) throw std::runtime_error("shape error: affine");
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) += b.at(0, j);
    return out;
}

inline void relu_inplace(Tensor2& t) {
    for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

inline void elu_inplace(Tensor2& t) {
    for (double& v : t.data) v = v > 0.0 ? v : std::expm1(v);
}

inline void sigmoid_inplace(Tensor2& t) {
    for (double& v : t.data) v = 1.0 / (1.0 + std::exp(-v));
}

inline void tanh_inplace(Tensor2& t) {
    for (double& v : t.data) v = std::tanh(v);
}

inline void abs_inplace(Tensor2& t) {
    for (double& v : t.data) v = std::fabs(v);
}

// References to one gated-recurrent cell's parameters.
struct GruRefs {
    const Tensor2 &wz, &uz, &bz, &wr, &ur, &br, &wh, &uh, &bh;

    static GruRefs from(const ParamStore& ps, const std::string& prefix) {
        return {ps.get(prefix + ".wz"), ps.get(prefix + ".uz"), ps.get(prefix + ".bz"),
                ps.get(prefix + ".wr"), ps.get(prefix + ".ur"), ps.get(prefix + ".br"),
                ps.get(prefix + ".wh"), ps.get(prefix + ".uh"), ps.get(prefix + ".bh")};
    }
};

// Matches Graph::gru_step bit for bit on the forward path.
inline Tensor2 gru_step_plain(const Tensor2& x, const Tensor2& h, const GruRefs& p) {
    Tensor2 z = matmul(x, p.wz);
    matmul_accum(h, p.uz, z);
    Tensor2 r = matmul(x, p.wr);
    matmul_accum(h, p.ur, r);
    for (std::size_t i = 0; i < z.rows; ++i)
        for (std::size_t j = 0; j < z.cols; ++j) {
            z.at(i, j) += p.bz.at(0, j);
            r.at(i, j) += p.br.at(0, j);
        }
    sigmoid_inplace(z);
    sigmoid_inplace(r);
    for (std::size_t i = 0; i < r.size(); ++i) r.data[i] *= h.data[i];
    Tensor2 hh = matmul(x, p.wh);
    matmul_accum(r, p.uh, hh);
    for (std::size_t i = 0; i < hh.rows; ++i)
        for (std::size_t j = 0; j < hh.cols; ++j) hh.at(i, j) += p.bh.at(0, j);
    tanh_inplace(hh);
    Tensor2 out(h.rows, h.cols);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = (1.0 - z.data[i]) * h.data[i] + z.data[i] * hh.data[i];
    return out;
}

}  // namespace topomarl
