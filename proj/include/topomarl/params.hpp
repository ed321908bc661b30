#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "topomarl/tensor.hpp"

namespace topomarl {

// Gradients collected from a backward pass, keyed by parameter name.
struct GradMap {
    std::map<std::string, Tensor2> g;

    void accumulate(const std::string& name, const Tensor2& grad) {
        auto it = g.find(name);
        if (it == g.end()) {
            g.emplace(name, grad);
            return;
        }
        if (!it->second.same_shape(grad)) throw std::runtime_error("shape error: grad accumulate");
        for (std::size_t i = 0; i < grad.size(); ++i) it->second.data[i] += grad.data[i];
    }

    // Global L2 clipping; no-op when the norm is below max_norm.
    void clip_by_global_norm(double max_norm) {
        double sq = 0.0;
        for (auto& [k, t] : g)
            for (double v : t.data) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm <= max_norm || norm == 0.0) return;
        const double s = max_norm / norm;
        for (auto& [k, t] : g)
            for (double& v : t.data) v *= s;
    }
};

struct RmsPropConfig {
    double lr = 5e-4;
    double decay = 0.99;
    double eps = 1e-8;
};

// Named parameter tensors with per-parameter RMSProp accumulators.
class ParamStore {
public:
    Tensor2& create(const std::string& name, Tensor2 init) {
        auto [it, fresh] = params_.emplace(name, std::move(init));
        if (!fresh) throw std::runtime_error("duplicate parameter: " + name);
        accum_.emplace(name, Tensor2(it->second.rows, it->second.cols));
        return it->second;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    Tensor2& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::runtime_error("unknown parameter: " + name);
        return it->second;
    }
    const Tensor2& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::runtime_error("unknown parameter: " + name);
        return it->second;
    }

    const std::map<std::string, Tensor2>& all() const { return params_; }

    void copy_values_from(const ParamStore& other) {
        for (auto& [name, t] : params_) {
            const Tensor2& src = other.get(name);
            if (!t.same_shape(src)) throw std::runtime_error("shape error: copy " + name);
            t.data = src.data;
        }
    }

    // v <- decay*v + (1-decay)*g^2 ; p <- p - lr*g/sqrt(v+eps)
    void rmsprop_update(const GradMap& grads, const RmsPropConfig& cfg = {}) {
        for (const auto& [name, grad] : grads.g) {
            Tensor2& p = get(name);
            Tensor2& v = accum_.at(name);
            if (!p.same_shape(grad)) throw std::runtime_error("shape error: rmsprop " + name);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = grad.data[i];
                v.data[i] = cfg.decay * v.data[i] + (1.0 - cfg.decay) * gi * gi;
                p.data[i] -= cfg.lr * gi / std::sqrt(v.data[i] + cfg.eps);
            }
        }
    }

    // p <- (1-alpha)*p - alpha*g, applied only to parameters whose name starts
    // with `prefix` (empty prefix matches everything). Parameters with no
    // gradient entry still shrink by (1-alpha).
    void shrink_update(const GradMap& grads, double alpha, const std::string& prefix = "") {
        for (auto& [name, p] : params_) {
            if (name.rfind(prefix, 0) != 0) continue;
            for (double& x : p.data) x *= (1.0 - alpha);
            auto it = grads.g.find(name);
            if (it == grads.g.end()) continue;
            if (!p.same_shape(it->second)) throw std::runtime_error("shape error: shrink " + name);
            for (std::size_t i = 0; i < p.size(); ++i) p.data[i] -= alpha * it->second.data[i];
        }
    }

    void reset_accumulators() {
        for (auto& [name, v] : accum_) std::fill(v.data.begin(), v.data.end(), 0.0);
    }

private:
    std::map<std::string, Tensor2> params_;
    std::map<std::string, Tensor2> accum_;
};

}  // namespace topomarl
