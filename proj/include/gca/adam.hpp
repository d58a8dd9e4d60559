#pragma once
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gca/errors.hpp"
#include "gca/model.hpp"

namespace gca {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("adam: learning_rate must be positive");
        if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
            throw ConfigError("adam: betas must lie in (0, 1)");
        if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
    }
};

// Standard Adam with bias correction, applied tensor-by-tensor in declared
// field order. State is owned here; the caller owns the single mutable
// parameter copy.
class Adam {
public:
    Adam(const ModelParams& shape, AdamConfig config) : config_(config) {
        config_.validate();
        m_ = ModelParams::zeros_like(shape);
        v_ = ModelParams::zeros_like(shape);
    }

    void step(ModelParams& params, ModelParams& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));

        std::vector<std::span<double>> ps, gs, ms, vs;
        params.for_each_tensor([&ps](std::span<double> s) { ps.push_back(s); });
        grads.for_each_tensor([&gs](std::span<double> s) { gs.push_back(s); });
        m_.for_each_tensor([&ms](std::span<double> s) { ms.push_back(s); });
        v_.for_each_tensor([&vs](std::span<double> s) { vs.push_back(s); });
        if (ps.size() != gs.size()) throw std::invalid_argument("adam: gradient shape mismatch");

        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto p = ps[i];
            auto g = gs[i];
            auto m = ms[i];
            auto v = vs[i];
            if (p.size() != g.size()) throw std::invalid_argument("adam: gradient tensor size mismatch");
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
                v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                p[j] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
            }
        }
    }

    std::int64_t steps_taken() const { return t_; }

private:
    AdamConfig config_;
    ModelParams m_, v_;
    std::int64_t t_ = 0;
};

} // namespace gca
