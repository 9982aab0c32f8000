#pragma once

#include <cmath>
#include <cstdint>

#include "patentscape/error.hpp"
#include "patentscape/nn/model.hpp"

namespace patentscape::nn {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    double learning_rate = 1e-4;
    double adam_epsilon = 1e-8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    double pos_weight = 1.0;  // positive-class BCE weight; 1.0 = plain BCE

    void validate() const {
        if (batch_size == 0) throw DataError("batch size must be positive");
        if (learning_rate < 0.0) throw DataError("learning rate must be nonnegative");
        if (adam_epsilon <= 0.0) throw DataError("adam epsilon must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw DataError("adam betas must lie in [0, 1)");
        if (pos_weight <= 0.0) throw DataError("pos_weight must be positive");
    }
};

// Standard Adam with bias correction. The step counter is incremented
// before the update, so the first step uses t = 1.
inline void adam_step(ParameterStore& store, const GradientBuffer& grads,
                      const TrainConfig& cfg) {
    store.set_step(store.step() + 1);
    const double t = static_cast<double>(store.step());
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    store.for_each([&](const std::string& name, ParameterStore::Entry& e) {
        if (!e.trainable) return;
        const Tensor& g = grads.at(name);
        if (!g.same_shape(e.value))
            throw InternalError("adam_step: gradient shape mismatch for " + name);
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            double& m = e.moment1.data[i];
            double& v = e.moment2.data[i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g.data[i];
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            e.value.data[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
        }
    });
}

}  // namespace patentscape::nn
