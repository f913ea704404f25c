#include "hivis/adam.hpp"

#include <cmath>

namespace hivis {

void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state, const AdamConfig& cfg) {
    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (const auto& [name, g] : grads.t) {
        Tensor& p = params.at(name);
        check_shape(p.same_shape(g), "adam_step " + name, p, g);
        auto it = state.moments.find(name);
        if (it == state.moments.end())
            it = state.moments.emplace(name, std::make_pair(Tensor(p.shape), Tensor(p.shape))).first;
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        for (size_t i = 0; i < p.data.size(); ++i) {
            double gi = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            double mh = m.data[i] / bc1;
            double vh = v.data[i] / bc2;
            p.data[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
}

}  // namespace hivis
