#pragma once

#include "hivis/checkpoint.hpp"

namespace hivis {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::map<std::string, std::pair<Tensor, Tensor>> moments;  // name -> (m, v)
    int64_t step = 0;
};

// Standard bias-corrected Adam over every gradient present in `grads`.
// Iteration order is the map's, so updates are deterministic.
void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state, const AdamConfig& cfg);

}  // namespace hivis
