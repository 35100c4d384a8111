#pragma once

#include "sara/trainer.hpp"

namespace testing_util {

// A few-thousand-parameter profile that trains in milliseconds per step.
inline sara::TrainConfig tiny_config(std::uint64_t seed = 1) {
    sara::TrainConfig c;
    c.dataset.channels = 2;
    c.dataset.height = 4;
    c.dataset.width = 4;
    c.dataset.num_classes = 3;
    c.dataset.seed = 5;
    c.denoiser.layers = 2;
    c.denoiser.hidden_dim = 16;
    c.denoiser.heads = 2;
    c.denoiser.alignment_depth = 1;
    c.denoiser.freq_dim = 16;
    c.encoder.layers = 1;
    c.encoder.dim = 8;
    c.encoder.heads = 2;
    c.projection.hidden = 16;
    c.discriminator.channels = 4;
    c.gen_optimizer.lr = 1e-3;
    c.disc_optimizer.lr = 1e-3;
    c.seed = seed;
    c.steps = 20;
    c.batch_size = 8;
    c.sync();
    return c;
}

}  // namespace testing_util
