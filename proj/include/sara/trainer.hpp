#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sara/alignment.hpp"
#include "sara/dataset.hpp"
#include "sara/networks.hpp"
#include "sara/optim.hpp"

namespace sara {

struct TrainConfig {
    DatasetSpec dataset;
    DenoiserConfig denoiser;
    EncoderConfig encoder;
    ProjectionConfig projection;
    DiscriminatorConfig discriminator;
    alignment::AlignmentConfig alignment;
    AdamConfig gen_optimizer;
    AdamConfig disc_optimizer;

    std::uint64_t seed = 0;
    std::uint64_t steps = 1000;
    std::size_t batch_size = 64;
    double label_dropout = 0.1;
    // One discriminator update after every disc_every generator updates.
    std::size_t disc_every = 5;
    std::size_t checkpoint_every = 0;  // 0: only at the end
    DType dtype = DType::f32;
    // Writes wall_ms as 0 so metrics streams compare byte-for-byte.
    bool deterministic_metrics = false;

    // Copies latent shape and class count from the dataset into the denoiser.
    void sync();
    void validate() const;
};

// Per-step record emitted on the metrics stream.
struct StepMetrics {
    std::uint64_t step = 0;
    alignment::LossBreakdown loss;
    double grad_norm_gen = 0;
    double grad_norm_disc = 0;
    double wall_ms = 0;
    bool disc_updated = false;

    std::string to_json_line() const;
};

template <Scalar T>
class TrainState {
public:
    explicit TrainState(TrainConfig cfg);
    TrainState(const TrainState&) = delete;
    TrainState& operator=(const TrainState&) = delete;

    const TrainConfig& config() const { return cfg_; }

    DenoiserNet<T> denoiser;
    FrozenEncoder<T> encoder;
    ProjectionMLP<T> projection;
    Discriminator<T> discriminator;
    Adam<T> gen_opt;
    Adam<T> disc_opt;
    std::uint64_t step = 0;
    Rng rng;

    std::vector<Parameter<T>*> generator_params();
    std::vector<Parameter<T>*> discriminator_params();
    // Every parameter tensor plus optimizer moments, with stable names.
    std::vector<std::pair<std::string, Tensor<T>*>> named_tensors();

private:
    TrainState(const TrainConfig& cfg, Rng init);

    TrainConfig cfg_;
};

// One generator update on the joint objective, then (when due) one
// discriminator update on the same minibatch. Throws NonFiniteError naming
// the offending term on any non-finite loss.
template <Scalar T>
StepMetrics train_step(TrainState<T>& state, const Batch<T>& batch);

struct RunOptions {
    std::filesystem::path out_dir;  // metrics.jsonl and checkpoints/ go here
    std::uint64_t until_step = 0;   // 0: config().steps
    std::function<void(const StepMetrics&)> on_step;
};

// Trains from state.step to the target step, appending to metrics.jsonl
// (lines past state.step from an earlier run are dropped first) and writing
// checkpoints under out_dir/checkpoints/step_<n>.
template <Scalar T>
void run_training(TrainState<T>& state, const SyntheticDataset& data, const RunOptions& opts);

std::filesystem::path checkpoint_dir_for(const std::filesystem::path& out_dir, std::uint64_t step);

}  // namespace sara
