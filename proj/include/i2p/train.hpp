#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "i2p/io.hpp"
#include "i2p/model.hpp"

namespace i2p::train {

enum class OptimizerKind { Sgd, AdamW };
OptimizerKind parse_optimizer(const std::string& s);
std::string to_string(OptimizerKind k);

// Parameter groups with their own learning rate.
enum class Group { Image, Cloud, Aggregator };
Group group_of(const std::string& param_name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::AdamW;
    double lr_image = 1e-4;
    double lr_cloud = 1e-5;
    double lr_aggregator = 5e-4;
    double weight_decay = 1e-3;
    double warmup_epochs = 3;
    double momentum = 0.9;  // SGD
    double beta1 = 0.9;     // AdamW
    double beta2 = 0.999;
    double eps = 1e-8;

    double lr(Group g) const;
    void validate() const;
};

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 4;
    std::size_t accum_steps = 1;
    // Relation weights (lambda, beta) ramp linearly from 0 over this many
    // epochs; 0 applies them in full from the start.
    std::size_t relation_ramp_epochs = 0;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t batches_per_epoch(std::size_t samples) const;
    std::size_t steps_per_epoch(std::size_t samples) const;
};

// Weight multiplier of the relation terms during epoch `epoch` (1-based).
double relation_scale(std::size_t epoch, std::size_t ramp_epochs);

// Linear warm-up over warmup_steps, then cosine decay to zero at total_steps.
double lr_scale(std::size_t step, std::size_t warmup_steps, std::size_t total_steps);

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    losses::LossBreakdown loss;  // sample-weighted mean over the epoch's batches
    double lr_scale = 0;    // at the epoch's last optimizer step
};

// Order in which epoch `epoch` (1-based) visits the samples; a pure function
// of (seed, epoch), so resumed runs see the same batches.
std::vector<std::size_t> epoch_order(std::size_t samples, std::uint64_t seed, std::size_t epoch);

class Trainer {
public:
    Trainer(model::ModelConfig mcfg, TrainConfig tcfg, model::ModelParams<float> params);

    // Runs the next epoch over `data` and returns its mean losses.
    EpochLog run_epoch(std::span<const model::SampleInput> data);

    std::size_t epoch() const { return epoch_; }
    std::size_t step() const { return step_; }
    const model::ModelParams<float>& params() const { return params_; }
    model::ModelParams<float>& params() { return params_; }
    const model::ModelConfig& model_config() const { return mcfg_; }
    const TrainConfig& train_config() const { return tcfg_; }

    // Parameters plus optimizer state for resuming.
    io::Checkpoint state() const;
    static Trainer resume(const io::Checkpoint& ck, model::ModelConfig mcfg, TrainConfig tcfg);

private:
    void apply_step(std::size_t total_steps, std::size_t warmup_steps, double grad_scale);
    bool frozen(const std::string& name) const;

    model::ModelConfig mcfg_;
    TrainConfig tcfg_;
    model::ModelParams<float> params_;
    model::ModelParams<float> grads_;
    model::ModelParams<float> m_;  // AdamW first moment / SGD momentum
    model::ModelParams<float> v_;  // AdamW second moment
    std::size_t epoch_ = 0;
    std::size_t step_ = 0;
    double last_scale_ = 0;
};

std::string loss_csv_header();
std::string loss_csv_row(const EpochLog& e);

}  // namespace i2p::train
