#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "alora/data.hpp"
#include "alora/supernet.hpp"

namespace alora {

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam with per-parameter moment slots keyed by
// stable name. When a parameter grows (adapter rank growth), the existing
// moment block is migrated and the new region starts at zero.
class AdamW {
public:
    explicit AdamW(AdamWParams p = {}) : p_(p) {}

    // One update over the named parameters. Every tensor must carry a
    // gradient (StateError otherwise); frozen tensors must not be passed.
    void step(const std::vector<std::pair<std::string, Tensor>>& params, double lr);

    int64_t step_count() const { return t_; }

private:
    struct Moments {
        size_t rows = 0, cols = 0;
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> slots_;
    AdamWParams p_;
    int64_t t_ = 0;
};

struct TrainConfig {
    double lr_peak = 1e-4;
    double warmup_frac = 0.06;
    int batch_size = 16;
    int max_epochs = 10;
    int eval_every_steps = 50;
    int patience = 10;
    uint64_t seed = 0;

    void validate() const;
};

// Linear ramp to lr_peak over warmup_frac*total_steps, then linear decay
// to zero at total_steps.
double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg);

struct EvalRecord {
    int64_t step = 0;
    double train_loss = 0.0;
    double dev_loss = 0.0;
    double lr = 0.0;
    int active_ranks_total = 0;
};

struct SegmentResult {
    int64_t steps_run = 0;
    std::vector<EvalRecord> records;
    bool stopped_early = false;
};

// One continuous training trajectory over a network. The lr schedule is
// fixed up front from max_epochs; allocation rounds call train_for
// repeatedly without resetting the schedule, the optimizer moments, or
// the early-stopping state.
class Trainer {
public:
    Trainer(SuperNetwork& net, const DataSplits& data, TrainConfig cfg);

    // Runs ceil(epochs * steps_per_epoch) optimizer steps (fractional
    // epochs allowed). Seeded shuffling per epoch; dev loss recorded every
    // eval_every_steps; stops when dev loss fails to improve for
    // `patience` consecutive evals.
    SegmentResult train_for(double epochs);

    bool stopped() const { return stopped_; }
    int64_t global_step() const { return step_; }
    int64_t steps_per_epoch() const { return spe_; }
    int64_t schedule_total_steps() const { return total_steps_; }
    const std::vector<EvalRecord>& log() const { return log_; }

    double best_dev_loss() const { return best_dev_; }
    // Detached copies of the trainable tensors at the best dev eval.
    const std::map<std::string, Tensor>& best_snapshot() const { return best_snapshot_; }

    double eval_dev_loss() const;

private:
    Batch next_batch();
    void run_eval(double train_loss, std::vector<EvalRecord>& segment);

    SuperNetwork& net_;
    const DataSplits& data_;
    TrainConfig cfg_;
    AdamW opt_;
    int64_t spe_ = 0;
    int64_t total_steps_ = 0;
    int64_t step_ = 0;
    bool stopped_ = false;
    double best_dev_ = std::numeric_limits<double>::infinity();
    int evals_since_improve_ = 0;
    std::map<std::string, Tensor> best_snapshot_;
    std::vector<EvalRecord> log_;
    int64_t epoch_ = 0;
    int64_t batch_in_epoch_ = 0;
    std::vector<int> perm_;
};

}  // namespace alora
