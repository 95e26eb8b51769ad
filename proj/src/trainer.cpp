#include "alora/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "alora/error.hpp"
#include "alora/random.hpp"

namespace alora {

void AdamW::step(const std::vector<std::pair<std::string, Tensor>>& params, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
    for (const auto& [name, t] : params) {
        if (!t.has_grad())
            throw StateError("AdamW: parameter '" + name + "' has no gradient");
        Moments& mo = slots_[name];
        if (mo.rows != t.rows() || mo.cols != t.cols()) {
            // New slot, or the parameter grew: keep the overlapping
            // top-left block, zero the rest.
            Moments fresh;
            fresh.rows = t.rows();
            fresh.cols = t.cols();
            fresh.m.assign(t.size(), 0.0);
            fresh.v.assign(t.size(), 0.0);
            if (!mo.m.empty() && mo.rows <= fresh.rows && mo.cols <= fresh.cols) {
                for (size_t r = 0; r < mo.rows; ++r)
                    for (size_t c = 0; c < mo.cols; ++c) {
                        fresh.m[r * fresh.cols + c] = mo.m[r * mo.cols + c];
                        fresh.v[r * fresh.cols + c] = mo.v[r * mo.cols + c];
                    }
            }
            mo = std::move(fresh);
        }
        const auto& g = t.grad();
        Tensor handle = t;  // shared storage; gives mutable access
        auto& w = handle.mut_data();
        for (size_t i = 0; i < w.size(); ++i) {
            mo.m[i] = p_.beta1 * mo.m[i] + (1.0 - p_.beta1) * g[i];
            mo.v[i] = p_.beta2 * mo.v[i] + (1.0 - p_.beta2) * g[i] * g[i];
            double mhat = mo.m[i] / bc1;
            double vhat = mo.v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + p_.eps) + p_.weight_decay * w[i]);
        }
    }
}

void TrainConfig::validate() const {
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0))
        throw ConfigError("train.warmup_frac must be in (0, 1)");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    if (eval_every_steps < 1) throw ConfigError("train.eval_every_steps must be >= 1");
    if (lr_peak <= 0.0) throw ConfigError("train.lr_peak must be positive");
}

double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
    if (step < 0 || step > total_steps)
        throw ArgumentError("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
    double warmup = cfg.warmup_frac * static_cast<double>(total_steps);
    double s = static_cast<double>(step);
    if (s <= warmup) return warmup == 0.0 ? cfg.lr_peak : cfg.lr_peak * s / warmup;
    return cfg.lr_peak * (static_cast<double>(total_steps) - s) /
           (static_cast<double>(total_steps) - warmup);
}

Trainer::Trainer(SuperNetwork& net, const DataSplits& data, TrainConfig cfg)
    : net_(net), data_(data), cfg_(cfg) {
    cfg_.validate();
    if (data_.train.empty()) throw ArgumentError("Trainer: empty train split");
    if (data_.dev.empty()) throw ArgumentError("Trainer: empty dev split");
    spe_ = static_cast<int64_t>((data_.train.size() + static_cast<size_t>(cfg_.batch_size) - 1) /
                                static_cast<size_t>(cfg_.batch_size));
    total_steps_ = spe_ * cfg_.max_epochs;
}

Batch Trainer::next_batch() {
    if (perm_.empty() || batch_in_epoch_ >= spe_) {
        RandomSource rng(derive_seed(cfg_.seed, "epoch", static_cast<uint64_t>(epoch_)));
        perm_ = rng.permutation(static_cast<int>(data_.train.size()));
        ++epoch_;
        batch_in_epoch_ = 0;
    }
    size_t begin = static_cast<size_t>(batch_in_epoch_) * static_cast<size_t>(cfg_.batch_size);
    size_t end = std::min(begin + static_cast<size_t>(cfg_.batch_size), perm_.size());
    std::vector<int> idx(perm_.begin() + static_cast<std::ptrdiff_t>(begin),
                         perm_.begin() + static_cast<std::ptrdiff_t>(end));
    ++batch_in_epoch_;
    return batch_from(data_.train, idx);
}

double Trainer::eval_dev_loss() const { return mean_loss(net_, whole_batch(data_.dev)); }

void Trainer::run_eval(double train_loss, std::vector<EvalRecord>& segment) {
    EvalRecord rec;
    rec.step = step_;
    rec.train_loss = train_loss;
    rec.dev_loss = eval_dev_loss();
    rec.lr = step_ <= total_steps_ ? lr_at(step_, total_steps_, cfg_) : 0.0;
    rec.active_ranks_total = active_rank_count(net_).total;
    log_.push_back(rec);
    segment.push_back(rec);

    if (rec.dev_loss < best_dev_) {
        best_dev_ = rec.dev_loss;
        evals_since_improve_ = 0;
        best_snapshot_.clear();
        for (auto& [name, t] : trainable_named_params(net_))
            best_snapshot_.emplace(name, t.detached_copy());
    } else {
        ++evals_since_improve_;
        if (evals_since_improve_ >= cfg_.patience) stopped_ = true;
    }
}

SegmentResult Trainer::train_for(double epochs) {
    if (epochs < 0.0) throw ArgumentError("train_for: epochs must be >= 0");
    SegmentResult out;
    int64_t target = static_cast<int64_t>(std::ceil(epochs * static_cast<double>(spe_)));
    for (int64_t i = 0; i < target; ++i) {
        if (stopped_) break;
        Batch batch = next_batch();
        auto params = trainable_named_params(net_);
        for (auto& [name, t] : params) t.zero_grad();

        Tape tape;
        double loss_value = 0.0;
        {
            Tape::Scope scope(tape);
            Tensor loss = forward_loss(net_, batch);
            loss_value = loss.item();
            tape.backward(loss);
        }
        int64_t lr_step = std::min(step_ + 1, total_steps_);
        opt_.step(params, lr_at(lr_step, total_steps_, cfg_));
        for (auto& [name, t] : params) t.zero_grad();
        ++step_;
        ++out.steps_run;

        if (step_ % cfg_.eval_every_steps == 0) run_eval(loss_value, out.records);
    }
    out.stopped_early = stopped_;
    return out;
}

}  // namespace alora
