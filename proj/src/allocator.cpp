#include "alora/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "alora/error.hpp"
#include "alora/random.hpp"

namespace alora {

void AllocationConfig::validate(const ModelConfig& model) const {
    if (R_target < 1) throw ConfigError("alloc.R_target must be >= 1");
    if (r_init < 1) throw ConfigError("alloc.r_init must be >= 1");
    if (n_per_round < 1) throw ConfigError("alloc.n_per_round must be >= 1");
    if (N_A_max < 0) throw ConfigError("alloc.N_A_max must be >= 0");
    if (K1_epochs < 0.0 || K2_epochs < 0.0)
        throw ConfigError("alloc.K1_epochs and alloc.K2_epochs must be >= 0");
    if (b_val < 1) throw ConfigError("alloc.b_val must be >= 1");
    int modules = model.n_layers * kNumModuleKinds;
    if (r_init * modules != R_target)
        throw ConfigError("alloc.r_init: R_target = " + std::to_string(R_target) +
                          " is not r_init * n_layers * 7 (= " + std::to_string(r_init) + " * " +
                          std::to_string(model.n_layers) + " * 7); exact division required");
}

std::vector<RankId> select_prune_set(const ImportanceTable& table, int n) {
    if (n < 0) throw ArgumentError("select_prune_set: n must be >= 0");
    if (n == 0) return {};
    if (static_cast<size_t>(n) > table.entries.size())
        throw ArgumentError("select_prune_set: n = " + std::to_string(n) + " exceeds " +
                            std::to_string(table.entries.size()) + " active ranks");
    std::vector<const ImportanceEntry*> order;
    order.reserve(table.entries.size());
    for (const ImportanceEntry& e : table.entries) order.push_back(&e);
    std::sort(order.begin(), order.end(), [&](const ImportanceEntry* x, const ImportanceEntry* y) {
        if (x->score != y->score) return x->score < y->score;
        double ax = table.module_avg.at(x->rank.module);
        double ay = table.module_avg.at(y->rank.module);
        if (ax != ay) return ax < ay;
        return x->rank < y->rank;
    });
    std::vector<RankId> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(order[static_cast<size_t>(i)]->rank);
    std::sort(out.begin(), out.end());
    return out;
}

std::map<ModuleId, int> distribute_growth(
    const std::vector<std::pair<ModuleId, double>>& unpruned_by_avg_desc, int n) {
    if (unpruned_by_avg_desc.empty())
        throw ArgumentError("distribute_growth: no unpruned modules");
    if (n < 0) throw ArgumentError("distribute_growth: n must be >= 0");
    for (size_t i = 1; i < unpruned_by_avg_desc.size(); ++i)
        if (unpruned_by_avg_desc[i - 1].second < unpruned_by_avg_desc[i].second)
            throw ArgumentError("distribute_growth: modules not ordered by descending avg");
    int k = static_cast<int>(unpruned_by_avg_desc.size());
    int base = n / k;
    int rem = n % k;
    std::map<ModuleId, int> out;
    for (int i = 0; i < k; ++i) {
        int count = base + (i < rem ? 1 : 0);
        if (count > 0) out[unpruned_by_avg_desc[static_cast<size_t>(i)].first] = count;
    }
    return out;
}

BudgetReport budget_check(const SuperNetwork& net, const AllocationConfig& cfg) {
    RankCounts rc = active_rank_count(net);
    if (rc.total > cfg.R_target)
        throw InvariantError("budget_check: " + std::to_string(rc.total) +
                             " active ranks exceed R_target = " + std::to_string(cfg.R_target));
    BudgetReport rep;
    rep.per_module = rc.per_module;
    rep.total = rc.total;
    return rep;
}

void apply_plan_structure(SuperNetwork& net, const AllocationPlan& plan, uint64_t grow_seed) {
    std::map<ModuleId, std::vector<int>> by_module;
    for (const RankId& r : plan.prune_set) by_module[r.module].push_back(r.index);
    for (auto& [id, idxs] : by_module) prune_ranks(net.adapter(id), idxs);
    RandomSource rng(grow_seed);
    for (const auto& [id, count] : plan.grow_map) grow_ranks(net.adapter(id), count, rng);
}

RunResult run_allocation(SuperNetwork& net, const AllocationConfig& acfg,
                         const TrainConfig& tcfg, const DataSplits& data, ScorerKind scorer,
                         uint64_t seed) {
    acfg.validate(net.cfg);
    for (const auto& layer : net.adapters)
        for (const AloraAdapter& ad : layer)
            if (ad.rank() != acfg.r_init || ad.active_ranks() != acfg.r_init)
                throw ArgumentError("run_allocation: net is not freshly initialized at r_init = " +
                                    std::to_string(acfg.r_init) + " (module " + to_string(ad.id) +
                                    ")");

    Trainer trainer(net, data, tcfg);
    RunResult res;

    // Gates stay frozen during all training; only AB-LoRA's ablation (or a
    // variant scorer) decides structure.
    trainer.train_for(acfg.K1_epochs);

    int expected_total = acfg.R_target;
    for (int round = 0; round < acfg.N_A_max; ++round) {
        if (trainer.stopped()) break;
        RankCounts counts = active_rank_count(net);
        if (acfg.n_per_round > counts.total) {
            // Cannot prune any further; allocation stops but the remaining
            // recovery training still runs.
            trainer.train_for(acfg.K2_epochs * static_cast<double>(acfg.N_A_max - round));
            break;
        }

        ValBatch bval = sample_val_batch(data.dev, acfg.b_val, derive_seed(seed, "b_val", static_cast<uint64_t>(round)),
                                         "round" + std::to_string(round));
        ScoringContext sctx;
        sctx.seed = derive_seed(seed, "scorer", static_cast<uint64_t>(round));
        sctx.relax_data = &data.train;
        sctx.relax_steps = static_cast<int>(
            std::ceil(acfg.K2_epochs * static_cast<double>(trainer.steps_per_epoch())));
        sctx.relax_batch_size = tcfg.batch_size;
        sctx.relax_lr = tcfg.lr_peak;

        AllocationPlan plan;
        plan.round = round;
        plan.table = score_all(net, bval, scorer, sctx);
        plan.prune_set = select_prune_set(plan.table, acfg.n_per_round);

        std::map<ModuleId, std::vector<int>> by_module;
        for (const RankId& r : plan.prune_set) by_module[r.module].push_back(r.index);
        for (auto& [id, idxs] : by_module) prune_ranks(net.adapter(id), idxs);

        // Growth goes to modules that kept every rank this round, by
        // descending average importance.
        std::vector<std::pair<ModuleId, double>> candidates;
        for (const auto& [id, avg] : plan.table.module_avg)
            if (by_module.find(id) == by_module.end()) candidates.emplace_back(id, avg);
        std::sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
            if (x.second != y.second) return x.second > y.second;
            return x.first < y.first;
        });

        if (!candidates.empty()) {
            plan.grow_map = distribute_growth(candidates, acfg.n_per_round);
            RandomSource grow_rng(derive_seed(seed, "grow", static_cast<uint64_t>(round)));
            for (const auto& [id, count] : plan.grow_map)
                grow_ranks(net.adapter(id), count, grow_rng);
        } else {
            expected_total -= acfg.n_per_round;
        }

        BudgetReport rep = budget_check(net, acfg);
        if (rep.total != expected_total)
            throw InvariantError("run_allocation: round " + std::to_string(round) + " left " +
                                 std::to_string(rep.total) + " active ranks, expected " +
                                 std::to_string(expected_total));
        res.plans.push_back(std::move(plan));

        trainer.train_for(acfg.K2_epochs);
    }

    res.log = trainer.log();
    res.final_dev_loss = trainer.eval_dev_loss();
    res.best_dev_loss = trainer.best_dev_loss();
    res.total_steps = trainer.global_step();
    res.stopped_early = trainer.stopped();
    return res;
}

}  // namespace alora
