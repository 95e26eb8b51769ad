#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "alora/scoring.hpp"
#include "alora/supernet.hpp"
#include "alora/trainer.hpp"

namespace alora {

struct AllocationConfig {
    int R_target = 112;     // network-wide rank budget
    int r_init = 8;         // per-module initial rank; R_target / (n_layers * 7)
    int n_per_round = 7;    // ranks pruned (and regrown) per round
    int N_A_max = 8;        // allocation rounds
    double K1_epochs = 1.0;
    double K2_epochs = 0.25;
    int b_val = 32;

    void validate(const ModelConfig& model) const;  // throws ConfigError
};

// Record of one allocation round: what was pruned, what grew where, and
// the score table the decisions came from.
struct AllocationPlan {
    int round = 0;
    std::vector<RankId> prune_set;        // sorted by (layer, kind, index)
    std::map<ModuleId, int> grow_map;
    std::string table_csv;                // relative path, filled on export
    ImportanceTable table;
};

// The n globally lowest-scoring active ranks. Ties break by lower
// module_avg, then lower layer, module, rank index. n = 0 gives {}.
std::vector<RankId> select_prune_set(const ImportanceTable& table, int n);

// Distributes n new ranks over the modules, "as uniformly as possible":
// each gets floor(n/k), the n mod k remainders go to the highest-avg
// modules. Input must be ordered by module_avg descending.
std::map<ModuleId, int> distribute_growth(
    const std::vector<std::pair<ModuleId, double>>& unpruned_by_avg_desc, int n);

struct BudgetReport {
    std::map<ModuleId, int> per_module;
    int total = 0;
};

// Asserts total active ranks <= R_target (InvariantError otherwise) and
// returns the per-module allocation vector.
BudgetReport budget_check(const SuperNetwork& net, const AllocationConfig& cfg);

struct RunResult {
    std::vector<AllocationPlan> plans;
    std::vector<EvalRecord> log;
    double final_dev_loss = 0.0;
    double best_dev_loss = 0.0;
    int64_t total_steps = 0;
    bool stopped_early = false;
};

// Algorithm: train K1 epochs with gates frozen, then up to N_A rounds of
// {score on a fresh B_val; prune the n lowest; grow un-pruned modules if
// any module escaped pruning; recover-train K2 epochs}. Stops early on
// the trainer's early-stopping signal. The net must be freshly
// initialized (rank r_init everywhere, all gates 1).
RunResult run_allocation(SuperNetwork& net, const AllocationConfig& acfg,
                         const TrainConfig& tcfg, const DataSplits& data, ScorerKind scorer,
                         uint64_t seed);

// Reapplies a recorded plan's structural changes (prune + grow). Grown
// weights are redrawn from grow_seed; the gate configuration is exactly
// reproduced, which is what plan replay verifies.
void apply_plan_structure(SuperNetwork& net, const AllocationPlan& plan, uint64_t grow_seed);

}  // namespace alora
