#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "alora/adapter.hpp"
#include "alora/data.hpp"
#include "alora/supernet.hpp"

namespace alora {

// Detailed recipe for a synthetic task with known ground truth: a frozen
// teacher whose weights are the base weights plus planted low-rank deltas
// of the given per-(layer, kind) ranks.
struct TeacherSpec {
    ModelConfig model;
    std::vector<std::array<int, kNumModuleKinds>> true_ranks;  // one array per layer
    double noise = 0.0;      // label corruption probability
    int dataset_size = 2000;
    int seq_len = 10;
    uint64_t seed = 0;

    void validate() const;
};

struct TeacherTask {
    TeacherSpec spec;
    SuperNetwork base;     // what the student starts from (no deltas)
    SuperNetwork teacher;  // base + planted deltas; label source
    Dataset data;

    // Fresh student: the base backbone plus rank-r_init adapters.
    SuperNetwork make_student(int r_init, uint64_t adapter_seed) const;
};

TeacherTask gen_teacher_task(const TeacherSpec& spec);

// Fraction of examples where the net's argmax class matches the label.
double agreement(const SuperNetwork& net, const Dataset& data);

// Builds a brand-new network with masked and pruned ranks physically
// deleted (columns of W_A / rows of W_B removed) instead of gated.
// Validates the gate-mask evaluation path; capped at 16 total ranks.
SuperNetwork physical_ablation_oracle(const SuperNetwork& net, const GateMask& mask);
SuperNetwork physical_ablation_without_rank(const SuperNetwork& net, const RankId& r);
SuperNetwork physical_ablation_only_rank(const SuperNetwork& net, const RankId& r);

struct RecoveryScore {
    double score = 0.5;  // (spearman + 1) / 2
    bool degenerate = false;
};

// Spearman correlation between final per-module active ranks and the
// planted true ranks, mapped to [0, 1].
RecoveryScore rank_recovery_metric(const std::map<ModuleId, int>& final_ranks,
                                   const TeacherSpec& spec);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace alora
