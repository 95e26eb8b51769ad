#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "alora/adapter.hpp"
#include "alora/data.hpp"
#include "alora/supernet.hpp"

namespace alora {

struct ImportanceEntry {
    RankId rank;
    double score = 0.0;
};

// One score per active rank, plus per-module means over active ranks.
// Pruned ranks never appear.
struct ImportanceTable {
    std::vector<ImportanceEntry> entries;  // ordered by (layer, kind, index)
    std::map<ModuleId, double> module_avg;
    std::string batch_id;

    bool contains(const RankId& r) const;
    double score_of(const RankId& r) const;  // IndexError when absent
    void recompute_module_avg();
    void write_csv(const std::filesystem::path& path) const;
};

enum class ScorerKind { AbLora, Dnas, Sensitivity };

const char* to_string(ScorerKind k);
ScorerKind scorer_from_string(const std::string& s);

struct ScoringContext {
    // Fan-out cap for mask evaluations; 0 means use ALORA_THREADS or the
    // hardware count.
    int threads = 0;

    // DNAS relaxation phase inputs (ignored by the other scorers).
    const Dataset* relax_data = nullptr;
    int relax_steps = 0;
    int relax_batch_size = 16;
    double relax_lr = 1e-3;
    uint64_t seed = 0;
};

// S(masked net) = negative mean cross-entropy on the batch. Pure: no
// gradients, no state mutation.
double metric(const SuperNetwork& net, const GateMask& mask, const Batch& batch);

// IS(r) = S(M) - S(M\r) + S(M_r). M\r zeroes only r; M_r zeroes every
// other *active* rank (already-pruned ranks stay pruned).
double ab_lora_score(const SuperNetwork& net, const RankId& r, const Batch& batch);

// One backward pass; sum of |theta * dL/dtheta| over W_A column r and
// W_B row r.
double sensitivity_score(const SuperNetwork& net, const RankId& r, const Batch& batch);

// The Eq.-5 mapping alpha' = 2*sigmoid(arch_logit), read from current
// adapter state (1.0 for untrained logits).
double dnas_score(const SuperNetwork& net, const RankId& r);

// Trains a clone with continuous gates for ctx.relax_steps, alternating
// weight updates (first half of relax_data) with arch-logit updates
// (second half), then writes the trained logits back into net. Adapter
// weights, gates, and the head of net are untouched.
void run_relaxation_phase(SuperNetwork& net, const ScoringContext& ctx);

// One score per active rank. AbLora shares a single S(M) evaluation and
// runs 1 + 2*n_active metric calls; Dnas runs the relaxation phase first;
// Sensitivity uses one backward pass for the whole table.
ImportanceTable score_all(SuperNetwork& net, const ValBatch& bval, ScorerKind scorer,
                          const ScoringContext& ctx = {});

// Resolved fan-out: explicit count, else ALORA_THREADS, else hardware.
int scorer_thread_count(int requested);

}  // namespace alora
