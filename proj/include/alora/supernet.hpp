#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "alora/adapter.hpp"
#include "alora/backbone.hpp"
#include "alora/data.hpp"

namespace alora {

// Frozen backbone plus one adapter per (layer, kind) position and a
// trainable classification head. Read-only during evaluation; adapters
// are mutated only by the allocator between phases.
struct SuperNetwork {
    ModelConfig cfg;
    Tensor tok_embed;  // vocab x d, frozen
    std::vector<BlockWeights> blocks;
    Tensor final_gamma, final_beta;       // 1 x d, frozen
    Tensor head_w;                        // d x n_classes, trainable
    Tensor head_b;                        // 1 x n_classes, trainable
    std::vector<std::array<AloraAdapter, kNumModuleKinds>> adapters;

    AloraAdapter& adapter(const ModuleId& m);
    const AloraAdapter& adapter(const ModuleId& m) const;

    // Embeddings -> pre-layernorm residual blocks -> final layernorm ->
    // mean pooling -> linear head. Returns 1 x n_classes logits.
    Tensor forward_logits(const std::vector<int>& tokens, const ForwardCtx& ctx = {}) const;
};

// Differentiable mean cross-entropy over the batch.
Tensor forward_loss(const SuperNetwork& net, const Batch& batch, const ForwardCtx& ctx = {});

// Pure evaluation path: no tape, one loss per example.
std::vector<double> per_example_losses(const SuperNetwork& net, const Batch& batch,
                                       const GateMask* mask = nullptr);
double mean_loss(const SuperNetwork& net, const Batch& batch, const GateMask* mask = nullptr);

// Fresh network: random frozen backbone, zero-delta adapters of rank
// r_init everywhere, all gates 1.
SuperNetwork build_supernet(const ModelConfig& cfg, int r_init, uint64_t init_seed);

// Backbone only (adapters of rank 0); used for teachers and merge targets.
SuperNetwork build_backbone_only(const ModelConfig& cfg, uint64_t init_seed);

SuperNetwork clone_network(const SuperNetwork& net);

// Stable iteration order: layer ascending, kind in enum order.
std::vector<RankId> active_rank_ids(const SuperNetwork& net);

struct RankCounts {
    std::map<ModuleId, int> per_module;
    int total = 0;
};
RankCounts active_rank_count(const SuperNetwork& net);

// Trainable parameters with stable names ("adapter.{L}.{kind}.{A|B}",
// "head.w", "head.b"), in deterministic order.
std::vector<std::pair<std::string, Tensor>> trainable_named_params(SuperNetwork& net);

uint64_t frozen_checksum(const SuperNetwork& net);
// Adapter weights + gates + frozen weights; arch logits excluded (only
// the DNAS scorer trains those).
uint64_t scoring_state_checksum(const SuperNetwork& net);

}  // namespace alora
