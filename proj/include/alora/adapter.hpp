#pragma once

#include <map>
#include <vector>

#include "alora/backbone.hpp"
#include "alora/random.hpp"
#include "alora/tensor.hpp"

namespace alora {

// Temporary per-rank ablation for scoring. Never mutates adapter state;
// the forward pass multiplies each gate by the mask's verdict for it.
class GateMask {
public:
    GateMask() = default;

    static GateMask zero_single(const RankId& r);

    void zero(const RankId& r) { entries_[r] = true; }
    void keep(const RankId& r) { entries_[r] = false; }
    bool is_zeroed(const RankId& r) const;
    bool empty() const { return entries_.empty(); }
    size_t size() const { return entries_.size(); }

    // Explicit flip of every rank in the universe: zeroed become kept and
    // vice versa, so eff(g, m) + eff(g, ~m) == g for binary gates.
    GateMask complemented_over(const std::vector<RankId>& universe) const;

    const std::map<RankId, bool>& entries() const { return entries_; }

private:
    std::map<RankId, bool> entries_;  // true => zero
};

// The gated SVD-form LoRA module for one (layer, kind) position:
// delta(x) = x * W_A * diag(gates) * W_B. Gates are strictly binary here;
// arch_logits exist only for the DNAS variant scorer.
struct AloraAdapter {
    ModuleId id{};
    Tensor a;                  // d_in x r, trainable
    Tensor b;                  // r x d_out, trainable
    std::vector<int> gates;    // 0/1, one per physical rank
    Tensor arch_logits;        // 1 x r
    bool merged = false;

    int rank() const { return static_cast<int>(gates.size()); }
    int active_ranks() const;

    // gate_i * mask verdict, as a dense column-scale vector.
    std::vector<double> effective_gates(const GateMask* mask) const;
};

// W_A ~ N(0, 0.02^2), W_B = 0, gates all 1, arch_logits all 0.
AloraAdapter make_adapter(ModuleId id, size_t d_in, size_t d_out, int r, RandomSource& rng);

std::pair<size_t, size_t> adapter_dims(ModuleKind kind, const ModelConfig& cfg);

// x -> x*W_A, column scaling, -> *W_B; the dense d_in x d_out product is
// never materialized.
Tensor adapter_delta(const Tensor& x, const AloraAdapter& a, const GateMask* mask = nullptr);

// DNAS relaxation: columns scaled by gate_i * 2*sigmoid(arch_logit_i),
// differentiable in the logits.
Tensor adapter_delta_relaxed(const Tensor& x, const AloraAdapter& a);

// Permanently zeroes the listed gates. Weights stay in place; pruning is
// gating, not deletion. Pruning an already-zero gate is a StateError.
void prune_ranks(AloraAdapter& a, const std::vector<int>& ranks);

// Appends n_new ranks: Gaussian W_A columns (sigma 0.02), zero W_B rows,
// gates of 1, arch logits of 0. Existing parameters are bit-preserved.
void grow_ranks(AloraAdapter& a, int n_new, RandomSource& rng);

// Returns w + W_A*diag(gates)*W_B; w itself is untouched. Sets the
// adapter's merged flag and refuses a second merge.
Tensor merge_into_base(AloraAdapter& a, const Tensor& w);

}  // namespace alora
