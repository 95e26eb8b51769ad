#pragma once

#include <array>
#include <compare>
#include <string>

#include "alora/tensor.hpp"

namespace alora {

// The seven adapter attachment points of one LlaMA-style block: four
// attention projections and the three gated-FFN projections.
enum class ModuleKind : int {
    Query = 0,
    Key = 1,
    Value = 2,
    Output = 3,
    Gate = 4,
    Up = 5,
    Down = 6,
};

inline constexpr int kNumModuleKinds = 7;

const char* to_string(ModuleKind k);
ModuleKind module_kind_from_string(const std::string& s);
bool is_attention_kind(ModuleKind k);

struct ModuleId {
    int layer = 0;
    ModuleKind kind = ModuleKind::Query;
    auto operator<=>(const ModuleId&) const = default;
};

struct RankId {
    ModuleId module;
    int index = 0;
    auto operator<=>(const RankId&) const = default;
};

std::string to_string(const ModuleId& m);
std::string to_string(const RankId& r);

// Frozen projection weights of one block. d x d attention projections,
// d x d_ff gate/up, d_ff x d down, plus the two layernorm affine pairs.
struct BlockWeights {
    Tensor wq, wk, wv, wo;
    Tensor wg, wu;
    Tensor wd;
    Tensor ln1_gamma, ln1_beta;
    Tensor ln2_gamma, ln2_beta;
};

struct ModelConfig {
    int n_layers = 2;
    int d = 32;
    int d_ff = 86;
    int n_heads = 4;
    int vocab_size = 128;
    int max_seq_len = 16;
    int n_classes = 4;

    void validate() const;  // throws ConfigError
};

struct AloraAdapter;
class GateMask;

// Per-kind adapter attachment for one block; null means absent.
using AdapterSet = std::array<const AloraAdapter*, kNumModuleKinds>;

// Evaluation options threaded through the forward pass. relaxed_gates
// switches adapters to the continuous 2*sigmoid(arch_logit) gate form.
struct ForwardCtx {
    const GateMask* mask = nullptr;
    bool relaxed_gates = false;
};

// x' = MHA(xW_Q + dq(x), xW_K + dk(x), xW_V + dv(x)) W_O + do(...).
// Only Query/Key/Value/Output slots may be populated.
Tensor mha_forward(const Tensor& x, const BlockWeights& w, const AdapterSet& adapters,
                   int n_heads, const ForwardCtx& ctx = {});

// x' = (gelu(xW_G + dg(x)) * (xW_U + du(x))) W_D + dd(...).
// Only Gate/Up/Down slots may be populated.
Tensor ffn_forward(const Tensor& x, const BlockWeights& w, const AdapterSet& adapters,
                   const ForwardCtx& ctx = {});

}  // namespace alora
