#include "alora/backbone.hpp"

#include <cmath>

#include "alora/adapter.hpp"
#include "alora/error.hpp"

namespace alora {

const char* to_string(ModuleKind k) {
    switch (k) {
        case ModuleKind::Query: return "query";
        case ModuleKind::Key: return "key";
        case ModuleKind::Value: return "value";
        case ModuleKind::Output: return "output";
        case ModuleKind::Gate: return "gate";
        case ModuleKind::Up: return "up";
        case ModuleKind::Down: return "down";
    }
    throw ArgumentError("unknown ModuleKind");
}

ModuleKind module_kind_from_string(const std::string& s) {
    for (int i = 0; i < kNumModuleKinds; ++i) {
        ModuleKind k = static_cast<ModuleKind>(i);
        if (s == to_string(k)) return k;
    }
    throw ArgumentError("unknown module kind '" + s + "'");
}

bool is_attention_kind(ModuleKind k) {
    return k == ModuleKind::Query || k == ModuleKind::Key || k == ModuleKind::Value ||
           k == ModuleKind::Output;
}

std::string to_string(const ModuleId& m) {
    return std::to_string(m.layer) + "." + to_string(m.kind);
}

std::string to_string(const RankId& r) {
    return to_string(r.module) + "[" + std::to_string(r.index) + "]";
}

void ModelConfig::validate() const {
    if (n_layers <= 0 || d <= 0 || d_ff <= 0 || n_heads <= 0 || vocab_size <= 0 ||
        max_seq_len <= 0 || n_classes <= 1)
        throw ConfigError("model: all dimensions must be positive (n_classes > 1)");
    if (d % n_heads != 0)
        throw ConfigError("model: d = " + std::to_string(d) + " not divisible by n_heads = " +
                          std::to_string(n_heads));
    if (d_ff <= d)
        throw ConfigError("model: d_ff = " + std::to_string(d_ff) +
                          " must exceed d = " + std::to_string(d));
}

namespace {

// Projection with an optional adapter delta on the same input.
Tensor project(const Tensor& x, const Tensor& w, const AloraAdapter* ad, const ForwardCtx& ctx) {
    Tensor y = matmul(x, w);
    if (ad == nullptr || ad->rank() == 0) return y;
    Tensor delta = ctx.relaxed_gates ? adapter_delta_relaxed(x, *ad) : adapter_delta(x, *ad, ctx.mask);
    return add(y, delta);
}

void require_kinds(const AdapterSet& adapters, bool attention, const char* where) {
    for (int i = 0; i < kNumModuleKinds; ++i) {
        const AloraAdapter* a = adapters[i];
        if (a == nullptr) continue;
        ModuleKind k = static_cast<ModuleKind>(i);
        if (is_attention_kind(k) != attention)
            throw ConfigError(std::string(where) + ": adapter for '" + to_string(k) +
                              "' attached to the wrong submodule");
        if (a->id.kind != k)
            throw ConfigError(std::string(where) + ": slot '" + to_string(k) +
                              "' holds adapter for '" + to_string(a->id.kind) + "'");
    }
}

}  // namespace

Tensor mha_forward(const Tensor& x, const BlockWeights& w, const AdapterSet& adapters,
                   int n_heads, const ForwardCtx& ctx) {
    size_t d = w.wq.rows();
    if (x.cols() != d)
        throw DimensionError("mha_forward: input width " + std::to_string(x.cols()) +
                             " does not match d = " + std::to_string(d));
    require_kinds(adapters, /*attention=*/true, "mha_forward");

    auto slot = [&](ModuleKind k) { return adapters[static_cast<int>(k)]; };
    Tensor q = project(x, w.wq, slot(ModuleKind::Query), ctx);
    Tensor k = project(x, w.wk, slot(ModuleKind::Key), ctx);
    Tensor v = project(x, w.wv, slot(ModuleKind::Value), ctx);

    size_t dh = d / static_cast<size_t>(n_heads);
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor heads;
    for (int h = 0; h < n_heads; ++h) {
        size_t off = static_cast<size_t>(h) * dh;
        Tensor qh = slice_cols(q, off, dh);
        Tensor kh = slice_cols(k, off, dh);
        Tensor vh = slice_cols(v, off, dh);
        Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_dh));
        Tensor oh = matmul(attn, vh);
        heads = (h == 0) ? oh : concat_cols(heads, oh);
    }
    return project(heads, w.wo, slot(ModuleKind::Output), ctx);
}

Tensor ffn_forward(const Tensor& x, const BlockWeights& w, const AdapterSet& adapters,
                   const ForwardCtx& ctx) {
    size_t d = w.wg.rows();
    if (x.cols() != d)
        throw DimensionError("ffn_forward: input width " + std::to_string(x.cols()) +
                             " does not match d = " + std::to_string(d));
    require_kinds(adapters, /*attention=*/false, "ffn_forward");

    auto slot = [&](ModuleKind k) { return adapters[static_cast<int>(k)]; };
    Tensor gate = project(x, w.wg, slot(ModuleKind::Gate), ctx);
    Tensor up = project(x, w.wu, slot(ModuleKind::Up), ctx);
    Tensor act = mul(gelu(gate), up);
    return project(act, w.wd, slot(ModuleKind::Down), ctx);
}

}  // namespace alora
