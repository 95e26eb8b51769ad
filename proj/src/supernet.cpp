#include "alora/supernet.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "alora/error.hpp"

namespace alora {

namespace {

Tensor gaussian(RandomSource& rng, size_t rows, size_t cols, double stddev) {
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return Tensor::from_data(std::move(v), rows, cols);
}

void hash_doubles(uint64_t& h, const std::vector<double>& v) {
    for (double d : v) {
        uint64_t bits = std::bit_cast<uint64_t>(d);
        h ^= bits;
        h *= 0x100000001b3ull;
        h ^= h >> 29;
    }
}

void hash_ints(uint64_t& h, const std::vector<int>& v) {
    for (int i : v) {
        h ^= static_cast<uint64_t>(static_cast<int64_t>(i));
        h *= 0x100000001b3ull;
    }
}

}  // namespace

AloraAdapter& SuperNetwork::adapter(const ModuleId& m) {
    return adapters.at(static_cast<size_t>(m.layer))[static_cast<size_t>(m.kind)];
}

const AloraAdapter& SuperNetwork::adapter(const ModuleId& m) const {
    return adapters.at(static_cast<size_t>(m.layer))[static_cast<size_t>(m.kind)];
}

Tensor SuperNetwork::forward_logits(const std::vector<int>& tokens, const ForwardCtx& ctx) const {
    if (tokens.empty()) throw ArgumentError("forward_logits: empty token sequence");
    if (tokens.size() > static_cast<size_t>(cfg.max_seq_len))
        throw ArgumentError("forward_logits: sequence length " + std::to_string(tokens.size()) +
                            " exceeds max_seq_len = " + std::to_string(cfg.max_seq_len));
    Tensor h = embedding_rows(tok_embed, tokens);
    for (size_t layer = 0; layer < blocks.size(); ++layer) {
        const BlockWeights& w = blocks[layer];
        const auto& layer_adapters = adapters[layer];
        AdapterSet attn{};
        AdapterSet ffn{};
        for (int k = 0; k < kNumModuleKinds; ++k) {
            const AloraAdapter* ad = &layer_adapters[static_cast<size_t>(k)];
            if (is_attention_kind(static_cast<ModuleKind>(k)))
                attn[static_cast<size_t>(k)] = ad;
            else
                ffn[static_cast<size_t>(k)] = ad;
        }
        h = add(h, mha_forward(layernorm(h, w.ln1_gamma, w.ln1_beta), w, attn, cfg.n_heads, ctx));
        h = add(h, ffn_forward(layernorm(h, w.ln2_gamma, w.ln2_beta), w, ffn, ctx));
    }
    Tensor pooled = mean_rows(layernorm(h, final_gamma, final_beta));
    return add(matmul(pooled, head_w), head_b);
}

Tensor forward_loss(const SuperNetwork& net, const Batch& batch, const ForwardCtx& ctx) {
    if (batch.size() == 0) throw ArgumentError("forward_loss: empty batch");
    std::vector<Tensor> rows;
    rows.reserve(batch.size());
    for (const auto& tokens : batch.tokens) rows.push_back(net.forward_logits(tokens, ctx));
    return softmax_cross_entropy(concat_rows(rows), batch.labels);
}

std::vector<double> per_example_losses(const SuperNetwork& net, const Batch& batch,
                                       const GateMask* mask) {
    ForwardCtx ctx{mask, false};
    std::vector<double> out(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        Tensor logits = net.forward_logits(batch.tokens[i], ctx);
        out[i] = softmax_cross_entropy(logits, {batch.labels[i]}).item();
    }
    return out;
}

double mean_loss(const SuperNetwork& net, const Batch& batch, const GateMask* mask) {
    auto losses = per_example_losses(net, batch, mask);
    double s = 0.0;
    for (double l : losses) s += l;
    return s / static_cast<double>(losses.size());
}

SuperNetwork build_backbone_only(const ModelConfig& cfg, uint64_t init_seed) {
    cfg.validate();
    RandomSource rng(init_seed);
    size_t d = static_cast<size_t>(cfg.d), dff = static_cast<size_t>(cfg.d_ff);
    double sd = 1.0 / std::sqrt(static_cast<double>(d));
    double sdff = 1.0 / std::sqrt(static_cast<double>(dff));

    SuperNetwork net;
    net.cfg = cfg;
    net.tok_embed = gaussian(rng, static_cast<size_t>(cfg.vocab_size), d, 1.0);
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        BlockWeights w;
        w.wq = gaussian(rng, d, d, sd);
        w.wk = gaussian(rng, d, d, sd);
        w.wv = gaussian(rng, d, d, sd);
        w.wo = gaussian(rng, d, d, sd);
        w.wg = gaussian(rng, d, dff, sd);
        w.wu = gaussian(rng, d, dff, sd);
        w.wd = gaussian(rng, dff, d, sdff);
        w.ln1_gamma = Tensor::full(1, d, 1.0);
        w.ln1_beta = Tensor::zeros(1, d);
        w.ln2_gamma = Tensor::full(1, d, 1.0);
        w.ln2_beta = Tensor::zeros(1, d);
        net.blocks.push_back(std::move(w));
    }
    net.final_gamma = Tensor::full(1, d, 1.0);
    net.final_beta = Tensor::zeros(1, d);
    net.head_w = gaussian(rng, d, static_cast<size_t>(cfg.n_classes), 0.02);
    net.head_w.set_requires_grad(true);
    net.head_b = Tensor::zeros(1, static_cast<size_t>(cfg.n_classes), /*requires_grad=*/true);

    net.adapters.resize(static_cast<size_t>(cfg.n_layers));
    for (int layer = 0; layer < cfg.n_layers; ++layer)
        for (int k = 0; k < kNumModuleKinds; ++k) {
            ModuleKind kind = static_cast<ModuleKind>(k);
            auto [din, dout] = adapter_dims(kind, cfg);
            net.adapters[static_cast<size_t>(layer)][static_cast<size_t>(k)] =
                make_adapter(ModuleId{layer, kind}, din, dout, 0, rng);
        }
    return net;
}

SuperNetwork build_supernet(const ModelConfig& cfg, int r_init, uint64_t init_seed) {
    if (r_init < 0) throw ArgumentError("build_supernet: r_init must be >= 0");
    SuperNetwork net = build_backbone_only(cfg, init_seed);
    RandomSource rng(derive_seed(init_seed, "adapters"));
    for (int layer = 0; layer < cfg.n_layers; ++layer)
        for (int k = 0; k < kNumModuleKinds; ++k) {
            ModuleKind kind = static_cast<ModuleKind>(k);
            auto [din, dout] = adapter_dims(kind, cfg);
            net.adapters[static_cast<size_t>(layer)][static_cast<size_t>(k)] =
                make_adapter(ModuleId{layer, kind}, din, dout, r_init, rng);
        }
    return net;
}

SuperNetwork clone_network(const SuperNetwork& net) {
    SuperNetwork out;
    out.cfg = net.cfg;
    out.tok_embed = net.tok_embed.detached_copy();
    for (const BlockWeights& w : net.blocks) {
        BlockWeights c;
        c.wq = w.wq.detached_copy();
        c.wk = w.wk.detached_copy();
        c.wv = w.wv.detached_copy();
        c.wo = w.wo.detached_copy();
        c.wg = w.wg.detached_copy();
        c.wu = w.wu.detached_copy();
        c.wd = w.wd.detached_copy();
        c.ln1_gamma = w.ln1_gamma.detached_copy();
        c.ln1_beta = w.ln1_beta.detached_copy();
        c.ln2_gamma = w.ln2_gamma.detached_copy();
        c.ln2_beta = w.ln2_beta.detached_copy();
        out.blocks.push_back(std::move(c));
    }
    out.final_gamma = net.final_gamma.detached_copy();
    out.final_beta = net.final_beta.detached_copy();
    out.head_w = net.head_w.detached_copy();
    out.head_b = net.head_b.detached_copy();
    out.adapters.resize(net.adapters.size());
    for (size_t layer = 0; layer < net.adapters.size(); ++layer)
        for (int k = 0; k < kNumModuleKinds; ++k) {
            const AloraAdapter& src = net.adapters[layer][static_cast<size_t>(k)];
            AloraAdapter& dst = out.adapters[layer][static_cast<size_t>(k)];
            dst.id = src.id;
            dst.a = src.a.detached_copy();
            dst.b = src.b.detached_copy();
            dst.gates = src.gates;
            dst.arch_logits = src.arch_logits.detached_copy();
            dst.merged = src.merged;
        }
    return out;
}

std::vector<RankId> active_rank_ids(const SuperNetwork& net) {
    std::vector<RankId> ids;
    for (const auto& layer : net.adapters)
        for (const AloraAdapter& ad : layer)
            for (int i = 0; i < ad.rank(); ++i)
                if (ad.gates[static_cast<size_t>(i)] == 1) ids.push_back(RankId{ad.id, i});
    return ids;
}

RankCounts active_rank_count(const SuperNetwork& net) {
    RankCounts rc;
    for (const auto& layer : net.adapters)
        for (const AloraAdapter& ad : layer) {
            int n = ad.active_ranks();
            rc.per_module[ad.id] = n;
            rc.total += n;
        }
    return rc;
}

std::vector<std::pair<std::string, Tensor>> trainable_named_params(SuperNetwork& net) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& layer : net.adapters)
        for (AloraAdapter& ad : layer) {
            if (ad.rank() == 0) continue;
            std::string base = "adapter." + to_string(ad.id);
            out.emplace_back(base + ".A", ad.a);
            out.emplace_back(base + ".B", ad.b);
        }
    out.emplace_back("head.w", net.head_w);
    out.emplace_back("head.b", net.head_b);
    return out;
}

uint64_t frozen_checksum(const SuperNetwork& net) {
    uint64_t h = 0xcbf29ce484222325ull;
    hash_doubles(h, net.tok_embed.data());
    for (const BlockWeights& w : net.blocks) {
        for (const Tensor* t : {&w.wq, &w.wk, &w.wv, &w.wo, &w.wg, &w.wu, &w.wd, &w.ln1_gamma,
                                &w.ln1_beta, &w.ln2_gamma, &w.ln2_beta})
            hash_doubles(h, t->data());
    }
    hash_doubles(h, net.final_gamma.data());
    hash_doubles(h, net.final_beta.data());
    return h;
}

uint64_t scoring_state_checksum(const SuperNetwork& net) {
    uint64_t h = frozen_checksum(net);
    for (const auto& layer : net.adapters)
        for (const AloraAdapter& ad : layer) {
            hash_doubles(h, ad.a.data());
            hash_doubles(h, ad.b.data());
            hash_ints(h, ad.gates);
        }
    return h;
}

}  // namespace alora
