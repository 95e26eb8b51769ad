#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "alora/bench.hpp"
#include "alora/random.hpp"
#include "alora/supernet.hpp"
#include "oracles.hpp"

using namespace alora;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d = 8;
    cfg.d_ff = 12;
    cfg.n_heads = 2;
    cfg.vocab_size = 17;
    cfg.max_seq_len = 6;
    cfg.n_classes = 3;
    return cfg;
}

AloraAdapter dense_adapter(ModuleId id, size_t d_in, size_t d_out, int r, uint64_t seed) {
    RandomSource rng(seed);
    AloraAdapter ad = make_adapter(id, d_in, d_out, r, rng);
    for (auto& v : ad.b.mut_data()) v = rng.normal(0.0, 0.3);
    return ad;
}

Batch random_batch(const ModelConfig& cfg, int n, int len, uint64_t seed) {
    RandomSource rng(seed);
    Batch b;
    for (int i = 0; i < n; ++i) {
        std::vector<int> toks(len);
        for (auto& t : toks) t = rng.uniform_int(0, cfg.vocab_size - 1);
        b.tokens.push_back(toks);
        b.labels.push_back(rng.uniform_int(0, cfg.n_classes - 1));
    }
    return b;
}

void randomize_adapters(SuperNetwork& net, uint64_t seed, double stddev = 0.2) {
    RandomSource rng(seed);
    for (auto& layer : net.adapters)
        for (auto& ad : layer)
            for (auto& v : ad.b.mut_data()) v = rng.normal(0.0, stddev);
}

}  // namespace

TEST_CASE("all gates zero annihilate the delta") {
    AloraAdapter ad = dense_adapter({0, ModuleKind::Query}, 5, 5, 3, 1);
    prune_ranks(ad, {0, 1, 2});
    Tensor x = Tensor::from_data({1, 2, 3, 4, 5}, 1, 5);
    Tensor d = adapter_delta(x, ad);
    for (double v : d.data()) CHECK(v == 0.0);
}

TEST_CASE("rank-1 delta equals the dense outer-product computation") {
    AloraAdapter ad = dense_adapter({0, ModuleKind::Key}, 4, 6, 1, 2);
    // x = e_i picks out row i of A; the delta must be A[i,0] * B[0,:].
    for (size_t i = 0; i < 4; ++i) {
        std::vector<double> unit(4, 0.0);
        unit[i] = 1.0;
        Tensor x = Tensor::from_data(unit, 1, 4);
        Tensor d = adapter_delta(x, ad);
        for (size_t j = 0; j < 6; ++j)
            CHECK(d.at(0, j) == doctest::Approx(ad.a.at(i, 0) * ad.b.at(0, j)).epsilon(1e-12));
    }
    // Full dense check: delta(x) == x * (A diag(g) B).
    RandomSource rng(3);
    std::vector<double> xv(2 * 4);
    for (auto& v : xv) v = rng.normal(0.0, 1.0);
    Tensor x = Tensor::from_data(xv, 2, 4);
    auto ag = ad.a.data();  // r = 1, gate 1: dense product A*B
    auto dense = oracles::dense_matmul(ag, ad.b.data(), 4, 1, 6);
    auto expect = oracles::dense_matmul(xv, dense, 2, 4, 6);
    Tensor got = adapter_delta(x, ad);
    for (size_t i = 0; i < expect.size(); ++i)
        CHECK(got.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("masking rank j equals physically deleting it") {
    ModelConfig cfg = tiny_config();
    SuperNetwork net = build_supernet(cfg, 1, 5);  // 14 ranks total, within oracle guard
    randomize_adapters(net, 7);
    Batch batch = random_batch(cfg, 4, 5, 9);

    RankId target{{1, ModuleKind::Up}, 0};
    GateMask mask = GateMask::zero_single(target);
    SuperNetwork oracle_net = physical_ablation_oracle(net, mask);

    auto masked = per_example_losses(net, batch, &mask);
    auto physical = per_example_losses(oracle_net, batch);
    for (size_t i = 0; i < masked.size(); ++i) CHECK(std::fabs(masked[i] - physical[i]) < 1e-12);
}

TEST_CASE("mask referencing an out-of-range rank is an index error") {
    AloraAdapter ad = dense_adapter({0, ModuleKind::Query}, 4, 4, 2, 11);
    GateMask mask = GateMask::zero_single(RankId{{0, ModuleKind::Query}, 2});
    Tensor x = Tensor::zeros(1, 4);
    CHECK_THROWS_AS(adapter_delta(x, ad, &mask), IndexError);
}

TEST_CASE("masks partition the gates") {
    ModelConfig cfg = tiny_config();
    SuperNetwork net = build_supernet(cfg, 2, 13);
    prune_ranks(net.adapter({0, ModuleKind::Gate}), {1});
    auto universe = active_rank_ids(net);

    GateMask m;
    RandomSource rng(17);
    for (const RankId& r : universe)
        if (rng.uniform() < 0.4) m.zero(r);
    GateMask comp = m.complemented_over(universe);

    for (auto& layer : net.adapters)
        for (auto& ad : layer) {
            auto g0 = ad.effective_gates(nullptr);
            auto g1 = ad.effective_gates(&m);
            auto g2 = ad.effective_gates(&comp);
            for (size_t i = 0; i < g0.size(); ++i) CHECK(g1[i] + g2[i] == g0[i]);
        }
}

TEST_CASE("prune semantics") {
    AloraAdapter ad = dense_adapter({0, ModuleKind::Value}, 6, 6, 8, 19);

    prune_ranks(ad, {});  // no-op
    CHECK(ad.active_ranks() == 8);

    prune_ranks(ad, {3});
    CHECK(ad.active_ranks() == 7);
    CHECK(ad.gates[3] == 0);

    // Forward equals an adapter physically holding only the 7 live ranks.
    RandomSource rng(23);
    std::vector<double> xv(2 * 6);
    for (auto& v : xv) v = rng.normal(0.0, 1.0);
    Tensor x = Tensor::from_data(xv, 2, 6);
    Tensor full = adapter_delta(x, ad);

    AloraAdapter compact = dense_adapter({0, ModuleKind::Value}, 6, 6, 7, 999);
    {
        auto& av = compact.a.mut_data();
        auto& bv = compact.b.mut_data();
        size_t cj = 0;
        for (size_t j = 0; j < 8; ++j) {
            if (j == 3) continue;
            for (size_t i = 0; i < 6; ++i) av[i * 7 + cj] = ad.a.at(i, j);
            for (size_t c = 0; c < 6; ++c) bv[cj * 6 + c] = ad.b.at(j, c);
            ++cj;
        }
    }
    Tensor trimmed = adapter_delta(x, compact);
    for (size_t i = 0; i < full.size(); ++i)
        CHECK(std::fabs(full.data()[i] - trimmed.data()[i]) < 1e-12);

    CHECK_THROWS_AS(prune_ranks(ad, {3}), StateError);  // already dead
    CHECK_THROWS_AS(prune_ranks(ad, {8}), IndexError);

    prune_ranks(ad, {0, 1, 2, 4, 5, 6, 7});
    Tensor dead = adapter_delta(x, ad);
    for (double v : dead.data()) CHECK(v == 0.0);
}

TEST_CASE("growth is a semantic no-op and preserves old parameters") {
    ModelConfig cfg = tiny_config();
    SuperNetwork net = build_supernet(cfg, 8, 29);
    randomize_adapters(net, 31);
    Batch batch = random_batch(cfg, 4, 5, 37);
    auto before = per_example_losses(net, batch);

    AloraAdapter& ad = net.adapter({0, ModuleKind::Query});
    std::vector<double> old_a = ad.a.data();
    RandomSource rng(41);
    grow_ranks(ad, 2, rng);

    CHECK(ad.rank() == 10);
    CHECK(ad.active_ranks() == 10);
    for (size_t i = 0; i < 8; ++i)
        for (size_t j = 0; j < 8; ++j) CHECK(ad.a.at(i, j) == old_a[i * 8 + j]);
    for (size_t j = 0; j < 8; ++j) CHECK(ad.b.at(8, j) == 0.0);  // new rows zero

    auto after = per_example_losses(net, batch);
    for (size_t i = 0; i < before.size(); ++i) CHECK(std::fabs(before[i] - after[i]) < 1e-12);

    grow_ranks(ad, 3, rng);
    CHECK(ad.rank() == 13);
    CHECK_THROWS_AS(grow_ranks(ad, 0, rng), ArgumentError);
}

TEST_CASE("merge_into_base") {
    AloraAdapter ad = dense_adapter({1, ModuleKind::Down}, 5, 4, 3, 43);
    RandomSource rng(47);
    std::vector<double> wv(5 * 4);
    for (auto& v : wv) v = rng.normal(0.0, 1.0);
    Tensor w = Tensor::from_data(wv, 5, 4);

    SUBCASE("all gates zero returns W exactly") {
        prune_ranks(ad, {0, 1, 2});
        Tensor merged = merge_into_base(ad, w);
        for (size_t i = 0; i < wv.size(); ++i) CHECK(merged.data()[i] == wv[i]);
    }

    SUBCASE("merged equals W + A diag(g) B against dense reference") {
        prune_ranks(ad, {1});
        Tensor merged = merge_into_base(ad, w);
        std::vector<double> ag = ad.a.data();
        for (size_t i = 0; i < 5; ++i) ag[i * 3 + 1] = 0.0;  // gate 1 dead
        auto delta = oracles::dense_matmul(ag, ad.b.data(), 5, 3, 4);
        for (size_t i = 0; i < wv.size(); ++i)
            CHECK(merged.data()[i] == doctest::Approx(wv[i] + delta[i]).epsilon(1e-12));
        CHECK(w.data()[0] == wv[0]);  // base untouched
    }

    SUBCASE("second merge is refused by the merged flag") {
        (void)merge_into_base(ad, w);
        CHECK_THROWS_AS(merge_into_base(ad, w), StateError);
    }

    SUBCASE("shape mismatch") {
        Tensor bad = Tensor::zeros(4, 4);
        CHECK_THROWS_AS(merge_into_base(ad, bad), DimensionError);
    }
}

TEST_CASE("merged dense network forward equals adapter form to 1e-9") {
    ModelConfig cfg = tiny_config();
    SuperNetwork net = build_supernet(cfg, 4, 53);
    randomize_adapters(net, 59);
    prune_ranks(net.adapter({0, ModuleKind::Up}), {2});
    Batch batch = random_batch(cfg, 6, 5, 61);
    auto adapter_form = per_example_losses(net, batch);

    SuperNetwork dense = clone_network(net);
    for (int layer = 0; layer < cfg.n_layers; ++layer)
        for (int k = 0; k < kNumModuleKinds; ++k) {
            ModuleKind kind = static_cast<ModuleKind>(k);
            AloraAdapter& ad = dense.adapters[layer][k];
            BlockWeights& bw = dense.blocks[layer];
            Tensor* slot = nullptr;
            switch (kind) {
                case ModuleKind::Query: slot = &bw.wq; break;
                case ModuleKind::Key: slot = &bw.wk; break;
                case ModuleKind::Value: slot = &bw.wv; break;
                case ModuleKind::Output: slot = &bw.wo; break;
                case ModuleKind::Gate: slot = &bw.wg; break;
                case ModuleKind::Up: slot = &bw.wu; break;
                case ModuleKind::Down: slot = &bw.wd; break;
            }
            *slot = merge_into_base(ad, *slot);
            // Drop the adapter: rank 0.
            auto [din, dout] = adapter_dims(kind, cfg);
            RandomSource rng(0);
            ad = make_adapter(ModuleId{layer, kind}, din, dout, 0, rng);
        }
    auto dense_form = per_example_losses(dense, batch);
    for (size_t i = 0; i < adapter_form.size(); ++i)
        CHECK(std::fabs(adapter_form[i] - dense_form[i]) < 1e-9);
}

TEST_CASE("merge delta has numerical rank at most the active count") {
    AloraAdapter ad = dense_adapter({0, ModuleKind::Output}, 6, 6, 4, 67);
    prune_ranks(ad, {1, 3});  // 2 active ranks remain
    Tensor w = Tensor::zeros(6, 6);
    Tensor merged = merge_into_base(ad, w);
    auto sv = oracles::singular_values(merged.data(), 6, 6);
    CHECK(sv[0] > 1e-6);
    CHECK(sv[1] > 1e-12);
    for (size_t i = 2; i < sv.size(); ++i) CHECK(sv[i] < 1e-10);
}

TEST_CASE("active_rank_count bookkeeping") {
    ModelConfig cfg = tiny_config();
    SuperNetwork net = build_supernet(cfg, 8, 71);
    RankCounts rc = active_rank_count(net);
    CHECK(rc.total == 2 * 7 * 8);  // fresh: 112
    CHECK(rc.per_module.size() == 14);
    for (auto& [id, n] : rc.per_module) CHECK(n == 8);

    // Prune 14, grow 14 elsewhere: total conserved.
    for (int layer = 0; layer < 2; ++layer) {
        prune_ranks(net.adapter({layer, ModuleKind::Query}), {0, 1, 2, 3, 4, 5, 6});
    }
    CHECK(active_rank_count(net).total == 98);
    RandomSource rng(73);
    grow_ranks(net.adapter({0, ModuleKind::Key}), 7, rng);
    grow_ranks(net.adapter({1, ModuleKind::Down}), 7, rng);
    CHECK(active_rank_count(net).total == 112);
}

TEST_CASE("gate-mask equivalence for random configurations") {
    ModelConfig cfg = tiny_config();
    SuperNetwork net = build_supernet(cfg, 1, 79);  // 14 ranks
    randomize_adapters(net, 83);
    Batch batch = random_batch(cfg, 3, 4, 89);
    RandomSource rng(97);
    for (int trial = 0; trial < 8; ++trial) {
        GateMask mask;
        for (const RankId& r : active_rank_ids(net))
            if (rng.uniform() < 0.5) mask.zero(r);
        SuperNetwork oracle_net = physical_ablation_oracle(net, mask);
        auto a = per_example_losses(net, batch, &mask);
        auto b = per_example_losses(oracle_net, batch);
        for (size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(a[i] - b[i]) < 1e-12);
    }
}
