#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "alora/bench.hpp"
#include "alora/random.hpp"
#include "alora/scoring.hpp"
#include "alora/trainer.hpp"

using namespace alora;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d = 16;
    cfg.d_ff = 24;
    cfg.n_heads = 2;
    cfg.vocab_size = 32;
    cfg.max_seq_len = 8;
    cfg.n_classes = 3;
    return cfg;
}

Batch random_batch(const ModelConfig& cfg, int n, uint64_t seed) {
    RandomSource rng(seed);
    Batch b;
    for (int i = 0; i < n; ++i) {
        std::vector<int> toks(6);
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

// Independent AB-LoRA oracle: every term evaluated on a physically
// reconstructed sub-network, never through the gate-mask path.
double oracle_ab_lora(const SuperNetwork& net, const RankId& r, const Batch& batch) {
    auto s_of = [&](const SuperNetwork& n) { return -mean_loss(n, batch); };
    double s_full = s_of(physical_ablation_oracle(net, GateMask{}));
    double s_without = s_of(physical_ablation_without_rank(net, r));
    double s_only = s_of(physical_ablation_only_rank(net, r));
    return s_full - s_without + s_only;
}

}  // namespace

TEST_CASE("metric is the negative mean cross-entropy and is pure") {
    SuperNetwork net = build_supernet(small_config(), 2, 3);
    randomize_adapters(net, 5);
    Batch batch = random_batch(net.cfg, 8, 7);

    double s = metric(net, GateMask{}, batch);
    CHECK(s == -mean_loss(net, batch));

    uint64_t before = scoring_state_checksum(net);
    double s2 = metric(net, GateMask{}, batch);
    CHECK(s == s2);  // bit-identical
    CHECK(scoring_state_checksum(net) == before);
}

TEST_CASE("masking a zero-delta rank leaves the metric unchanged") {
    SuperNetwork net = build_supernet(small_config(), 2, 9);
    randomize_adapters(net, 11);
    // Zero out W_B row 0 of one adapter: that rank contributes nothing.
    AloraAdapter& ad = net.adapter({0, ModuleKind::Up});
    for (size_t c = 0; c < ad.b.cols(); ++c) ad.b.mut_data()[c] = 0.0;

    Batch batch = random_batch(net.cfg, 8, 13);
    double base = metric(net, GateMask{}, batch);
    double masked = metric(net, GateMask::zero_single({{0, ModuleKind::Up}, 0}), batch);
    CHECK(std::fabs(base - masked) < 1e-12);
}

TEST_CASE("single-active-rank net forces IS = 2 S(M) - S(all zero)") {
    SuperNetwork net = build_supernet(small_config(), 1, 15);
    randomize_adapters(net, 17);
    // Keep exactly one active rank in the whole network.
    RankId keeper{{0, ModuleKind::Query}, 0};
    for (auto& layer : net.adapters)
        for (auto& ad : layer)
            if (!(ad.id == keeper.module)) prune_ranks(ad, {0});

    Batch batch = random_batch(net.cfg, 8, 19);
    double s_m = metric(net, GateMask{}, batch);
    GateMask all_zero = GateMask::zero_single(keeper);
    double s_zero = metric(net, all_zero, batch);
    double is = ab_lora_score(net, keeper, batch);
    CHECK(is == doctest::Approx(2.0 * s_m - s_zero).epsilon(1e-12));
}

TEST_CASE("zero-delta rank scores exactly S(M_r)") {
    SuperNetwork net = build_supernet(small_config(), 2, 21);
    randomize_adapters(net, 23);
    AloraAdapter& ad = net.adapter({0, ModuleKind::Key});
    for (size_t c = 0; c < ad.b.cols(); ++c) ad.b.mut_data()[c] = 0.0;  // row 0 dead

    Batch batch = random_batch(net.cfg, 8, 25);
    RankId r{{0, ModuleKind::Key}, 0};
    std::vector<RankId> active = active_rank_ids(net);
    GateMask only;
    for (const RankId& a : active)
        if (!(a == r)) only.zero(a);
    double s_only = metric(net, only, batch);
    CHECK(ab_lora_score(net, r, batch) == doctest::Approx(s_only).epsilon(1e-12));
}

TEST_CASE("ab-lora scores match the physical-reconstruction oracle") {
    SuperNetwork net = build_supernet(small_config(), 2, 27);  // 14 ranks, oracle-sized
    randomize_adapters(net, 29);
    prune_ranks(net.adapter({0, ModuleKind::Gate}), {1});
    Batch batch = random_batch(net.cfg, 8, 31);

    for (const RankId& r : active_rank_ids(net)) {
        double fast = ab_lora_score(net, r, batch);
        double slow = oracle_ab_lora(net, r, batch);
        CHECK(std::fabs(fast - slow) < 1e-10);
    }
}

TEST_CASE("ab_lora_score rejects pruned ranks") {
    SuperNetwork net = build_supernet(small_config(), 2, 33);
    prune_ranks(net.adapter({0, ModuleKind::Down}), {1});
    Batch batch = random_batch(net.cfg, 4, 35);
    CHECK_THROWS_AS(ab_lora_score(net, {{0, ModuleKind::Down}, 1}, batch), StateError);
    CHECK_THROWS_AS(ab_lora_score(net, {{0, ModuleKind::Down}, 7}, batch), IndexError);
}

TEST_CASE("score_all produces one entry per active rank with consistent averages") {
    ModelConfig cfg = small_config();
    cfg.n_layers = 2;
    SuperNetwork net = build_supernet(cfg, 8, 37);  // 112 ranks
    randomize_adapters(net, 39, 0.05);
    prune_ranks(net.adapter({1, ModuleKind::Value}), {2, 5});

    ValBatch bval{random_batch(cfg, 8, 41), "test"};
    ImportanceTable table = score_all(net, bval, ScorerKind::AbLora);
    CHECK(table.entries.size() == 110);
    CHECK(!table.contains({{1, ModuleKind::Value}, 2}));
    CHECK(table.batch_id == "test");

    // module_avg recomputable from entries.
    std::map<ModuleId, std::pair<double, int>> acc;
    for (const auto& e : table.entries) {
        acc[e.rank.module].first += e.score;
        acc[e.rank.module].second += 1;
    }
    for (const auto& [id, avg] : table.module_avg)
        CHECK(std::fabs(avg - acc[id].first / acc[id].second) < 1e-12);
}

TEST_CASE("score_all(ablora) matches the oracle table and is order-invariant") {
    SuperNetwork net = build_supernet(small_config(), 2, 43);
    randomize_adapters(net, 45);
    ValBatch bval{random_batch(net.cfg, 8, 47), "oracle"};

    ImportanceTable table = score_all(net, bval, ScorerKind::AbLora);
    for (const auto& e : table.entries) {
        CHECK(std::fabs(e.score - oracle_ab_lora(net, e.rank, bval.batch)) < 1e-10);
        // Enumeration-order independence: the standalone evaluation of a
        // single rank agrees with the batch loop.
        CHECK(std::fabs(e.score - ab_lora_score(net, e.rank, bval.batch)) < 1e-12);
    }
}

TEST_CASE("three-term and two-term forms rank identically") {
    // S(M) is constant per table, so dropping it must not change order.
    SuperNetwork net = build_supernet(small_config(), 2, 49);
    randomize_adapters(net, 51);
    Batch batch = random_batch(net.cfg, 8, 53);
    double s_m = metric(net, GateMask{}, batch);

    std::vector<RankId> active = active_rank_ids(net);
    std::vector<std::pair<double, RankId>> three, two;
    for (const RankId& r : active) {
        double is = ab_lora_score(net, r, batch);
        three.emplace_back(is, r);
        two.emplace_back(is - s_m, r);
    }
    std::sort(three.begin(), three.end());
    std::sort(two.begin(), two.end());
    for (size_t i = 0; i < three.size(); ++i) CHECK(three[i].second == two[i].second);
}

TEST_CASE("purity: no scorer changes weights, gates, or frozen tensors") {
    TeacherSpec spec;
    spec.model = small_config();
    spec.true_ranks = {{2, 1, 1, 1, 1, 1, 1}};
    spec.dataset_size = 160;
    spec.seq_len = 6;
    spec.seed = 55;
    TeacherTask task = gen_teacher_task(spec);
    SuperNetwork net = task.make_student(2, 57);
    randomize_adapters(net, 59, 0.05);
    DataSplits splits = split_dataset(task.data, 61);
    ValBatch bval = sample_val_batch(splits.dev, 8, 63, "purity");

    ScoringContext ctx;
    ctx.relax_data = &splits.train;
    ctx.relax_steps = 6;
    ctx.relax_batch_size = 8;
    ctx.relax_lr = 0.01;
    ctx.seed = 65;

    for (ScorerKind scorer : {ScorerKind::AbLora, ScorerKind::Dnas, ScorerKind::Sensitivity}) {
        uint64_t before = scoring_state_checksum(net);
        ImportanceTable table = score_all(net, bval, scorer, ctx);
        CHECK(table.entries.size() == active_rank_ids(net).size());
        CHECK(scoring_state_checksum(net) == before);
    }
}

TEST_CASE("dnas scores: untrained logits read 1.0, trained ones stay in (0,2) and move") {
    TeacherSpec spec;
    spec.model = small_config();
    spec.true_ranks = {{2, 1, 1, 1, 1, 1, 1}};
    spec.dataset_size = 160;
    spec.seq_len = 6;
    spec.seed = 67;
    TeacherTask task = gen_teacher_task(spec);
    SuperNetwork net = task.make_student(2, 69);
    DataSplits splits = split_dataset(task.data, 71);

    for (const RankId& r : active_rank_ids(net))
        CHECK(dnas_score(net, r) == doctest::Approx(1.0).epsilon(1e-15));

    ScoringContext ctx;
    ctx.relax_data = &splits.train;
    ctx.relax_steps = 30;
    ctx.relax_batch_size = 16;
    ctx.relax_lr = 0.02;
    ctx.seed = 73;
    ValBatch bval = sample_val_batch(splits.dev, 8, 75, "dnas");
    ImportanceTable table = score_all(net, bval, ScorerKind::Dnas, ctx);

    double max_move = 0.0;
    for (const auto& e : table.entries) {
        CHECK(e.score > 0.0);
        CHECK(e.score < 2.0);
        max_move = std::max(max_move, std::fabs(e.score - 1.0));
    }
    CHECK(max_move > 1e-3);

    // A second invocation continues from the persisted logits.
    for (const RankId& r : active_rank_ids(net))
        if (std::fabs(dnas_score(net, r) - 1.0) > 1e-3) return;
    FAIL("arch logits did not persist");
}

TEST_CASE("sensitivity scores are nonnegative; dead rank contributes zero from B") {
    SuperNetwork net = build_supernet(small_config(), 2, 77);
    randomize_adapters(net, 79);
    Batch batch = random_batch(net.cfg, 8, 81);

    ValBatch bval{batch, "sens"};
    ImportanceTable table = score_all(net, bval, ScorerKind::Sensitivity);
    for (const auto& e : table.entries) CHECK(e.score >= 0.0);

    // Zero W_A column and W_B row for one rank: |theta * g| sums to zero
    // on both sides regardless of gradient flow.
    AloraAdapter& ad = net.adapter({0, ModuleKind::Output});
    for (size_t i = 0; i < ad.a.rows(); ++i) ad.a.mut_data()[i * ad.a.cols() + 1] = 0.0;
    for (size_t c = 0; c < ad.b.cols(); ++c) ad.b.mut_data()[1 * ad.b.cols() + c] = 0.0;
    CHECK(sensitivity_score(net, {{0, ModuleKind::Output}, 1}, batch) == 0.0);
}

TEST_CASE("sensitivity matches a hand-computed |theta * grad| sum for rank 1") {
    // Rank-1 adapter, tiny net: compute dL/dA, dL/dB by finite differences
    // and compare the |theta*g| aggregation.
    SuperNetwork net = build_supernet(small_config(), 1, 83);
    randomize_adapters(net, 85);
    Batch batch = random_batch(net.cfg, 4, 87);
    RankId r{{0, ModuleKind::Gate}, 0};
    AloraAdapter& ad = net.adapter(r.module);

    double fast = sensitivity_score(net, r, batch);

    double slow = 0.0;
    const double h = 1e-6;
    auto fd_abs_sum = [&](Tensor t, size_t idx) {
        double orig = t.data()[idx];
        t.mut_data()[idx] = orig + h;
        double fp = mean_loss(net, batch);
        t.mut_data()[idx] = orig - h;
        double fm = mean_loss(net, batch);
        t.mut_data()[idx] = orig;
        return std::fabs(orig * (fp - fm) / (2.0 * h));
    };
    for (size_t i = 0; i < ad.a.rows(); ++i) slow += fd_abs_sum(ad.a, i * ad.a.cols());
    for (size_t c = 0; c < ad.b.cols(); ++c) slow += fd_abs_sum(ad.b, c);
    CHECK(std::fabs(fast - slow) < 1e-6);
}

TEST_CASE("a poison rank receives the strictly lowest importance score") {
    int wins = 0;
    for (uint64_t seed = 100; seed < 105; ++seed) {
        TeacherSpec spec;
        spec.model = small_config();
        spec.true_ranks = {{2, 1, 1, 1, 1, 1, 1}};
        spec.dataset_size = 200;
        spec.seq_len = 6;
        spec.seed = seed;
        TeacherTask task = gen_teacher_task(spec);
        SuperNetwork net = task.make_student(2, seed + 1);
        DataSplits splits = split_dataset(task.data, seed + 2);

        TrainConfig tcfg;
        tcfg.lr_peak = 0.01;
        tcfg.batch_size = 16;
        tcfg.max_epochs = 4;
        tcfg.eval_every_steps = 50;
        tcfg.seed = seed + 3;
        Trainer trainer(net, splits, tcfg);
        trainer.train_for(2.0);

        // Train one rank by normalized gradient ascent until it visibly
        // damages the network.
        RankId poison{{0, ModuleKind::Value}, 0};
        AloraAdapter& ad = net.adapter(poison.module);
        Batch ascent_batch = whole_batch(splits.train);
        double loss_before = mean_loss(net, ascent_batch);
        for (int step = 0; step < 60; ++step) {
            auto params = trainable_named_params(net);
            for (auto& [n, t] : params) t.zero_grad();
            Tape tape;
            {
                Tape::Scope scope(tape);
                tape.backward(forward_loss(net, ascent_batch));
            }
            size_t rcols = ad.a.cols(), cols = ad.b.cols();
            double na = 0.0, nb = 0.0;
            for (size_t i = 0; i < ad.a.rows(); ++i)
                na += ad.a.grad()[i * rcols] * ad.a.grad()[i * rcols];
            for (size_t c = 0; c < cols; ++c) nb += ad.b.grad()[c] * ad.b.grad()[c];
            na = std::sqrt(na);
            nb = std::sqrt(nb);
            if (na > 1e-12)
                for (size_t i = 0; i < ad.a.rows(); ++i)
                    ad.a.mut_data()[i * rcols] += 0.1 * ad.a.grad()[i * rcols] / na;
            if (nb > 1e-12)
                for (size_t c = 0; c < cols; ++c)
                    ad.b.mut_data()[c] += 0.1 * ad.b.grad()[c] / nb;
            for (auto& [n, t] : params) t.zero_grad();
        }
        CHECK(mean_loss(net, ascent_batch) > loss_before + 0.5);

        ValBatch bval = sample_val_batch(splits.dev, 12, seed + 4, "poison");
        ImportanceTable table = score_all(net, bval, ScorerKind::AbLora);
        const RankId* argmin = nullptr;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& e : table.entries)
            if (e.score < best) {
                best = e.score;
                argmin = &e.rank;
            }
        bool strictly_lowest = argmin != nullptr && *argmin == poison;
        for (const auto& e : table.entries)
            if (!(e.rank == poison) && e.score <= best) strictly_lowest = false;
        if (strictly_lowest) ++wins;
    }
    CHECK(wins >= 3);  // median over 5 seeds
}

TEST_CASE("parallel and serial ablora tables are identical") {
    SuperNetwork net = build_supernet(small_config(), 2, 91);
    randomize_adapters(net, 93);
    ValBatch bval{random_batch(net.cfg, 8, 95), "par"};

    ScoringContext serial;
    serial.threads = 1;
    ScoringContext parallel;
    parallel.threads = 4;
    ImportanceTable a = score_all(net, bval, ScorerKind::AbLora, serial);
    ImportanceTable b = score_all(net, bval, ScorerKind::AbLora, parallel);
    REQUIRE(a.entries.size() == b.entries.size());
    for (size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].rank == b.entries[i].rank);
        CHECK(a.entries[i].score == b.entries[i].score);
    }
}
