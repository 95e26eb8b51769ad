#include "alora/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "alora/error.hpp"
#include "alora/random.hpp"
#include "alora/trainer.hpp"

namespace alora {

bool ImportanceTable::contains(const RankId& r) const {
    return std::any_of(entries.begin(), entries.end(),
                       [&](const ImportanceEntry& e) { return e.rank == r; });
}

double ImportanceTable::score_of(const RankId& r) const {
    for (const ImportanceEntry& e : entries)
        if (e.rank == r) return e.score;
    throw IndexError("ImportanceTable: no entry for " + to_string(r));
}

void ImportanceTable::recompute_module_avg() {
    module_avg.clear();
    std::map<ModuleId, std::pair<double, int>> acc;
    for (const ImportanceEntry& e : entries) {
        auto& [sum, n] = acc[e.rank.module];
        sum += e.score;
        ++n;
    }
    for (auto& [id, sn] : acc) module_avg[id] = sn.first / static_cast<double>(sn.second);
}

namespace {

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace

void ImportanceTable::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ArgumentError("write_csv: cannot open " + path.string());
    out << "layer,module,rank_index,score,module_avg\n";
    for (const ImportanceEntry& e : entries) {
        out << e.rank.module.layer << "," << to_string(e.rank.module.kind) << "," << e.rank.index
            << "," << format_double(e.score) << "," << format_double(module_avg.at(e.rank.module))
            << "\n";
    }
}

const char* to_string(ScorerKind k) {
    switch (k) {
        case ScorerKind::AbLora: return "ablora";
        case ScorerKind::Dnas: return "dnas";
        case ScorerKind::Sensitivity: return "sensitivity";
    }
    throw ArgumentError("unknown ScorerKind");
}

ScorerKind scorer_from_string(const std::string& s) {
    if (s == "ablora") return ScorerKind::AbLora;
    if (s == "dnas") return ScorerKind::Dnas;
    if (s == "sensitivity") return ScorerKind::Sensitivity;
    throw ArgumentError("unknown scorer '" + s + "' (expected ablora|dnas|sensitivity)");
}

int scorer_thread_count(int requested) {
    int n = requested;
    if (n <= 0) {
        if (const char* env = std::getenv("ALORA_THREADS")) {
            n = std::atoi(env);
        }
    }
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("ALORA_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return n;
}

double metric(const SuperNetwork& net, const GateMask& mask, const Batch& batch) {
    return -mean_loss(net, batch, &mask);
}

namespace {

GateMask only_rank_mask(const std::vector<RankId>& active, const RankId& keep) {
    GateMask m;
    for (const RankId& r : active)
        if (!(r == keep)) m.zero(r);
    return m;
}

void require_active(const SuperNetwork& net, const RankId& r) {
    const AloraAdapter& ad = net.adapter(r.module);
    if (r.index < 0 || r.index >= ad.rank())
        throw IndexError("rank " + to_string(r) + " out of range");
    if (ad.gates[static_cast<size_t>(r.index)] == 0)
        throw StateError("rank " + to_string(r) + " is pruned");
}

}  // namespace

double ab_lora_score(const SuperNetwork& net, const RankId& r, const Batch& batch) {
    require_active(net, r);
    std::vector<RankId> active = active_rank_ids(net);
    double s_full = metric(net, GateMask{}, batch);
    double s_without = metric(net, GateMask::zero_single(r), batch);
    double s_only = metric(net, only_rank_mask(active, r), batch);
    return s_full - s_without + s_only;
}

double sensitivity_score(const SuperNetwork& net, const RankId& r, const Batch& batch) {
    require_active(net, r);
    SuperNetwork& mut = const_cast<SuperNetwork&>(net);  // grads only; weights untouched
    auto params = trainable_named_params(mut);
    for (auto& [name, t] : params) t.zero_grad();
    Tape tape;
    {
        Tape::Scope scope(tape);
        tape.backward(forward_loss(net, batch));
    }
    const AloraAdapter& ad = net.adapter(r.module);
    double score = 0.0;
    size_t rk = static_cast<size_t>(r.index);
    if (ad.a.has_grad()) {
        size_t rcols = ad.a.cols();
        for (size_t i = 0; i < ad.a.rows(); ++i)
            score += std::fabs(ad.a.data()[i * rcols + rk] * ad.a.grad()[i * rcols + rk]);
    }
    if (ad.b.has_grad()) {
        size_t cols = ad.b.cols();
        for (size_t c = 0; c < cols; ++c)
            score += std::fabs(ad.b.data()[rk * cols + c] * ad.b.grad()[rk * cols + c]);
    }
    for (auto& [name, t] : params) t.zero_grad();
    return score;
}

double dnas_score(const SuperNetwork& net, const RankId& r) {
    require_active(net, r);
    const AloraAdapter& ad = net.adapter(r.module);
    double logit = ad.arch_logits.data()[static_cast<size_t>(r.index)];
    return 2.0 / (1.0 + std::exp(-logit));
}

void run_relaxation_phase(SuperNetwork& net, const ScoringContext& ctx) {
    if (ctx.relax_steps <= 0) return;
    if (ctx.relax_data == nullptr || ctx.relax_data->empty())
        throw ArgumentError("run_relaxation_phase: no relaxation data");

    SuperNetwork work = clone_network(net);
    for (auto& layer : work.adapters)
        for (AloraAdapter& ad : layer)
            if (ad.rank() > 0) ad.arch_logits.set_requires_grad(true);

    // D1/D2: disjoint halves of the provided split.
    RandomSource splitter(derive_seed(ctx.seed, "dnas_split"));
    std::vector<int> perm = splitter.permutation(static_cast<int>(ctx.relax_data->size()));
    size_t half = perm.size() / 2;
    std::vector<int> d1(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<int> d2(perm.begin() + static_cast<std::ptrdiff_t>(half), perm.end());
    if (d1.empty() || d2.empty())
        throw ArgumentError("run_relaxation_phase: relaxation split too small");

    auto arch_params = [&]() {
        std::vector<std::pair<std::string, Tensor>> out;
        for (auto& layer : work.adapters)
            for (AloraAdapter& ad : layer)
                if (ad.rank() > 0)
                    out.emplace_back("arch." + to_string(ad.id), ad.arch_logits);
        return out;
    };

    AdamW opt_weights;
    AdamW opt_arch;
    RandomSource batch_rng(derive_seed(ctx.seed, "dnas_batches"));
    ForwardCtx fwd{nullptr, /*relaxed_gates=*/true};

    for (int step = 0; step < ctx.relax_steps; ++step) {
        bool arch_step = (step % 2 == 1);
        const std::vector<int>& pool = arch_step ? d2 : d1;
        std::vector<int> idx(static_cast<size_t>(std::min<int>(ctx.relax_batch_size,
                                                               static_cast<int>(pool.size()))));
        for (auto& i : idx) i = pool[static_cast<size_t>(batch_rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        Batch batch = batch_from(*ctx.relax_data, idx);

        auto weights = trainable_named_params(work);
        auto arch = arch_params();
        for (auto& [n, t] : weights) t.zero_grad();
        for (auto& [n, t] : arch) t.zero_grad();

        Tape tape;
        {
            Tape::Scope scope(tape);
            tape.backward(forward_loss(work, batch, fwd));
        }
        if (arch_step)
            opt_arch.step(arch, ctx.relax_lr);
        else
            opt_weights.step(weights, ctx.relax_lr);
        for (auto& [n, t] : weights) t.zero_grad();
        for (auto& [n, t] : arch) t.zero_grad();
    }

    // Only the trained architecture weights leave the phase.
    for (size_t layer = 0; layer < net.adapters.size(); ++layer)
        for (int k = 0; k < kNumModuleKinds; ++k) {
            AloraAdapter& dst = net.adapters[layer][static_cast<size_t>(k)];
            const AloraAdapter& src = work.adapters[layer][static_cast<size_t>(k)];
            dst.arch_logits = src.arch_logits.detached_copy();
            dst.arch_logits.set_requires_grad(false);
        }
}

ImportanceTable score_all(SuperNetwork& net, const ValBatch& bval, ScorerKind scorer,
                          const ScoringContext& ctx) {
    ImportanceTable table;
    table.batch_id = bval.batch_id;
    std::vector<RankId> active = active_rank_ids(net);
    table.entries.resize(active.size());
    for (size_t i = 0; i < active.size(); ++i) table.entries[i].rank = active[i];

    switch (scorer) {
        case ScorerKind::AbLora: {
            double s_full = metric(net, GateMask{}, bval.batch);
            int n_threads = scorer_thread_count(ctx.threads);
            auto worker = [&](size_t begin, size_t stride) {
                for (size_t i = begin; i < active.size(); i += stride) {
                    const RankId& r = active[i];
                    double s_without = metric(net, GateMask::zero_single(r), bval.batch);
                    double s_only = metric(net, only_rank_mask(active, r), bval.batch);
                    table.entries[i].score = s_full - s_without + s_only;
                }
            };
            if (n_threads <= 1 || active.size() < 2) {
                worker(0, 1);
            } else {
                std::vector<std::thread> pool;
                size_t stride = static_cast<size_t>(n_threads);
                for (size_t t = 0; t < stride; ++t) pool.emplace_back(worker, t, stride);
                for (auto& th : pool) th.join();
            }
            break;
        }
        case ScorerKind::Dnas: {
            run_relaxation_phase(net, ctx);
            for (size_t i = 0; i < active.size(); ++i)
                table.entries[i].score = dnas_score(net, active[i]);
            break;
        }
        case ScorerKind::Sensitivity: {
            auto params = trainable_named_params(net);
            for (auto& [n, t] : params) t.zero_grad();
            Tape tape;
            {
                Tape::Scope scope(tape);
                tape.backward(forward_loss(net, bval.batch));
            }
            for (size_t i = 0; i < active.size(); ++i) {
                const RankId& r = active[i];
                const AloraAdapter& ad = net.adapter(r.module);
                size_t rk = static_cast<size_t>(r.index);
                double score = 0.0;
                if (ad.a.has_grad()) {
                    size_t rcols = ad.a.cols();
                    for (size_t row = 0; row < ad.a.rows(); ++row)
                        score += std::fabs(ad.a.data()[row * rcols + rk] * ad.a.grad()[row * rcols + rk]);
                }
                if (ad.b.has_grad()) {
                    size_t cols = ad.b.cols();
                    for (size_t c = 0; c < cols; ++c)
                        score += std::fabs(ad.b.data()[rk * cols + c] * ad.b.grad()[rk * cols + c]);
                }
                table.entries[i].score = score;
            }
            for (auto& [n, t] : params) t.zero_grad();
            break;
        }
    }
    table.recompute_module_avg();
    return table;
}

}  // namespace alora
