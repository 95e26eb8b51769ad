#include "alora/bench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "alora/error.hpp"
#include "alora/random.hpp"

namespace alora {

void TeacherSpec::validate() const {
    model.validate();
    if (true_ranks.size() != static_cast<size_t>(model.n_layers))
        throw ArgumentError("teacher: true_ranks has " + std::to_string(true_ranks.size()) +
                            " layers, model has " + std::to_string(model.n_layers));
    for (const auto& layer : true_ranks)
        for (int k = 0; k < kNumModuleKinds; ++k) {
            int r = layer[static_cast<size_t>(k)];
            auto [din, dout] = adapter_dims(static_cast<ModuleKind>(k), model);
            size_t cap = std::min(din, dout);
            if (r < 0 || static_cast<size_t>(r) > cap)
                throw ArgumentError("teacher: rank " + std::to_string(r) + " for '" +
                                    to_string(static_cast<ModuleKind>(k)) +
                                    "' exceeds min(d_in, d_out) = " + std::to_string(cap));
        }
    if (noise < 0.0 || noise >= 1.0) throw ArgumentError("teacher: noise must be in [0, 1)");
    if (dataset_size < 30) throw ArgumentError("teacher: dataset_size must be >= 30");
    if (seq_len < 1 || seq_len > model.max_seq_len)
        throw ArgumentError("teacher: seq_len must be in [1, max_seq_len]");
}

namespace {

// Largest singular value by power iteration on M^T M.
double spectral_norm(const std::vector<double>& m, size_t rows, size_t cols, RandomSource& rng) {
    std::vector<double> v(cols);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    std::vector<double> mv(rows), mtmv(cols);
    double sigma = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
        for (size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (size_t j = 0; j < cols; ++j) s += m[i * cols + j] * v[j];
            mv[i] = s;
        }
        for (size_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (size_t i = 0; i < rows; ++i) s += m[i * cols + j] * mv[i];
            mtmv[j] = s;
        }
        double norm = std::sqrt(std::inner_product(mtmv.begin(), mtmv.end(), mtmv.begin(), 0.0));
        if (norm == 0.0) return 0.0;
        for (size_t j = 0; j < cols; ++j) v[j] = mtmv[j] / norm;
        double num = 0.0;
        for (double x : mv) num += x * x;
        sigma = std::sqrt(num);
    }
    return sigma;
}

// Planted delta: product of Gaussian factors, scaled to unit spectral norm.
std::vector<double> planted_delta(size_t rows, size_t cols, int rank, RandomSource& rng) {
    std::vector<double> u(rows * static_cast<size_t>(rank));
    std::vector<double> v(static_cast<size_t>(rank) * cols);
    for (auto& x : u) x = rng.normal(0.0, 1.0);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    std::vector<double> m(rows * cols, 0.0);
    for (size_t i = 0; i < rows; ++i)
        for (int p = 0; p < rank; ++p) {
            double uv = u[i * static_cast<size_t>(rank) + static_cast<size_t>(p)];
            for (size_t j = 0; j < cols; ++j) m[i * cols + j] += uv * v[static_cast<size_t>(p) * cols + j];
        }
    double sigma = spectral_norm(m, rows, cols, rng);
    if (sigma > 0.0)
        for (auto& x : m) x /= sigma;
    return m;
}

Tensor& block_weight(BlockWeights& w, ModuleKind k) {
    switch (k) {
        case ModuleKind::Query: return w.wq;
        case ModuleKind::Key: return w.wk;
        case ModuleKind::Value: return w.wv;
        case ModuleKind::Output: return w.wo;
        case ModuleKind::Gate: return w.wg;
        case ModuleKind::Up: return w.wu;
        case ModuleKind::Down: return w.wd;
    }
    throw ArgumentError("unknown ModuleKind");
}

}  // namespace

TeacherTask gen_teacher_task(const TeacherSpec& spec) {
    spec.validate();
    TeacherTask task;
    task.spec = spec;
    task.base = build_backbone_only(spec.model, derive_seed(spec.seed, "teacher_base"));
    task.teacher = clone_network(task.base);

    RandomSource delta_rng(derive_seed(spec.seed, "teacher_delta"));
    for (int layer = 0; layer < spec.model.n_layers; ++layer)
        for (int k = 0; k < kNumModuleKinds; ++k) {
            int rank = spec.true_ranks[static_cast<size_t>(layer)][static_cast<size_t>(k)];
            if (rank == 0) continue;
            ModuleKind kind = static_cast<ModuleKind>(k);
            Tensor& w = block_weight(task.teacher.blocks[static_cast<size_t>(layer)], kind);
            auto delta = planted_delta(w.rows(), w.cols(), rank, delta_rng);
            auto& data = w.mut_data();
            for (size_t i = 0; i < data.size(); ++i) data[i] += delta[i];
        }

    RandomSource data_rng(derive_seed(spec.seed, "teacher_data"));
    task.data.reserve(static_cast<size_t>(spec.dataset_size));
    for (int n = 0; n < spec.dataset_size; ++n) {
        Example ex;
        ex.tokens.resize(static_cast<size_t>(spec.seq_len));
        for (auto& t : ex.tokens) t = data_rng.uniform_int(0, spec.model.vocab_size - 1);
        Tensor logits = task.teacher.forward_logits(ex.tokens);
        size_t best = 0;
        for (size_t c = 1; c < logits.size(); ++c)
            if (logits.data()[c] > logits.data()[best]) best = c;
        ex.label = static_cast<int>(best);
        if (spec.noise > 0.0 && data_rng.uniform() < spec.noise)
            ex.label = data_rng.uniform_int(0, spec.model.n_classes - 1);
        task.data.push_back(std::move(ex));
    }
    return task;
}

SuperNetwork TeacherTask::make_student(int r_init, uint64_t adapter_seed) const {
    SuperNetwork student = clone_network(base);
    RandomSource rng(derive_seed(adapter_seed, "adapters"));
    for (int layer = 0; layer < spec.model.n_layers; ++layer)
        for (int k = 0; k < kNumModuleKinds; ++k) {
            ModuleKind kind = static_cast<ModuleKind>(k);
            auto [din, dout] = adapter_dims(kind, spec.model);
            student.adapters[static_cast<size_t>(layer)][static_cast<size_t>(k)] =
                make_adapter(ModuleId{layer, kind}, din, dout, r_init, rng);
        }
    return student;
}

double agreement(const SuperNetwork& net, const Dataset& data) {
    if (data.empty()) throw ArgumentError("agreement: empty dataset");
    int hits = 0;
    for (const Example& ex : data) {
        Tensor logits = net.forward_logits(ex.tokens);
        size_t best = 0;
        for (size_t c = 1; c < logits.size(); ++c)
            if (logits.data()[c] > logits.data()[best]) best = c;
        if (static_cast<int>(best) == ex.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

SuperNetwork physical_ablation_oracle(const SuperNetwork& net, const GateMask& mask) {
    int total = 0;
    for (const auto& layer : net.adapters)
        for (const AloraAdapter& ad : layer) total += ad.rank();
    if (total > 16)
        throw ArgumentError("physical_ablation_oracle: " + std::to_string(total) +
                            " ranks exceeds the 16-rank small-instance guard");

    SuperNetwork out = clone_network(net);
    for (auto& layer : out.adapters)
        for (AloraAdapter& ad : layer) {
            std::vector<int> kept;
            for (int i = 0; i < ad.rank(); ++i) {
                RankId rid{ad.id, i};
                if (ad.gates[static_cast<size_t>(i)] == 1 && !mask.is_zeroed(rid)) kept.push_back(i);
            }
            size_t d_in = ad.a.rows(), d_out = ad.b.cols();
            std::vector<double> av(d_in * kept.size());
            std::vector<double> bv(kept.size() * d_out);
            for (size_t j = 0; j < kept.size(); ++j) {
                for (size_t i = 0; i < d_in; ++i)
                    av[i * kept.size() + j] = ad.a.at(i, static_cast<size_t>(kept[j]));
                for (size_t c = 0; c < d_out; ++c)
                    bv[j * d_out + c] = ad.b.at(static_cast<size_t>(kept[j]), c);
            }
            ad.a = Tensor::from_data(std::move(av), d_in, kept.size(), /*requires_grad=*/true);
            ad.b = Tensor::from_data(std::move(bv), kept.size(), d_out, /*requires_grad=*/true);
            ad.gates.assign(kept.size(), 1);
            ad.arch_logits = Tensor::zeros(1, kept.size());
        }
    return out;
}

SuperNetwork physical_ablation_without_rank(const SuperNetwork& net, const RankId& r) {
    return physical_ablation_oracle(net, GateMask::zero_single(r));
}

SuperNetwork physical_ablation_only_rank(const SuperNetwork& net, const RankId& r) {
    GateMask mask;
    for (const RankId& rid : active_rank_ids(net))
        if (!(rid == r)) mask.zero(rid);
    return physical_ablation_oracle(net, mask);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw ArgumentError("spearman: vectors must have equal size >= 2");
    auto average_ranks = [](const std::vector<double>& v) {
        size_t n = v.size();
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
        std::vector<double> ranks(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
            i = j + 1;
        }
        return ranks;
    };
    auto ra = average_ranks(a), rb = average_ranks(b);
    double ma = 0, mb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(ra.size());
    mb /= static_cast<double>(rb.size());
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return std::nan("");
    return cov / std::sqrt(va * vb);
}

RecoveryScore rank_recovery_metric(const std::map<ModuleId, int>& final_ranks,
                                   const TeacherSpec& spec) {
    std::vector<double> truth, found;
    for (int layer = 0; layer < spec.model.n_layers; ++layer)
        for (int k = 0; k < kNumModuleKinds; ++k) {
            ModuleId id{layer, static_cast<ModuleKind>(k)};
            truth.push_back(static_cast<double>(spec.true_ranks[static_cast<size_t>(layer)][static_cast<size_t>(k)]));
            auto it = final_ranks.find(id);
            found.push_back(it == final_ranks.end() ? 0.0 : static_cast<double>(it->second));
        }
    double rho = spearman(truth, found);
    if (std::isnan(rho)) return RecoveryScore{0.5, true};
    return RecoveryScore{(rho + 1.0) / 2.0, false};
}

}  // namespace alora
