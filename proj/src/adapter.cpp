#include "alora/adapter.hpp"

#include <algorithm>

#include "alora/error.hpp"

namespace alora {

GateMask GateMask::zero_single(const RankId& r) {
    GateMask m;
    m.zero(r);
    return m;
}

bool GateMask::is_zeroed(const RankId& r) const {
    auto it = entries_.find(r);
    return it != entries_.end() && it->second;
}

GateMask GateMask::complemented_over(const std::vector<RankId>& universe) const {
    GateMask out;
    for (const RankId& r : universe) {
        if (is_zeroed(r))
            out.keep(r);
        else
            out.zero(r);
    }
    return out;
}

int AloraAdapter::active_ranks() const {
    return static_cast<int>(std::count(gates.begin(), gates.end(), 1));
}

std::vector<double> AloraAdapter::effective_gates(const GateMask* mask) const {
    std::vector<double> eff(gates.size());
    for (size_t i = 0; i < gates.size(); ++i) eff[i] = static_cast<double>(gates[i]);
    if (mask == nullptr) return eff;
    // Mask entries are keyed (module, index); the map is ordered, so all
    // entries for this module are contiguous.
    auto it = mask->entries().lower_bound(RankId{id, 0});
    for (; it != mask->entries().end() && it->first.module == id; ++it) {
        int idx = it->first.index;
        if (idx < 0 || idx >= rank())
            throw IndexError("GateMask: rank " + std::to_string(idx) + " out of range for " +
                             to_string(id) + " with r = " + std::to_string(rank()));
        if (it->second) eff[static_cast<size_t>(idx)] = 0.0;
    }
    return eff;
}

AloraAdapter make_adapter(ModuleId id, size_t d_in, size_t d_out, int r, RandomSource& rng) {
    AloraAdapter ad;
    ad.id = id;
    std::vector<double> av(d_in * static_cast<size_t>(r));
    for (auto& v : av) v = rng.normal(0.0, 0.02);
    ad.a = Tensor::from_data(std::move(av), d_in, static_cast<size_t>(r), /*requires_grad=*/true);
    ad.b = Tensor::zeros(static_cast<size_t>(r), d_out, /*requires_grad=*/true);
    ad.gates.assign(static_cast<size_t>(r), 1);
    ad.arch_logits = Tensor::zeros(1, static_cast<size_t>(r));
    return ad;
}

std::pair<size_t, size_t> adapter_dims(ModuleKind kind, const ModelConfig& cfg) {
    size_t d = static_cast<size_t>(cfg.d), dff = static_cast<size_t>(cfg.d_ff);
    switch (kind) {
        case ModuleKind::Query:
        case ModuleKind::Key:
        case ModuleKind::Value:
        case ModuleKind::Output: return {d, d};
        case ModuleKind::Gate:
        case ModuleKind::Up: return {d, dff};
        case ModuleKind::Down: return {dff, d};
    }
    throw ArgumentError("unknown ModuleKind");
}

Tensor adapter_delta(const Tensor& x, const AloraAdapter& a, const GateMask* mask) {
    if (x.cols() != a.a.rows())
        throw DimensionError("adapter_delta: input width " + std::to_string(x.cols()) +
                             " does not match W_A with " + std::to_string(a.a.rows()) + " rows");
    std::vector<double> eff = a.effective_gates(mask);
    return matmul(scale_cols(matmul(x, a.a), eff), a.b);
}

Tensor adapter_delta_relaxed(const Tensor& x, const AloraAdapter& a) {
    // Continuous gates alpha' = 2*sigmoid(a'), applied on top of the
    // binary gates so pruned ranks stay dead during the DNAS phase.
    std::vector<double> binary(a.gates.size());
    for (size_t i = 0; i < a.gates.size(); ++i) binary[i] = static_cast<double>(a.gates[i]);
    Tensor alpha = scale(sigmoid(a.arch_logits), 2.0);
    Tensor eff = scale_cols(alpha, binary);
    return matmul(scale_cols(matmul(x, a.a), eff), a.b);
}

void prune_ranks(AloraAdapter& a, const std::vector<int>& ranks) {
    for (int r : ranks) {
        if (r < 0 || r >= a.rank())
            throw IndexError("prune_ranks: rank " + std::to_string(r) + " out of range for " +
                             to_string(a.id));
        if (a.gates[static_cast<size_t>(r)] == 0)
            throw StateError("prune_ranks: rank " + to_string(RankId{a.id, r}) +
                             " is already pruned");
    }
    for (int r : ranks) a.gates[static_cast<size_t>(r)] = 0;
}

void grow_ranks(AloraAdapter& a, int n_new, RandomSource& rng) {
    if (n_new < 1) throw ArgumentError("grow_ranks: n_new must be >= 1");
    size_t d_in = a.a.rows(), d_out = a.b.cols();
    size_t r_old = static_cast<size_t>(a.rank());
    size_t r_new = r_old + static_cast<size_t>(n_new);

    std::vector<double> av(d_in * r_new);
    for (size_t i = 0; i < d_in; ++i) {
        for (size_t j = 0; j < r_old; ++j) av[i * r_new + j] = a.a.at(i, j);
        for (size_t j = r_old; j < r_new; ++j) av[i * r_new + j] = rng.normal(0.0, 0.02);
    }
    std::vector<double> bv(r_new * d_out, 0.0);
    std::copy(a.b.data().begin(), a.b.data().end(), bv.begin());

    std::vector<double> lv(r_new, 0.0);
    std::copy(a.arch_logits.data().begin(), a.arch_logits.data().end(), lv.begin());

    a.a = Tensor::from_data(std::move(av), d_in, r_new, /*requires_grad=*/true);
    a.b = Tensor::from_data(std::move(bv), r_new, d_out, /*requires_grad=*/true);
    a.arch_logits = Tensor::from_data(std::move(lv), 1, r_new);
    a.gates.resize(r_new, 1);
}

Tensor merge_into_base(AloraAdapter& a, const Tensor& w) {
    if (w.rows() != a.a.rows() || w.cols() != a.b.cols())
        throw DimensionError("merge_into_base: base is " + std::to_string(w.rows()) + "x" +
                             std::to_string(w.cols()) + ", adapter delta is " +
                             std::to_string(a.a.rows()) + "x" + std::to_string(a.b.cols()));
    if (a.merged)
        throw StateError("merge_into_base: adapter " + to_string(a.id) + " already merged");
    a.merged = true;
    if (a.rank() == 0) return w.detached_copy();
    Tensor delta = matmul(scale_cols(a.a, a.effective_gates(nullptr)), a.b);
    return add(w, delta).detached_copy();
}

}  // namespace alora
