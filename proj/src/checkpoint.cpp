#include "alora/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "alora/error.hpp"
#include "alora/random.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts need a swap pass");

namespace alora {

namespace {

constexpr char kMagic[] = "ALORA1";

std::string kind_token(ModuleKind k) { return to_string(k); }

}  // namespace

void save_tensor_map(const std::filesystem::path& path,
                     const std::map<std::string, Tensor>& tensors) {
    nlohmann::json header = nlohmann::json::object();
    size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        header[name] = {{"shape", {t.rows(), t.cols()}}, {"dtype", "f64"}, {"offset", offset}};
        offset += t.size() * sizeof(double);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("save: cannot open " + path.string());
    out << kMagic << "\n" << header.dump() << "\n";
    for (const auto& [name, t] : tensors) {
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw ArgumentError("save: write failed for " + path.string());
}

std::map<std::string, Tensor> load_tensor_map(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("load: cannot open " + path.string());
    std::string magic;
    std::getline(in, magic);
    if (magic != kMagic)
        throw ArgumentError("load: " + path.string() + " is not an ALORA1 checkpoint");
    std::string header_line;
    std::getline(in, header_line);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError("load: bad header in " + path.string() + ": " + e.what());
    }
    std::streampos blob_start = in.tellg();
    std::map<std::string, Tensor> out;
    for (auto& [name, meta] : header.items()) {
        size_t rows = meta.at("shape").at(0).get<size_t>();
        size_t cols = meta.at("shape").at(1).get<size_t>();
        if (meta.at("dtype").get<std::string>() != "f64")
            throw ArgumentError("load: unsupported dtype for tensor '" + name + "'");
        size_t offset = meta.at("offset").get<size_t>();
        std::vector<double> data(rows * cols);
        in.seekg(blob_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw ArgumentError("load: truncated blob for tensor '" + name + "'");
        out.emplace(name, Tensor::from_data(std::move(data), rows, cols));
    }
    return out;
}

std::map<std::string, Tensor> network_tensor_map(const SuperNetwork& net) {
    std::map<std::string, Tensor> m;
    m.emplace("backbone.embed", net.tok_embed);
    for (size_t layer = 0; layer < net.blocks.size(); ++layer) {
        const BlockWeights& w = net.blocks[layer];
        std::string p = "backbone." + std::to_string(layer) + ".";
        m.emplace(p + "wq", w.wq);
        m.emplace(p + "wk", w.wk);
        m.emplace(p + "wv", w.wv);
        m.emplace(p + "wo", w.wo);
        m.emplace(p + "wg", w.wg);
        m.emplace(p + "wu", w.wu);
        m.emplace(p + "wd", w.wd);
        m.emplace(p + "ln1.gamma", w.ln1_gamma);
        m.emplace(p + "ln1.beta", w.ln1_beta);
        m.emplace(p + "ln2.gamma", w.ln2_gamma);
        m.emplace(p + "ln2.beta", w.ln2_beta);
    }
    m.emplace("backbone.final.gamma", net.final_gamma);
    m.emplace("backbone.final.beta", net.final_beta);
    m.emplace("head.w", net.head_w);
    m.emplace("head.b", net.head_b);
    for (const auto& layer : net.adapters)
        for (const AloraAdapter& ad : layer) {
            std::string p = "adapter." + std::to_string(ad.id.layer) + "." + kind_token(ad.id.kind) + ".";
            m.emplace(p + "A", ad.a);
            m.emplace(p + "B", ad.b);
            std::vector<double> g(ad.gates.begin(), ad.gates.end());
            m.emplace(p + "gates", Tensor::from_data(std::move(g), 1, ad.gates.size()));
        }
    const ModelConfig& c = net.cfg;
    m.emplace("meta.config",
              Tensor::row({static_cast<double>(c.n_layers), static_cast<double>(c.d),
                           static_cast<double>(c.d_ff), static_cast<double>(c.n_heads),
                           static_cast<double>(c.vocab_size), static_cast<double>(c.max_seq_len),
                           static_cast<double>(c.n_classes)}));
    return m;
}

void save_checkpoint(const std::filesystem::path& path, const SuperNetwork& net) {
    save_tensor_map(path, network_tensor_map(net));
}

SuperNetwork network_from_tensor_map(const std::map<std::string, Tensor>& tensors) {
    auto get = [&](const std::string& name) -> const Tensor& {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ArgumentError("checkpoint: missing tensor '" + name + "'");
        return it->second;
    };
    const Tensor& meta = get("meta.config");
    if (meta.size() != 7) throw ArgumentError("checkpoint: malformed meta.config");
    ModelConfig cfg;
    cfg.n_layers = static_cast<int>(meta.data()[0]);
    cfg.d = static_cast<int>(meta.data()[1]);
    cfg.d_ff = static_cast<int>(meta.data()[2]);
    cfg.n_heads = static_cast<int>(meta.data()[3]);
    cfg.vocab_size = static_cast<int>(meta.data()[4]);
    cfg.max_seq_len = static_cast<int>(meta.data()[5]);
    cfg.n_classes = static_cast<int>(meta.data()[6]);
    cfg.validate();

    SuperNetwork net;
    net.cfg = cfg;
    net.tok_embed = get("backbone.embed").detached_copy();
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        std::string p = "backbone." + std::to_string(layer) + ".";
        BlockWeights w;
        w.wq = get(p + "wq").detached_copy();
        w.wk = get(p + "wk").detached_copy();
        w.wv = get(p + "wv").detached_copy();
        w.wo = get(p + "wo").detached_copy();
        w.wg = get(p + "wg").detached_copy();
        w.wu = get(p + "wu").detached_copy();
        w.wd = get(p + "wd").detached_copy();
        w.ln1_gamma = get(p + "ln1.gamma").detached_copy();
        w.ln1_beta = get(p + "ln1.beta").detached_copy();
        w.ln2_gamma = get(p + "ln2.gamma").detached_copy();
        w.ln2_beta = get(p + "ln2.beta").detached_copy();
        net.blocks.push_back(std::move(w));
    }
    net.final_gamma = get("backbone.final.gamma").detached_copy();
    net.final_beta = get("backbone.final.beta").detached_copy();
    net.head_w = get("head.w").detached_copy();
    net.head_w.set_requires_grad(true);
    net.head_b = get("head.b").detached_copy();
    net.head_b.set_requires_grad(true);

    net.adapters.resize(static_cast<size_t>(cfg.n_layers));
    for (int layer = 0; layer < cfg.n_layers; ++layer)
        for (int k = 0; k < kNumModuleKinds; ++k) {
            ModuleKind kind = static_cast<ModuleKind>(k);
            ModuleId id{layer, kind};
            AloraAdapter& ad = net.adapters[static_cast<size_t>(layer)][static_cast<size_t>(k)];
            std::string p = "adapter." + std::to_string(layer) + "." + kind_token(kind) + ".";
            auto it = tensors.find(p + "A");
            if (it == tensors.end()) {
                // Merged/bare checkpoints carry no adapters: rank 0.
                auto [din, dout] = adapter_dims(kind, cfg);
                RandomSource rng(0);
                ad = make_adapter(id, din, dout, 0, rng);
                continue;
            }
            ad.id = id;
            ad.a = it->second.detached_copy();
            ad.a.set_requires_grad(true);
            ad.b = get(p + "B").detached_copy();
            ad.b.set_requires_grad(true);
            const Tensor& g = get(p + "gates");
            ad.gates.resize(g.size());
            for (size_t i = 0; i < g.size(); ++i) ad.gates[i] = g.data()[i] != 0.0 ? 1 : 0;
            ad.arch_logits = Tensor::zeros(1, g.size());
        }
    return net;
}

SuperNetwork load_checkpoint(const std::filesystem::path& path) {
    return network_from_tensor_map(load_tensor_map(path));
}

}  // namespace alora
