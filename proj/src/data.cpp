#include "alora/data.hpp"

#include <fstream>
#include <json.hpp>

#include "alora/error.hpp"
#include "alora/random.hpp"

namespace alora {

DataSplits split_dataset(const Dataset& raw, uint64_t seed) {
    if (raw.size() < 30)
        throw ArgumentError("split_dataset: need at least 30 examples, got " +
                            std::to_string(raw.size()));
    RandomSource rng(derive_seed(seed, "split"));
    std::vector<int> perm = rng.permutation(static_cast<int>(raw.size()));
    size_t n = raw.size();
    size_t n_train = (n * 8) / 10;
    size_t n_dev = n / 10;
    DataSplits s;
    for (size_t i = 0; i < n; ++i) {
        const Example& ex = raw[static_cast<size_t>(perm[i])];
        if (i < n_train)
            s.train.push_back(ex);
        else if (i < n_train + n_dev)
            s.dev.push_back(ex);
        else
            s.test.push_back(ex);
    }
    return s;
}

Batch batch_from(const Dataset& d, const std::vector<int>& indices) {
    Batch b;
    b.tokens.reserve(indices.size());
    b.labels.reserve(indices.size());
    for (int i : indices) {
        b.tokens.push_back(d[static_cast<size_t>(i)].tokens);
        b.labels.push_back(d[static_cast<size_t>(i)].label);
    }
    return b;
}

Batch whole_batch(const Dataset& d) {
    std::vector<int> idx(d.size());
    for (size_t i = 0; i < d.size(); ++i) idx[i] = static_cast<int>(i);
    return batch_from(d, idx);
}

ValBatch sample_val_batch(const Dataset& dev, int b_val, uint64_t seed, const std::string& tag) {
    if (b_val <= 0) throw ArgumentError("sample_val_batch: b_val must be positive");
    if (dev.size() < static_cast<size_t>(b_val))
        throw ArgumentError("sample_val_batch: dev split has " + std::to_string(dev.size()) +
                            " examples, need " + std::to_string(b_val));
    RandomSource rng(seed);
    std::vector<int> perm = rng.permutation(static_cast<int>(dev.size()));
    perm.resize(static_cast<size_t>(b_val));
    ValBatch vb;
    vb.batch = batch_from(dev, perm);
    vb.batch_id = tag + ":seed" + std::to_string(seed);
    return vb;
}

Dataset load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("load_jsonl: cannot open " + path.string());
    Dataset out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ArgumentError("load_jsonl: " + path.string() + ":" + std::to_string(lineno) +
                                ": " + e.what());
        }
        Example ex;
        ex.tokens = j.at("tokens").get<std::vector<int>>();
        ex.label = j.at("label").get<int>();
        out.push_back(std::move(ex));
    }
    return out;
}

void save_jsonl(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("save_jsonl: cannot open " + path.string());
    for (const Example& ex : data) {
        nlohmann::json j;
        j["tokens"] = ex.tokens;
        j["label"] = ex.label;
        out << j.dump() << "\n";
    }
}

}  // namespace alora
