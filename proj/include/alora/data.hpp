#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace alora {

struct Example {
    std::vector<int> tokens;
    int label = 0;
};

using Dataset = std::vector<Example>;

struct Batch {
    std::vector<std::vector<int>> tokens;
    std::vector<int> labels;
    size_t size() const { return labels.size(); }
};

// Pairwise-disjoint partitions. dev is the only source of validation
// batches; test is never touched by training or scoring.
struct DataSplits {
    Dataset train;
    Dataset dev;
    Dataset test;
};

// Deterministic shuffled 80/10/10 split. Requires at least 30 examples.
DataSplits split_dataset(const Dataset& raw, uint64_t seed);

Batch batch_from(const Dataset& d, const std::vector<int>& indices);
Batch whole_batch(const Dataset& d);

// One validation batch for importance scoring, freshly drawn per
// allocation round. batch_id records the provenance for the table.
struct ValBatch {
    Batch batch;
    std::string batch_id;
};

ValBatch sample_val_batch(const Dataset& dev, int b_val, uint64_t seed,
                          const std::string& tag);

// Task files: one {"tokens": [...], "label": n} object per line.
Dataset load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Dataset& data, const std::filesystem::path& path);

}  // namespace alora
