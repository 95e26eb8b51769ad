#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "alora/allocator.hpp"
#include "alora/bench.hpp"
#include "alora/scoring.hpp"
#include "alora/supernet.hpp"
#include "alora/trainer.hpp"

namespace alora {

struct TaskSpec {
    enum class Kind { Teacher, Jsonl };
    Kind kind = Kind::Teacher;
    // teacher task
    std::vector<std::array<int, kNumModuleKinds>> true_ranks;
    double noise = 0.0;
    int dataset_size = 2000;
    int seq_len = 10;
    // jsonl task
    std::string path;
};

struct RunConfig {
    uint64_t seed = 42;
    std::string out_dir = "runs/alora";
    ScorerKind scorer = ScorerKind::AbLora;
    ModelConfig model;
    TrainConfig train;  // train.seed is derived from the master seed
    AllocationConfig alloc;
    TaskSpec task;
    std::vector<uint64_t> compare_seeds;  // defaults to seed..seed+4
};

// Strict parse: unknown keys and type mismatches raise ConfigError with
// the offending field path. Defaults are applied here and echoed by
// resolved_config_json, never silently.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config_file(const std::filesystem::path& path);

// Full materialized config including derived sub-seeds.
nlohmann::json resolved_config_json(const RunConfig& cfg);

struct RunOutputs {
    SuperNetwork net;
    RunResult result;
    DataSplits splits;
    bool has_teacher = false;
    TeacherSpec teacher_spec;
    RecoveryScore recovery;
};

// Data generation/loading, splitting, student construction, and the full
// allocation workflow. Performs no file output.
RunOutputs execute_run(const RunConfig& cfg);

// Writes resolved_config.json, checkpoint.alora, plan_history.json,
// importance_round{N}.csv, metrics.jsonl and allocation.csv to out_dir.
void write_run_artifacts(const RunConfig& cfg, RunOutputs& out);

struct CliOverrides {
    std::optional<uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> scorer;
};

// Exit codes: 0 success, 2 configuration error, 3 invariant or
// verification failure.
int cmd_run(const std::string& config_path, const CliOverrides& overrides);
int cmd_merge(const std::string& checkpoint_path, const std::string& out_path);
int cmd_report(const std::string& run_dir);
int cmd_compare(const std::string& config_path, const std::vector<std::string>& scorers,
                const CliOverrides& overrides);

}  // namespace alora
