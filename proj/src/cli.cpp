#include "alora/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "alora/checkpoint.hpp"
#include "alora/error.hpp"
#include "alora/random.hpp"

namespace alora {

namespace fs = std::filesystem;

namespace {

// Strict object reader: every key must be consumed, every access is
// type-checked, and error messages carry the full field path.
class Fields {
public:
    Fields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    template <typename T>
    T get(const char* key, T fallback) {
        used_.insert(key);
        if (!j_.contains(key)) return fallback;
        return read<T>(key);
    }

    template <typename T>
    T require(const char* key) {
        used_.insert(key);
        if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": required field missing");
        return read<T>(key);
    }

    const nlohmann::json* sub(const char* key) {
        used_.insert(key);
        if (!j_.contains(key)) return nullptr;
        return &j_.at(key);
    }

    void done() const {
        for (auto& [key, value] : j_.items())
            if (used_.find(key) == used_.end())
                throw ConfigError(path_ + "." + key + ": unknown field");
    }

private:
    template <typename T>
    T read(const char* key) {
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(path_ + "." + std::string(key) + ": wrong type");
        }
    }

    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> used_;
};

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot open " + path.string() + " for writing");
    out << text;
}

void write_allocation_csv(const fs::path& path, const std::map<ModuleId, int>& per_module) {
    std::string csv = "layer,module,final_rank\n";
    for (const auto& [id, n] : per_module)
        csv += std::to_string(id.layer) + "," + to_string(id.kind) + "," + std::to_string(n) + "\n";
    write_text(path, csv);
}

Batch probe_batch(const ModelConfig& cfg, int n, uint64_t seed) {
    RandomSource rng(seed);
    Batch b;
    int len = std::min(8, cfg.max_seq_len);
    for (int i = 0; i < n; ++i) {
        std::vector<int> toks(static_cast<size_t>(len));
        for (auto& t : toks) t = rng.uniform_int(0, cfg.vocab_size - 1);
        b.tokens.push_back(std::move(toks));
        b.labels.push_back(rng.uniform_int(0, cfg.n_classes - 1));
    }
    return b;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const InvariantError& e) {
        std::cerr << "invariant failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
    Fields root(j, "config");
    RunConfig cfg;
    cfg.seed = root.get<uint64_t>("seed", 42);
    cfg.out_dir = root.get<std::string>("out_dir", "runs/alora");
    cfg.scorer = scorer_from_string(root.get<std::string>("scorer", "ablora"));

    if (const nlohmann::json* m = root.sub("model")) {
        Fields f(*m, "config.model");
        cfg.model.n_layers = f.get<int>("n_layers", cfg.model.n_layers);
        cfg.model.d = f.get<int>("d", cfg.model.d);
        cfg.model.d_ff = f.get<int>("d_ff", cfg.model.d_ff);
        cfg.model.n_heads = f.get<int>("n_heads", cfg.model.n_heads);
        cfg.model.vocab_size = f.get<int>("vocab_size", cfg.model.vocab_size);
        cfg.model.max_seq_len = f.get<int>("max_seq_len", cfg.model.max_seq_len);
        cfg.model.n_classes = f.get<int>("n_classes", cfg.model.n_classes);
        f.done();
    }
    if (const nlohmann::json* t = root.sub("train")) {
        Fields f(*t, "config.train");
        cfg.train.lr_peak = f.get<double>("lr_peak", cfg.train.lr_peak);
        cfg.train.warmup_frac = f.get<double>("warmup_frac", cfg.train.warmup_frac);
        cfg.train.batch_size = f.get<int>("batch_size", cfg.train.batch_size);
        cfg.train.max_epochs = f.get<int>("max_epochs", cfg.train.max_epochs);
        cfg.train.eval_every_steps = f.get<int>("eval_every_steps", cfg.train.eval_every_steps);
        cfg.train.patience = f.get<int>("patience", cfg.train.patience);
        f.done();
    }
    if (const nlohmann::json* a = root.sub("alloc")) {
        Fields f(*a, "config.alloc");
        cfg.alloc.R_target = f.get<int>("R_target", cfg.alloc.R_target);
        cfg.alloc.r_init = f.get<int>("r_init", cfg.alloc.r_init);
        cfg.alloc.n_per_round = f.get<int>("n_per_round", cfg.alloc.n_per_round);
        cfg.alloc.N_A_max = f.get<int>("N_A_max", cfg.alloc.N_A_max);
        cfg.alloc.K1_epochs = f.get<double>("K1_epochs", cfg.alloc.K1_epochs);
        cfg.alloc.K2_epochs = f.get<double>("K2_epochs", cfg.alloc.K2_epochs);
        cfg.alloc.b_val = f.get<int>("b_val", cfg.alloc.b_val);
        f.done();
    }
    if (const nlohmann::json* t = root.sub("task")) {
        Fields f(*t, "config.task");
        std::string kind = f.get<std::string>("kind", "teacher");
        if (kind == "teacher") {
            cfg.task.kind = TaskSpec::Kind::Teacher;
            cfg.task.noise = f.get<double>("noise", 0.0);
            cfg.task.dataset_size = f.get<int>("dataset_size", 2000);
            cfg.task.seq_len = f.get<int>("seq_len", 10);
            if (const nlohmann::json* ranks = f.sub("true_ranks")) {
                if (!ranks->is_array() || ranks->size() != static_cast<size_t>(cfg.model.n_layers))
                    throw ConfigError("config.task.true_ranks: expected an array with one entry "
                                      "per layer (" + std::to_string(cfg.model.n_layers) + ")");
                for (size_t layer = 0; layer < ranks->size(); ++layer) {
                    Fields lf((*ranks)[layer],
                              "config.task.true_ranks[" + std::to_string(layer) + "]");
                    std::array<int, kNumModuleKinds> row{};
                    for (int k = 0; k < kNumModuleKinds; ++k)
                        row[static_cast<size_t>(k)] =
                            lf.require<int>(to_string(static_cast<ModuleKind>(k)));
                    lf.done();
                    cfg.task.true_ranks.push_back(row);
                }
            } else {
                cfg.task.true_ranks.assign(static_cast<size_t>(cfg.model.n_layers),
                                           {1, 1, 1, 1, 1, 1, 1});
            }
        } else if (kind == "jsonl") {
            cfg.task.kind = TaskSpec::Kind::Jsonl;
            cfg.task.path = f.require<std::string>("path");
        } else {
            throw ConfigError("config.task.kind: expected 'teacher' or 'jsonl'");
        }
        f.done();
    } else {
        // Default teacher: uniform true rank 1 everywhere.
        cfg.task.true_ranks.assign(static_cast<size_t>(cfg.model.n_layers), {1, 1, 1, 1, 1, 1, 1});
    }
    if (const nlohmann::json* s = root.sub("compare_seeds")) {
        try {
            cfg.compare_seeds = s->get<std::vector<uint64_t>>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config.compare_seeds: expected an array of integers");
        }
    }
    root.done();
    if (cfg.compare_seeds.empty())
        for (uint64_t i = 0; i < 5; ++i) cfg.compare_seeds.push_back(cfg.seed + i);
    return cfg;
}

RunConfig load_run_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse failure in " + path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

nlohmann::json resolved_config_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["seeds"] = {{"data", derive_seed(cfg.seed, "data")},
                  {"init", derive_seed(cfg.seed, "init")},
                  {"batches", derive_seed(cfg.seed, "batches")},
                  {"b_val", derive_seed(cfg.seed, "b_val")}};
    j["out_dir"] = cfg.out_dir;
    j["scorer"] = to_string(cfg.scorer);
    j["model"] = {{"n_layers", cfg.model.n_layers},     {"d", cfg.model.d},
                  {"d_ff", cfg.model.d_ff},             {"n_heads", cfg.model.n_heads},
                  {"vocab_size", cfg.model.vocab_size}, {"max_seq_len", cfg.model.max_seq_len},
                  {"n_classes", cfg.model.n_classes}};
    j["train"] = {{"lr_peak", cfg.train.lr_peak},
                  {"warmup_frac", cfg.train.warmup_frac},
                  {"batch_size", cfg.train.batch_size},
                  {"max_epochs", cfg.train.max_epochs},
                  {"eval_every_steps", cfg.train.eval_every_steps},
                  {"patience", cfg.train.patience}};
    j["alloc"] = {{"R_target", cfg.alloc.R_target},       {"r_init", cfg.alloc.r_init},
                  {"n_per_round", cfg.alloc.n_per_round}, {"N_A_max", cfg.alloc.N_A_max},
                  {"K1_epochs", cfg.alloc.K1_epochs},     {"K2_epochs", cfg.alloc.K2_epochs},
                  {"b_val", cfg.alloc.b_val}};
    if (cfg.task.kind == TaskSpec::Kind::Teacher) {
        nlohmann::json ranks = nlohmann::json::array();
        for (const auto& layer : cfg.task.true_ranks) {
            nlohmann::json l;
            for (int k = 0; k < kNumModuleKinds; ++k)
                l[to_string(static_cast<ModuleKind>(k))] = layer[static_cast<size_t>(k)];
            ranks.push_back(l);
        }
        j["task"] = {{"kind", "teacher"},
                     {"true_ranks", ranks},
                     {"noise", cfg.task.noise},
                     {"dataset_size", cfg.task.dataset_size},
                     {"seq_len", cfg.task.seq_len}};
    } else {
        j["task"] = {{"kind", "jsonl"}, {"path", cfg.task.path}};
    }
    j["compare_seeds"] = cfg.compare_seeds;
    return j;
}

RunOutputs execute_run(const RunConfig& cfg) {
    cfg.model.validate();
    cfg.train.validate();
    cfg.alloc.validate(cfg.model);

    RunOutputs out;
    Dataset dataset;
    if (cfg.task.kind == TaskSpec::Kind::Teacher) {
        TeacherSpec spec;
        spec.model = cfg.model;
        spec.true_ranks = cfg.task.true_ranks;
        spec.noise = cfg.task.noise;
        spec.dataset_size = cfg.task.dataset_size;
        spec.seq_len = cfg.task.seq_len;
        spec.seed = derive_seed(cfg.seed, "data");
        TeacherTask task = gen_teacher_task(spec);
        dataset = std::move(task.data);
        out.net = task.make_student(cfg.alloc.r_init, derive_seed(cfg.seed, "init"));
        out.has_teacher = true;
        out.teacher_spec = spec;
    } else {
        dataset = load_jsonl(cfg.task.path);
        for (size_t i = 0; i < dataset.size(); ++i) {
            const Example& ex = dataset[i];
            if (ex.tokens.empty() ||
                ex.tokens.size() > static_cast<size_t>(cfg.model.max_seq_len))
                throw ConfigError("config.task.path: example " + std::to_string(i) +
                                  " has length " + std::to_string(ex.tokens.size()) +
                                  " outside [1, max_seq_len]");
            for (int t : ex.tokens)
                if (t < 0 || t >= cfg.model.vocab_size)
                    throw ConfigError("config.task.path: example " + std::to_string(i) +
                                      " holds token " + std::to_string(t) + " >= vocab_size");
            if (ex.label < 0 || ex.label >= cfg.model.n_classes)
                throw ConfigError("config.task.path: example " + std::to_string(i) +
                                  " holds label " + std::to_string(ex.label) + " >= n_classes");
        }
        out.net = build_supernet(cfg.model, cfg.alloc.r_init, derive_seed(cfg.seed, "init"));
    }

    out.splits = split_dataset(dataset, derive_seed(cfg.seed, "data"));
    if (out.splits.dev.size() < static_cast<size_t>(cfg.alloc.b_val))
        throw ConfigError("config.alloc.b_val: dev split has " +
                          std::to_string(out.splits.dev.size()) + " examples, need " +
                          std::to_string(cfg.alloc.b_val));

    TrainConfig tcfg = cfg.train;
    tcfg.seed = derive_seed(cfg.seed, "batches");
    out.result = run_allocation(out.net, cfg.alloc, tcfg, out.splits, cfg.scorer, cfg.seed);
    if (out.has_teacher)
        out.recovery = rank_recovery_metric(active_rank_count(out.net).per_module, out.teacher_spec);
    return out;
}

void write_run_artifacts(const RunConfig& cfg, RunOutputs& out) {
    fs::path dir(cfg.out_dir);
    fs::create_directories(dir);

    write_text(dir / "resolved_config.json", resolved_config_json(cfg).dump(2) + "\n");

    nlohmann::json history = nlohmann::json::array();
    for (AllocationPlan& plan : out.result.plans) {
        std::string csv_name = "importance_round" + std::to_string(plan.round) + ".csv";
        plan.table.write_csv(dir / csv_name);
        plan.table_csv = csv_name;

        nlohmann::json jp;
        jp["round"] = plan.round;
        jp["batch_id"] = plan.table.batch_id;
        jp["table_csv"] = plan.table_csv;
        nlohmann::json prunes = nlohmann::json::array();
        for (const RankId& r : plan.prune_set)
            prunes.push_back({{"layer", r.module.layer},
                              {"module", to_string(r.module.kind)},
                              {"rank_index", r.index}});
        jp["prune_set"] = prunes;
        nlohmann::json grows = nlohmann::json::object();
        for (const auto& [id, count] : plan.grow_map) grows[to_string(id)] = count;
        jp["grow_map"] = grows;
        history.push_back(jp);
    }
    write_text(dir / "plan_history.json", history.dump(2) + "\n");

    std::string metrics;
    for (const EvalRecord& rec : out.result.log) {
        nlohmann::json jr = {{"step", rec.step},
                             {"train_loss", rec.train_loss},
                             {"dev_loss", rec.dev_loss},
                             {"lr", rec.lr},
                             {"active_ranks_total", rec.active_ranks_total}};
        metrics += jr.dump() + "\n";
    }
    write_text(dir / "metrics.jsonl", metrics);

    write_allocation_csv(dir / "allocation.csv", active_rank_count(out.net).per_module);
    save_checkpoint(dir / "checkpoint.alora", out.net);
}

int cmd_run(const std::string& config_path, const CliOverrides& overrides) {
    return guarded([&] {
        RunConfig cfg = load_run_config_file(config_path);
        if (overrides.seed) {
            cfg.seed = *overrides.seed;
            cfg.compare_seeds.clear();
            for (uint64_t i = 0; i < 5; ++i) cfg.compare_seeds.push_back(cfg.seed + i);
        }
        if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
        if (overrides.scorer) cfg.scorer = scorer_from_string(*overrides.scorer);

        std::cout << "resolved config:\n" << resolved_config_json(cfg).dump(2) << "\n";
        RunOutputs out = execute_run(cfg);
        write_run_artifacts(cfg, out);

        std::cout << "rounds: " << out.result.plans.size()
                  << "  steps: " << out.result.total_steps
                  << "  final dev loss: " << format_double(out.result.final_dev_loss)
                  << "  best dev loss: " << format_double(out.result.best_dev_loss) << "\n";
        if (out.has_teacher)
            std::cout << "rank recovery: " << format_double(out.recovery.score)
                      << (out.recovery.degenerate ? " (degenerate)" : "") << "\n";
        std::cout << "artifacts written to " << cfg.out_dir << "\n";
        return 0;
    });
}

int cmd_merge(const std::string& checkpoint_path, const std::string& out_path) {
    return guarded([&] {
        SuperNetwork net = load_checkpoint(checkpoint_path);
        Batch probe = probe_batch(net.cfg, 16, 0xa10a);
        std::vector<double> adapter_losses = per_example_losses(net, probe);

        SuperNetwork dense = clone_network(net);
        for (int layer = 0; layer < dense.cfg.n_layers; ++layer) {
            BlockWeights& w = dense.blocks[static_cast<size_t>(layer)];
            for (int k = 0; k < kNumModuleKinds; ++k) {
                ModuleKind kind = static_cast<ModuleKind>(k);
                AloraAdapter& ad = dense.adapters[static_cast<size_t>(layer)][static_cast<size_t>(k)];
                Tensor* slot = nullptr;
                switch (kind) {
                    case ModuleKind::Query: slot = &w.wq; break;
                    case ModuleKind::Key: slot = &w.wk; break;
                    case ModuleKind::Value: slot = &w.wv; break;
                    case ModuleKind::Output: slot = &w.wo; break;
                    case ModuleKind::Gate: slot = &w.wg; break;
                    case ModuleKind::Up: slot = &w.wu; break;
                    case ModuleKind::Down: slot = &w.wd; break;
                }
                *slot = merge_into_base(ad, *slot);
                auto [din, dout] = adapter_dims(kind, dense.cfg);
                RandomSource rng(0);
                ad = make_adapter(ModuleId{layer, kind}, din, dout, 0, rng);
            }
        }

        std::vector<double> dense_losses = per_example_losses(dense, probe);
        double worst = 0.0;
        for (size_t i = 0; i < adapter_losses.size(); ++i)
            worst = std::max(worst, std::fabs(adapter_losses[i] - dense_losses[i]));
        if (worst > 1e-6)
            throw InvariantError("merge verification failed: probe disagreement " +
                                 format_double(worst));

        std::map<std::string, Tensor> tensors = network_tensor_map(dense);
        for (auto it = tensors.begin(); it != tensors.end();) {
            if (it->first.rfind("adapter.", 0) == 0)
                it = tensors.erase(it);
            else
                ++it;
        }
        save_tensor_map(out_path, tensors);
        std::cout << "merged checkpoint written to " << out_path << " (probe disagreement "
                  << format_double(worst) << ")\n";
        return 0;
    });
}

int cmd_report(const std::string& run_dir) {
    return guarded([&] {
        fs::path dir(run_dir);
        fs::path cp = dir / "checkpoint.alora";
        fs::path ph = dir / "plan_history.json";
        if (!fs::exists(cp)) throw ConfigError("report: missing artifact " + cp.string());
        if (!fs::exists(ph)) throw ConfigError("report: missing artifact " + ph.string());

        SuperNetwork net = load_checkpoint(cp);
        RankCounts counts = active_rank_count(net);

        std::cout << "final rank allocation:\n";
        std::cout << "layer";
        for (int k = 0; k < kNumModuleKinds; ++k)
            std::cout << "\t" << to_string(static_cast<ModuleKind>(k));
        std::cout << "\ttotal\n";
        std::vector<int> col_totals(kNumModuleKinds, 0);
        for (int layer = 0; layer < net.cfg.n_layers; ++layer) {
            std::cout << layer;
            int row_total = 0;
            for (int k = 0; k < kNumModuleKinds; ++k) {
                int n = counts.per_module.at(ModuleId{layer, static_cast<ModuleKind>(k)});
                std::cout << "\t" << n;
                row_total += n;
                col_totals[static_cast<size_t>(k)] += n;
            }
            std::cout << "\t" << row_total << "\n";
        }
        std::cout << "total";
        for (int k = 0; k < kNumModuleKinds; ++k) std::cout << "\t" << col_totals[static_cast<size_t>(k)];
        std::cout << "\t" << counts.total << "\n";

        write_allocation_csv(dir / "allocation.csv", counts.per_module);

        std::ifstream in(ph);
        nlohmann::json history;
        try {
            in >> history;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("report: bad plan_history.json: " + std::string(e.what()));
        }
        std::cout << "rounds: " << history.size() << "\n";
        for (const auto& plan : history) {
            std::cout << "  round " << plan.at("round").get<int>() << ": pruned "
                      << plan.at("prune_set").size() << " rank(s)";
            const auto& grows = plan.at("grow_map");
            if (grows.empty()) {
                std::cout << ", no growth";
            } else {
                std::cout << ", grew";
                for (auto& [mod, count] : grows.items())
                    std::cout << " " << mod << "+" << count.get<int>();
            }
            std::cout << "\n";
        }
        return 0;
    });
}

int cmd_compare(const std::string& config_path, const std::vector<std::string>& scorers,
                const CliOverrides& overrides) {
    return guarded([&] {
        if (scorers.size() < 2)
            throw ArgumentError("compare: need at least 2 scorers, got " +
                                std::to_string(scorers.size()));
        RunConfig base = load_run_config_file(config_path);
        if (overrides.seed) {
            base.seed = *overrides.seed;
            base.compare_seeds.clear();
            for (uint64_t i = 0; i < 5; ++i) base.compare_seeds.push_back(base.seed + i);
        }
        if (overrides.out_dir) base.out_dir = *overrides.out_dir;

        std::vector<ScorerKind> kinds;
        for (const std::string& s : scorers) kinds.push_back(scorer_from_string(s));

        fs::create_directories(base.out_dir);
        std::string csv = "scorer,seed,final_dev_loss,rank_recovery\n";
        for (ScorerKind scorer : kinds) {
            for (uint64_t seed : base.compare_seeds) {
                RunConfig sub = base;
                sub.scorer = scorer;
                sub.seed = seed;
                sub.out_dir = base.out_dir + "/" + to_string(scorer) + "_seed" + std::to_string(seed);
                RunOutputs out = execute_run(sub);
                write_run_artifacts(sub, out);
                csv += std::string(to_string(scorer)) + "," + std::to_string(seed) + "," +
                       format_double(out.result.final_dev_loss) + ",";
                if (out.has_teacher) csv += format_double(out.recovery.score);
                csv += "\n";
                std::cout << to_string(scorer) << " seed " << seed << ": final dev loss "
                          << format_double(out.result.final_dev_loss) << "\n";
            }
        }
        write_text(fs::path(base.out_dir) / "compare.csv", csv);
        std::cout << "comparison written to " << base.out_dir << "/compare.csv\n";
        return 0;
    });
}

}  // namespace alora
