#include <CLI11.hpp>

#include <optional>
#include <string>
#include <vector>

#include "alora/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"ALoRA lab: gated low-rank adapters with ablation-guided rank allocation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string scorer;
    int64_t seed = -1;

    auto add_common = [&](CLI::App* cmd, bool with_scorer) {
        cmd->add_option("--config", config_path, "JSON run configuration")->required();
        cmd->add_option("--seed", seed, "master seed (overrides config)");
        cmd->add_option("--out", out_dir, "output directory (overrides config)");
        if (with_scorer)
            cmd->add_option("--scorer", scorer, "importance scorer: ablora|dnas|sensitivity");
    };

    CLI::App* run = app.add_subcommand("run", "execute the full allocation workflow");
    add_common(run, true);

    CLI::App* merge = app.add_subcommand("merge", "fold adapters into the base weights");
    std::string checkpoint_path, merge_out;
    merge->add_option("checkpoint", checkpoint_path, "input checkpoint")->required();
    merge->add_option("out", merge_out, "merged checkpoint path")->required();

    CLI::App* report = app.add_subcommand("report", "print rank allocation for a run directory");
    std::string run_dir;
    report->add_option("run_dir", run_dir, "directory produced by 'run'")->required();

    CLI::App* compare = app.add_subcommand("compare", "run the scorer ablation matrix");
    std::vector<std::string> scorers;
    add_common(compare, false);
    compare->add_option("--scorers", scorers, "two or more scorers")->required()->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    alora::CliOverrides overrides;
    if (seed >= 0) overrides.seed = static_cast<uint64_t>(seed);
    if (!out_dir.empty()) overrides.out_dir = out_dir;
    if (!scorer.empty()) overrides.scorer = scorer;

    if (run->parsed()) return alora::cmd_run(config_path, overrides);
    if (merge->parsed()) return alora::cmd_merge(checkpoint_path, merge_out);
    if (report->parsed()) return alora::cmd_report(run_dir);
    if (compare->parsed()) return alora::cmd_compare(config_path, scorers, overrides);
    return 2;
}
