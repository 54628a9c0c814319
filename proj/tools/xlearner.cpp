// Command-line entry point: xlearner <pretrain|squeeze|evaluate|compare|report> --config FILE [options]

#include <iostream>

#include <CLI11.hpp>

#include "xlearner/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"X-Learner desk-scale pre-training pipeline"};
    app.require_subcommand(1);

    std::string config_path, output_dir;
    std::uint64_t seed = 0;
    bool resume = false, force = false, quiet = false;
    std::size_t jobs = 1;

    struct Sub {
        xl::Command command;
        const char* help;
    };
    const Sub subs[] = {
        {xl::Command::pretrain, "Run the expansion stage (per-variant phases) and write expanded.ckpt"},
        {xl::Command::squeeze, "Distill or prune the expanded backbone into the final model"},
        {xl::Command::evaluate, "Linear-probe transfer evaluation; writes report.json"},
        {xl::Command::compare, "Run every variant in compare_variants and write a comparison table"},
        {xl::Command::report, "Render loss curves and probe bars as SVG files"},
    };
    std::vector<std::pair<CLI::App*, xl::Command>> handles;
    for (const auto& s : subs) {
        auto* sub = app.add_subcommand(std::string(xl::to_string(s.command)), s.help);
        sub->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--output-dir", output_dir, "Override the config's output_dir");
        sub->add_option("--seed", seed, "Override the config's global_seed");
        sub->add_flag("--resume", resume, "Continue from checkpoints in the output directory");
        sub->add_flag("--force", force, "Accept checkpoints written under a different config");
        sub->add_option("--jobs", jobs, "Worker threads for per-task phase 1 and per-dataset probes")
            ->check(CLI::PositiveNumber);
        sub->add_flag("--quiet", quiet, "Suppress progress output");
        handles.emplace_back(sub, s.command);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? xl::kExitOk : xl::kExitValidation;
    }

    xl::PipelineOptions opt;
    for (const auto& [sub, command] : handles) {
        if (!sub->parsed()) continue;
        if (!output_dir.empty()) opt.output_dir = output_dir;
        if (sub->count("--seed")) opt.seed = seed;
        opt.resume = resume;
        opt.force = force;
        opt.jobs = jobs;
        if (!quiet) opt.log = &std::cout;
        return xl::run_command(command, config_path, opt, std::cerr);
    }
    return xl::kExitValidation;
}
