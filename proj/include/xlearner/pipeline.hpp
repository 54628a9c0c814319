#pragma once

// Stage orchestration behind the command-line tool: pre-training per variant,
// squeeze, transfer evaluation, variant comparison and report rendering.
// Every stage reads and writes artifacts under one output directory.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlearner/config.hpp"
#include "xlearner/probe.hpp"

namespace xl {

enum class Command { pretrain, squeeze, evaluate, compare, report };
std::string_view to_string(Command c);
Command command_from_string(std::string_view s);

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitTraining = 2, kExitIo = 3 };

struct PipelineOptions {
    std::optional<std::filesystem::path> output_dir;  // overrides the config's output_dir
    std::optional<std::uint64_t> seed;                // overrides the config's global_seed
    bool resume = false;
    bool force = false;  // accept checkpoints written under a different config hash
    std::size_t jobs = 1;
    std::ostream* log = nullptr;  // progress lines; silent when null
    // Stops pre-training right after this expansion step, as an interruption would.
    std::optional<std::size_t> interrupt_after;
};

// Raised when `interrupt_after` is reached.
class InterruptedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EvaluationSummary {
    std::string variant;
    std::string config_hash;
    std::string final_model;  // squeezed | pruned | expanded
    std::vector<TransferReport> reports;  // final model first, then baselines and branches

    const TransferReport* find(const std::string& model) const;
    // Highest-scoring "branch:<task>" report, or null for shared backbones.
    const TransferReport* best_branch() const;
};

nlohmann::json to_json(const TransferReport& r);
TransferReport transfer_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvaluationSummary& s);
EvaluationSummary evaluation_summary_from_json(const nlohmann::json& j);

class Pipeline {
public:
    // Applies the option overrides and re-validates the result.
    Pipeline(ExperimentConfig config, PipelineOptions options);

    const ExperimentConfig& config() const { return config_; }
    const std::filesystem::path& dir() const { return dir_; }
    const std::string& hash() const { return hash_; }
    std::filesystem::path artifact(const std::string& name) const { return dir_ / name; }

    void pretrain();
    void squeeze();
    EvaluationSummary evaluate();
    // SVG loss curves and probe bars from the artifacts in dir().
    void report() const;

    // Which checkpoint holds the variant's final model.
    std::string final_model_stage() const;

private:
    void say(const std::string& line) const;
    void pretrain_reversed();

    ExperimentConfig config_;
    PipelineOptions options_;
    std::filesystem::path dir_;
    std::string hash_;
};

// Runs pretrain, squeeze and evaluate for every variant in config.compare_variants,
// each under <output_dir>/<variant>, and writes comparison.{md,csv,json}.
std::vector<EvaluationSummary> run_compare(const ExperimentConfig& config, const PipelineOptions& options);

std::string comparison_markdown(const std::vector<EvaluationSummary>& rows);
std::string comparison_csv(const std::vector<EvaluationSummary>& rows);

// Loads the config, runs one command and maps failures to exit codes, printing
// the reason to `err`.
int run_command(Command command, const std::filesystem::path& config_path, const PipelineOptions& options,
                std::ostream& err);

}  // namespace xl
