#include "xlearner/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "xlearner/checkpoint.hpp"
#include "xlearner/errors.hpp"
#include "xlearner/metrics.hpp"
#include "xlearner/plots.hpp"
#include "xlearner/squeeze.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xl {

std::string_view to_string(Command c) {
    switch (c) {
        case Command::pretrain: return "pretrain";
        case Command::squeeze: return "squeeze";
        case Command::evaluate: return "evaluate";
        case Command::compare: return "compare";
        case Command::report: return "report";
    }
    return "?";
}

Command command_from_string(std::string_view s) {
    for (auto c : {Command::pretrain, Command::squeeze, Command::evaluate, Command::compare, Command::report})
        if (to_string(c) == s) return c;
    throw ValidationError("unknown command '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Report serialization

json to_json(const TransferReport& r) {
    json d = json::array();
    for (const auto& s : r.datasets)
        d.push_back({{"name", s.name}, {"accuracy", s.accuracy}, {"train_accuracy", s.train_accuracy},
                     {"best_lambda", s.best_lambda}});
    json j{{"schema_version", TransferReport::kSchemaVersion}, {"model", r.model}, {"datasets", d},
           {"avg_cls", r.avg_cls}};
    j["seg_miou"] = r.seg_miou ? json(*r.seg_miou) : json(nullptr);
    return j;
}

TransferReport transfer_report_from_json(const json& j) {
    if (j.value("schema_version", 0) != TransferReport::kSchemaVersion)
        throw SchemaError("unsupported transfer report schema");
    TransferReport r;
    r.model = j.at("model").get<std::string>();
    for (const auto& d : j.at("datasets"))
        r.datasets.push_back({d.at("name").get<std::string>(), d.at("accuracy").get<double>(),
                              d.at("train_accuracy").get<double>(), d.at("best_lambda").get<double>()});
    r.avg_cls = j.at("avg_cls").get<double>();
    if (!j.at("seg_miou").is_null()) r.seg_miou = j.at("seg_miou").get<double>();
    return r;
}

json to_json(const EvaluationSummary& s) {
    json reports = json::array();
    for (const auto& r : s.reports) reports.push_back(to_json(r));
    return {{"schema_version", 1}, {"variant", s.variant}, {"config_hash", s.config_hash},
            {"final_model", s.final_model}, {"reports", reports}};
}

EvaluationSummary evaluation_summary_from_json(const json& j) {
    if (j.value("schema_version", 0) != 1) throw SchemaError("unsupported evaluation report schema");
    EvaluationSummary s;
    s.variant = j.at("variant").get<std::string>();
    s.config_hash = j.at("config_hash").get<std::string>();
    s.final_model = j.at("final_model").get<std::string>();
    for (const auto& r : j.at("reports")) s.reports.push_back(transfer_report_from_json(r));
    return s;
}

const TransferReport* EvaluationSummary::find(const std::string& model) const {
    for (const auto& r : reports)
        if (r.model == model) return &r;
    return nullptr;
}

const TransferReport* EvaluationSummary::best_branch() const {
    const TransferReport* best = nullptr;
    for (const auto& r : reports)
        if (r.model.rfind("branch:", 0) == 0 && (!best || r.avg_cls > best->avg_cls)) best = &r;
    return best;
}

// ---------------------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) throw IoError("cannot write " + path.string());
    }
    fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

std::vector<std::size_t> final_widths(ExpandedBackbone<float>& m) {
    std::vector<std::size_t> w;
    for (std::size_t t = 0; t < m.num_tasks(); ++t) w.push_back(m.sub_backbone(t).channels().back());
    return w;
}

nn::ParamList<float> model_and_heads(ExpandedBackbone<float>& model, std::vector<Head<float>>& heads) {
    nn::ParamList<float> l = model.parameters();
    for (std::size_t t = 0; t < heads.size(); ++t) heads[t].collect(l, "head." + model.task_ids()[t]);
    return l;
}

struct LoadedExpanded {
    ExpandedBackbone<float> model;
    std::vector<Head<float>> heads;
};

// Rebuilds the expanded architecture of the variant and fills it from `bundle`.
LoadedExpanded load_expanded(const ExperimentConfig& config, const CheckpointBundle& bundle) {
    std::vector<std::string> ids;
    for (const auto& t : config.tasks) ids.push_back(t.task_id);
    LoadedExpanded out{config.variant == Variant::xlearner_r
                           ? [&] {
                                 const auto light = reversed_student_spec(config);
                                 std::vector<SubBackbone<float>> parts;
                                 for (std::size_t t = 0; t < ids.size(); ++t)
                                     parts.push_back(SubBackbone<float>::build(light, 0));
                                 return ExpandedBackbone<float>::join(ids, std::move(parts), Topology::shallow_to_deep, 0);
                             }()
                           : make_expanded(config),
                       {}};
    out.heads = make_heads(config, final_widths(out.model), config.global_seed);
    auto params = model_and_heads(out.model, out.heads);
    load_parameters(bundle, params, "model/");
    return out;
}

std::size_t feature_stage(const ExperimentConfig& c) {
    return c.eval.feature_stage == 0 ? c.backbone.depth() - 1 : c.eval.feature_stage - 1;
}

// Per-branch fused features of an expanded backbone, every branch fed the same images.
std::vector<Tensor<float>> branch_features(ExpandedBackbone<float>& m, const Tensor<float>& images, std::size_t stage) {
    ag::NoGradGuard ng;
    std::vector<ag::Var<float>> in(m.num_tasks(), ag::Var<float>(images));
    auto f = m.fused_forward(in, nn::Mode::eval());
    std::vector<Tensor<float>> out;
    for (std::size_t t = 0; t < m.num_tasks(); ++t) out.push_back(f.fused[t][stage].value());
    return out;
}

Tensor<float> concat_channels(const std::vector<Tensor<float>>& parts) {
    const Shape& s0 = parts.front().shape();
    std::size_t c = 0;
    for (const auto& p : parts) c += p.shape()[1];
    Tensor<float> out({s0[0], c, s0[2], s0[3]});
    const std::size_t hw = s0[2] * s0[3];
    float* dst = out.data();
    for (std::size_t b = 0; b < s0[0]; ++b)
        for (const auto& p : parts) {
            const std::size_t n = p.shape()[1] * hw;
            std::copy_n(p.data() + b * n, n, dst);
            dst += n;
        }
    return out;
}

FeatureMapFn sub_backbone_features(SubBackbone<float>& b, std::size_t stage) {
    return [&b, stage](const Tensor<float>& images) {
        ag::NoGradGuard ng;
        return b.forward(ag::Var<float>(images), nn::Mode::eval()).at(stage).value();
    };
}

}  // namespace

// ---------------------------------------------------------------------------

Pipeline::Pipeline(ExperimentConfig config, PipelineOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
    if (options_.output_dir) config_.output_dir = options_.output_dir->string();
    if (options_.seed) config_.global_seed = *options_.seed;
    if (options_.jobs == 0) throw ValidationError("--jobs must be at least 1");
    const auto report = validate_registry(config_);
    if (!report.ok()) throw ValidationError("invalid config:\n" + report.to_text());
    dir_ = config_.output_dir;
    hash_ = config_hash(config_);
}

void Pipeline::say(const std::string& line) const {
    if (options_.log) *options_.log << "[" << to_string(config_.variant) << "] " << line << std::endl;
}

std::string Pipeline::final_model_stage() const {
    switch (config_.variant) {
        case Variant::xlearner:
        case Variant::xlearner_t:
        case Variant::xlearner_pp: return "squeezed";
        case Variant::xlearner_p: return "pruned";
        case Variant::xlearner_r:
        case Variant::hard_sharing: return "expanded";
    }
    return "expanded";
}

namespace {

json step_json(const StepRecord& r, const std::string& stage) {
    json sources = json::array();
    for (const auto& s : r.per_source) {
        json e{{"task", s.task_id}, {"source", s.source_id}, {"loss", s.loss}};
        if (s.hint != 0.0) e["hint"] = s.hint;
        sources.push_back(e);
    }
    return {{"stage", stage}, {"step", r.step}, {"phase", r.phase}, {"lr", r.lr}, {"loss", r.loss},
            {"sources", sources}};
}

}  // namespace

void Pipeline::pretrain() {
    fs::create_directories(dir_);
    if (config_.variant == Variant::xlearner_r) return pretrain_reversed();

    const fs::path resume_path = artifact("expanded.resume.ckpt"), final_path = artifact("expanded.ckpt");
    const fs::path metrics_path = artifact("metrics.log");
    std::optional<CheckpointBundle> resume_from;
    if (options_.resume) {
        if (fs::exists(final_path)) {
            auto done = load_checkpoint(final_path);
            check_config_hash(done, hash_, options_.force);
            say("expansion already complete, nothing to resume");
            return;
        }
        if (fs::exists(resume_path)) {
            resume_from = load_checkpoint(resume_path);
            check_config_hash(*resume_from, hash_, options_.force);
        }
    }

    const auto data = build_task_data(config_);
    auto model = make_expanded(config_);
    auto heads = make_heads(config_, final_widths(model), config_.global_seed);
    TrainerOptions topt;
    topt.jobs = options_.jobs;
    topt.joint_only = config_.variant == Variant::hard_sharing;
    ExpansionTrainer trainer(config_, data, std::move(model), std::move(heads), config_.expansion_schedule, topt);
    if (config_.variant == Variant::xlearner_pp) {
        if (!resume_from) say("training single-source hint teachers");
        trainer.set_hint_teachers(make_hint_teachers(config_, options_.jobs, !resume_from),
                                  config_.pre_distill.hint_weight);
    }

    if (resume_from) {
        trainer.import_state(*resume_from);
        trainer.set_step(resume_from->step);
        const std::size_t from = resume_from->step;
        filter_metrics(metrics_path, [from](const json& r) {
            return r.value("stage", "") == "expansion" && r.value("step", std::size_t{0}) < from;
        });
        say("resuming expansion at step " + std::to_string(from));
    } else {
        fs::remove(metrics_path);
        for (const char* stale : {"phase1.ckpt", "expanded.resume.ckpt", "expanded.ckpt", "squeezed.ckpt",
                                  "pruned.ckpt", "report.json"})
            fs::remove(artifact(stale));
    }

    MetricsLog metrics(metrics_path);
    auto save = [&](const std::string& stage, const fs::path& path) {
        CheckpointBundle b;
        b.config_hash = hash_;
        b.stage = stage;
        trainer.export_state(b);
        b.meta = json{{"variant", to_string(config_.variant)}}.dump();
        save_checkpoint(b, path);
    };
    const std::size_t tau = config_.expansion_schedule.phase_threshold;
    const std::size_t total = config_.expansion_schedule.total_steps;
    while (!trainer.done()) {
        const StepRecord rec = trainer.step_once();
        metrics.emit(step_json(rec, "expansion"));
        const std::size_t s = trainer.step();
        if (s == tau && config_.variant != Variant::hard_sharing) save("phase1", artifact("phase1.ckpt"));
        if (s % config_.checkpoint_every == 0 && s < total) save("expanded-partial", resume_path);
        if (s % 100 == 0 || s == total) {
            std::ostringstream os;
            os << "expansion step " << s << "/" << total << " loss " << std::setprecision(4) << rec.loss;
            say(os.str());
        }
        if (options_.interrupt_after && s == *options_.interrupt_after)
            throw InterruptedError("interrupted after expansion step " + std::to_string(s));
    }
    save("expanded", final_path);
    fs::remove(resume_path);
}

void Pipeline::pretrain_reversed() {
    // The reversed order is not resumable mid-run; it restarts from scratch.
    const fs::path metrics_path = artifact("metrics.log");
    if (options_.resume && fs::exists(artifact("expanded.ckpt"))) {
        check_config_hash(load_checkpoint(artifact("expanded.ckpt")), hash_, options_.force);
        say("expansion already complete, nothing to resume");
        return;
    }
    fs::remove(metrics_path);
    for (const char* stale : {"expanded.ckpt", "report.json"}) fs::remove(artifact(stale));
    const auto data = build_task_data(config_);
    MetricsLog metrics(metrics_path);
    ReversedOptions ropt;
    ropt.jobs = options_.jobs;
    ropt.on_expansion_step = [&](const StepRecord& r) { metrics.emit(step_json(r, "expansion")); };
    ropt.on_distill_step = [&](std::size_t t, const DistillRecord& r) {
        metrics.emit({{"stage", "reversed-distill"}, {"task", config_.tasks[t].task_id}, {"step", r.step},
                      {"lr", r.lr}, {"loss", r.loss}, {"raw_loss", r.raw_loss}});
    };
    say("phase 1, per-task distillation into light sub-backbones, then joint expansion");
    auto result = run_reversed_pipeline(config_, data, ropt);
    CheckpointBundle b;
    b.config_hash = hash_;
    b.stage = "expanded";
    b.step = config_.expansion_schedule.total_steps;
    store_parameters(b, model_and_heads(result.model, result.heads), "model/");
    b.meta = json{{"variant", to_string(config_.variant)}, {"student_channels", result.student_channels},
                  {"distill_final_losses", result.distill_final_losses}}
                 .dump();
    save_checkpoint(b, artifact("expanded.ckpt"));
}

void Pipeline::squeeze() {
    const std::string target = final_model_stage();
    if (target == "expanded") {
        say("variant has no separate squeeze stage; the expanded model is final");
        return;
    }
    if (!fs::exists(artifact("expanded.ckpt")))
        throw IoError("missing " + artifact("expanded.ckpt").string() + "; run pretrain first");
    const auto bundle = load_checkpoint(artifact("expanded.ckpt"));
    check_config_hash(bundle, hash_, options_.force);
    if (bundle.stage != "expanded") throw SchemaError("expanded.ckpt holds stage '" + bundle.stage + "'");

    const auto data = build_task_data(config_);
    auto loaded = load_expanded(config_, bundle);
    const fs::path metrics_path = artifact("metrics.log");
    filter_metrics(metrics_path, [](const json& r) {
        const auto s = r.value("stage", "");
        return s != "squeeze" && s != "prune-finetune" && s != "evaluate";
    });
    fs::remove(artifact("report.json"));
    MetricsLog metrics(metrics_path);
    const SqueezePlan plan = make_squeeze_plan(config_);

    CheckpointBundle out;
    out.config_hash = hash_;
    out.stage = target;
    out.step = plan.schedule.total_steps;
    if (target == "pruned") {
        say("pruning to sparsity " + std::to_string(plan.prune_sparsity) + " and fine-tuning");
        TrainerOptions topt;
        topt.jobs = options_.jobs;
        topt.on_step = [&](const StepRecord& r) { metrics.emit(step_json(r, "prune-finetune")); };
        auto pruned = prune_and_finetune(config_, data, std::move(loaded.model), std::move(loaded.heads), plan, topt);
        store_parameters(out, model_and_heads(pruned.model, pruned.heads), "model/");
        auto params = pruned.model.parameters();
        out.meta = json{{"sparsity", plan.prune_sparsity},
                        {"prunable", pruned.mask.prunable},
                        {"pruned", pruned.mask.pruned},
                        {"nonzero", count_nonzero_prunable(params)}}
                       .dump();
    } else {
        say("distilling into a single sub-backbone");
        const std::size_t total = plan.schedule.total_steps;
        auto result = distill_squeeze(loaded.model, plan, data, derive_seed(config_.global_seed, "squeeze"),
                                      [&](const DistillRecord& r) {
                                          metrics.emit({{"stage", "squeeze"}, {"step", r.step}, {"lr", r.lr},
                                                        {"loss", r.loss}, {"raw_loss", r.raw_loss}});
                                          if ((r.step + 1) % 100 == 0 || r.step + 1 == total) {
                                              std::ostringstream os;
                                              os << "squeeze step " << r.step + 1 << "/" << total << " loss "
                                                 << std::setprecision(4) << r.loss;
                                              say(os.str());
                                          }
                                      });
        store_parameters(out, result.student.parameters(), "student/");
        out.meta = json{{"initial_loss", result.initial_loss}, {"final_loss", result.final_loss},
                        {"parameters", count_parameters(result.student)}}
                       .dump();
    }
    save_checkpoint(out, artifact(target + ".ckpt"));
}

EvaluationSummary Pipeline::evaluate() {
    const std::string target = final_model_stage();
    const fs::path target_path = artifact(target + ".ckpt");
    if (!fs::exists(target_path))
        throw IoError("missing " + target_path.string() + "; run " + (target == "expanded" ? "pretrain" : "squeeze") +
                      " first");
    const std::size_t stage = feature_stage(config_);
    const std::uint64_t probe_seed = derive_seed(config_.global_seed, "probe");
    EvaluationSummary summary;
    summary.variant = std::string(to_string(config_.variant));
    summary.config_hash = hash_;
    summary.final_model = target;

    auto run = [&](const FeatureMapFn& fn, std::size_t channels, const std::string& name) {
        say("probing " + name);
        summary.reports.push_back(evaluate_transfer(fn, channels, config_.eval, probe_seed, options_.jobs, name));
    };

    // Final model.
    const auto final_bundle = load_checkpoint(target_path);
    check_config_hash(final_bundle, hash_, options_.force);
    if (target == "squeezed") {
        auto student = SubBackbone<float>::build(config_.backbone, 0);
        auto p = student.parameters();
        load_parameters(final_bundle, p, "student/");
        run(sub_backbone_features(student, stage), student.channels()[stage], target);
    } else {
        auto loaded = load_expanded(config_, final_bundle);
        if (loaded.model.is_shared()) {
            auto& b = loaded.model.sub_backbone(0);
            run(sub_backbone_features(b, stage), b.channels()[stage], target);
        } else {
            std::size_t channels = 0;
            for (std::size_t t = 0; t < loaded.model.num_tasks(); ++t)
                channels += loaded.model.sub_backbone(t).channels()[stage];
            auto& m = loaded.model;
            run([&m, stage](const Tensor<float>& x) { return concat_channels(branch_features(m, x, stage)); },
                channels, target);
        }
    }

    // Baseline: the same architecture at initialization.
    auto random = SubBackbone<float>::build(config_.backbone, derive_seed(config_.global_seed, "random-init"));
    run(sub_backbone_features(random, stage), random.channels()[stage], "random-init");

    // Individual branches of the expanded teacher.
    if (fs::exists(artifact("expanded.ckpt"))) {
        const auto eb = load_checkpoint(artifact("expanded.ckpt"));
        check_config_hash(eb, hash_, options_.force);
        auto loaded = load_expanded(config_, eb);
        auto& m = loaded.model;
        if (!m.is_shared())
            for (std::size_t t = 0; t < m.num_tasks(); ++t)
                run([&m, stage, t](const Tensor<float>& x) { return branch_features(m, x, stage)[t]; },
                    m.sub_backbone(t).channels()[stage], "branch:" + m.task_ids()[t]);
    }

    write_text(artifact("report.json"), to_json(summary).dump(2) + "\n");
    MetricsLog metrics(artifact("metrics.log"));
    for (const auto& r : summary.reports) {
        json rec{{"stage", "evaluate"}, {"model", r.model}, {"avg_cls", r.avg_cls}};
        rec["seg_miou"] = r.seg_miou ? json(*r.seg_miou) : json(nullptr);
        metrics.emit(rec);
    }
    return summary;
}

void Pipeline::report() const {
    std::vector<std::pair<std::string, EvaluationSummary>> evaluated;
    std::vector<std::pair<std::string, fs::path>> logs;
    if (fs::exists(artifact("comparison.json"))) {
        const auto j = read_json(artifact("comparison.json"));
        for (const auto& v : j.at("variants")) {
            const std::string name = v.get<std::string>();
            const fs::path sub = dir_ / name;
            if (fs::exists(sub / "report.json"))
                evaluated.emplace_back(name, evaluation_summary_from_json(read_json(sub / "report.json")));
            if (fs::exists(sub / "metrics.log")) logs.emplace_back(name, sub / "metrics.log");
        }
    } else {
        if (fs::exists(artifact("report.json")))
            evaluated.emplace_back(std::string(to_string(config_.variant)),
                                   evaluation_summary_from_json(read_json(artifact("report.json"))));
        if (fs::exists(artifact("metrics.log")))
            logs.emplace_back(std::string(to_string(config_.variant)), artifact("metrics.log"));
    }
    if (evaluated.empty() && logs.empty())
        throw IoError("nothing to report in " + dir_.string() + "; run pretrain or compare first");

    std::vector<Series> expansion, squeeze;
    for (const auto& [name, path] : logs) {
        Series e{name, {}}, s{name, {}};
        for (const auto& r : read_metrics(path)) {
            const auto stage = r.value("stage", "");
            if (stage == "expansion")
                e.points.emplace_back(r.at("step").get<double>(), r.at("loss").get<double>());
            else if (stage == "squeeze" || stage == "prune-finetune")
                s.points.emplace_back(r.at("step").get<double>(), r.at("loss").get<double>());
        }
        e.points = smooth(e.points, 25);
        s.points = smooth(s.points, 25);
        if (!e.points.empty()) expansion.push_back(std::move(e));
        if (!s.points.empty()) squeeze.push_back(std::move(s));
    }
    if (!expansion.empty())
        write_text(artifact("loss_curves.svg"),
                   line_chart_svg("Expansion loss (25-step moving average)", "step", "averaged loss", expansion));
    if (!squeeze.empty())
        write_text(artifact("squeeze_curves.svg"),
                   line_chart_svg("Squeeze loss (25-step moving average)", "step", "loss", squeeze));

    if (!evaluated.empty()) {
        // One group per dataset plus AVG; one bar per evaluated model.
        std::vector<BarGroup> groups;
        auto add = [&](const std::string& group, const std::string& key, double v) {
            auto it = std::find_if(groups.begin(), groups.end(), [&](const BarGroup& g) { return g.label == group; });
            if (it == groups.end()) {
                groups.push_back({group, {}});
                it = groups.end() - 1;
            }
            it->bars.emplace_back(key, 100.0 * v);
        };
        const bool many = evaluated.size() > 1;
        for (const auto& [name, s] : evaluated)
            for (const auto& r : s.reports) {
                if (many && r.model != s.final_model && !(r.model == "random-init" && &s == &evaluated.front().second))
                    continue;
                const std::string key = many ? (r.model == "random-init" ? r.model : name) : r.model;
                for (const auto& d : r.datasets) add(d.name, key, d.accuracy);
                add("AVG", key, r.avg_cls);
            }
        write_text(artifact("probe_bars.svg"), bar_chart_svg("Linear probe accuracy", "accuracy (%)", groups, 100.0));
    }
    if (options_.log) *options_.log << "report written to " << dir_.string() << std::endl;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> dataset_names(const std::vector<EvaluationSummary>& rows) {
    std::vector<std::string> names;
    for (const auto& s : rows)
        for (const auto& r : s.reports)
            for (const auto& d : r.datasets)
                if (std::find(names.begin(), names.end(), d.name) == names.end()) names.push_back(d.name);
    return names;
}

struct TableRow {
    std::string label;
    const TransferReport* report;
};

std::vector<TableRow> table_rows(const std::vector<EvaluationSummary>& rows) {
    std::vector<TableRow> out;
    for (const auto& s : rows)
        if (const auto* r = s.find(s.final_model)) out.push_back({s.variant + " (" + s.final_model + ")", r});
    if (!rows.empty())
        if (const auto* r = rows.front().find("random-init")) out.push_back({"random-init", r});
    return out;
}

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << 100.0 * v;
    return os.str();
}

double accuracy_of(const TransferReport& r, const std::string& name) {
    for (const auto& d : r.datasets)
        if (d.name == name) return d.accuracy;
    return NAN;
}

}  // namespace

std::string comparison_markdown(const std::vector<EvaluationSummary>& rows) {
    const auto names = dataset_names(rows);
    std::ostringstream os;
    os << "| model |";
    for (const auto& n : names) os << ' ' << n << " |";
    os << " AVG | seg mIoU |\n|---|";
    for (std::size_t i = 0; i < names.size(); ++i) os << "---:|";
    os << "---:|---:|\n";
    for (const auto& row : table_rows(rows)) {
        os << "| " << row.label << " |";
        for (const auto& n : names) os << ' ' << pct(accuracy_of(*row.report, n)) << " |";
        os << ' ' << pct(row.report->avg_cls) << " | "
           << (row.report->seg_miou ? pct(*row.report->seg_miou) : std::string("-")) << " |\n";
    }
    return os.str();
}

std::string comparison_csv(const std::vector<EvaluationSummary>& rows) {
    const auto names = dataset_names(rows);
    std::ostringstream os;
    os << "model";
    for (const auto& n : names) os << ',' << n;
    os << ",avg_cls,seg_miou\n";
    os << std::setprecision(6);
    for (const auto& row : table_rows(rows)) {
        os << row.label;
        for (const auto& n : names) os << ',' << accuracy_of(*row.report, n);
        os << ',' << row.report->avg_cls << ',';
        if (row.report->seg_miou) os << *row.report->seg_miou;
        os << '\n';
    }
    return os.str();
}

std::vector<EvaluationSummary> run_compare(const ExperimentConfig& config, const PipelineOptions& options) {
    ExperimentConfig base = config;
    if (options.output_dir) base.output_dir = options.output_dir->string();
    const fs::path root = base.output_dir;
    fs::create_directories(root);
    std::vector<EvaluationSummary> rows;
    json variants = json::array();
    for (Variant v : base.compare_variants) {
        ExperimentConfig c = base;
        c.variant = v;
        c.recon_topology = default_topology(v);
        PipelineOptions o = options;
        o.output_dir = root / std::string(to_string(v));
        Pipeline p(c, o);
        variants.push_back(to_string(v));
        if (options.resume && fs::exists(p.artifact("report.json"))) {
            auto s = evaluation_summary_from_json(read_json(p.artifact("report.json")));
            if (s.config_hash == p.hash()) {
                rows.push_back(std::move(s));
                continue;
            }
        }
        p.pretrain();
        p.squeeze();
        rows.push_back(p.evaluate());
    }
    write_text(root / "comparison.md", comparison_markdown(rows));
    write_text(root / "comparison.csv", comparison_csv(rows));
    json summaries = json::array();
    for (const auto& s : rows) summaries.push_back(to_json(s));
    write_text(root / "comparison.json", json{{"schema_version", 1}, {"variants", variants}, {"results", summaries}}.dump(2));
    if (options.log) *options.log << comparison_markdown(rows);
    return rows;
}

int run_command(Command command, const fs::path& config_path, const PipelineOptions& options, std::ostream& err) {
    try {
        const ExperimentConfig config = load_experiment_config(config_path);
        if (command == Command::compare) {
            run_compare(config, options);
            return kExitOk;
        }
        Pipeline p(config, options);
        switch (command) {
            case Command::pretrain: p.pretrain(); break;
            case Command::squeeze: p.squeeze(); break;
            case Command::evaluate: {
                auto s = p.evaluate();
                if (options.log) *options.log << comparison_markdown({s});
                break;
            }
            case Command::report: p.report(); break;
            case Command::compare: break;
        }
        return kExitOk;
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ShapeError& e) {
        err << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const TrainingError& e) {
        err << "training failure: " << e.what() << "\n";
        return kExitTraining;
    } catch (const InterruptedError& e) {
        err << "interrupted: " << e.what() << "\n";
        return kExitTraining;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        err << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "training failure: " << e.what() << "\n";
        return kExitTraining;
    }
}

}  // namespace xl
