#include "xlearner/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xlearner/errors.hpp"

namespace xl {

using nlohmann::json;

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::xlearner: return "xlearner";
        case Variant::xlearner_r: return "xlearner_r";
        case Variant::xlearner_t: return "xlearner_t";
        case Variant::xlearner_p: return "xlearner_p";
        case Variant::xlearner_pp: return "xlearner_pp";
        case Variant::hard_sharing: return "hard_sharing";
    }
    return "?";
}

Variant variant_from_string(std::string_view s) {
    for (Variant v : all_variants())
        if (to_string(v) == s) return v;
    throw ValidationError("unknown variant '" + std::string(s) +
                          "' (expected xlearner, xlearner_r, xlearner_t, xlearner_p, xlearner_pp or hard_sharing)");
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::xlearner,   Variant::xlearner_r,  Variant::xlearner_t,
                                        Variant::xlearner_p, Variant::xlearner_pp, Variant::hard_sharing};
    return v;
}

Topology default_topology(Variant v) {
    if (v == Variant::xlearner_t) return Topology::deep_to_shallow;
    if (v == Variant::hard_sharing) return Topology::none;
    return Topology::shallow_to_deep;
}

std::string_view to_string(SqueezeMode m) { return m == SqueezeMode::distill ? "distill" : "prune"; }

const SourceSpec* ExperimentConfig::find_source(const std::string& id) const {
    for (const auto& s : sources)
        if (s.source_id == id) return &s;
    return nullptr;
}

std::size_t ExperimentConfig::task_index(const std::string& id) const {
    for (std::size_t t = 0; t < tasks.size(); ++t)
        if (tasks[t].task_id == id) return t;
    throw ValidationError("unknown task '" + id + "'");
}

double ExperimentConfig::prune_sparsity() const {
    return squeeze.prune_sparsity ? *squeeze.prune_sparsity : 1.0 - 1.0 / static_cast<double>(tasks.size());
}

double ExperimentConfig::reversed_width_factor() const {
    return squeeze.reversed_width_factor ? *squeeze.reversed_width_factor
                                         : 1.0 / std::sqrt(static_cast<double>(tasks.size()));
}

std::vector<std::size_t> ExperimentConfig::distill_stages() const {
    if (squeeze.distill_stages.empty()) return {backbone.depth() - 1};
    std::vector<std::size_t> out;
    for (auto s : squeeze.distill_stages) out.push_back(s - 1);
    return out;
}

std::size_t ExperimentConfig::pre_distill_teacher_steps() const {
    return pre_distill.teacher_steps ? *pre_distill.teacher_steps : expansion_schedule.phase_threshold;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

// Reads one JSON object, tracking its field path and rejecting unknown keys.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_, "expected an object");
    }

    [[noreturn]] static void fail(const std::string& path, const std::string& msg) {
        throw ValidationError((path.empty() ? std::string("<root>") : path) + ": " + msg);
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) {
        used_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }
    const json& at(const std::string& key) {
        if (!has(key)) fail(field(key), "required field missing");
        return j_.at(key);
    }

    template <class T>
    T get(const std::string& key) {
        return convert<T>(at(key), field(key));
    }
    template <class T>
    T get(const std::string& key, T fallback) {
        return has(key) ? convert<T>(j_.at(key), field(key)) : fallback;
    }
    template <class T>
    std::optional<T> get_optional(const std::string& key) {
        if (!has(key)) return std::nullopt;
        return convert<T>(j_.at(key), field(key));
    }

    template <class T>
    static T convert(const json& v, const std::string& path) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) fail(path, "expected a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) fail(path, "expected an integer");
            if constexpr (std::is_unsigned_v<T>)
                if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
                    fail(path, "expected a non-negative integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) fail(path, "expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) fail(path, "expected a string");
        } else {
            if (!v.is_array()) fail(path, "expected an array");
            T out;
            for (std::size_t i = 0; i < v.size(); ++i)
                out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
            return out;
        }
        return v.get<T>();
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) fail(field(it.key()), "unknown field");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class E, class F>
E parse_enum(Reader& r, const std::string& key, E fallback, F from_string) {
    if (!r.has(key)) return fallback;
    const auto s = r.get<std::string>(key);
    try {
        return from_string(s);
    } catch (const ValidationError& e) {
        Reader::fail(r.field(key), e.what());
    }
}

SyntheticGeneratorSpec parse_generator(const json& j, const std::string& path) {
    Reader r(j, path);
    SyntheticGeneratorSpec g;
    g.kind = parse_enum(r, "kind", g.kind, generator_kind_from_string);
    g.num_classes = r.get<std::size_t>("num_classes", g.num_classes);
    g.height = r.get<std::size_t>("height", g.height);
    g.width = r.get<std::size_t>("width", g.width);
    g.noise_level = r.get<double>("noise_level", g.noise_level);
    g.palette_seed = r.get<std::uint64_t>("palette_seed", g.palette_seed);
    g.distractors = r.get<std::size_t>("distractors", g.distractors);
    r.finish();
    return g;
}

json generator_json(const SyntheticGeneratorSpec& g) {
    return {{"kind", to_string(g.kind)},         {"num_classes", g.num_classes},
            {"height", g.height},                {"width", g.width},
            {"noise_level", g.noise_level},      {"palette_seed", g.palette_seed},
            {"distractors", g.distractors}};
}

ScheduleConfig parse_schedule(const json& j, const std::string& path, ScheduleConfig defaults, bool midpoint_tau) {
    Reader r(j, path);
    ScheduleConfig s = defaults;
    s.total_steps = r.get<std::size_t>("total_steps", s.total_steps);
    const auto tau = r.get_optional<std::size_t>("phase_threshold");
    s.phase_threshold = tau ? *tau : midpoint_tau ? (s.total_steps + 1) / 2 : s.total_steps;
    s.batch_size = r.get<std::size_t>("batch_size", s.batch_size);
    s.base_lr = r.get<double>("base_lr", s.base_lr);
    s.momentum = r.get<double>("momentum", s.momentum);
    s.weight_decay = r.get<double>("weight_decay", s.weight_decay);
    s.decay_factors = r.get<std::vector<double>>("decay_factors", s.decay_factors);
    s.decay_milestones = r.get<std::vector<double>>("decay_milestones", s.decay_milestones);
    r.finish();
    return s;
}

json schedule_json(const ScheduleConfig& s) {
    return {{"total_steps", s.total_steps}, {"phase_threshold", s.phase_threshold}, {"batch_size", s.batch_size},
            {"base_lr", s.base_lr},         {"momentum", s.momentum},               {"weight_decay", s.weight_decay},
            {"decay_factors", s.decay_factors}, {"decay_milestones", s.decay_milestones}};
}

SubBackboneSpec parse_backbone(const json& j, const std::string& path) {
    Reader r(j, path);
    SubBackboneSpec b;
    b.family = parse_enum(r, "family", b.family, backbone_family_from_string);
    if (b.family == BackboneFamily::resnet50) b = resnet50_spec();
    b.stage_channels = r.get<std::vector<std::size_t>>("stage_channels", b.stage_channels);
    b.width_scale = r.get<double>("width_scale", b.width_scale);
    b.channel_multiple = r.get<std::size_t>("channel_multiple", b.channel_multiple);
    if (r.has("input_shape")) {
        auto v = r.get<std::vector<std::size_t>>("input_shape");
        if (v.size() != 3) Reader::fail(r.field("input_shape"), "expected [channels, height, width]");
        b.input_shape = {v[0], v[1], v[2]};
    }
    r.finish();
    return b;
}

json backbone_json(const SubBackboneSpec& b) {
    return {{"family", to_string(b.family)},
            {"stage_channels", b.stage_channels},
            {"width_scale", b.width_scale},
            {"channel_multiple", b.channel_multiple},
            {"input_shape", std::vector<std::size_t>(b.input_shape.begin(), b.input_shape.end())}};
}

ProbeConfig parse_probe(const json& j, const std::string& path) {
    Reader r(j, path);
    ProbeConfig p;
    p.lambda_grid = r.get<std::vector<double>>("lambda_grid", p.lambda_grid);
    p.max_iterations = r.get<std::size_t>("max_iterations", p.max_iterations);
    p.feature_stage = r.get<std::size_t>("feature_stage", p.feature_stage);
    p.validation_fraction = r.get<double>("validation_fraction", p.validation_fraction);
    p.tolerance = r.get<double>("tolerance", p.tolerance);
    if (r.has("transfer_datasets")) {
        const json& arr = r.at("transfer_datasets");
        if (!arr.is_array()) Reader::fail(r.field("transfer_datasets"), "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string dp = r.field("transfer_datasets") + "[" + std::to_string(i) + "]";
            Reader d(arr[i], dp);
            TransferDatasetSpec t;
            t.name = d.get<std::string>("name");
            t.generator = parse_generator(d.at("generator"), d.field("generator"));
            t.train_size = d.get<std::size_t>("train_size", t.train_size);
            t.test_size = d.get<std::size_t>("test_size", t.test_size);
            t.seed = d.get<std::uint64_t>("seed", t.seed);
            d.finish();
            p.transfer_datasets.push_back(std::move(t));
        }
    }
    if (r.has("seg_finetune")) {
        Reader s(r.at("seg_finetune"), r.field("seg_finetune"));
        SegFinetuneSpec f;
        if (s.has("generator")) f.generator = parse_generator(s.at("generator"), s.field("generator"));
        f.train_size = s.get<std::size_t>("train_size", f.train_size);
        f.test_size = s.get<std::size_t>("test_size", f.test_size);
        f.seed = s.get<std::uint64_t>("seed", f.seed);
        f.steps = s.get<std::size_t>("steps", f.steps);
        f.batch_size = s.get<std::size_t>("batch_size", f.batch_size);
        f.lr = s.get<double>("lr", f.lr);
        s.finish();
        p.seg_finetune = f;
    }
    r.finish();
    return p;
}

json probe_json(const ProbeConfig& p) {
    json j{{"lambda_grid", p.lambda_grid},
           {"max_iterations", p.max_iterations},
           {"feature_stage", p.feature_stage},
           {"validation_fraction", p.validation_fraction},
           {"tolerance", p.tolerance}};
    json ds = json::array();
    for (const auto& t : p.transfer_datasets)
        ds.push_back({{"name", t.name},
                      {"generator", generator_json(t.generator)},
                      {"train_size", t.train_size},
                      {"test_size", t.test_size},
                      {"seed", t.seed}});
    j["transfer_datasets"] = ds;
    if (p.seg_finetune) {
        const auto& f = *p.seg_finetune;
        j["seg_finetune"] = {{"generator", generator_json(f.generator)},
                             {"train_size", f.train_size},
                             {"test_size", f.test_size},
                             {"seed", f.seed},
                             {"steps", f.steps},
                             {"batch_size", f.batch_size},
                             {"lr", f.lr}};
    }
    return j;
}

ExperimentConfig from_json(const json& root) {
    Reader r(root, "");
    ExperimentConfig c;
    c.version = r.get<int>("version");
    if (c.version != kConfigVersion)
        Reader::fail("version", "unsupported config version " + std::to_string(c.version) + " (expected " +
                                    std::to_string(kConfigVersion) + ")");
    c.global_seed = r.get<std::uint64_t>("global_seed", c.global_seed);
    if (r.has("output_dir")) c.output_dir = r.get<std::string>("output_dir");
    c.variant = parse_enum(r, "variant", c.variant, variant_from_string);
    c.recon_topology = parse_enum(r, "recon_topology", default_topology(c.variant), topology_from_string);
    c.checkpoint_every = r.get<std::size_t>("checkpoint_every", c.checkpoint_every);
    if (r.has("compare_variants")) {
        c.compare_variants.clear();
        auto names = r.get<std::vector<std::string>>("compare_variants");
        for (std::size_t i = 0; i < names.size(); ++i) {
            try {
                c.compare_variants.push_back(variant_from_string(names[i]));
            } catch (const ValidationError& e) {
                Reader::fail("compare_variants[" + std::to_string(i) + "]", e.what());
            }
        }
    }

    c.backbone = parse_backbone(r.at("backbone"), "backbone");

    const json& tasks = r.at("tasks");
    if (!tasks.is_array()) Reader::fail("tasks", "expected an array");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        Reader t(tasks[i], "tasks[" + std::to_string(i) + "]");
        TaskSpec spec;
        spec.task_id = t.get<std::string>("task_id");
        spec.loss_kind = parse_enum(t, "loss_kind", spec.loss_kind, loss_kind_from_string);
        spec.head.kind = spec.loss_kind;
        if (t.has("head")) {
            Reader h(t.at("head"), t.field("head"));
            spec.head.num_classes = h.get<std::size_t>("num_classes");
            h.finish();
        }
        spec.source_ids = t.get<std::vector<std::string>>("source_ids");
        t.finish();
        c.tasks.push_back(std::move(spec));
    }

    const json& sources = r.at("sources");
    if (!sources.is_array()) Reader::fail("sources", "expected an array");
    for (std::size_t i = 0; i < sources.size(); ++i) {
        Reader s(sources[i], "sources[" + std::to_string(i) + "]");
        SourceSpec spec;
        spec.source_id = s.get<std::string>("source_id");
        spec.task_id = s.get<std::string>("task_id");
        spec.generator = parse_generator(s.at("generator"), s.field("generator"));
        spec.size = s.get<std::size_t>("size");
        spec.seed = s.get<std::uint64_t>("seed", spec.seed);
        s.finish();
        c.sources.push_back(std::move(spec));
    }
    // A task's head defaults to its first source's class count.
    for (std::size_t i = 0; i < c.tasks.size(); ++i) {
        auto& t = c.tasks[i];
        if (!tasks[i].contains("head") && !t.source_ids.empty())
            if (const auto* s = c.find_source(t.source_ids.front())) t.head.num_classes = s->generator.num_classes;
    }

    if (r.has("expansion_schedule"))
        c.expansion_schedule = parse_schedule(r.at("expansion_schedule"), "expansion_schedule", ScheduleConfig{}, true);
    if (r.has("squeeze_schedule"))
        c.squeeze_schedule = parse_schedule(r.at("squeeze_schedule"), "squeeze_schedule", ExperimentConfig{}.squeeze_schedule,
                                            false);
    if (r.has("squeeze")) {
        Reader q(r.at("squeeze"), "squeeze");
        c.squeeze.distill_stages = q.get<std::vector<std::size_t>>("distill_stages", {});
        c.squeeze.prune_sparsity = q.get_optional<double>("prune_sparsity");
        c.squeeze.student_init = q.get<std::string>("student_init", c.squeeze.student_init);
        c.squeeze.reversed_width_factor = q.get_optional<double>("reversed_width_factor");
        q.finish();
    }
    if (r.has("pre_distill")) {
        Reader p(r.at("pre_distill"), "pre_distill");
        c.pre_distill.hint_weight = p.get<double>("hint_weight", c.pre_distill.hint_weight);
        c.pre_distill.teacher_steps = p.get_optional<std::size_t>("teacher_steps");
        p.finish();
    }
    if (r.has("eval")) c.eval = parse_probe(r.at("eval"), "eval");
    r.finish();
    return c;
}

json to_json_value(const ExperimentConfig& c, bool include_output_dir) {
    json j;
    j["version"] = c.version;
    j["global_seed"] = c.global_seed;
    if (include_output_dir) j["output_dir"] = c.output_dir.generic_string();
    j["variant"] = to_string(c.variant);
    j["recon_topology"] = to_string(c.recon_topology);
    j["checkpoint_every"] = c.checkpoint_every;
    json cv = json::array();
    for (auto v : c.compare_variants) cv.push_back(to_string(v));
    j["compare_variants"] = cv;
    j["backbone"] = backbone_json(c.backbone);
    json tasks = json::array();
    for (const auto& t : c.tasks)
        tasks.push_back({{"task_id", t.task_id},
                         {"loss_kind", to_string(t.loss_kind)},
                         {"head", {{"num_classes", t.head.num_classes}}},
                         {"source_ids", t.source_ids}});
    j["tasks"] = tasks;
    json sources = json::array();
    for (const auto& s : c.sources)
        sources.push_back({{"source_id", s.source_id},
                           {"task_id", s.task_id},
                           {"generator", generator_json(s.generator)},
                           {"size", s.size},
                           {"seed", s.seed}});
    j["sources"] = sources;
    j["expansion_schedule"] = schedule_json(c.expansion_schedule);
    j["squeeze_schedule"] = schedule_json(c.squeeze_schedule);
    json sq{{"distill_stages", c.squeeze.distill_stages}, {"student_init", c.squeeze.student_init}};
    if (c.squeeze.prune_sparsity) sq["prune_sparsity"] = *c.squeeze.prune_sparsity;
    if (c.squeeze.reversed_width_factor) sq["reversed_width_factor"] = *c.squeeze.reversed_width_factor;
    j["squeeze"] = sq;
    json pd{{"hint_weight", c.pre_distill.hint_weight}};
    if (c.pre_distill.teacher_steps) pd["teacher_steps"] = *c.pre_distill.teacher_steps;
    j["pre_distill"] = pd;
    j["eval"] = probe_json(c.eval);
    return j;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigParseError(std::string("config parse error: ") + e.what());
    }
    ExperimentConfig c = from_json(root);
    const auto report = validate_registry(c);
    if (!report.ok()) throw ValidationError("invalid config:\n" + report.to_text());
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str());
}

std::string to_json_text(const ExperimentConfig& config) { return to_json_value(config, true).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& config) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << fnv1a64(to_json_value(config, false).dump());
    return os.str();
}

ExperimentConfig restrict_to_task(const ExperimentConfig& config, const std::string& task_id) {
    ExperimentConfig c = config;
    const auto& task = config.tasks.at(config.task_index(task_id));
    c.tasks = {task};
    c.sources.clear();
    for (const auto& s : config.sources)
        if (s.task_id == task_id) c.sources.push_back(s);
    return c;
}

// ---------------------------------------------------------------------------
// Validation

std::vector<std::string> probe_config_issues(const ProbeConfig& c) {
    std::vector<std::string> out;
    if (c.lambda_grid.empty()) out.push_back("lambda_grid: must not be empty");
    for (double l : c.lambda_grid)
        if (!(l > 0)) out.push_back("lambda_grid: entries must be positive");
    if (c.max_iterations == 0) out.push_back("max_iterations: must be at least 1");
    if (!(c.validation_fraction > 0 && c.validation_fraction < 1))
        out.push_back("validation_fraction: must be in (0, 1)");
    if (!(c.tolerance > 0)) out.push_back("tolerance: must be positive");
    std::set<std::string> names;
    for (std::size_t i = 0; i < c.transfer_datasets.size(); ++i) {
        const auto& d = c.transfer_datasets[i];
        const std::string p = "transfer_datasets[" + std::to_string(i) + "]";
        if (!names.insert(d.name).second) out.push_back(p + ".name: duplicate dataset '" + d.name + "'");
        if (d.generator.dense()) out.push_back(p + ".generator: transfer datasets must be classification");
        try {
            validate_generator(d.generator);
        } catch (const ValidationError& e) {
            out.push_back(p + ".generator: " + e.what());
        }
        if (d.train_size < 2 * d.generator.num_classes) out.push_back(p + ".train_size: too small");
        if (d.test_size == 0) out.push_back(p + ".test_size: must be positive");
    }
    if (c.seg_finetune) {
        const auto& f = *c.seg_finetune;
        if (!f.generator.dense()) out.push_back("seg_finetune.generator: must be shape-seg");
        try {
            validate_generator(f.generator);
        } catch (const ValidationError& e) {
            out.push_back(std::string("seg_finetune.generator: ") + e.what());
        }
        if (f.batch_size == 0 || f.train_size < f.batch_size) out.push_back("seg_finetune.train_size: smaller than batch");
        if (f.test_size == 0) out.push_back("seg_finetune.test_size: must be positive");
    }
    return out;
}

ValidationReport validate_registry(const ExperimentConfig& c) {
    ValidationReport r;
    auto issue = [&](std::string path, std::string msg) { r.issues.push_back({std::move(path), std::move(msg)}); };

    if (c.version != kConfigVersion) issue("version", "unsupported config version");
    if (c.tasks.empty()) issue("tasks", "at least one task is required (T >= 1)");

    try {
        validate_spec(c.backbone);
    } catch (const ShapeError& e) {
        issue("backbone", e.what());
    }
    if (c.backbone.input_shape[0] != 3) issue("backbone.input_shape", "images have 3 channels");

    std::set<std::string> task_ids;
    for (std::size_t i = 0; i < c.tasks.size(); ++i) {
        const auto& t = c.tasks[i];
        const std::string p = "tasks[" + std::to_string(i) + "]";
        if (t.task_id.empty()) issue(p + ".task_id", "must not be empty");
        if (!task_ids.insert(t.task_id).second) issue(p + ".task_id", "duplicate task_id '" + t.task_id + "'");
        if (t.source_ids.empty()) issue(p + ".source_ids", "task '" + t.task_id + "' needs at least one source (N_t >= 1)");
        if (t.head.kind != t.loss_kind) issue(p + ".head", "head kind does not match loss_kind");
        std::set<std::string> seen;
        for (std::size_t n = 0; n < t.source_ids.size(); ++n) {
            const auto& id = t.source_ids[n];
            const std::string sp = p + ".source_ids[" + std::to_string(n) + "]";
            if (!seen.insert(id).second) issue(sp, "source '" + id + "' listed twice");
            const SourceSpec* s = c.find_source(id);
            if (!s) {
                issue(sp, "dangling source_id '" + id + "'");
                continue;
            }
            if (s->task_id != t.task_id)
                issue(sp, "source '" + id + "' belongs to task '" + s->task_id + "', not '" + t.task_id + "'");
            if (s->generator.dense() != (t.loss_kind == LossKind::per_pixel_ce))
                issue(sp, "source '" + id + "' generator does not produce " + std::string(to_string(t.loss_kind)) +
                              " labels");
            if (s->generator.num_classes != t.head.num_classes)
                issue(sp, "source '" + id + "' has " + std::to_string(s->generator.num_classes) +
                              " classes but the head predicts " + std::to_string(t.head.num_classes));
        }
    }

    std::set<std::string> source_ids;
    for (std::size_t i = 0; i < c.sources.size(); ++i) {
        const auto& s = c.sources[i];
        const std::string p = "sources[" + std::to_string(i) + "]";
        if (!source_ids.insert(s.source_id).second) issue(p + ".source_id", "duplicate source_id '" + s.source_id + "'");
        if (!task_ids.count(s.task_id)) issue(p + ".task_id", "unknown task '" + s.task_id + "'");
        bool referenced = false;
        for (const auto& t : c.tasks)
            for (const auto& id : t.source_ids) referenced = referenced || (id == s.source_id && t.task_id == s.task_id);
        if (!referenced && task_ids.count(s.task_id))
            issue(p, "source '" + s.source_id + "' is not listed by task '" + s.task_id + "'");
        try {
            validate_generator(s.generator);
        } catch (const ValidationError& e) {
            issue(p + ".generator", e.what());
        }
        if (s.generator.height != c.backbone.input_shape[1] || s.generator.width != c.backbone.input_shape[2])
            issue(p + ".generator", "image size does not match backbone.input_shape");
        if (s.size < 2 * c.expansion_schedule.batch_size)
            issue(p + ".size", "source too small: " + std::to_string(s.size) + " < 2 x batch size " +
                                   std::to_string(c.expansion_schedule.batch_size));
    }

    const Topology expected = default_topology(c.variant);
    if (c.recon_topology != expected)
        issue("recon_topology", "variant " + std::string(to_string(c.variant)) + " requires topology " +
                                    std::string(to_string(expected)) + ", got " + std::string(to_string(c.recon_topology)));

    for (const auto& m : schedule_issues(c.expansion_schedule)) issue("expansion_schedule", m);
    for (const auto& m : schedule_issues(c.squeeze_schedule)) issue("squeeze_schedule", m);
    if (c.squeeze_schedule.batch_size == 0) issue("squeeze_schedule.batch_size", "must be positive");

    for (std::size_t i = 0; i < c.squeeze.distill_stages.size(); ++i) {
        const auto s = c.squeeze.distill_stages[i];
        if (s < 1 || s > c.backbone.depth())
            issue("squeeze.distill_stages[" + std::to_string(i) + "]",
                  "stage must be in [1, " + std::to_string(c.backbone.depth()) + "]");
    }
    if (c.squeeze.student_init != "fresh" && c.squeeze.student_init != "warm")
        issue("squeeze.student_init", "must be 'fresh' or 'warm'");
    if (!c.tasks.empty()) {
        const double s = c.prune_sparsity();
        if (c.variant == Variant::xlearner_p && !(s > 0 && s < 1))
            issue("squeeze.prune_sparsity", "sparsity must be in (0, 1) (set it explicitly when T = 1)");
        if (c.squeeze.prune_sparsity && !(s > 0 && s < 1)) issue("squeeze.prune_sparsity", "sparsity must be in (0, 1)");
        const double f = c.reversed_width_factor();
        if (!(f > 0)) {
            issue("squeeze.reversed_width_factor", "must be positive");
        } else if (c.variant == Variant::xlearner_r) {
            try {
                scale_channels(c.backbone.effective_channels(), f, c.backbone.channel_multiple);
            } catch (const std::exception& e) {
                issue("squeeze.reversed_width_factor", e.what());
            }
        }
    }
    if (c.pre_distill.hint_weight < 0) issue("pre_distill.hint_weight", "must be non-negative");
    if (c.pre_distill.teacher_steps && *c.pre_distill.teacher_steps == 0)
        issue("pre_distill.teacher_steps", "must be positive");

    for (const auto& m : probe_config_issues(c.eval)) issue("eval." + m.substr(0, m.find(':')), m.substr(m.find(':') + 2));
    if (c.eval.feature_stage > c.backbone.depth())
        issue("eval.feature_stage", "stage must be at most " + std::to_string(c.backbone.depth()));
    for (const auto& d : c.eval.transfer_datasets)
        if (d.generator.height != c.backbone.input_shape[1] || d.generator.width != c.backbone.input_shape[2])
            issue("eval.transfer_datasets", "dataset '" + d.name + "' image size does not match backbone.input_shape");

    if (c.checkpoint_every == 0) issue("checkpoint_every", "must be at least 1");
    if (c.compare_variants.empty()) issue("compare_variants", "must list at least one variant");
    return r;
}

std::string ValidationReport::to_text() const {
    if (issues.empty()) return "config OK: no issues\n";
    std::ostringstream os;
    os << issues.size() << " issue(s):\n";
    for (const auto& i : issues) os << "  " << i.path << ": " << i.message << "\n";
    return os.str();
}

std::string ValidationReport::to_json() const {
    json arr = json::array();
    for (const auto& i : issues) arr.push_back({{"path", i.path}, {"message", i.message}});
    return json{{"ok", ok()}, {"issues", arr}}.dump();
}

}  // namespace xl
