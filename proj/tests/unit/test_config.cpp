#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xlearner/config.hpp"
#include "xlearner/errors.hpp"

using namespace xl;
using nlohmann::json;

namespace {

json base_json() {
    std::ifstream in(std::string(XL_SOURCE_DIR) + "/configs/base.json");
    return json::parse(in);
}

// Minimal 2-task / 3-source config.
json small_json() {
    return json::parse(R"({
      "version": 1,
      "backbone": {"stage_channels": [8, 16, 32, 64]},
      "tasks": [
        {"task_id": "cls", "loss_kind": "multiclass-ce", "source_ids": ["a", "b"]},
        {"task_id": "seg", "loss_kind": "per-pixel-ce", "source_ids": ["c"]}
      ],
      "sources": [
        {"source_id": "a", "task_id": "cls", "size": 100, "generator": {"kind": "shape-class", "num_classes": 4}},
        {"source_id": "b", "task_id": "cls", "size": 100, "generator": {"kind": "texture-class", "num_classes": 4}},
        {"source_id": "c", "task_id": "seg", "size": 100, "generator": {"kind": "shape-seg", "num_classes": 3}}
      ],
      "expansion_schedule": {"total_steps": 10, "batch_size": 8}
    })");
}

bool has_issue(const ValidationReport& r, const std::string& needle) {
    for (const auto& i : r.issues)
        if ((i.path + ": " + i.message).find(needle) != std::string::npos) return true;
    return false;
}

std::string error_of(const json& j) {
    try {
        parse_experiment_config(j.dump());
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("small config maps fields directly") {
    auto c = parse_experiment_config(small_json().dump());
    CHECK(c.num_tasks() == 2);
    CHECK(c.tasks[0].source_ids.size() == 2);
    CHECK(c.tasks[1].source_ids.size() == 1);
    CHECK(c.tasks[0].head.num_classes == 4);
    CHECK(c.tasks[1].head.num_classes == 3);
    CHECK(c.expansion_schedule.phase_threshold == 5);
    CHECK(c.recon_topology == Topology::shallow_to_deep);
    CHECK(validate_registry(c).ok());
}

TEST_CASE("tau defaults to the midpoint, rounded up") {
    auto j = small_json();
    j["expansion_schedule"]["total_steps"] = 2001;
    CHECK(parse_experiment_config(j.dump()).expansion_schedule.phase_threshold == 1001);
}

TEST_CASE("the shipped configs are valid") {
    auto c = parse_experiment_config(base_json().dump());
    CHECK(c.expansion_schedule.total_steps == 2000);
    CHECK(c.expansion_schedule.phase_threshold == 1000);
    CHECK(c.sources.size() == 5);
    CHECK(validate_registry(c).ok());
    CHECK_NOTHROW(load_experiment_config(std::string(XL_SOURCE_DIR) + "/configs/micro.json"));
}

TEST_CASE("(task, source) pairs equal the multi-source index set") {
    auto c = parse_experiment_config(base_json().dump());
    std::multiset<std::pair<std::string, std::string>> pairs, expected;
    for (const auto& t : c.tasks)
        for (const auto& s : t.source_ids) pairs.insert({t.task_id, s});
    for (const auto& s : c.sources) expected.insert({s.task_id, s.source_id});
    CHECK(pairs == expected);
}

TEST_CASE("dangling source references name the source") {
    auto j = small_json();
    j["tasks"][0]["source_ids"].push_back("cls_blob_9");
    const auto msg = error_of(j);
    CHECK(msg.find("cls_blob_9") != std::string::npos);
    CHECK(msg.find("tasks[0].source_ids[2]") != std::string::npos);
}

TEST_CASE("variant and topology must agree") {
    auto j = small_json();
    j["variant"] = "xlearner_t";
    j["recon_topology"] = "shallow-to-deep";
    CHECK(error_of(j).find("recon_topology") != std::string::npos);
    j.erase("recon_topology");
    CHECK(parse_experiment_config(j.dump()).recon_topology == Topology::deep_to_shallow);
    j["variant"] = "hard_sharing";
    CHECK(parse_experiment_config(j.dump()).recon_topology == Topology::none);
    j["recon_topology"] = "shallow-to-deep";
    CHECK(!error_of(j).empty());
    j["variant"] = "xlearner_q";
    CHECK(error_of(j).find("unknown variant") != std::string::npos);
}

TEST_CASE("registry issues are reported as data") {
    auto c = parse_experiment_config(small_json().dump());
    auto bad = c;
    bad.sources[0].size = 10;
    CHECK(has_issue(validate_registry(bad), "source too small"));
    bad = c;
    bad.tasks[1].task_id = "cls";
    CHECK(has_issue(validate_registry(bad), "duplicate task_id 'cls'"));
    bad = c;
    bad.tasks.clear();
    CHECK(has_issue(validate_registry(bad), "T >= 1"));
    bad = c;
    bad.tasks[0].source_ids.clear();
    CHECK(has_issue(validate_registry(bad), "N_t >= 1"));
    bad = c;
    bad.sources[2].generator.num_classes = 5;
    CHECK(has_issue(validate_registry(bad), "head predicts"));
    bad = c;
    bad.expansion_schedule.phase_threshold = 11;
    CHECK(!validate_registry(bad).ok());
    // validate_registry never mutates its argument.
    auto copy = bad;
    (void)validate_registry(bad);
    CHECK(copy == bad);
}

TEST_CASE("malformed and mistyped files are rejected") {
    CHECK_THROWS_AS(parse_experiment_config("{ not json"), ConfigParseError);
    auto j = small_json();
    j["tasks"][0]["sourceids"] = json::array();
    CHECK(error_of(j).find("tasks[0].sourceids") != std::string::npos);
    j = small_json();
    j["expansion_schedule"]["total_steps"] = "many";
    CHECK(error_of(j).find("expansion_schedule.total_steps") != std::string::npos);
    j = small_json();
    j["version"] = 2;
    CHECK(error_of(j).find("version") != std::string::npos);
    CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("serialization round-trips and is deterministic") {
    for (auto j : {small_json(), base_json()}) {
        auto c = parse_experiment_config(j.dump());
        auto text = to_json_text(c);
        auto again = parse_experiment_config(text);
        CHECK(again == c);
        CHECK(to_json_text(again) == text);
        CHECK(config_hash(again) == config_hash(c));
    }
    auto a = parse_experiment_config(small_json().dump());
    auto b = a;
    b.output_dir = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    b.global_seed = 99;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("report renders as text and json") {
    auto c = parse_experiment_config(small_json().dump());
    c.sources[0].size = 1;
    auto r = validate_registry(c);
    CHECK(r.to_text().find("sources[0].size") != std::string::npos);
    auto j = json::parse(r.to_json());
    CHECK(j["ok"] == false);
    CHECK(j["issues"].size() == r.issues.size());
}

TEST_CASE("restricting to one task keeps only its sources") {
    auto c = parse_experiment_config(base_json().dump());
    auto s = restrict_to_task(c, "seg");
    CHECK(s.num_tasks() == 1);
    CHECK(s.sources.size() == 2);
    CHECK(validate_registry(s).ok());
}
