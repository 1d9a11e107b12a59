#include "cds/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <map>
#include <sstream>
#include <thread>

#include "cds/datagen.hpp"
#include "cds/rng.hpp"
#include "cds/text.hpp"

namespace cds {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

[[noreturn]] void fail(const std::string& message) { throw ConfigError(message); }

// --- schema plumbing -------------------------------------------------------

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) {
                known = true;
                break;
            }
        if (!known) fail("unknown field '" + where + item.key() + "'");
    }
}

const json& need(const json& obj, const char* key, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end()) fail("missing required field '" + where + key + "'");
    return *it;
}

scalar_t as_num(const json& v, const std::string& name) {
    if (!v.is_number()) fail("'" + name + "' must be a number");
    return v.get<scalar_t>();
}

std::int64_t as_int(const json& v, const std::string& name) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) fail("'" + name + "' must be an integer");
    return v.get<std::int64_t>();
}

std::string as_str(const json& v, const std::string& name) {
    if (!v.is_string()) fail("'" + name + "' must be a string");
    return v.get<std::string>();
}

scalar_t opt_num(const json& obj, const char* key, const std::string& where, scalar_t def) {
    const auto it = obj.find(key);
    return it == obj.end() ? def : as_num(*it, where + key);
}

std::int64_t opt_int(const json& obj, const char* key, const std::string& where, std::int64_t def) {
    const auto it = obj.find(key);
    return it == obj.end() ? def : as_int(*it, where + key);
}

Cell as_cell(const json& v, const std::string& name) {
    if (!v.is_array() || v.size() != 2) fail("'" + name + "' must be an [x, y] pair");
    return {static_cast<index_t>(as_int(v[0], name + "[0]")),
            static_cast<index_t>(as_int(v[1], name + "[1]"))};
}

// --- config sections -------------------------------------------------------

void parse_environment(const json& env, ExperimentConfig& c) {
    if (!env.is_object()) fail("'environment' must be an object");
    c.env_kind = as_str(need(env, "kind", "environment."), "environment.kind");
    if (c.env_kind == "corridor") {
        reject_unknown(env, {"kind", "length", "slip", "jump_cell", "discount"}, "environment.");
        c.corridor.length = static_cast<index_t>(opt_int(env, "length", "environment.", 12));
        c.corridor.slip = opt_num(env, "slip", "environment.", 0.1);
        c.corridor.jump_cell = static_cast<index_t>(opt_int(env, "jump_cell", "environment.", -1));
        c.corridor.discount = opt_num(env, "discount", "environment.", 0.9);
        if (c.corridor.length < 3) fail("'environment.length' must be at least 3");
        if (!(c.corridor.slip >= 0.0 && c.corridor.slip < 1.0))
            fail("'environment.slip' must lie in [0, 1)");
        if (!(c.corridor.discount >= 0.0 && c.corridor.discount < 1.0))
            fail("'environment.discount' must lie in [0, 1)");
    } else if (c.env_kind == "grid") {
        reject_unknown(env,
                       {"kind", "width", "height", "walls", "goals", "goal_radius", "start",
                        "discount"},
                       "environment.");
        c.grid.width = static_cast<index_t>(opt_int(env, "width", "environment.", 7));
        c.grid.height = static_cast<index_t>(opt_int(env, "height", "environment.", 5));
        c.grid.goal_radius = static_cast<index_t>(opt_int(env, "goal_radius", "environment.", 1));
        c.grid.discount = opt_num(env, "discount", "environment.", 0.95);
        if (c.grid.width < 1 || c.grid.height < 1)
            fail("'environment.width' and 'environment.height' must be positive");
        if (c.grid.goal_radius < 0) fail("'environment.goal_radius' must be nonnegative");
        if (!(c.grid.discount >= 0.0 && c.grid.discount < 1.0))
            fail("'environment.discount' must lie in [0, 1)");

        const json& goals = need(env, "goals", "environment.");
        if (!goals.is_array() || goals.empty())
            fail("'environment.goals' must be a nonempty array of cells");
        c.grid.goals.clear();
        for (std::size_t i = 0; i < goals.size(); ++i)
            c.grid.goals.push_back(as_cell(goals[i], "environment.goals[" + std::to_string(i) + "]"));
        c.grid.walls.clear();
        if (const auto it = env.find("walls"); it != env.end()) {
            if (!it->is_array()) fail("'environment.walls' must be an array of cells");
            for (std::size_t i = 0; i < it->size(); ++i)
                c.grid.walls.push_back(
                    as_cell((*it)[i], "environment.walls[" + std::to_string(i) + "]"));
        }
        if (const auto it = env.find("start"); it != env.end())
            c.grid.start = as_cell(*it, "environment.start");
        const auto in_range = [&](Cell cell) {
            return cell.x >= 0 && cell.x < c.grid.width && cell.y >= 0 && cell.y < c.grid.height;
        };
        for (Cell g : c.grid.goals)
            if (!in_range(g)) fail("'environment.goals' contains a cell outside the grid");
        for (Cell w : c.grid.walls)
            if (!in_range(w)) fail("'environment.walls' contains a cell outside the grid");
        if (!in_range(c.grid.start)) fail("'environment.start' lies outside the grid");
    } else {
        fail("'environment.kind' must be \"corridor\" or \"grid\"");
    }
}

index_t config_num_tasks(const ExperimentConfig& c) {
    return c.env_kind == "corridor" ? 3 : static_cast<index_t>(c.grid.goals.size());
}

void parse_data(const json& data, ExperimentConfig& c) {
    if (!data.is_object()) fail("'data' must be an object");
    const index_t tasks = config_num_tasks(c);
    if (data.contains("split")) {
        reject_unknown(data, {"split", "episodes", "horizon"}, "data.");
        const std::string mode = as_str(data.at("split"), "data.split");
        if (mode == "undirected")
            c.split.mode = DatasetQuality::UndirectedSplit;
        else if (mode == "directed")
            c.split.mode = DatasetQuality::DirectedSplit;
        else
            fail("'data.split' must be \"undirected\" or \"directed\"");
        if (c.split.mode == DatasetQuality::DirectedSplit && c.env_kind != "grid")
            fail("'data.split' = \"directed\" needs the grid environment");
        c.split.episodes = static_cast<int>(as_int(need(data, "episodes", "data."), "data.episodes"));
        c.split.horizon =
            static_cast<index_t>(as_int(need(data, "horizon", "data."), "data.horizon"));
        if (c.split.episodes < static_cast<int>(tasks))
            fail("'data.episodes' must cover every task at least once");
        if (c.split.horizon < 1) fail("'data.horizon' must be positive");
        c.use_split = true;
        return;
    }
    if (!data.contains("recipes")) fail("'data' must contain either 'recipes' or 'split'");
    reject_unknown(data, {"recipes"}, "data.");
    const json& recipes = data.at("recipes");
    if (!recipes.is_array() || recipes.empty())
        fail("'data.recipes' must be a nonempty array");
    std::vector<bool> seen(static_cast<std::size_t>(tasks), false);
    for (std::size_t i = 0; i < recipes.size(); ++i) {
        const std::string where = "data.recipes[" + std::to_string(i) + "].";
        const json& entry = recipes[i];
        if (!entry.is_object()) fail("'data.recipes' entries must be objects");
        reject_unknown(entry, {"task", "quality", "size", "seed"}, where);
        DatasetRecipe r;
        r.task = static_cast<index_t>(as_int(need(entry, "task", where), where + "task"));
        if (r.task < 0 || r.task >= tasks)
            fail("'" + where + "task' does not exist in the environment");
        if (seen[static_cast<std::size_t>(r.task)])
            fail("'" + where + "task' appears more than once");
        seen[static_cast<std::size_t>(r.task)] = true;
        const std::string quality = as_str(need(entry, "quality", where), where + "quality");
        try {
            r.quality = quality_from_name(quality);
        } catch (const std::invalid_argument&) {
            fail("'" + where + "quality' must be expert, medium or medium-replay");
        }
        if (r.quality != DatasetQuality::Expert && r.quality != DatasetQuality::Medium &&
            r.quality != DatasetQuality::MediumReplay)
            fail("'" + where + "quality' must be expert, medium or medium-replay");
        const std::int64_t size = as_int(need(entry, "size", where), where + "size");
        if (size < 1) fail("'" + where + "size' must be positive");
        r.size = static_cast<std::size_t>(size);
        r.seed = static_cast<std::uint64_t>(opt_int(entry, "seed", where, 0));
        c.recipes.push_back(r);
    }
    for (index_t t = 0; t < tasks; ++t)
        if (!seen[static_cast<std::size_t>(t)])
            fail("'data.recipes' is missing task " + std::to_string(t));
    std::sort(c.recipes.begin(), c.recipes.end(),
              [](const DatasetRecipe& a, const DatasetRecipe& b) { return a.task < b.task; });
}

void parse_learner(const json& doc, ExperimentConfig& c) {
    const auto it = doc.find("learner");
    if (it == doc.end()) return;
    const json& l = *it;
    if (!l.is_object()) fail("'learner' must be an object");
    reject_unknown(l,
                   {"learning_rate", "iterations", "beta", "alpha", "learner", "mu_mode",
                    "policy_temperature", "batch_per_task", "weight_rule", "rebuild_every",
                    "kl_max", "q_cap_margin"},
                   "learner.");
    LearnerConfig& cfg = c.learner;
    cfg.learning_rate = opt_num(l, "learning_rate", "learner.", cfg.learning_rate);
    cfg.iterations = static_cast<int>(opt_int(l, "iterations", "learner.", cfg.iterations));
    cfg.beta = opt_num(l, "beta", "learner.", cfg.beta);
    cfg.alpha = opt_num(l, "alpha", "learner.", cfg.alpha);
    cfg.policy_temperature = opt_num(l, "policy_temperature", "learner.", cfg.policy_temperature);
    cfg.batch_per_task =
        static_cast<index_t>(opt_int(l, "batch_per_task", "learner.", cfg.batch_per_task));
    cfg.rebuild_every = static_cast<int>(opt_int(l, "rebuild_every", "learner.", cfg.rebuild_every));
    cfg.kl_max = opt_num(l, "kl_max", "learner.", cfg.kl_max);
    cfg.q_cap_margin = opt_num(l, "q_cap_margin", "learner.", cfg.q_cap_margin);
    if (const auto k = l.find("learner"); k != l.end()) {
        const std::string kind = as_str(*k, "learner.learner");
        if (kind == "cql")
            cfg.learner = LearnerKind::Cql;
        else if (kind == "brac")
            cfg.learner = LearnerKind::Brac;
        else
            fail("'learner.learner' must be \"cql\" or \"brac\"");
    }
    if (const auto k = l.find("mu_mode"); k != l.end()) {
        const std::string mode = as_str(*k, "learner.mu_mode");
        if (mode == "uniform")
            cfg.mu_mode = MuMode::Uniform;
        else if (mode == "softmax-q")
            cfg.mu_mode = MuMode::SoftmaxQ;
        else if (mode == "current-policy")
            cfg.mu_mode = MuMode::CurrentPolicy;
        else
            fail("'learner.mu_mode' must be uniform, softmax-q or current-policy");
    }
    if (const auto k = l.find("weight_rule"); k != l.end()) {
        const std::string rule = as_str(*k, "learner.weight_rule");
        if (rule == "relabeled-only")
            cfg.weight_rule = WeightRule::RelabeledOnly;
        else if (rule == "relabeled-plus-half-original")
            cfg.weight_rule = WeightRule::RelabeledPlusHalfOriginal;
        else
            fail("'learner.weight_rule' must be relabeled-only or relabeled-plus-half-original");
    }
    if (cfg.iterations < 1) fail("'learner.iterations' must be positive");
    try {
        validate_config(cfg);
    } catch (const std::invalid_argument& e) {
        fail(std::string("learner: ") + e.what());
    }
}

// --- naming helpers --------------------------------------------------------

const char* learner_kind_name(LearnerKind k) {
    return k == LearnerKind::Brac ? "brac" : "cql";
}

const char* mu_mode_name(MuMode m) {
    switch (m) {
        case MuMode::Uniform: return "uniform";
        case MuMode::SoftmaxQ: return "softmax-q";
        case MuMode::CurrentPolicy: return "current-policy";
    }
    return "softmax-q";
}

const char* weight_rule_name(WeightRule w) {
    return w == WeightRule::RelabeledPlusHalfOriginal ? "relabeled-plus-half-original"
                                                      : "relabeled-only";
}

std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& ch : out)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.'))
            ch = '-';
    return out;
}

// --- file plumbing ---------------------------------------------------------

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

json parse_json_file(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + " is not valid JSON: " + e.what());
    }
}

// --- json views of the core types -------------------------------------------

json cell_json(Cell c) { return json::array({c.x, c.y}); }

json env_json(const ExperimentConfig& c) {
    json e;
    e["kind"] = c.env_kind;
    if (c.env_kind == "corridor") {
        e["length"] = c.corridor.length;
        e["slip"] = c.corridor.slip;
        e["jump_cell"] = c.corridor.jump_cell;
        e["discount"] = c.corridor.discount;
    } else {
        e["width"] = c.grid.width;
        e["height"] = c.grid.height;
        e["goal_radius"] = c.grid.goal_radius;
        e["start"] = cell_json(c.grid.start);
        e["discount"] = c.grid.discount;
        e["walls"] = json::array();
        for (Cell w : c.grid.walls) e["walls"].push_back(cell_json(w));
        e["goals"] = json::array();
        for (Cell g : c.grid.goals) e["goals"].push_back(cell_json(g));
    }
    return e;
}

json strategy_json(const SharingStrategy& s) {
    json j;
    j["name"] = strategy_name(s);
    j["k"] = s.k;
    j["tau_min"] = s.tau_min;
    j["tau_max"] = s.tau_max;
    j["tau_decay"] = s.tau_decay;
    if (s.kind == SharingKind::Skill) j["skills"] = s.skills.skill_of_task;
    return j;
}

json learner_json(const LearnerConfig& l) {
    json j;
    j["learning_rate"] = l.learning_rate;
    j["iterations"] = l.iterations;
    j["beta"] = l.beta;
    j["alpha"] = l.alpha;
    j["learner"] = learner_kind_name(l.learner);
    j["mu_mode"] = mu_mode_name(l.mu_mode);
    j["policy_temperature"] = l.policy_temperature;
    j["batch_per_task"] = l.batch_per_task;
    j["weight_rule"] = weight_rule_name(l.weight_rule);
    j["rebuild_every"] = l.rebuild_every;
    j["kl_max"] = l.kl_max;
    j["q_cap_margin"] = l.q_cap_margin;
    j["r_max"] = l.r_max;
    j["discount"] = l.discount;
    return j;
}

json matrix_rows_json(const matrix_t& m) {
    json rows = json::array();
    for (index_t s = 0; s < m.rows(); ++s) {
        json row = json::array();
        for (index_t a = 0; a < m.cols(); ++a) row.push_back(m(s, a));
        rows.push_back(std::move(row));
    }
    return rows;
}

matrix_t matrix_from_rows(const json& rows, index_t S, index_t A, const std::string& name) {
    if (!rows.is_array() || static_cast<index_t>(rows.size()) != S)
        throw std::runtime_error(name + " has the wrong row count");
    matrix_t m(S, A);
    for (index_t s = 0; s < S; ++s) {
        const json& row = rows[static_cast<std::size_t>(s)];
        if (!row.is_array() || static_cast<index_t>(row.size()) != A)
            throw std::runtime_error(name + " has the wrong column count");
        for (index_t a = 0; a < A; ++a) m(s, a) = row[static_cast<std::size_t>(a)].get<scalar_t>();
    }
    return m;
}

json table_json(const ConservativeQTable& t, index_t S, index_t A) {
    json j;
    j["num_tasks"] = t.num_tasks();
    j["num_states"] = S;
    j["num_actions"] = A;
    j["beta"] = t.beta;
    j["alpha"] = t.alpha;
    j["q"] = json::array();
    for (const matrix_t& q : t.q) j["q"].push_back(matrix_rows_json(q));
    return j;
}

json policy_json(const TabularPolicy& p, index_t S, index_t A) {
    json j;
    j["num_tasks"] = p.probs.size();
    j["num_states"] = S;
    j["num_actions"] = A;
    j["probs"] = json::array();
    for (const matrix_t& m : p.probs) j["probs"].push_back(matrix_rows_json(m));
    return j;
}

TabularPolicy policy_from_json(const json& doc, const MultiTaskMdp& mdp) {
    if (!doc.contains("probs")) throw std::runtime_error("policy.json has no 'probs' field");
    const json& probs = doc.at("probs");
    if (!probs.is_array() || static_cast<index_t>(probs.size()) != mdp.num_tasks)
        throw std::runtime_error("policy.json does not match the environment's task count");
    TabularPolicy p;
    for (index_t i = 0; i < mdp.num_tasks; ++i)
        p.probs.push_back(matrix_from_rows(probs[static_cast<std::size_t>(i)], mdp.num_states,
                                           mdp.num_actions, "policy.json task " + std::to_string(i)));
    return p;
}

json bound_entry_json(index_t task, const BoundReport& b) {
    json j;
    j["task"] = task;
    j["zeta"] = b.zeta;                                // non-finite serializes as null
    j["sampling_error_term"] = b.sampling_error_term;  // likewise
    j["sampling_finite"] = std::isfinite(b.sampling_error_term);
    j["divergence_bonus"] = b.divergence_bonus;
    j["improvement_term_a"] = b.improvement_term_a;
    j["epsilon"] = b.epsilon;
    j["j_policy"] = b.j_policy;
    j["j_behavior_eff"] = b.j_behavior_eff;
    j["j_behavior_own"] = b.j_behavior_own;
    j["c_sample"] = b.c_sample;
    j["alpha"] = b.alpha;
    j["r_max"] = b.r_max;
    j["gamma"] = b.gamma;
    j["smoothing"] = b.smoothing;
    return j;
}

// --- shared run machinery ----------------------------------------------------

std::string dataset_filename(index_t task) { return "task_" + std::to_string(task) + ".ds"; }

void write_datasets(const ExperimentConfig& config, const std::vector<TaskDataset>& data,
                    std::uint64_t seed, const fs::path& out_dir) {
    json manifest;
    manifest["name"] = config.name;
    manifest["seed"] = seed;
    manifest["environment"] = env_json(config);
    manifest["tasks"] = json::array();
    for (const TaskDataset& d : data) {
        std::ostringstream body;
        write_dataset(body, d);
        write_text_atomic(out_dir / dataset_filename(d.task), body.str());
        json entry;
        entry["task"] = d.task;
        entry["file"] = dataset_filename(d.task);
        entry["quality"] = quality_name(d.manifest.quality);
        entry["behavior"] = d.manifest.behavior;
        entry["seed"] = d.manifest.seed;
        entry["size"] = d.manifest.size;
        manifest["tasks"].push_back(std::move(entry));
    }
    write_text_atomic(out_dir / "data_manifest.json", manifest.dump(2) + "\n");
}

json run_manifest_json(const ExperimentConfig& config, const MultiTaskMdp& mdp,
                       const std::vector<TaskDataset>& raw, const SharingStrategy& strategy,
                       const LearnerConfig& learner, std::uint64_t seed, const TrainResult& result) {
    json m;
    m["config_name"] = config.name;
    m["seed"] = seed;
    m["environment"] = env_json(config);
    m["strategy"] = strategy_json(strategy);
    m["learner"] = learner_json(learner);
    m["data"] = json::array();
    for (const TaskDataset& d : raw) {
        json entry;
        entry["task"] = d.task;
        entry["quality"] = quality_name(d.manifest.quality);
        entry["behavior"] = d.manifest.behavior;
        entry["seed"] = d.manifest.seed;
        entry["size"] = d.manifest.size;
        m["data"].push_back(std::move(entry));
    }
    m["defaults"] = {
        {"percentile", "nearest-rank"},
        {"temperature_init", 1.0},
        {"behavior_smoothing", kBehaviorSmoothing},
        {"sharing_value_table",
         learner.learner == LearnerKind::Brac ? "kl-penalized" : "fitted"},
        {"round_zero_table", "zero-initialized"},
        {"rng_substreams", json::array({"train/batch", "train/coin"})},
    };
    m["bound_constants"] = {{"c_sample", config.constants.c_sample},
                            {"alpha", config.constants.alpha},
                            {"smoothing", config.constants.smoothing},
                            {"r_max", learner.r_max}};
    m["rounds"] = mdp.num_tasks > 0
                      ? static_cast<std::int64_t>(result.log.size()) / mdp.num_tasks
                      : 0;
    json final_block;
    final_block["dataset_size"] = json::array();
    final_block["admitted_fraction"] = json::array();
    final_block["j_eval"] = json::array();
    final_block["kl_div"] = json::array();
    const std::size_t tasks = static_cast<std::size_t>(mdp.num_tasks);
    if (result.log.size() >= tasks)
        for (std::size_t i = result.log.size() - tasks; i < result.log.size(); ++i) {
            final_block["dataset_size"].push_back(result.log[i].dataset_size);
            final_block["admitted_fraction"].push_back(result.log[i].admitted_fraction);
            final_block["j_eval"].push_back(result.log[i].j_eval);
            final_block["kl_div"].push_back(result.log[i].kl_div);
        }
    m["final"] = std::move(final_block);
    m["j_star"] = json::array();
    for (index_t i = 0; i < mdp.num_tasks; ++i) m["j_star"].push_back(solve_optimal(mdp, i).j);
    return m;
}

void write_run_artifacts(const ExperimentConfig& config, const MultiTaskMdp& mdp,
                         const std::vector<TaskDataset>& raw, const SharingStrategy& strategy,
                         const LearnerConfig& learner, std::uint64_t seed,
                         const TrainResult& result, const fs::path& out_dir) {
    const index_t S = mdp.num_states, A = mdp.num_actions;
    write_text_atomic(out_dir / "qtable.json", table_json(result.table, S, A).dump(2) + "\n");
    write_text_atomic(out_dir / "policy.json", policy_json(result.policy, S, A).dump(2) + "\n");

    std::ostringstream csv;
    write_training_csv(csv, result.log);
    write_text_atomic(out_dir / "training.csv", csv.str());

    const EmpiricalBehaviorPolicy behavior_eff = estimate_behavior_policy(result.effective, S, A);
    const EmpiricalBehaviorPolicy behavior_own = estimate_behavior_policy(raw, S, A);
    json bounds;
    bounds["tasks"] = json::array();
    for (index_t i = 0; i < mdp.num_tasks; ++i) {
        const BoundReport b =
            spi_bound(mdp, i, result.policy, behavior_eff, behavior_own,
                      result.effective[static_cast<std::size_t>(i)], config.constants);
        bounds["tasks"].push_back(bound_entry_json(i, b));
    }
    write_text_atomic(out_dir / "bound.json", bounds.dump(2) + "\n");

    write_text_atomic(out_dir / "run_manifest.json",
                      run_manifest_json(config, mdp, raw, strategy, learner, seed, result).dump(2) +
                          "\n");
}

std::vector<TaskDataset> load_datasets(const MultiTaskMdp& mdp, const fs::path& data_dir) {
    std::vector<TaskDataset> raw;
    for (index_t i = 0; i < mdp.num_tasks; ++i) {
        const fs::path path = data_dir / dataset_filename(i);
        if (!fs::exists(path)) throw std::runtime_error("dataset missing: " + path.string());
        raw.push_back(load_dataset(path.string()));
        if (raw.back().task != i)
            throw std::runtime_error(path.string() + " belongs to task " +
                                     std::to_string(raw.back().task));
    }
    return raw;
}

scalar_t median(std::vector<scalar_t> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

scalar_t mean_of(const std::vector<scalar_t>& v) {
    scalar_t total = 0.0;
    for (scalar_t x : v) total += x;
    return v.empty() ? 0.0 : total / static_cast<scalar_t>(v.size());
}

scalar_t ci95_of(const std::vector<scalar_t>& v) {
    if (v.size() < 2) return 0.0;
    const scalar_t m = mean_of(v);
    scalar_t ss = 0.0;
    for (scalar_t x : v) ss += (x - m) * (x - m);
    const scalar_t sd = std::sqrt(ss / static_cast<scalar_t>(v.size() - 1));
    return 1.96 * sd / std::sqrt(static_cast<scalar_t>(v.size()));
}

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    };
    std::vector<std::thread> pool;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
}

/// Final-round (j, kl) per task from a training log.
void final_round_stats(const std::vector<TrainingLogRow>& log, index_t tasks,
                       std::vector<scalar_t>& j, std::vector<scalar_t>& kl) {
    if (log.size() < static_cast<std::size_t>(tasks))
        throw std::runtime_error("training log is shorter than one round");
    j.assign(static_cast<std::size_t>(tasks), 0.0);
    kl.assign(static_cast<std::size_t>(tasks), 0.0);
    for (std::size_t i = log.size() - static_cast<std::size_t>(tasks); i < log.size(); ++i) {
        const TrainingLogRow& row = log[i];
        j[static_cast<std::size_t>(row.task)] = row.j_eval;
        kl[static_cast<std::size_t>(row.task)] = row.kl_div;
    }
}

}  // namespace

// --- config ------------------------------------------------------------------

ExperimentConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) fail("config root must be an object");
    reject_unknown(doc, {"name", "environment", "data", "strategies", "learner", "evaluation",
                         "constants"},
                   "");

    ExperimentConfig c;
    if (const auto it = doc.find("name"); it != doc.end()) c.name = as_str(*it, "name");
    parse_environment(need(doc, "environment", ""), c);
    parse_data(need(doc, "data", ""), c);

    const json& strategies = need(doc, "strategies", "");
    if (!strategies.is_array() || strategies.empty())
        fail("'strategies' must be a nonempty array of strategy names");
    for (std::size_t i = 0; i < strategies.size(); ++i) {
        const std::string name =
            as_str(strategies[i], "strategies[" + std::to_string(i) + "]");
        try {
            c.strategies.push_back(parse_strategy(name));
        } catch (const std::invalid_argument& e) {
            fail("'strategies[" + std::to_string(i) + "]': " + e.what());
        }
    }

    parse_learner(doc, c);

    c.eval_seeds = {1, 2, 3, 4, 5, 6};
    if (const auto it = doc.find("evaluation"); it != doc.end()) {
        if (!it->is_object()) fail("'evaluation' must be an object");
        reject_unknown(*it, {"seeds"}, "evaluation.");
        const json& seeds = need(*it, "seeds", "evaluation.");
        if (!seeds.is_array() || seeds.empty())
            fail("'evaluation.seeds' must be a nonempty array of integers");
        c.eval_seeds.clear();
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            const std::int64_t s =
                as_int(seeds[i], "evaluation.seeds[" + std::to_string(i) + "]");
            if (s < 0) fail("'evaluation.seeds' must be nonnegative");
            c.eval_seeds.push_back(static_cast<std::uint64_t>(s));
        }
        for (std::size_t i = 0; i < c.eval_seeds.size(); ++i)
            for (std::size_t k = i + 1; k < c.eval_seeds.size(); ++k)
                if (c.eval_seeds[i] == c.eval_seeds[k])
                    fail("'evaluation.seeds' must be distinct");
    }

    if (const auto it = doc.find("constants"); it != doc.end()) {
        if (!it->is_object()) fail("'constants' must be an object");
        reject_unknown(*it, {"c_sample", "alpha", "r_max"}, "constants.");
        c.constants.c_sample = opt_num(*it, "c_sample", "constants.", c.constants.c_sample);
        c.constants.alpha = opt_num(*it, "alpha", "constants.", c.constants.alpha);
        c.r_max_override = opt_num(*it, "r_max", "constants.", 0.0);
        if (c.constants.c_sample < 0.0) fail("'constants.c_sample' must be nonnegative");
        if (c.constants.alpha < 0.0) fail("'constants.alpha' must be nonnegative");
        if (c.r_max_override < 0.0) fail("'constants.r_max' must be nonnegative");
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

MultiTaskMdp build_environment(const ExperimentConfig& config) {
    try {
        if (config.env_kind == "corridor") return build_corridor_tritask(config.corridor);
        return build_multigoal_grid(config.grid);
    } catch (const std::exception& e) {
        fail(std::string("environment: ") + e.what());
    }
}

LearnerConfig resolved_learner(const ExperimentConfig& config, const MultiTaskMdp& mdp) {
    LearnerConfig l = config.learner;
    l.discount = mdp.discount;
    scalar_t bound = config.r_max_override > 0.0 ? config.r_max_override : mdp.max_abs_reward();
    if (bound <= 0.0) bound = 1.0;
    l.r_max = bound;
    try {
        validate_config(l);
    } catch (const std::invalid_argument& e) {
        fail(std::string("learner: ") + e.what());
    }
    return l;
}

SharingStrategy resolve_strategy(const SharingStrategy& strategy, const ExperimentConfig& config) {
    SharingStrategy out = strategy;
    if (out.kind == SharingKind::Skill && out.skills.skill_of_task.empty())
        out.skills = config.env_kind == "corridor" ? corridor_skills() : grid_skills(config.grid);
    return out;
}

// --- dataset generation --------------------------------------------------------

std::vector<TaskDataset> generate_datasets(const ExperimentConfig& config, const MultiTaskMdp& mdp,
                                           std::uint64_t seed) {
    std::vector<TaskDataset> out;
    if (config.use_split) {
        const TabularPolicy uniform =
            TabularPolicy::uniform(mdp.num_tasks, mdp.num_states, mdp.num_actions);
        const std::uint64_t explore_seed = substream(seed, "datagen/explore")();
        const auto trajectories =
            rollout_episodes(mdp, uniform, 0, config.split.episodes, config.split.horizon,
                             explore_seed, /*ignore_done=*/true);
        if (config.split.mode == DatasetQuality::UndirectedSplit)
            return split_undirected(trajectories, mdp.num_tasks, mdp,
                                    substream(seed, "datagen/split")());
        return split_directed(trajectories, config.grid, mdp);
    }
    for (const DatasetRecipe& r : config.recipes) {
        const std::uint64_t task_seed =
            r.seed != 0 ? r.seed
                        : substream(seed, "datagen/task", static_cast<std::uint64_t>(r.task))();
        switch (r.quality) {
            case DatasetQuality::MediumReplay: {
                BehaviorTrainConfig bt;
                bt.min_buffer = r.size;
                out.push_back(make_medium_replay(mdp, r.task, task_seed, r.size, bt));
                break;
            }
            case DatasetQuality::Medium: {
                const BehaviorResult b = train_behavior(mdp, r.task, BehaviorStage::Medium, task_seed);
                out.push_back(rollout_policy(mdp, b.policy, r.task, r.size,
                                             substream(task_seed, "datagen/rollout")(),
                                             DatasetQuality::Medium, "medium greedy/uniform mix"));
                break;
            }
            case DatasetQuality::Expert: {
                const BehaviorResult b = train_behavior(mdp, r.task, BehaviorStage::Expert, task_seed);
                out.push_back(rollout_policy(mdp, b.policy, r.task, r.size,
                                             substream(task_seed, "datagen/rollout")(),
                                             DatasetQuality::Expert, "expert greedy snapshot"));
                break;
            }
            default:
                fail("unsupported dataset quality in recipe");
        }
    }
    return out;
}

// --- commands -------------------------------------------------------------------

void cmd_generate_data(const ExperimentConfig& config, const std::string& out_dir,
                       std::uint64_t seed) {
    const MultiTaskMdp mdp = build_environment(config);
    const auto data = generate_datasets(config, mdp, seed);
    write_datasets(config, data, seed, out_dir);
}

void cmd_train(const ExperimentConfig& config, const std::string& data_dir,
               const SharingStrategy& strategy, std::uint64_t seed, const std::string& out_dir) {
    const MultiTaskMdp mdp = build_environment(config);
    const LearnerConfig learner = resolved_learner(config, mdp);
    const SharingStrategy strat = resolve_strategy(strategy, config);
    const std::vector<TaskDataset> raw = load_datasets(mdp, data_dir);
    const TrainResult result = train_multitask(mdp, raw, strat, learner, seed);
    write_run_artifacts(config, mdp, raw, strat, learner, seed, result, out_dir);
}

void cmd_evaluate(const ExperimentConfig& config, const std::string& run_dir,
                  const std::string& out_path) {
    const MultiTaskMdp mdp = build_environment(config);
    const TabularPolicy policy =
        policy_from_json(parse_json_file(fs::path(run_dir) / "policy.json"), mdp);
    json doc;
    doc["tasks"] = json::array();
    scalar_t j_total = 0.0, star_total = 0.0;
    for (index_t i = 0; i < mdp.num_tasks; ++i) {
        const scalar_t j = evaluate_policy(mdp, policy, i);
        const scalar_t j_star = solve_optimal(mdp, i).j;
        j_total += j;
        star_total += j_star;
        json entry;
        entry["task"] = i;
        entry["j_policy"] = j;
        entry["j_star"] = j_star;
        entry["regret"] = j_star - j;
        doc["tasks"].push_back(std::move(entry));
    }
    doc["j_avg"] = j_total / static_cast<scalar_t>(mdp.num_tasks);
    doc["j_star_avg"] = star_total / static_cast<scalar_t>(mdp.num_tasks);
    write_text_atomic(out_path, doc.dump(2) + "\n");
}

void cmd_analyze(const ExperimentConfig& config, const std::vector<std::string>& run_dirs,
                 const std::string& out_dir) {
    if (run_dirs.empty()) fail("analyze needs at least one run directory");
    const MultiTaskMdp mdp = build_environment(config);
    const index_t tasks = mdp.num_tasks;

    struct RunData {
        std::string strategy;
        std::uint64_t seed = 0;
        std::vector<scalar_t> j, kl;
        json bound;
    };
    std::vector<RunData> runs;
    for (const std::string& dir : run_dirs) {
        RunData r;
        const json manifest = parse_json_file(fs::path(dir) / "run_manifest.json");
        r.strategy = manifest.at("strategy").at("name").get<std::string>();
        r.seed = manifest.at("seed").get<std::uint64_t>();
        std::istringstream csv(read_text(fs::path(dir) / "training.csv"));
        final_round_stats(read_training_csv(csv), tasks, r.j, r.kl);
        r.bound = parse_json_file(fs::path(dir) / "bound.json");
        for (const json& entry : r.bound.at("tasks")) {
            const json& sampling = entry.at("sampling_error_term");
            const json& zeta = entry.at("zeta");
            if (sampling.is_null() || zeta.is_null()) {
                if (sampling.is_null() != zeta.is_null())
                    throw std::runtime_error("bound composition violated in " + dir);
                continue;
            }
            const scalar_t expect = sampling.get<scalar_t>() -
                                    (entry.at("divergence_bonus").get<scalar_t>() +
                                     entry.at("improvement_term_a").get<scalar_t>());
            if (std::abs(zeta.get<scalar_t>() - expect) > 1e-9)
                throw std::runtime_error("bound composition violated in " + dir);
        }
        runs.push_back(std::move(r));
    }

    // group by strategy in first-appearance order
    std::vector<std::string> order;
    for (const RunData& r : runs)
        if (std::find(order.begin(), order.end(), r.strategy) == order.end())
            order.push_back(r.strategy);

    std::vector<StrategySummary> summaries;
    for (const std::string& name : order) {
        StrategySummary s;
        s.strategy = name;
        for (index_t t = 0; t < tasks; ++t) {
            std::vector<scalar_t> js, kls;
            for (const RunData& r : runs)
                if (r.strategy == name) {
                    js.push_back(r.j[static_cast<std::size_t>(t)]);
                    kls.push_back(r.kl[static_cast<std::size_t>(t)]);
                }
            s.j_per_task.push_back(median(js));
            s.kl_per_task.push_back(median(kls));
        }
        summaries.push_back(std::move(s));
    }

    json bounds = json::array();
    for (const RunData& r : runs) {
        json entry;
        entry["run"] = sanitize(r.strategy) + "-s" + std::to_string(r.seed);
        entry["strategy"] = r.strategy;
        entry["seed"] = r.seed;
        entry["tasks"] = r.bound.at("tasks");
        bounds.push_back(std::move(entry));
    }
    write_text_atomic(fs::path(out_dir) / "bounds.json", bounds.dump(2) + "\n");

    if (summaries.size() >= 2) {
        const ScenarioReport report = scenario_report(summaries);
        std::ostringstream csv;
        write_scenario_csv(csv, report);
        write_text_atomic(fs::path(out_dir) / "comparison.csv", csv.str());

        json doc = json::parse(scenario_report_json(report));
        doc["kl_ordering"] = json::array();
        for (index_t t = 0; t < tasks; ++t) {
            std::vector<std::size_t> idx(summaries.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                return summaries[a].kl_per_task[static_cast<std::size_t>(t)] >
                       summaries[b].kl_per_task[static_cast<std::size_t>(t)];
            });
            json entry;
            entry["task"] = t;
            entry["by_kl_descending"] = json::array();
            for (std::size_t i : idx) entry["by_kl_descending"].push_back(summaries[i].strategy);
            doc["kl_ordering"].push_back(std::move(entry));
        }
        write_text_atomic(fs::path(out_dir) / "comparison.json", doc.dump(2) + "\n");
    }
}

SweepReport cmd_sweep(const ExperimentConfig& config, const std::string& out_dir,
                      const SweepOptions& options) {
    const MultiTaskMdp mdp = build_environment(config);
    const LearnerConfig learner = resolved_learner(config, mdp);

    const std::vector<std::uint64_t> seeds =
        options.seeds.empty() ? config.eval_seeds : options.seeds;
    if (seeds.empty()) fail("no evaluation seeds configured");
    for (std::size_t i = 0; i < seeds.size(); ++i)
        for (std::size_t k = i + 1; k < seeds.size(); ++k)
            if (seeds[i] == seeds[k]) fail("sweep seeds must be distinct");

    std::vector<SharingStrategy> strategies;
    if (options.strategies.empty()) {
        strategies = config.strategies;
    } else {
        for (const std::string& name : options.strategies) {
            try {
                strategies.push_back(parse_strategy(name));
            } catch (const std::invalid_argument& e) {
                fail(e.what());
            }
        }
    }
    std::vector<std::string> names;
    for (SharingStrategy& s : strategies) {
        s = resolve_strategy(s, config);
        names.push_back(strategy_name(s));
    }
    for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t k = i + 1; k < names.size(); ++k)
            if (names[i] == names[k]) fail("sweep strategies must be distinct");

    const int jobs = std::max(1, options.jobs);
    const fs::path root(out_dir);

    // one dataset corpus per seed, shared by every strategy
    std::vector<std::vector<TaskDataset>> data(seeds.size());
    std::vector<std::string> data_errors(seeds.size());
    parallel_for(seeds.size(), jobs, [&](std::size_t k) {
        try {
            data[k] = generate_datasets(config, mdp, seeds[k]);
            write_datasets(config, data[k], seeds[k], root / "data" / ("s" + std::to_string(seeds[k])));
        } catch (const std::exception& e) {
            data_errors[k] = e.what();
        }
    });

    SweepReport report;
    report.cells.resize(strategies.size() * seeds.size());
    parallel_for(report.cells.size(), jobs, [&](std::size_t idx) {
        const std::size_t si = idx / seeds.size();
        const std::size_t ki = idx % seeds.size();
        SweepCell& cell = report.cells[idx];
        cell.strategy = names[si];
        cell.seed = seeds[ki];
        if (!data_errors[ki].empty()) {
            cell.error = "dataset generation failed: " + data_errors[ki];
            return;
        }
        try {
            const TrainResult result =
                train_multitask(mdp, data[ki], strategies[si], learner, seeds[ki]);
            const std::string leaf = sanitize(names[si]) + "-s" + std::to_string(seeds[ki]);
            const fs::path final_dir = root / "cells" / leaf;
            const fs::path tmp_dir = root / "cells" / ("." + leaf + ".tmp");
            fs::remove_all(tmp_dir);
            write_run_artifacts(config, mdp, data[ki], strategies[si], learner, seeds[ki], result,
                                tmp_dir);
            fs::remove_all(final_dir);
            fs::rename(tmp_dir, final_dir);
            final_round_stats(result.log, mdp.num_tasks, cell.j, cell.kl);
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    });

    for (std::size_t si = 0; si < strategies.size(); ++si)
        for (index_t t = 0; t < mdp.num_tasks; ++t) {
            std::vector<scalar_t> js, kls;
            for (std::size_t ki = 0; ki < seeds.size(); ++ki) {
                const SweepCell& cell = report.cells[si * seeds.size() + ki];
                if (!cell.error.empty()) continue;
                js.push_back(cell.j[static_cast<std::size_t>(t)]);
                kls.push_back(cell.kl[static_cast<std::size_t>(t)]);
            }
            SweepAggregate agg;
            agg.strategy = names[si];
            agg.task = t;
            agg.n = static_cast<int>(js.size());
            agg.j_mean = mean_of(js);
            agg.j_ci95 = ci95_of(js);
            agg.j_median = median(js);
            agg.kl_mean = mean_of(kls);
            agg.kl_ci95 = ci95_of(kls);
            agg.kl_median = median(kls);
            report.aggregates.push_back(std::move(agg));
        }

    for (index_t t = 0; t < mdp.num_tasks; ++t) report.j_star.push_back(solve_optimal(mdp, t).j);
    for (const SweepCell& cell : report.cells)
        if (!cell.error.empty()) ++report.failures;

    std::ostringstream cells_csv;
    cells_csv << "strategy,seed,task,J,kl_div\n";
    for (const SweepCell& cell : report.cells) {
        if (!cell.error.empty()) continue;
        for (index_t t = 0; t < mdp.num_tasks; ++t)
            cells_csv << cell.strategy << ',' << cell.seed << ',' << t << ','
                      << format_double(cell.j[static_cast<std::size_t>(t)]) << ','
                      << format_double(cell.kl[static_cast<std::size_t>(t)]) << '\n';
    }
    write_text_atomic(root / "cells.csv", cells_csv.str());

    std::ostringstream sweep_csv;
    sweep_csv << "strategy,task,n,j_mean,j_ci95,j_median,j_star,kl_mean,kl_ci95,kl_median\n";
    for (const SweepAggregate& a : report.aggregates)
        sweep_csv << a.strategy << ',' << a.task << ',' << a.n << ',' << format_double(a.j_mean)
                  << ',' << format_double(a.j_ci95) << ',' << format_double(a.j_median) << ','
                  << format_double(report.j_star[static_cast<std::size_t>(a.task)]) << ','
                  << format_double(a.kl_mean) << ',' << format_double(a.kl_ci95) << ','
                  << format_double(a.kl_median) << '\n';
    write_text_atomic(root / "sweep.csv", sweep_csv.str());

    json doc;
    doc["ci95"] = "1.96*sd/sqrt(n), sample sd";
    doc["seeds"] = seeds;
    doc["strategies"] = names;
    doc["j_star"] = report.j_star;
    doc["aggregates"] = json::array();
    for (const SweepAggregate& a : report.aggregates) {
        json entry;
        entry["strategy"] = a.strategy;
        entry["task"] = a.task;
        entry["n"] = a.n;
        entry["j_mean"] = a.j_mean;
        entry["j_ci95"] = a.j_ci95;
        entry["j_median"] = a.j_median;
        entry["kl_mean"] = a.kl_mean;
        entry["kl_ci95"] = a.kl_ci95;
        entry["kl_median"] = a.kl_median;
        doc["aggregates"].push_back(std::move(entry));
    }
    doc["cells"] = json::array();
    for (const SweepCell& cell : report.cells) {
        json entry;
        entry["strategy"] = cell.strategy;
        entry["seed"] = cell.seed;
        entry["j"] = cell.j;
        entry["kl"] = cell.kl;
        entry["error"] = cell.error;
        doc["cells"].push_back(std::move(entry));
    }
    doc["failures"] = json::array();
    for (const SweepCell& cell : report.cells)
        if (!cell.error.empty())
            doc["failures"].push_back(
                {{"strategy", cell.strategy}, {"seed", cell.seed}, {"error", cell.error}});
    write_text_atomic(root / "sweep.json", doc.dump(2) + "\n");

    return report;
}

}  // namespace cds
