// gca: goal-consistent action anticipation experiments on synthetic
// procedural-activity data. Subcommands cover the full pipeline: data
// generation, hierarchy statistics, training, evaluation, the ablation and
// sweep drivers, and the finite-difference gradient check.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gca/gca.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCheck = 4;

json load_json_file(const fs::path& path, bool config) {
    std::ifstream is(path);
    if (!is) {
        if (config) throw gca::ConfigError("cannot open config file: " + path.string());
        throw gca::DataError("cannot open file: " + path.string());
    }
    try {
        json j;
        is >> j;
        return j;
    } catch (const json::exception& e) {
        if (config) throw gca::ConfigError("config parse error in " + path.string() + ": " + e.what());
        throw gca::DataError("parse error in " + path.string() + ": " + e.what());
    }
}

void ensure_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw gca::ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::vector<std::uint64_t> seeds_from_config(const json& j, const std::optional<std::uint64_t>& seed_override) {
    if (seed_override.has_value()) {
        std::vector<std::uint64_t> seeds;
        for (std::uint64_t i = 0; i < 5; ++i) seeds.push_back(*seed_override + i);
        return seeds;
    }
    if (j.contains("seeds")) {
        try {
            return j.at("seeds").get<std::vector<std::uint64_t>>();
        } catch (const json::exception& e) {
            throw gca::ConfigError(std::string("config: malformed seeds list: ") + e.what());
        }
    }
    return {1, 2, 3, 4, 5};
}

struct LoadedExperiment {
    gca::Dataset data;
    std::vector<gca::CooccurrenceModel> hierarchy;
    gca::TrainConfig train_config;
    json raw_config;
};

LoadedExperiment load_experiment(const std::string& config_path,
                                 const std::string& manifest_path,
                                 const std::string& hierarchy_path,
                                 bool nested_train_key) {
    LoadedExperiment exp;
    exp.raw_config = config_path.empty() ? json::object() : load_json_file(config_path, true);
    json train_json = exp.raw_config;
    if (nested_train_key) {
        train_json = exp.raw_config.contains("train") ? exp.raw_config.at("train") : json::object();
    }
    exp.train_config = gca::TrainConfig::from_json(train_json);
    exp.data = gca::load_dataset(manifest_path);
    if (!hierarchy_path.empty()) {
        exp.hierarchy = gca::hierarchy_from_json(load_json_file(hierarchy_path, false));
    } else if (exp.train_config.loss.use_consistency) {
        throw gca::ConfigError("consistency loss is enabled but no --hierarchy file was given");
    }
    return exp;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 const std::optional<std::uint64_t>& seed) {
    gca::SyntheticConfig config = config_path.empty()
                                      ? gca::SyntheticConfig{}
                                      : gca::SyntheticConfig::from_json(load_json_file(config_path, true));
    if (seed.has_value()) config.seed = *seed;
    config.validate();

    const auto data = gca::generate_synthetic(config);
    ensure_out_dir(out_dir);
    gca::write_feature_store(fs::path(out_dir) / data.manifest.feature_file, data.store);
    gca::write_manifest(fs::path(out_dir) / "manifest.json", data.manifest);
    std::cout << "wrote " << data.manifest.records.size() << " records ("
              << data.manifest.train_ids.size() << " train / " << data.manifest.val_ids.size() << " val), "
              << data.store.total_snippets() << " snippets of dim " << data.store.dim << " to " << out_dir << "\n";
    return kExitOk;
}

int cmd_build_hierarchy(const std::string& manifest_path, const std::string& out_path,
                        const std::string& split, const std::string& config_path) {
    if (split != "train")
        throw gca::ConfigError("build-hierarchy must use the training split (got '" + split +
                               "'); statistics from other splits would leak validation labels");
    double epsilon = 1e-6;
    if (!config_path.empty()) {
        const auto j = load_json_file(config_path, true);
        for (const auto& [key, _] : j.items())
            if (key != "epsilon") throw gca::ConfigError("build-hierarchy: unknown config field '" + key + "'");
        if (j.contains("epsilon")) epsilon = j.at("epsilon").get<double>();
    }

    const auto manifest = gca::load_manifest(manifest_path);
    std::vector<gca::CooccurrenceModel> models;
    for (int k = 0; k < manifest.label_space.num_levels(); ++k) {
        const auto pairs = manifest.fine_goal_pairs(gca::Split::Train, k);
        if (pairs.empty()) throw gca::DataError("build-hierarchy: training split is empty");
        models.push_back(gca::derive_conditional(gca::build_cooccurrence(pairs, manifest.label_space, k), epsilon));
    }
    if (!fs::path(out_path).parent_path().empty()) ensure_out_dir(fs::path(out_path).parent_path());
    gca::write_file_bytes(out_path, gca::hierarchy_to_json(models).dump(2) + "\n");
    std::cout << "wrote " << models.size() << " goal level(s) from " << manifest.num_train_records()
              << " training records to " << out_path << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& hierarchy_path, const std::string& out_dir,
              const std::optional<std::uint64_t>& seed) {
    auto exp = load_experiment(config_path, manifest_path, hierarchy_path, false);
    if (seed.has_value()) exp.train_config.seed = *seed;

    auto result = gca::train(exp.train_config, exp.data.manifest, exp.data.store, exp.hierarchy);
    ensure_out_dir(out_dir);
    const auto ckpt_path = fs::path(out_dir) / "model.ckpt";
    gca::save_checkpoint(ckpt_path, result.params, exp.train_config.seed, exp.data.manifest.label_space.hash());
    result.history.checkpoint_path = ckpt_path.string();

    gca::write_file_bytes(fs::path(out_dir) / "history.csv",
                          result.history.to_csv(exp.data.manifest.label_space.num_levels()));

    json summary = {{"config", exp.train_config.to_json()},
                    {"checkpoint", "model.ckpt"},
                    {"epochs", exp.train_config.epochs},
                    {"train_records", exp.data.manifest.num_train_records()}};
    if (const auto* report = result.history.final_report(); report != nullptr) {
        const auto* pv = report->find("action", "per_view", "overall");
        const auto* mv = report->find("action", "multi_view", "overall");
        json final_block = {{"epoch", result.history.evals.back().epoch}};
        final_block["per_view_action_recall"] = pv != nullptr ? json(pv->recall_percent) : json();
        final_block["multi_view_action_recall"] = mv != nullptr ? json(mv->recall_percent) : json();
        summary["final"] = final_block;
    }
    gca::write_file_bytes(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");

    std::cout << "trained " << exp.train_config.epochs << " epochs";
    if (summary.contains("final"))
        std::cout << "; final per-view action recall " << summary["final"]["per_view_action_recall"]
                  << "%, multi-view " << summary["final"]["multi_view_action_recall"] << "%";
    std::cout << "\nartifacts in " << out_dir << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& manifest_path,
             const std::string& split_name, const std::string& out_dir) {
    const auto split = gca::split_from_string(split_name);
    const auto data = gca::load_dataset(manifest_path);
    const auto ckpt = gca::load_checkpoint(checkpoint_path);
    if (ckpt.label_space_hash != data.manifest.label_space.hash())
        throw gca::DataError("checkpoint was trained against a different label space than this manifest");

    const auto report = gca::evaluate(ckpt.params, data.manifest, data.store, split);
    ensure_out_dir(out_dir);
    gca::write_file_bytes(fs::path(out_dir) / "report.json", report.to_json().dump(2) + "\n");
    gca::write_file_bytes(fs::path(out_dir) / "report.csv", report.to_csv());

    for (const auto& cell : report.cells)
        if (cell.subset == "overall")
            std::printf("%-6s %-10s %-8s %8.4f%%  (%d classes)\n", cell.kind.c_str(), cell.protocol.c_str(),
                        cell.subset.c_str(), cell.recall_percent, cell.class_count);
    return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& manifest_path,
               const std::string& hierarchy_path, const std::string& out_dir,
               const std::optional<std::uint64_t>& seed) {
    auto exp = load_experiment(config_path, manifest_path, hierarchy_path, true);
    if (exp.hierarchy.empty()) throw gca::ConfigError("ablate requires --hierarchy");
    for (const auto& [key, _] : exp.raw_config.items())
        if (key != "train" && key != "seeds")
            throw gca::ConfigError("ablate: unknown config field '" + key + "'");
    const auto seeds = seeds_from_config(exp.raw_config, seed);

    const auto rows = gca::run_component_ablation(exp.train_config, exp.data.manifest, exp.data.store,
                                                  exp.hierarchy, seeds);
    ensure_out_dir(out_dir);
    gca::write_file_bytes(fs::path(out_dir) / "ablation.csv", gca::ablation_csv(rows));
    gca::write_file_bytes(fs::path(out_dir) / "ablation_runs.csv", gca::ablation_runs_csv(rows, seeds));
    for (const auto& row : rows)
        std::printf("%-16s %8.4f%% +- %.4f (n=%zu)\n", row.name.c_str(), row.mean(), row.stddev(),
                    row.per_seed_recall.size());
    return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& manifest_path,
              const std::string& hierarchy_path, const std::string& out_dir,
              const std::optional<std::uint64_t>& seed) {
    auto exp = load_experiment(config_path, manifest_path, hierarchy_path, true);
    if (exp.hierarchy.empty()) throw gca::ConfigError("sweep requires --hierarchy");
    for (const auto& [key, _] : exp.raw_config.items())
        if (key != "train" && key != "seeds" && key != "lambda_values")
            throw gca::ConfigError("sweep: unknown config field '" + key + "'");
    const auto seeds = seeds_from_config(exp.raw_config, seed);
    std::vector<double> lambdas = {0.0, 0.1, 0.5, 1.0, 2.5, 5.0};
    if (exp.raw_config.contains("lambda_values")) {
        try {
            lambdas = exp.raw_config.at("lambda_values").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw gca::ConfigError(std::string("sweep: malformed lambda_values: ") + e.what());
        }
    }

    const auto rows = gca::run_lambda_sweep(exp.train_config, exp.data.manifest, exp.data.store, exp.hierarchy,
                                            lambdas, seeds);
    ensure_out_dir(out_dir);
    gca::write_file_bytes(fs::path(out_dir) / "sweep.csv", gca::ablation_csv(rows));
    gca::write_file_bytes(fs::path(out_dir) / "sweep_runs.csv", gca::ablation_runs_csv(rows, seeds));
    for (const auto& row : rows)
        std::printf("%-14s %8.4f%% +- %.4f (n=%zu)\n", row.name.c_str(), row.mean(), row.stddev(),
                    row.per_seed_recall.size());
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, int trials) {
    const auto reports = gca::run_all_gradchecks(trials, seed);
    bool all_ok = true;
    for (const auto& r : reports) {
        std::printf("%-20s %s  trials=%d comparisons=%lld max_rel_err=%.3e\n", r.name.c_str(),
                    r.ok() ? "ok" : "FAIL", r.trials, static_cast<long long>(r.comparisons), r.max_rel_err);
        all_ok = all_ok && r.ok();
    }
    if (!all_ok) throw gca::CheckFailure("analytic gradients disagree with finite differences");
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"goal-consistent action anticipation experiments"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, hierarchy_path, checkpoint_path, out_path;
    std::string hierarchy_split = "train";
    std::string eval_split = "val";
    std::optional<std::uint64_t> seed;
    int gradcheck_trials = 120;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset (manifest.json + features.gcft)");
    gen->add_option("--config", config_path, "SyntheticConfig JSON (defaults used when omitted)");
    gen->add_option("--out", out_path, "output directory")->required();
    gen->add_option("--seed", seed, "override the config seed");

    auto* hier = app.add_subcommand("build-hierarchy", "count goal/action co-occurrences on the training split");
    hier->add_option("--manifest", manifest_path, "manifest.json path")->required();
    hier->add_option("--out", out_path, "output hierarchy JSON path")->required();
    hier->add_option("--split", hierarchy_split, "source split (must be train)");
    hier->add_option("--config", config_path, "optional JSON {\"epsilon\": ...}");

    auto* tr = app.add_subcommand("train", "train the two-branch model");
    tr->add_option("--config", config_path, "TrainConfig JSON");
    tr->add_option("--manifest", manifest_path, "manifest.json path")->required();
    tr->add_option("--hierarchy", hierarchy_path, "hierarchy JSON (required when consistency is enabled)");
    tr->add_option("--out", out_path, "output directory")->required();
    tr->add_option("--seed", seed, "override the config seed");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (fine branch only)");
    ev->add_option("--checkpoint", checkpoint_path, "model.ckpt path")->required();
    ev->add_option("--manifest", manifest_path, "manifest.json path")->required();
    ev->add_option("--split", eval_split, "split to score");
    ev->add_option("--out", out_path, "output directory")->required();

    auto* ab = app.add_subcommand("ablate", "loss-component ablation (fine / fine+goal / fine+goal+cons)");
    ab->add_option("--config", config_path, "JSON {\"train\": ..., \"seeds\": [...]}");
    ab->add_option("--manifest", manifest_path, "manifest.json path")->required();
    ab->add_option("--hierarchy", hierarchy_path, "hierarchy JSON")->required();
    ab->add_option("--out", out_path, "output directory")->required();
    ab->add_option("--seed", seed, "use seeds {seed..seed+4} instead of the config list");

    auto* sw = app.add_subcommand("sweep", "consistency-weight sweep");
    sw->add_option("--config", config_path, "JSON {\"train\": ..., \"seeds\": [...], \"lambda_values\": [...]}");
    sw->add_option("--manifest", manifest_path, "manifest.json path")->required();
    sw->add_option("--hierarchy", hierarchy_path, "hierarchy JSON")->required();
    sw->add_option("--out", out_path, "output directory")->required();
    sw->add_option("--seed", seed, "use seeds {seed..seed+4} instead of the config list");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
    gc->add_option("--seed", seed, "random seed for the check instances");
    gc->add_option("--trials", gradcheck_trials, "instances per suite")->default_val(120);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_path, seed);
        if (hier->parsed()) return cmd_build_hierarchy(manifest_path, out_path, hierarchy_split, config_path);
        if (tr->parsed()) return cmd_train(config_path, manifest_path, hierarchy_path, out_path, seed);
        if (ev->parsed()) return cmd_eval(checkpoint_path, manifest_path, eval_split, out_path);
        if (ab->parsed()) return cmd_ablate(config_path, manifest_path, hierarchy_path, out_path, seed);
        if (sw->parsed()) return cmd_sweep(config_path, manifest_path, hierarchy_path, out_path, seed);
        if (gc->parsed()) return cmd_gradcheck(seed.value_or(2024), gradcheck_trials);
    } catch (const gca::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const gca::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const gca::CheckFailure& e) {
        std::cerr << "check failure: " << e.what() << "\n";
        return kExitCheck;
    } catch (const std::invalid_argument& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
