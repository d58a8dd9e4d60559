#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "gca/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = GCA_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

int run_logged(const std::string& args, const fs::path& log) {
    const std::string cmd = kCli + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// small, fast dataset shared by the pipeline tests
void write_small_gen_config(const fs::path& to, std::uint64_t seed = 3) {
    const json cfg = {{"num_goals", 3},       {"actions_per_goal", 4}, {"feature_dim", 8},
                      {"snippets", 2},        {"noise_sigma", 0.4},    {"num_sequences", 40},
                      {"views_per_sequence", 2}, {"steps_per_sequence", 3}, {"seed", seed}};
    std::ofstream(to) << cfg.dump();
}

} // namespace

TEST_CASE("gen-data writes deterministic artifacts", "[cli]") {
    TempDir dir("gca_cli_gen");
    write_small_gen_config(dir.path / "gen.json");

    REQUIRE(run("gen-data --config " + (dir.path / "gen.json").string() + " --out " + (dir.path / "a").string()) == 0);
    REQUIRE(fs::exists(dir.path / "a" / "manifest.json"));
    REQUIRE(fs::exists(dir.path / "a" / "features.gcft"));

    REQUIRE(run("gen-data --config " + (dir.path / "gen.json").string() + " --out " + (dir.path / "b").string()) == 0);
    REQUIRE(gca::hash_file(dir.path / "a" / "manifest.json") == gca::hash_file(dir.path / "b" / "manifest.json"));
    REQUIRE(gca::hash_file(dir.path / "a" / "features.gcft") == gca::hash_file(dir.path / "b" / "features.gcft"));

    // a different seed changes the bytes
    REQUIRE(run("gen-data --config " + (dir.path / "gen.json").string() + " --seed 99 --out " +
                (dir.path / "c").string()) == 0);
    REQUIRE(gca::hash_file(dir.path / "a" / "features.gcft") != gca::hash_file(dir.path / "c" / "features.gcft"));
}

TEST_CASE("gen-data rejects unknown config fields with exit 2", "[cli]") {
    TempDir dir("gca_cli_genbad");
    std::ofstream(dir.path / "gen.json") << R"({"num_goals": 3, "bogus_field": 1})";
    const auto log = dir.path / "log.txt";
    REQUIRE(run_logged("gen-data --config " + (dir.path / "gen.json").string() + " --out " +
                       (dir.path / "out").string(), log) == 2);
    REQUIRE(slurp(log).find("bogus_field") != std::string::npos);
}

TEST_CASE("build-hierarchy works on the training split only", "[cli]") {
    TempDir dir("gca_cli_hier");
    write_small_gen_config(dir.path / "gen.json");
    REQUIRE(run("gen-data --config " + (dir.path / "gen.json").string() + " --out " + (dir.path / "d").string()) == 0);
    const auto manifest = (dir.path / "d" / "manifest.json").string();

    REQUIRE(run("build-hierarchy --manifest " + manifest + " --out " + (dir.path / "h1.json").string()) == 0);
    REQUIRE(run("build-hierarchy --manifest " + manifest + " --out " + (dir.path / "h2.json").string()) == 0);
    REQUIRE(gca::hash_file(dir.path / "h1.json") == gca::hash_file(dir.path / "h2.json"));

    // the counts total must equal the number of training records
    const auto hj = json::parse(slurp(dir.path / "h1.json"));
    const auto mj = json::parse(slurp(manifest));
    std::int64_t total = 0;
    for (const auto& e : hj.at("levels")[0].at("counts")) total += e.get<std::int64_t>();
    REQUIRE(total == mj.at("num_train_records").get<std::int64_t>());

    // validation-split usage is refused
    REQUIRE(run("build-hierarchy --manifest " + manifest + " --split val --out " + (dir.path / "h3.json").string()) ==
            2);
}

TEST_CASE("train, eval and the report agree exactly", "[cli]") {
    TempDir dir("gca_cli_train");
    write_small_gen_config(dir.path / "gen.json");
    REQUIRE(run("gen-data --config " + (dir.path / "gen.json").string() + " --out " + (dir.path / "d").string()) == 0);
    const auto manifest = (dir.path / "d" / "manifest.json").string();
    REQUIRE(run("build-hierarchy --manifest " + manifest + " --out " + (dir.path / "h.json").string()) == 0);

    const json train_cfg = {{"epochs", 3}, {"batch_size", 32}, {"hidden_width", 16}, {"seed", 11}};
    std::ofstream(dir.path / "train.json") << train_cfg.dump();

    REQUIRE(run("train --config " + (dir.path / "train.json").string() + " --manifest " + manifest +
                " --hierarchy " + (dir.path / "h.json").string() + " --out " + (dir.path / "run").string()) == 0);
    REQUIRE(fs::exists(dir.path / "run" / "model.ckpt"));
    REQUIRE(fs::exists(dir.path / "run" / "history.csv"));
    REQUIRE(fs::exists(dir.path / "run" / "summary.json"));

    // byte-identical rerun (criterion: determinism of command artifacts)
    REQUIRE(run("train --config " + (dir.path / "train.json").string() + " --manifest " + manifest +
                " --hierarchy " + (dir.path / "h.json").string() + " --out " + (dir.path / "run2").string()) == 0);
    REQUIRE(gca::hash_file(dir.path / "run" / "model.ckpt") == gca::hash_file(dir.path / "run2" / "model.ckpt"));
    REQUIRE(gca::hash_file(dir.path / "run" / "history.csv") == gca::hash_file(dir.path / "run2" / "history.csv"));
    REQUIRE(gca::hash_file(dir.path / "run" / "summary.json") == gca::hash_file(dir.path / "run2" / "summary.json"));

    REQUIRE(run("eval --checkpoint " + (dir.path / "run" / "model.ckpt").string() + " --manifest " + manifest +
                " --split val --out " + (dir.path / "evalout").string()) == 0);
    const auto report = json::parse(slurp(dir.path / "evalout" / "report.json"));
    const auto summary = json::parse(slurp(dir.path / "run" / "summary.json"));

    double report_pv = -1.0;
    for (const auto& cell : report.at("cells"))
        if (cell.at("kind") == "action" && cell.at("protocol") == "per_view" && cell.at("subset") == "overall")
            report_pv = cell.at("recall_percent").get<double>();
    REQUIRE(report_pv == summary.at("final").at("per_view_action_recall").get<double>());
}

TEST_CASE("train without a hierarchy works when consistency is off and fails when on", "[cli]") {
    TempDir dir("gca_cli_nohier");
    write_small_gen_config(dir.path / "gen.json");
    REQUIRE(run("gen-data --config " + (dir.path / "gen.json").string() + " --out " + (dir.path / "d").string()) == 0);
    const auto manifest = (dir.path / "d" / "manifest.json").string();

    std::ofstream(dir.path / "fine.json")
        << R"({"epochs": 2, "hidden_width": 8, "loss": {"use_goal_loss": false, "use_consistency": false}})";
    REQUIRE(run("train --config " + (dir.path / "fine.json").string() + " --manifest " + manifest + " --out " +
                (dir.path / "fine_run").string()) == 0);
    REQUIRE(fs::exists(dir.path / "fine_run" / "model.ckpt"));

    // consistency enabled but no --hierarchy is a config error
    std::ofstream(dir.path / "full.json") << R"({"epochs": 2, "hidden_width": 8})";
    REQUIRE(run("train --config " + (dir.path / "full.json").string() + " --manifest " + manifest + " --out " +
                (dir.path / "full_run").string()) == 2);
}

TEST_CASE("eval maps missing files and foreign checkpoints to exit 3", "[cli]") {
    TempDir dir("gca_cli_evalbad");
    REQUIRE(run("eval --checkpoint /nonexistent.ckpt --manifest /nonexistent.json --out " +
                (dir.path / "o").string()) == 3);
}

TEST_CASE("ablate writes the three-row table", "[cli]") {
    TempDir dir("gca_cli_ablate");
    write_small_gen_config(dir.path / "gen.json");
    REQUIRE(run("gen-data --config " + (dir.path / "gen.json").string() + " --out " + (dir.path / "d").string()) == 0);
    const auto manifest = (dir.path / "d" / "manifest.json").string();
    REQUIRE(run("build-hierarchy --manifest " + manifest + " --out " + (dir.path / "h.json").string()) == 0);

    const json cfg = {{"train", {{"epochs", 2}, {"batch_size", 32}, {"hidden_width", 8}}},
                      {"seeds", {5, 6, 7}}};
    std::ofstream(dir.path / "ablate.json") << cfg.dump();
    REQUIRE(run("ablate --config " + (dir.path / "ablate.json").string() + " --manifest " + manifest +
                " --hierarchy " + (dir.path / "h.json").string() + " --out " + (dir.path / "ab").string()) == 0);

    const auto csv = slurp(dir.path / "ab" / "ablation.csv");
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 rows
    REQUIRE(csv.find("fine,") != std::string::npos);
    REQUIRE(csv.find("fine+goal,") != std::string::npos);
    REQUIRE(csv.find("fine+goal+cons,") != std::string::npos);
    const auto runs = slurp(dir.path / "ab" / "ablation_runs.csv");
    REQUIRE(std::count(runs.begin(), runs.end(), '\n') == 10);  // header + 3x3 runs
}

TEST_CASE("sweep covers every requested lambda", "[cli]") {
    TempDir dir("gca_cli_sweep");
    write_small_gen_config(dir.path / "gen.json");
    REQUIRE(run("gen-data --config " + (dir.path / "gen.json").string() + " --out " + (dir.path / "d").string()) == 0);
    const auto manifest = (dir.path / "d" / "manifest.json").string();
    REQUIRE(run("build-hierarchy --manifest " + manifest + " --out " + (dir.path / "h.json").string()) == 0);

    const json cfg = {{"train", {{"epochs", 2}, {"batch_size", 32}, {"hidden_width", 8}}},
                      {"seeds", {4}},
                      {"lambda_values", {0.0, 0.5, 2.0}}};
    std::ofstream(dir.path / "sweep.json") << cfg.dump();
    REQUIRE(run("sweep --config " + (dir.path / "sweep.json").string() + " --manifest " + manifest + " --hierarchy " +
                (dir.path / "h.json").string() + " --out " + (dir.path / "sw").string()) == 0);
    const auto csv = slurp(dir.path / "sw" / "sweep.csv");
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 4);
    REQUIRE(csv.find("lambda=0,") != std::string::npos);
    REQUIRE(csv.find("lambda=0.5,") != std::string::npos);
    REQUIRE(csv.find("lambda=2,") != std::string::npos);
}

TEST_CASE("gradcheck passes and reports per-suite lines", "[cli]") {
    TempDir dir("gca_cli_gradcheck");
    const auto log = dir.path / "log.txt";
    REQUIRE(run_logged("gradcheck --trials 25 --seed 7", log) == 0);
    const auto text = slurp(log);
    REQUIRE(text.find("cross_entropy") != std::string::npos);
    REQUIRE(text.find("consistency_loss_ce") != std::string::npos);
    REQUIRE(text.find("consistency_loss_kl") != std::string::npos);
    REQUIRE(text.find("total_loss") != std::string::npos);
    REQUIRE(text.find("model_backward") != std::string::npos);
}

TEST_CASE("missing subcommand or unknown flags exit with the config code", "[cli]") {
    REQUIRE(run("") == 2);
    REQUIRE(run("frobnicate") == 2);
    REQUIRE(run("gen-data --not-a-flag x --out y") == 2);
}
