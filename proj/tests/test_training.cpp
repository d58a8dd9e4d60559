#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "gca/adam.hpp"
#include "gca/synthetic.hpp"
#include "gca/training.hpp"

using namespace gca;

namespace {

SyntheticConfig small_config() {
    SyntheticConfig c;
    c.num_goals = 3;
    c.actions_per_goal = 4;
    c.action_overlap_fraction = 0.25;
    c.feature_dim = 8;
    c.snippets = 2;
    c.noise_sigma = 0.4;
    c.signal_mix = 0.5;
    c.num_sequences = 40;
    c.views_per_sequence = 1;
    c.steps_per_sequence = 4;
    c.seed = 9;
    return c;
}

TrainConfig small_train_config() {
    TrainConfig t;
    t.epochs = 3;
    t.batch_size = 32;
    t.hidden_width = 16;
    t.seed = 1;
    return t;
}

std::vector<CooccurrenceModel> hierarchy_of(const DatasetManifest& manifest, Split split) {
    std::vector<CooccurrenceModel> models;
    for (int k = 0; k < manifest.label_space.num_levels(); ++k) {
        const auto pairs = manifest.fine_goal_pairs(split, k);
        models.push_back(derive_conditional(build_cooccurrence(pairs, manifest.label_space, k), 1e-6));
    }
    return models;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
    if (!(a.trunk_w == b.trunk_w) || a.trunk_b != b.trunk_b) return false;
    if (!(a.fine_head_w == b.fine_head_w) || a.fine_head_b != b.fine_head_b) return false;
    if (a.goal_heads.size() != b.goal_heads.size()) return false;
    for (std::size_t k = 0; k < a.goal_heads.size(); ++k)
        if (!(a.goal_heads[k].w == b.goal_heads[k].w) || a.goal_heads[k].b != b.goal_heads[k].b) return false;
    return true;
}

} // namespace

TEST_CASE("adam matches a scalar reference implementation", "[training]") {
    // minimize f(theta) = theta^2 from theta0 = 0.7; the model holds the
    // scalar in trunk_b[0], every other gradient stays zero
    LabelSpace space;
    space.num_fine_actions = 1;
    space.goal_levels = {{1}};
    space.num_verbs = 1;
    space.num_nouns = 1;
    space.action_to_verb = {0};
    space.action_to_noun = {0};

    auto params = init_params(space, 1, 1, 0);
    params.trunk_b[0] = 0.7;
    AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
    Adam opt(params, cfg);
    auto grads = ModelParams::zeros_like(params);

    double ref_theta = 0.7, ref_m = 0.0, ref_v = 0.0;
    for (int t = 1; t <= 100; ++t) {
        grads.trunk_b[0] = 2.0 * params.trunk_b[0];
        const double g = 2.0 * ref_theta;
        opt.step(params, grads);

        ref_m = cfg.beta1 * ref_m + (1.0 - cfg.beta1) * g;
        ref_v = cfg.beta2 * ref_v + (1.0 - cfg.beta2) * g * g;
        const double mhat = ref_m / (1.0 - std::pow(cfg.beta1, t));
        const double vhat = ref_v / (1.0 - std::pow(cfg.beta2, t));
        ref_theta -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);

        REQUIRE(std::abs(params.trunk_b[0] - ref_theta) < 1e-12);
    }
    REQUIRE(std::abs(params.trunk_b[0]) < 0.2);  // made progress toward 0
}

TEST_CASE("train with zero epochs returns the initial parameters", "[training]") {
    const auto data = generate_synthetic(small_config());
    const auto coocc = hierarchy_of(data.manifest, Split::Train);
    auto cfg = small_train_config();
    cfg.epochs = 0;
    const auto result = train(cfg, data.manifest, data.store, coocc);
    const auto fresh = init_params(data.manifest.label_space, data.manifest.feature_dim, cfg.hidden_width, cfg.seed);
    REQUIRE(params_equal(result.params, fresh));
    REQUIRE(result.history.epochs.empty());
    REQUIRE(result.history.final_report() != nullptr);
}

TEST_CASE("training is deterministic given the seed", "[training]") {
    const auto data = generate_synthetic(small_config());
    const auto coocc = hierarchy_of(data.manifest, Split::Train);
    const auto cfg = small_train_config();
    const auto a = train(cfg, data.manifest, data.store, coocc);
    const auto b = train(cfg, data.manifest, data.store, coocc);
    REQUIRE(params_equal(a.params, b.params));
    REQUIRE(a.history.epochs.size() == b.history.epochs.size());
    for (std::size_t e = 0; e < a.history.epochs.size(); ++e)
        REQUIRE(a.history.epochs[e].total_sum == b.history.epochs[e].total_sum);

    auto cfg2 = cfg;
    cfg2.seed = 2;
    const auto c = train(cfg2, data.manifest, data.store, coocc);
    REQUIRE_FALSE(params_equal(a.params, c.params));
}

TEST_CASE("training reduces the loss on the default dataset", "[training][slow]") {
    const auto data = generate_synthetic(SyntheticConfig{});
    const auto coocc = hierarchy_of(data.manifest, Split::Train);
    TrainConfig cfg;
    cfg.epochs = 30;
    const auto result = train(cfg, data.manifest, data.store, coocc);
    REQUIRE(result.history.epochs.size() == 30);
    const double first = result.history.epochs.front().total_mean();
    const double last = result.history.epochs.back().total_mean();
    INFO("epoch 1 mean total " << first << " -> epoch 30 mean total " << last);
    REQUIRE(last < first);
}

TEST_CASE("trained-model reports keep verb and noun recall above action recall", "[training]") {
    const auto data = generate_synthetic(small_config());
    const auto coocc = hierarchy_of(data.manifest, Split::Train);
    auto cfg = small_train_config();
    cfg.epochs = 5;
    const auto result = train(cfg, data.manifest, data.store, coocc);
    const auto* report = result.history.final_report();
    REQUIRE(report != nullptr);
    for (const char* protocol : {"per_view", "multi_view"}) {
        const double action = report->find("action", protocol, "overall")->recall_percent;
        const double verb = report->find("verb", protocol, "overall")->recall_percent;
        const double noun = report->find("noun", protocol, "overall")->recall_percent;
        INFO(protocol << ": action " << action << " verb " << verb << " noun " << noun);
        REQUIRE(verb >= action);
        REQUIRE(noun >= action);
    }
}

TEST_CASE("hierarchies built from the wrong split are rejected", "[training]") {
    const auto data = generate_synthetic(small_config());
    const auto from_val = hierarchy_of(data.manifest, Split::Val);
    const auto cfg = small_train_config();
    REQUIRE(data.manifest.val_ids.size() != data.manifest.train_ids.size());
    REQUIRE_THROWS_WITH(train(cfg, data.manifest, data.store, from_val),
                        Catch::Matchers::ContainsSubstring("training split"));
}

TEST_CASE("lambda zero training equals the goal-only configuration exactly", "[training]") {
    const auto data = generate_synthetic(small_config());
    const auto coocc = hierarchy_of(data.manifest, Split::Train);
    auto with_cons = small_train_config();
    with_cons.loss.use_consistency = true;
    with_cons.loss.lambda_cons = {0.0};
    auto without = small_train_config();
    without.loss.use_consistency = false;
    const auto a = train(with_cons, data.manifest, data.store, coocc);
    const auto b = train(without, data.manifest, data.store, coocc);
    REQUIRE(params_equal(a.params, b.params));
}

TEST_CASE("training with two goal levels runs end to end", "[training]") {
    // extend a generated single-level dataset with a coarser second level
    // (parity of the goal id), the way a sequence-level goal would sit on
    // top of segment-level goals
    auto data = generate_synthetic(small_config());
    data.manifest.label_space.goal_levels.push_back({2});
    for (auto& r : data.manifest.records) r.goal_labels.push_back(r.goal_labels[0] % 2);
    data.manifest.validate();

    const auto coocc = hierarchy_of(data.manifest, Split::Train);
    REQUIRE(coocc.size() == 2);
    REQUIRE(coocc[1].num_goals() == 2);

    auto cfg = small_train_config();
    cfg.epochs = 4;
    cfg.loss.lambda_cons = {1.0, 0.5};

    for (const auto variant : {ConsistencyVariant::GroundTruthCe, ConsistencyVariant::PredictedKl}) {
        cfg.loss.consistency_variant = variant;
        const auto result = train(cfg, data.manifest, data.store, coocc);
        REQUIRE(result.params.goal_heads.size() == 2);
        REQUIRE(result.params.goal_heads[1].w.cols == 2);
        REQUIRE(result.history.epochs.back().goal_ce_sum.size() == 2);
        REQUIRE(result.history.epochs.back().goal_ce_sum[1] > 0.0);
        REQUIRE(result.history.epochs.back().consistency_sum[1] > 0.0);
        REQUIRE(result.history.final_report() != nullptr);
        const auto* cell = result.history.final_report()->find("action", "per_view", "overall");
        REQUIRE(cell != nullptr);
        REQUIRE(cell->recall_percent >= 0.0);
        REQUIRE(cell->recall_percent <= 100.0);
    }

    // per-level lambda list must match the level count
    cfg.loss.lambda_cons = {1.0, 0.5, 0.25};
    REQUIRE_THROWS_AS(train(cfg, data.manifest, data.store, coocc), ConfigError);
}

TEST_CASE("train config JSON parsing", "[training]") {
    SECTION("round-trip") {
        TrainConfig cfg;
        cfg.epochs = 7;
        cfg.loss.lambda_cons = {0.5, 2.0};
        cfg.loss.consistency_variant = ConsistencyVariant::PredictedKl;
        const auto parsed = TrainConfig::from_json(cfg.to_json());
        REQUIRE(parsed.to_json() == cfg.to_json());
    }
    SECTION("unknown fields are named") {
        nlohmann::json j = {{"epochs", 3}, {"momentum", 0.9}};
        REQUIRE_THROWS_WITH(TrainConfig::from_json(j), Catch::Matchers::ContainsSubstring("momentum"));
        nlohmann::json j2 = {{"loss", {{"alpha", 1.0}}}};
        REQUIRE_THROWS_WITH(TrainConfig::from_json(j2), Catch::Matchers::ContainsSubstring("alpha"));
    }
    SECTION("scalar lambda broadcasts") {
        nlohmann::json j = {{"loss", {{"lambda_cons", 2.5}}}};
        const auto parsed = TrainConfig::from_json(j);
        REQUIRE(parsed.loss.lambda_cons == std::vector<double>{2.5});
    }
    SECTION("invalid values are rejected") {
        nlohmann::json j = {{"learning_rate", -1.0}};
        REQUIRE_THROWS_AS(TrainConfig::from_json(j), ConfigError);
        nlohmann::json j2 = {{"loss", {{"consistency_variant", "sideways"}}}};
        REQUIRE_THROWS_AS(TrainConfig::from_json(j2), ConfigError);
    }
}

TEST_CASE("history CSV lists one row per epoch with eval columns", "[training]") {
    const auto data = generate_synthetic(small_config());
    const auto coocc = hierarchy_of(data.manifest, Split::Train);
    auto cfg = small_train_config();
    cfg.epochs = 4;
    cfg.eval_every = 2;
    const auto result = train(cfg, data.manifest, data.store, coocc);
    REQUIRE(result.history.evals.size() == 2);  // epochs 2 and 4

    const auto csv = result.history.to_csv(data.manifest.label_space.num_levels());
    std::istringstream is(csv);
    std::string line;
    REQUIRE(std::getline(is, line));
    REQUIRE(line.find("epoch,fine_ce_mean,goal_ce_mean_l0,consistency_mean_l0,total_mean") == 0);
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    REQUIRE(rows == 4);
}

TEST_CASE("component ablation produces three deterministic rows", "[training]") {
    const auto data = generate_synthetic(small_config());
    const auto coocc = hierarchy_of(data.manifest, Split::Train);
    auto cfg = small_train_config();
    cfg.epochs = 2;
    const std::vector<std::uint64_t> seeds = {7, 7, 7};
    const auto rows = run_component_ablation(cfg, data.manifest, data.store, coocc, seeds);
    REQUIRE(rows.size() == 3);
    REQUIRE(rows[0].name == "fine");
    REQUIRE(rows[1].name == "fine+goal");
    REQUIRE(rows[2].name == "fine+goal+cons");
    for (const auto& row : rows) {
        REQUIRE(row.per_seed_recall.size() == 3);
        REQUIRE(row.per_seed_recall[0] == row.per_seed_recall[1]);
        REQUIRE(row.per_seed_recall[1] == row.per_seed_recall[2]);
        REQUIRE(row.stddev() == 0.0);
    }
    const std::vector<std::uint64_t> two = {1, 2};
    REQUIRE_THROWS_AS(run_component_ablation(cfg, data.manifest, data.store, coocc, two), ConfigError);
}

TEST_CASE("lambda sweep at zero equals the fine+goal ablation row", "[training]") {
    const auto data = generate_synthetic(small_config());
    const auto coocc = hierarchy_of(data.manifest, Split::Train);
    auto cfg = small_train_config();
    cfg.epochs = 2;
    const std::vector<std::uint64_t> seeds = {1, 2, 3};
    const auto ablation = run_component_ablation(cfg, data.manifest, data.store, coocc, seeds);
    const std::vector<double> lambdas = {0.0, 1.0};
    const auto sweep = run_lambda_sweep(cfg, data.manifest, data.store, coocc, lambdas, seeds);
    REQUIRE(sweep.size() == 2);
    REQUIRE(sweep[0].name == "lambda=0");
    REQUIRE(sweep[0].per_seed_recall == ablation[1].per_seed_recall);
}

TEST_CASE("formulation ablation produces both variants", "[training]") {
    const auto data = generate_synthetic(small_config());
    const auto coocc = hierarchy_of(data.manifest, Split::Train);
    auto cfg = small_train_config();
    cfg.epochs = 2;
    const std::vector<std::uint64_t> seeds = {3, 4, 5};
    const auto rows = run_formulation_ablation(cfg, data.manifest, data.store, coocc, seeds);
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].name == "ground_truth_ce");
    REQUIRE(rows[1].name == "predicted_kl");
    for (const auto& row : rows) REQUIRE(row.per_seed_recall.size() == 3);

    const auto csv = ablation_csv(rows);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 rows
}
