#pragma once
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gca/adam.hpp"
#include "gca/cooccurrence.hpp"
#include "gca/dataset.hpp"
#include "gca/errors.hpp"
#include "gca/evaluation.hpp"
#include "gca/losses.hpp"
#include "gca/model.hpp"

namespace gca {

struct TrainConfig {
    int batch_size = 64;
    int epochs = 60;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 1;
    LossConfig loss;
    int hidden_width = 64;
    int eval_every = 0;  // 0: only after the final epoch

    void validate() const {
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
        if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
            throw ConfigError("train: adam betas must lie in (0, 1)");
        if (!(adam_epsilon > 0.0)) throw ConfigError("train: adam_epsilon must be positive");
        if (hidden_width < 1) throw ConfigError("train: hidden_width must be >= 1");
        if (eval_every < 0) throw ConfigError("train: eval_every must be non-negative");
        loss.validate();
    }

    AdamConfig adam() const { return AdamConfig{learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }

    nlohmann::json to_json() const {
        nlohmann::json lj = {{"lambda_cons", loss.lambda_cons},
                             {"use_goal_loss", loss.use_goal_loss},
                             {"use_consistency", loss.use_consistency},
                             {"consistency_variant", to_string(loss.consistency_variant)},
                             {"log_clamp_epsilon", loss.log_clamp_epsilon}};
        return {{"batch_size", batch_size},
                {"epochs", epochs},
                {"learning_rate", learning_rate},
                {"adam_beta1", adam_beta1},
                {"adam_beta2", adam_beta2},
                {"adam_epsilon", adam_epsilon},
                {"seed", seed},
                {"hidden_width", hidden_width},
                {"eval_every", eval_every},
                {"loss", lj}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        try {
            static const std::vector<std::string> known = {
                "batch_size", "epochs",       "learning_rate", "adam_beta1", "adam_beta2",
                "adam_epsilon", "seed",       "hidden_width",  "eval_every", "loss"};
            for (const auto& [key, _] : j.items())
                if (std::find(known.begin(), known.end(), key) == known.end())
                    throw ConfigError("train: unknown config field '" + key + "'");
            auto get = [&j](const char* key, auto& field) {
                if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
            };
            get("batch_size", c.batch_size);
            get("epochs", c.epochs);
            get("learning_rate", c.learning_rate);
            get("adam_beta1", c.adam_beta1);
            get("adam_beta2", c.adam_beta2);
            get("adam_epsilon", c.adam_epsilon);
            get("seed", c.seed);
            get("hidden_width", c.hidden_width);
            get("eval_every", c.eval_every);
            if (j.contains("loss")) {
                const auto& lj = j.at("loss");
                static const std::vector<std::string> known_loss = {
                    "lambda_cons", "use_goal_loss", "use_consistency", "consistency_variant", "log_clamp_epsilon"};
                for (const auto& [key, _] : lj.items())
                    if (std::find(known_loss.begin(), known_loss.end(), key) == known_loss.end())
                        throw ConfigError("train: unknown loss config field '" + key + "'");
                if (lj.contains("lambda_cons")) {
                    if (lj.at("lambda_cons").is_array())
                        c.loss.lambda_cons = lj.at("lambda_cons").get<std::vector<double>>();
                    else
                        c.loss.lambda_cons = {lj.at("lambda_cons").get<double>()};
                }
                if (lj.contains("use_goal_loss")) c.loss.use_goal_loss = lj.at("use_goal_loss").get<bool>();
                if (lj.contains("use_consistency")) c.loss.use_consistency = lj.at("use_consistency").get<bool>();
                if (lj.contains("consistency_variant"))
                    c.loss.consistency_variant =
                        consistency_variant_from_string(lj.at("consistency_variant").get<std::string>());
                if (lj.contains("log_clamp_epsilon"))
                    c.loss.log_clamp_epsilon = lj.at("log_clamp_epsilon").get<double>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("train: malformed config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

// Loss terms aggregated over one epoch. Per-example losses are summed as
// written and also reported as means; optimizer steps always use batch means.
struct EpochStats {
    int epoch = 0;
    double wall_ms = 0.0;
    double fine_ce_sum = 0.0;
    std::vector<double> goal_ce_sum;
    std::vector<double> consistency_sum;
    double total_sum = 0.0;
    std::int64_t examples = 0;

    double fine_ce_mean() const { return fine_ce_sum / static_cast<double>(examples); }
    double total_mean() const { return total_sum / static_cast<double>(examples); }
    double goal_ce_mean(std::size_t k) const { return goal_ce_sum[k] / static_cast<double>(examples); }
    double consistency_mean(std::size_t k) const { return consistency_sum[k] / static_cast<double>(examples); }
};

struct EvalPoint {
    int epoch = 0;
    EvalReport report;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::vector<EvalPoint> evals;
    std::string checkpoint_path;  // filled by callers that persist the model

    const EvalReport* final_report() const { return evals.empty() ? nullptr : &evals.back().report; }

    // Wall-clock stays in memory only; the CSV artifact must be byte-identical
    // across reruns with the same seed.
    std::string to_csv(int goal_levels) const {
        std::ostringstream os;
        os << "epoch,fine_ce_mean";
        for (int k = 0; k < goal_levels; ++k) os << ",goal_ce_mean_l" << k;
        for (int k = 0; k < goal_levels; ++k) os << ",consistency_mean_l" << k;
        os << ",total_mean,fine_ce_sum";
        for (int k = 0; k < goal_levels; ++k) os << ",goal_ce_sum_l" << k;
        for (int k = 0; k < goal_levels; ++k) os << ",consistency_sum_l" << k;
        os << ",total_sum";
        static constexpr const char* kKinds[] = {"action", "verb", "noun"};
        static constexpr const char* kProtocols[] = {"per_view", "multi_view"};
        for (const char* proto : kProtocols)
            for (const char* kind : kKinds) os << ',' << (proto[0] == 'p' ? "pv" : "mv") << '_' << kind << "_recall";
        os << '\n';
        os.setf(std::ios::fixed);
        os.precision(9);
        for (const auto& e : epochs) {
            os << e.epoch << ',' << e.fine_ce_mean();
            for (int k = 0; k < goal_levels; ++k) os << ',' << e.goal_ce_mean(static_cast<std::size_t>(k));
            for (int k = 0; k < goal_levels; ++k) os << ',' << e.consistency_mean(static_cast<std::size_t>(k));
            os << ',' << e.total_mean() << ',' << e.fine_ce_sum;
            for (int k = 0; k < goal_levels; ++k) os << ',' << e.goal_ce_sum[static_cast<std::size_t>(k)];
            for (int k = 0; k < goal_levels; ++k) os << ',' << e.consistency_sum[static_cast<std::size_t>(k)];
            os << ',' << e.total_sum;
            const EvalPoint* ev = nullptr;
            for (const auto& p : evals)
                if (p.epoch == e.epoch) ev = &p;
            for (const char* proto : kProtocols) {
                for (const char* kind : kKinds) {
                    os << ',';
                    if (ev == nullptr) continue;
                    const auto* cell = ev->report.find(kind, proto, "overall");
                    if (cell != nullptr) os << cell->recall_percent;
                }
            }
            os << '\n';
        }
        return os.str();
    }
};

struct TrainResult {
    ModelParams params;
    TrainHistory history;
};

namespace detail {

inline void add_scaled(ModelParams& dst, const ModelParams& src, double scale) {
    std::vector<std::span<double>> d;
    std::vector<std::span<const double>> s;
    dst.for_each_tensor([&d](std::span<double> t) { d.push_back(t); });
    src.for_each_tensor([&s](std::span<const double> t) { s.push_back(t); });
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < d[i].size(); ++j) d[i][j] += scale * s[i][j];
}

inline void scale_in_place(ModelParams& p, double scale) {
    p.for_each_tensor([scale](std::span<double> t) {
        for (double& e : t) e *= scale;
    });
}

} // namespace detail

// Trains the two-branch model with Adam on the batch-mean total loss.
// The co-occurrence models must come from the training split; evaluation
// only ever consumes the fine branch.
inline TrainResult train(const TrainConfig& config,
                         const DatasetManifest& manifest,
                         const FeatureStore& store,
                         std::span<const CooccurrenceModel> cooccurrence) {
    config.validate();
    manifest.label_space.validate();
    const auto levels = static_cast<std::size_t>(manifest.label_space.num_levels());
    if (config.loss.use_consistency) {
        if (cooccurrence.size() != levels)
            throw ConfigError("train: consistency needs one cooccurrence model per goal level");
        for (std::size_t k = 0; k < levels; ++k) {
            const auto& m = cooccurrence[k];
            if (m.num_actions() != manifest.label_space.num_fine_actions ||
                m.num_goals() != manifest.label_space.goal_levels[k].num_goals)
                throw DataError("train: cooccurrence dimensions do not match the label space at level " +
                                std::to_string(k));
            const auto total = std::accumulate(m.counts.v.begin(), m.counts.v.end(), std::int64_t{0});
            if (total != manifest.num_train_records())
                throw DataError("train: cooccurrence totals (" + std::to_string(total) +
                                ") do not match the training split (" + std::to_string(manifest.num_train_records()) +
                                "); the hierarchy must be built from the training split");
        }
        if (config.loss.lambda_cons.size() != 1 && config.loss.lambda_cons.size() != levels)
            throw ConfigError("train: lambda_cons must be a single value or one per goal level");
    }

    TrainResult result;
    result.params = init_params(manifest.label_space, manifest.feature_dim, config.hidden_width, config.seed);

    auto evaluate_now = [&](int epoch) {
        if (manifest.val_ids.empty()) return;
        EvalPoint p;
        p.epoch = epoch;
        p.report = evaluate(result.params, manifest, store, Split::Val);
        result.history.evals.push_back(std::move(p));
    };

    if (config.epochs == 0) {
        evaluate_now(0);
        return result;
    }

    Batcher batcher(manifest, Split::Train, config.batch_size, config.seed);
    Adam optimizer(result.params, config.adam());

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochStats stats;
        stats.epoch = epoch;
        stats.goal_ce_sum.assign(levels, 0.0);
        stats.consistency_sum.assign(levels, 0.0);

        for (const auto& batch : batcher.epoch(epoch)) {
            ModelParams grads = ModelParams::zeros_like(result.params);
            for (const auto id : batch) {
                const auto& r = manifest.records[static_cast<std::size_t>(id)];
                const auto view = store.view(r);
                const auto fwd = forward(result.params, view);
                const auto bd = total_loss(fwd, ExampleLabels{r.fine_label, r.goal_labels}, cooccurrence, config.loss);
                const auto g = backward(result.params, view, fwd, bd.grad_fine_logits, bd.grad_goal_logits);
                detail::add_scaled(grads, g, 1.0);

                stats.fine_ce_sum += bd.fine_ce;
                for (std::size_t k = 0; k < levels; ++k) {
                    stats.goal_ce_sum[k] += bd.goal_ce[k];
                    stats.consistency_sum[k] += bd.consistency[k];
                }
                stats.total_sum += bd.total;
                ++stats.examples;
            }
            detail::scale_in_place(grads, 1.0 / static_cast<double>(batch.size()));
            optimizer.step(result.params, grads);
        }

        stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.history.epochs.push_back(std::move(stats));

        const bool last = epoch == config.epochs;
        if (last || (config.eval_every > 0 && epoch % config.eval_every == 0)) evaluate_now(epoch);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Experiment drivers. Each reports the per-view overall class-mean Top-5
// action recall of the final model per run; the headline number matches what
// the history CSV records.
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    std::vector<double> per_seed_recall;

    double mean() const {
        return std::accumulate(per_seed_recall.begin(), per_seed_recall.end(), 0.0) /
               static_cast<double>(per_seed_recall.size());
    }
    double stddev() const {
        if (per_seed_recall.size() < 2) return 0.0;
        const double m = mean();
        double acc = 0.0;
        for (double r : per_seed_recall) acc += (r - m) * (r - m);
        return std::sqrt(acc / static_cast<double>(per_seed_recall.size() - 1));
    }
};

inline std::string ablation_csv(std::span<const AblationRow> rows) {
    std::ostringstream os;
    os << "config,mean_recall,sd_recall,n_seeds\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    for (const auto& r : rows)
        os << r.name << ',' << r.mean() << ',' << r.stddev() << ',' << r.per_seed_recall.size() << '\n';
    return os.str();
}

inline std::string ablation_runs_csv(std::span<const AblationRow> rows, std::span<const std::uint64_t> seeds) {
    std::ostringstream os;
    os << "config,seed,recall\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < r.per_seed_recall.size(); ++i)
            os << r.name << ',' << seeds[i] << ',' << r.per_seed_recall[i] << '\n';
    return os.str();
}

namespace detail {

inline double final_pv_action_recall(const TrainConfig& config,
                                     const DatasetManifest& manifest,
                                     const FeatureStore& store,
                                     std::span<const CooccurrenceModel> cooccurrence) {
    const auto result = train(config, manifest, store, cooccurrence);
    const auto* report = result.history.final_report();
    if (report == nullptr) throw DataError("ablation: training produced no evaluation (empty validation split?)");
    const auto* cell = report->find("action", "per_view", "overall");
    if (cell == nullptr) throw DataError("ablation: evaluation report lacks the per-view action cell");
    return cell->recall_percent;
}

} // namespace detail

// Three configurations, differing only in the loss flags: fine CE alone,
// fine+goal CE, and the full objective with the consistency term.
inline std::vector<AblationRow> run_component_ablation(const TrainConfig& base,
                                                       const DatasetManifest& manifest,
                                                       const FeatureStore& store,
                                                       std::span<const CooccurrenceModel> cooccurrence,
                                                       std::span<const std::uint64_t> seeds) {
    if (seeds.size() < 3) throw ConfigError("ablate: at least 3 seeds are required");
    std::vector<AblationRow> rows = {{"fine", {}}, {"fine+goal", {}}, {"fine+goal+cons", {}}};
    for (const auto seed : seeds) {
        TrainConfig cfg = base;
        cfg.seed = seed;

        cfg.loss.use_goal_loss = false;
        cfg.loss.use_consistency = false;
        rows[0].per_seed_recall.push_back(detail::final_pv_action_recall(cfg, manifest, store, cooccurrence));

        cfg.loss.use_goal_loss = true;
        cfg.loss.use_consistency = false;
        rows[1].per_seed_recall.push_back(detail::final_pv_action_recall(cfg, manifest, store, cooccurrence));

        cfg.loss.use_goal_loss = true;
        cfg.loss.use_consistency = true;
        rows[2].per_seed_recall.push_back(detail::final_pv_action_recall(cfg, manifest, store, cooccurrence));
    }
    return rows;
}

// One training per (lambda, seed) with the consistency term enabled.
inline std::vector<AblationRow> run_lambda_sweep(const TrainConfig& base,
                                                 const DatasetManifest& manifest,
                                                 const FeatureStore& store,
                                                 std::span<const CooccurrenceModel> cooccurrence,
                                                 std::span<const double> lambda_values,
                                                 std::span<const std::uint64_t> seeds) {
    if (lambda_values.empty()) throw ConfigError("sweep: lambda_values must be non-empty");
    if (seeds.empty()) throw ConfigError("sweep: at least one seed is required");
    std::vector<AblationRow> rows;
    for (const double lambda : lambda_values) {
        AblationRow row;
        std::ostringstream name;
        name << "lambda=" << lambda;
        row.name = name.str();
        for (const auto seed : seeds) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.loss.use_goal_loss = true;
            cfg.loss.use_consistency = true;
            cfg.loss.lambda_cons = {lambda};
            row.per_seed_recall.push_back(detail::final_pv_action_recall(cfg, manifest, store, cooccurrence));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// Ground-truth CE versus predicted-KL consistency, all else equal.
inline std::vector<AblationRow> run_formulation_ablation(const TrainConfig& base,
                                                         const DatasetManifest& manifest,
                                                         const FeatureStore& store,
                                                         std::span<const CooccurrenceModel> cooccurrence,
                                                         std::span<const std::uint64_t> seeds) {
    if (seeds.size() < 3) throw ConfigError("ablate: at least 3 seeds are required");
    std::vector<AblationRow> rows = {{"ground_truth_ce", {}}, {"predicted_kl", {}}};
    for (const auto seed : seeds) {
        TrainConfig cfg = base;
        cfg.seed = seed;
        cfg.loss.use_goal_loss = true;
        cfg.loss.use_consistency = true;

        cfg.loss.consistency_variant = ConsistencyVariant::GroundTruthCe;
        rows[0].per_seed_recall.push_back(detail::final_pv_action_recall(cfg, manifest, store, cooccurrence));

        cfg.loss.consistency_variant = ConsistencyVariant::PredictedKl;
        rows[1].per_seed_recall.push_back(detail::final_pv_action_recall(cfg, manifest, store, cooccurrence));
    }
    return rows;
}

} // namespace gca
