#pragma once
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gca/cooccurrence.hpp"
#include "gca/losses.hpp"
#include "gca/model.hpp"

namespace gca {

// Central finite differences against the analytic gradients, the acceptance
// oracle for every loss and for model backprop. An entry passes when the
// absolute error is below abs_floor or the relative error is below rel_tol.
struct GradCheckReport {
    std::string name;
    int trials = 0;
    std::int64_t comparisons = 0;
    std::int64_t failures = 0;
    double max_rel_err = 0.0;

    bool ok() const { return failures == 0; }
};

namespace gradcheck_detail {

constexpr double kFdStep = 1e-5;
constexpr double kRelTol = 1e-4;
constexpr double kAbsFloor = 1e-7;

inline void compare(GradCheckReport& report, double analytic, double numeric) {
    const double err = std::abs(analytic - numeric);
    ++report.comparisons;
    if (err < kAbsFloor) return;
    const double rel = err / std::max(std::abs(analytic), std::abs(numeric));
    report.max_rel_err = std::max(report.max_rel_err, rel);
    if (rel >= kRelTol) ++report.failures;
}

// Numeric gradient of f at x, one perturbed coordinate at a time.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + kFdStep;
        const double hi = f(x);
        x[i] = saved - kFdStep;
        const double lo = f(x);
        x[i] = saved;
        g[i] = (hi - lo) / (2.0 * kFdStep);
    }
    return g;
}

inline std::vector<double> random_logits(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& e : v) e = dist(rng);
    return v;
}

// Column-stochastic matrix with no tiny entries, so log clamps stay inactive.
inline MatD random_conditional(std::mt19937_64& rng, int rows, int cols) {
    std::uniform_real_distribution<double> dist(0.05, 1.0);
    MatD m(rows, cols);
    for (int c = 0; c < cols; ++c) {
        double sum = 0.0;
        for (int l = 0; l < rows; ++l) {
            m(l, c) = dist(rng);
            sum += m(l, c);
        }
        for (int l = 0; l < rows; ++l) m(l, c) /= sum;
    }
    return m;
}

} // namespace gradcheck_detail

inline GradCheckReport gradcheck_cross_entropy(int trials, std::uint64_t seed) {
    namespace gd = gradcheck_detail;
    GradCheckReport report{"cross_entropy"};
    std::mt19937_64 rng(seed);
    for (int t = 0; t < trials; ++t) {
        std::uniform_int_distribution<int> dim_dist(2, 16);
        const int n = dim_dist(rng);
        const auto logits = gd::random_logits(rng, n);
        const int label = std::uniform_int_distribution<int>(0, n - 1)(rng);

        const auto analytic = cross_entropy(logits, label).grad_logits;
        const auto numeric = gd::central_diff(
            [label](const std::vector<double>& x) { return cross_entropy(x, label).loss; }, logits);
        for (std::size_t i = 0; i < analytic.size(); ++i) gd::compare(report, analytic[i], numeric[i]);
        ++report.trials;
    }
    return report;
}

inline GradCheckReport gradcheck_consistency_ce(int trials, std::uint64_t seed) {
    namespace gd = gradcheck_detail;
    GradCheckReport report{"consistency_loss_ce"};
    std::mt19937_64 rng(seed);
    for (int t = 0; t < trials; ++t) {
        const int num_actions = std::uniform_int_distribution<int>(2, 16)(rng);
        const int num_goals = std::uniform_int_distribution<int>(2, 16)(rng);
        const auto conditional = gd::random_conditional(rng, num_goals, num_actions);
        const auto logits = gd::random_logits(rng, num_actions);
        const int goal = std::uniform_int_distribution<int>(0, num_goals - 1)(rng);

        const auto analytic = consistency_loss_ce(logits, conditional, goal).grad_logits;
        const auto numeric = gd::central_diff(
            [&conditional, goal](const std::vector<double>& x) {
                return consistency_loss_ce(x, conditional, goal).loss;
            },
            logits);
        for (std::size_t i = 0; i < analytic.size(); ++i) gd::compare(report, analytic[i], numeric[i]);
        ++report.trials;
    }
    return report;
}

inline GradCheckReport gradcheck_consistency_kl(int trials, std::uint64_t seed) {
    namespace gd = gradcheck_detail;
    GradCheckReport report{"consistency_loss_kl"};
    std::mt19937_64 rng(seed);
    for (int t = 0; t < trials; ++t) {
        const int num_actions = std::uniform_int_distribution<int>(2, 16)(rng);
        const int num_goals = std::uniform_int_distribution<int>(2, 16)(rng);
        const auto conditional = gd::random_conditional(rng, num_goals, num_actions);
        const auto fine = gd::random_logits(rng, num_actions);
        const auto goal = gd::random_logits(rng, num_goals);

        const auto res = consistency_loss_kl(fine, conditional, goal);
        const auto numeric_fine = gd::central_diff(
            [&conditional, &goal](const std::vector<double>& x) {
                return consistency_loss_kl(x, conditional, goal).loss;
            },
            fine);
        const auto numeric_goal = gd::central_diff(
            [&conditional, &fine](const std::vector<double>& x) {
                return consistency_loss_kl(fine, conditional, x).loss;
            },
            goal);
        for (std::size_t i = 0; i < fine.size(); ++i) gd::compare(report, res.grad_fine_logits[i], numeric_fine[i]);
        for (std::size_t i = 0; i < goal.size(); ++i) gd::compare(report, res.grad_goal_logits[i], numeric_goal[i]);
        ++report.trials;
    }
    return report;
}

inline GradCheckReport gradcheck_total_loss(int trials, std::uint64_t seed) {
    namespace gd = gradcheck_detail;
    GradCheckReport report{"total_loss"};
    std::mt19937_64 rng(seed);
    for (int t = 0; t < trials; ++t) {
        const int num_actions = std::uniform_int_distribution<int>(2, 16)(rng);
        const int levels = std::uniform_int_distribution<int>(1, 2)(rng);

        LossConfig cfg;
        cfg.use_goal_loss = true;
        cfg.use_consistency = true;
        cfg.consistency_variant = t % 2 == 0 ? ConsistencyVariant::GroundTruthCe : ConsistencyVariant::PredictedKl;
        cfg.lambda_cons.clear();

        ForwardOutput fwd;
        fwd.fine_logits = gd::random_logits(rng, num_actions);
        ExampleLabels labels;
        labels.fine_label = std::uniform_int_distribution<int>(0, num_actions - 1)(rng);
        std::vector<CooccurrenceModel> coocc(static_cast<std::size_t>(levels));
        for (int k = 0; k < levels; ++k) {
            const int num_goals = std::uniform_int_distribution<int>(2, 16)(rng);
            fwd.goal_logits.push_back(gd::random_logits(rng, num_goals));
            labels.goal_labels.push_back(std::uniform_int_distribution<int>(0, num_goals - 1)(rng));
            coocc[static_cast<std::size_t>(k)].conditional = gd::random_conditional(rng, num_goals, num_actions);
            cfg.lambda_cons.push_back(std::uniform_real_distribution<double>(0.1, 2.0)(rng));
        }

        const auto bd = total_loss(fwd, labels, coocc, cfg);

        auto loss_at = [&](const ForwardOutput& f) { return total_loss(f, labels, coocc, cfg).total; };
        const auto numeric_fine = gd::central_diff(
            [&](const std::vector<double>& x) {
                ForwardOutput f = fwd;
                f.fine_logits = x;
                return loss_at(f);
            },
            fwd.fine_logits);
        for (std::size_t i = 0; i < numeric_fine.size(); ++i)
            gd::compare(report, bd.grad_fine_logits[i], numeric_fine[i]);
        for (int k = 0; k < levels; ++k) {
            const auto numeric_goal = gd::central_diff(
                [&, k](const std::vector<double>& x) {
                    ForwardOutput f = fwd;
                    f.goal_logits[static_cast<std::size_t>(k)] = x;
                    return loss_at(f);
                },
                fwd.goal_logits[static_cast<std::size_t>(k)]);
            for (std::size_t i = 0; i < numeric_goal.size(); ++i)
                gd::compare(report, bd.grad_goal_logits[static_cast<std::size_t>(k)][i], numeric_goal[i]);
        }
        ++report.trials;
    }
    return report;
}

// Probes model backward through a random linear functional of the logits so a
// single scalar summarizes every output; instances whose hidden pre-activation
// sits within FD reach of the relu kink are redrawn.
inline GradCheckReport gradcheck_model_backward(int trials, std::uint64_t seed) {
    namespace gd = gradcheck_detail;
    GradCheckReport report{"model_backward"};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> feat_dist(-1.0, 1.0);

    int done = 0;
    int attempts = 0;
    while (done < trials && attempts < trials * 20) {
        ++attempts;
        const int D = std::uniform_int_distribution<int>(2, 16)(rng);
        const int H = std::uniform_int_distribution<int>(2, 16)(rng);
        const int C = std::uniform_int_distribution<int>(2, 16)(rng);
        const int levels = std::uniform_int_distribution<int>(1, 2)(rng);
        const int S = std::uniform_int_distribution<int>(1, 4)(rng);

        LabelSpace space;
        space.num_fine_actions = C;
        for (int k = 0; k < levels; ++k) space.goal_levels.push_back({std::uniform_int_distribution<int>(2, 8)(rng)});
        space.num_verbs = 1;
        space.num_nouns = 1;
        space.action_to_verb.assign(static_cast<std::size_t>(C), 0);
        space.action_to_noun.assign(static_cast<std::size_t>(C), 0);

        ModelParams params = init_params(space, D, H, rng());
        std::uniform_real_distribution<double> bias_dist(-0.3, 0.3);
        for (double& b : params.trunk_b) b = bias_dist(rng);

        MatF feats(S, D);
        for (float& f : feats.v) f = static_cast<float>(feat_dist(rng));
        const FeatureView view{feats.v.data(), S, D};

        // Skip instances near the relu kink, where the loss is not
        // differentiable and finite differences are meaningless.
        const auto pooled = mean_pool(view);
        bool near_kink = false;
        for (int h = 0; h < H && !near_kink; ++h) {
            double pre = params.trunk_b[static_cast<std::size_t>(h)];
            for (int d = 0; d < D; ++d) pre += pooled[static_cast<std::size_t>(d)] * params.trunk_w(d, h);
            near_kink = std::abs(pre) < 1e-3;
        }
        if (near_kink) continue;

        std::vector<double> probe_fine = gd::random_logits(rng, C);
        std::vector<std::vector<double>> probe_goal;
        for (int k = 0; k < levels; ++k)
            probe_goal.push_back(gd::random_logits(rng, space.goal_levels[static_cast<std::size_t>(k)].num_goals));

        auto objective = [&](const ModelParams& p) {
            const auto out = forward(p, view);
            double acc = 0.0;
            for (int c = 0; c < C; ++c) acc += probe_fine[static_cast<std::size_t>(c)] * out.fine_logits[static_cast<std::size_t>(c)];
            for (int k = 0; k < levels; ++k)
                for (std::size_t l = 0; l < probe_goal[static_cast<std::size_t>(k)].size(); ++l)
                    acc += probe_goal[static_cast<std::size_t>(k)][l] * out.goal_logits[static_cast<std::size_t>(k)][l];
            return acc;
        };

        const auto fwd = forward(params, view);
        ModelParams analytic = backward(params, view, fwd, probe_fine, probe_goal);

        std::vector<std::span<double>> param_spans, grad_spans;
        params.for_each_tensor([&param_spans](std::span<double> s) { param_spans.push_back(s); });
        analytic.for_each_tensor([&grad_spans](std::span<double> s) { grad_spans.push_back(s); });
        for (std::size_t ti = 0; ti < param_spans.size(); ++ti) {
            for (std::size_t j = 0; j < param_spans[ti].size(); ++j) {
                const double saved = param_spans[ti][j];
                param_spans[ti][j] = saved + gd::kFdStep;
                const double hi = objective(params);
                param_spans[ti][j] = saved - gd::kFdStep;
                const double lo = objective(params);
                param_spans[ti][j] = saved;
                gd::compare(report, grad_spans[ti][j], (hi - lo) / (2.0 * gd::kFdStep));
            }
        }
        ++done;
        ++report.trials;
    }
    return report;
}

inline std::vector<GradCheckReport> run_all_gradchecks(int trials, std::uint64_t seed) {
    return {gradcheck_cross_entropy(trials, seed),
            gradcheck_consistency_ce(trials, seed + 1),
            gradcheck_consistency_kl(trials, seed + 2),
            gradcheck_total_loss(trials, seed + 3),
            gradcheck_model_backward(trials, seed + 4)};
}

} // namespace gca
