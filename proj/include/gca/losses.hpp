#pragma once
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gca/cooccurrence.hpp"
#include "gca/errors.hpp"
#include "gca/mat.hpp"
#include "gca/model.hpp"

namespace gca {

enum class ConsistencyVariant {
    GroundTruthCe,  // cross-entropy of the remapped goal distribution vs the true goal
    PredictedKl,    // KL(goal branch prediction || remapped goal distribution)
};

inline std::string to_string(ConsistencyVariant v) {
    return v == ConsistencyVariant::GroundTruthCe ? "ground_truth_ce" : "predicted_kl";
}

inline ConsistencyVariant consistency_variant_from_string(const std::string& s) {
    if (s == "ground_truth_ce") return ConsistencyVariant::GroundTruthCe;
    if (s == "predicted_kl") return ConsistencyVariant::PredictedKl;
    throw ConfigError("unknown consistency variant: '" + s + "' (expected ground_truth_ce or predicted_kl)");
}

struct LossConfig {
    std::vector<double> lambda_cons = {1.0};  // one weight per goal level; a single value broadcasts
    bool use_goal_loss = true;
    bool use_consistency = true;
    ConsistencyVariant consistency_variant = ConsistencyVariant::GroundTruthCe;
    double log_clamp_epsilon = 1e-12;

    void validate() const {
        if (lambda_cons.empty()) throw ConfigError("loss: lambda_cons must provide at least one value");
        for (double l : lambda_cons)
            if (!(l >= 0.0)) throw ConfigError("loss: lambda_cons must be non-negative");
        if (!(log_clamp_epsilon > 0.0 && log_clamp_epsilon <= 1e-3))
            throw ConfigError("loss: log_clamp_epsilon must lie in (0, 1e-3]");
    }

    double lambda_for_level(std::size_t level) const {
        if (lambda_cons.size() == 1) return lambda_cons[0];
        if (level >= lambda_cons.size())
            throw ConfigError("loss: lambda_cons has no entry for goal level " + std::to_string(level));
        return lambda_cons[level];
    }
};

inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        z += p[i];
    }
    for (double& e : p) e /= z;
    return p;
}

struct ScalarLoss {
    double loss = 0.0;
    std::vector<double> grad_logits;
};

// loss = -log(p[label]) with the probability clamped below by clamp_epsilon
// inside the log. Above the floor the gradient is the exact softmax - onehot;
// at or below it the gradient is zero.
inline ScalarLoss cross_entropy(std::span<const double> logits, int true_label, double clamp_epsilon = 1e-12) {
    if (true_label < 0 || true_label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("cross_entropy: label " + std::to_string(true_label) + " out of range");
    auto p = softmax(logits);
    ScalarLoss out;
    const double py = p[static_cast<std::size_t>(true_label)];
    out.loss = -std::log(std::max(py, clamp_epsilon));
    out.grad_logits.assign(logits.size(), 0.0);
    if (py > clamp_epsilon) {
        out.grad_logits = p;
        out.grad_logits[static_cast<std::size_t>(true_label)] -= 1.0;
    }
    return out;
}

// Remaps a fine-action distribution onto goals through the conditional
// P(goal | action): out[l] = sum_c conditional(l, c) * fine_probs[c].
inline std::vector<double> remap_to_goal(std::span<const double> fine_probs, const MatD& conditional) {
    if (static_cast<std::int64_t>(fine_probs.size()) != conditional.cols)
        throw std::invalid_argument("remap_to_goal: probability vector length does not match conditional columns");
    double total = 0.0;
    for (double p : fine_probs) {
        if (p < 0.0) throw std::invalid_argument("remap_to_goal: negative probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("remap_to_goal: fine_probs does not sum to 1");
    std::vector<double> goal(static_cast<std::size_t>(conditional.rows), 0.0);
    for (std::int64_t l = 0; l < conditional.rows; ++l) {
        const double* row = conditional.row_ptr(l);
        double acc = 0.0;
        for (std::int64_t c = 0; c < conditional.cols; ++c) acc += row[c] * fine_probs[static_cast<std::size_t>(c)];
        goal[static_cast<std::size_t>(l)] = acc;
    }
    return goal;
}

// Consistency loss against the ground-truth goal: cross-entropy of the
// remapped goal distribution. The gradient chains through the remap and the
// fine softmax analytically.
inline ScalarLoss consistency_loss_ce(std::span<const double> fine_logits,
                                      const MatD& conditional,
                                      int true_goal,
                                      double clamp_epsilon = 1e-12) {
    if (true_goal < 0 || true_goal >= conditional.rows)
        throw std::invalid_argument("consistency_loss_ce: goal label " + std::to_string(true_goal) + " out of range");
    const auto p = softmax(fine_logits);
    const auto goal = remap_to_goal(p, conditional);
    const double gy = goal[static_cast<std::size_t>(true_goal)];

    ScalarLoss out;
    out.loss = -std::log(std::max(gy, clamp_epsilon));
    out.grad_logits.assign(fine_logits.size(), 0.0);
    if (gy > clamp_epsilon) {
        // dL/dp_c = -conditional(l*, c) / goal[l*]; then the softmax Jacobian
        // J^T u = p . (u - <p, u>).
        const double* row = conditional.row_ptr(true_goal);
        std::vector<double> u(fine_logits.size());
        double dot = 0.0;
        for (std::size_t c = 0; c < u.size(); ++c) {
            u[c] = -row[c] / gy;
            dot += p[c] * u[c];
        }
        for (std::size_t c = 0; c < u.size(); ++c) out.grad_logits[c] = p[c] * (u[c] - dot);
    }
    return out;
}

struct KlLoss {
    double loss = 0.0;
    std::vector<double> grad_fine_logits;
    std::vector<double> grad_goal_logits;
};

// Ablation variant: KL(goal branch prediction || remapped goal distribution),
// with the goal branch prediction as the target (first) argument. Both
// distributions are floored at clamp_epsilon and renormalized, which keeps the
// divergence finite and non-negative.
inline KlLoss consistency_loss_kl(std::span<const double> fine_logits,
                                  const MatD& conditional,
                                  std::span<const double> goal_logits,
                                  double clamp_epsilon = 1e-12) {
    if (static_cast<std::int64_t>(goal_logits.size()) != conditional.rows)
        throw std::invalid_argument("consistency_loss_kl: goal logit length does not match conditional rows");
    const auto p = softmax(fine_logits);
    const auto q = softmax(goal_logits);
    const auto goal = remap_to_goal(p, conditional);
    const std::size_t L = q.size();

    std::vector<double> mq(L), mg(L);
    double sq = 0.0, sg = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        mq[l] = std::max(q[l], clamp_epsilon);
        mg[l] = std::max(goal[l], clamp_epsilon);
        sq += mq[l];
        sg += mg[l];
    }

    KlLoss out;
    std::vector<double> log_ratio(L);
    for (std::size_t l = 0; l < L; ++l) {
        log_ratio[l] = std::log(mq[l] / sq) - std::log(mg[l] / sg);
        out.loss += (mq[l] / sq) * log_ratio[l];
    }

    // Target side: dL/dmq_l = (log_ratio_l - L) / sq, gated by the floor,
    // then the goal softmax Jacobian.
    std::vector<double> v(L);
    double dot_qv = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        v[l] = q[l] > clamp_epsilon ? (log_ratio[l] - out.loss) / sq : 0.0;
        dot_qv += q[l] * v[l];
    }
    out.grad_goal_logits.assign(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) out.grad_goal_logits[l] = q[l] * (v[l] - dot_qv);

    // Remap side: dL/dmg_l = 1/sg - (mq_l/sq)/mg_l, gated, then the transposed
    // conditional and the fine softmax Jacobian.
    std::vector<double> w(L);
    for (std::size_t l = 0; l < L; ++l) w[l] = goal[l] > clamp_epsilon ? 1.0 / sg - (mq[l] / sq) / mg[l] : 0.0;
    std::vector<double> grad_p(p.size(), 0.0);
    for (std::int64_t l = 0; l < conditional.rows; ++l) {
        const double wl = w[static_cast<std::size_t>(l)];
        if (wl == 0.0) continue;
        const double* row = conditional.row_ptr(l);
        for (std::int64_t c = 0; c < conditional.cols; ++c) grad_p[static_cast<std::size_t>(c)] += wl * row[c];
    }
    double dot_pg = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) dot_pg += p[c] * grad_p[c];
    out.grad_fine_logits.assign(p.size(), 0.0);
    for (std::size_t c = 0; c < p.size(); ++c) out.grad_fine_logits[c] = p[c] * (grad_p[c] - dot_pg);
    return out;
}

struct ExampleLabels {
    int fine_label = 0;
    std::vector<int> goal_labels;  // one per goal level
};

struct LossBreakdown {
    double fine_ce = 0.0;
    std::vector<double> goal_ce;      // per level; zero when the term is disabled
    std::vector<double> consistency;  // per level, unweighted
    double total = 0.0;
    std::vector<double> grad_fine_logits;
    std::vector<std::vector<double>> grad_goal_logits;
};

// Combines the enabled terms for one example:
//   total = fine_ce + sum_k goal_ce_k + sum_k lambda_k * consistency_k.
// Disabled terms contribute zero to both value and gradients.
inline LossBreakdown total_loss(const ForwardOutput& fwd,
                                const ExampleLabels& labels,
                                std::span<const CooccurrenceModel> cooccurrence,
                                const LossConfig& config) {
    config.validate();
    const std::size_t levels = fwd.goal_logits.size();
    if (labels.goal_labels.size() != levels)
        throw std::invalid_argument("total_loss: goal label count does not match goal head count");
    if (config.use_consistency && cooccurrence.size() != levels)
        throw ConfigError("total_loss: consistency is enabled but " + std::to_string(cooccurrence.size()) +
                          " cooccurrence models were provided for " + std::to_string(levels) + " goal levels");
    if (config.use_consistency && config.lambda_cons.size() != 1 && config.lambda_cons.size() != levels)
        throw ConfigError("total_loss: lambda_cons must be a single value or one per goal level");

    LossBreakdown bd;
    bd.goal_ce.assign(levels, 0.0);
    bd.consistency.assign(levels, 0.0);
    bd.grad_goal_logits.resize(levels);
    for (std::size_t k = 0; k < levels; ++k) bd.grad_goal_logits[k].assign(fwd.goal_logits[k].size(), 0.0);

    auto fine = cross_entropy(fwd.fine_logits, labels.fine_label, config.log_clamp_epsilon);
    bd.fine_ce = fine.loss;
    bd.grad_fine_logits = std::move(fine.grad_logits);
    bd.total = bd.fine_ce;

    if (config.use_goal_loss) {
        for (std::size_t k = 0; k < levels; ++k) {
            auto goal = cross_entropy(fwd.goal_logits[k], labels.goal_labels[k], config.log_clamp_epsilon);
            bd.goal_ce[k] = goal.loss;
            for (std::size_t l = 0; l < goal.grad_logits.size(); ++l) bd.grad_goal_logits[k][l] += goal.grad_logits[l];
            bd.total += goal.loss;
        }
    }

    if (config.use_consistency) {
        for (std::size_t k = 0; k < levels; ++k) {
            const double lambda = config.lambda_for_level(k);
            if (config.consistency_variant == ConsistencyVariant::GroundTruthCe) {
                auto cons = consistency_loss_ce(fwd.fine_logits, cooccurrence[k].conditional,
                                                labels.goal_labels[k], config.log_clamp_epsilon);
                bd.consistency[k] = cons.loss;
                for (std::size_t c = 0; c < cons.grad_logits.size(); ++c)
                    bd.grad_fine_logits[c] += lambda * cons.grad_logits[c];
            } else {
                auto cons = consistency_loss_kl(fwd.fine_logits, cooccurrence[k].conditional,
                                                fwd.goal_logits[k], config.log_clamp_epsilon);
                bd.consistency[k] = cons.loss;
                for (std::size_t c = 0; c < cons.grad_fine_logits.size(); ++c)
                    bd.grad_fine_logits[c] += lambda * cons.grad_fine_logits[c];
                for (std::size_t l = 0; l < cons.grad_goal_logits.size(); ++l)
                    bd.grad_goal_logits[k][l] += lambda * cons.grad_goal_logits[l];
            }
            bd.total += lambda * bd.consistency[k];
        }
    }
    return bd;
}

} // namespace gca
