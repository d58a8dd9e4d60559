#pragma once
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gca/errors.hpp"
#include "gca/label_space.hpp"
#include "gca/mat.hpp"

namespace gca {

// Goal-action co-occurrence statistics for one goal level.
//
// counts(l, c) is the number of training examples where goal l and fine
// action c occur together. joint is counts normalized by the total count,
// and conditional(l, c) is the probability of goal l given action c,
// derived column-wise from the joint with additive smoothing
// epsilon' = smoothing_epsilon / num_goals. With smoothing_epsilon = 0 the
// conditional is the exact column normalization wherever a column has mass.
//
// Immutable after derive_conditional; safe for concurrent reads.
struct CooccurrenceModel {
    MatI counts;       // |L| x |C|, exact integers
    MatD joint;        // |L| x |C|
    MatD conditional;  // |L| x |C|, every column sums to 1
    double smoothing_epsilon = 0.0;

    std::int64_t num_goals() const { return counts.rows; }
    std::int64_t num_actions() const { return counts.cols; }

    // Serialized form keeps only the exact counts; probabilities are always
    // re-derived on load.
    nlohmann::json to_json() const {
        return {{"num_goals", counts.rows},
                {"num_actions", counts.cols},
                {"counts", counts.v},
                {"epsilon", smoothing_epsilon}};
    }
};

inline MatI build_cooccurrence(std::span<const std::pair<int, int>> fine_goal_pairs,
                               const LabelSpace& space,
                               int level) {
    if (level < 0 || level >= space.num_levels())
        throw std::invalid_argument("build_cooccurrence: goal level " + std::to_string(level) + " out of range");
    if (fine_goal_pairs.empty())
        throw std::invalid_argument("build_cooccurrence: empty record list (joint undefined)");
    const int num_actions = space.num_fine_actions;
    const int num_goals = space.goal_levels[static_cast<std::size_t>(level)].num_goals;
    MatI counts(num_goals, num_actions, 0);
    for (std::size_t i = 0; i < fine_goal_pairs.size(); ++i) {
        const auto [c, l] = fine_goal_pairs[i];
        if (c < 0 || c >= num_actions)
            throw std::invalid_argument("build_cooccurrence: fine label " + std::to_string(c) +
                                        " out of range at record " + std::to_string(i));
        if (l < 0 || l >= num_goals)
            throw std::invalid_argument("build_cooccurrence: goal label " + std::to_string(l) +
                                        " out of range at record " + std::to_string(i));
        counts(l, c) += 1;
    }
    return counts;
}

inline CooccurrenceModel derive_conditional(const MatI& counts, double smoothing_epsilon) {
    if (smoothing_epsilon < 0.0)
        throw std::invalid_argument("derive_conditional: smoothing_epsilon must be non-negative");
    std::int64_t total = 0;
    for (std::int64_t e : counts.v) {
        if (e < 0) throw std::invalid_argument("derive_conditional: negative count");
        total += e;
    }
    if (total <= 0) throw std::invalid_argument("derive_conditional: total count is zero");

    CooccurrenceModel m;
    m.counts = counts;
    m.smoothing_epsilon = smoothing_epsilon;
    m.joint = MatD(counts.rows, counts.cols);
    for (std::int64_t i = 0; i < counts.size(); ++i)
        m.joint.v[static_cast<std::size_t>(i)] =
            static_cast<double>(counts.v[static_cast<std::size_t>(i)]) / static_cast<double>(total);

    const double eps_per_goal = smoothing_epsilon / static_cast<double>(counts.rows);
    m.conditional = MatD(counts.rows, counts.cols);
    for (std::int64_t c = 0; c < counts.cols; ++c) {
        double column_mass = 0.0;
        for (std::int64_t l = 0; l < counts.rows; ++l) column_mass += m.joint(l, c);
        const double denom = column_mass + smoothing_epsilon;
        if (denom <= 0.0)
            throw DataError("derive_conditional: action " + std::to_string(c) +
                            " never co-occurs with any goal and smoothing is disabled");
        for (std::int64_t l = 0; l < counts.rows; ++l)
            m.conditional(l, c) = (m.joint(l, c) + eps_per_goal) / denom;
    }
    return m;
}

// The hierarchy artifact holds one serialized CooccurrenceModel per goal
// level, all conditioned on the same fine-action axis.
inline nlohmann::json hierarchy_to_json(std::span<const CooccurrenceModel> models) {
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& m : models) levels.push_back(m.to_json());
    return {{"levels", levels}};
}

inline CooccurrenceModel cooccurrence_from_json(const nlohmann::json& j) {
    MatI counts;
    double eps = 0.0;
    try {
        const auto rows = j.at("num_goals").get<std::int64_t>();
        const auto cols = j.at("num_actions").get<std::int64_t>();
        counts = MatI(rows, cols);
        const auto flat = j.at("counts").get<std::vector<std::int64_t>>();
        if (static_cast<std::int64_t>(flat.size()) != rows * cols)
            throw DataError("cooccurrence: counts array has wrong length");
        counts.v = flat;
        eps = j.at("epsilon").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("cooccurrence: malformed JSON: ") + e.what());
    }
    return derive_conditional(counts, eps);
}

inline std::vector<CooccurrenceModel> hierarchy_from_json(const nlohmann::json& j) {
    std::vector<CooccurrenceModel> models;
    try {
        for (const auto& lj : j.at("levels")) models.push_back(cooccurrence_from_json(lj));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("hierarchy: malformed JSON: ") + e.what());
    }
    if (models.empty()) throw DataError("hierarchy: no goal levels present");
    return models;
}

} // namespace gca
