#pragma once
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gca/errors.hpp"
#include "gca/io.hpp"

namespace gca {

struct GoalLevel {
    int num_goals = 0;
};

// Fine-action label set with its verb/noun factorization and one or more
// goal-label levels. Immutable after construction; validate() is called by
// every loader before the space is used.
struct LabelSpace {
    int num_fine_actions = 0;
    std::vector<GoalLevel> goal_levels;
    std::vector<int> action_to_verb;
    std::vector<int> action_to_noun;
    int num_verbs = 0;
    int num_nouns = 0;

    int num_levels() const { return static_cast<int>(goal_levels.size()); }

    void validate() const {
        if (num_fine_actions <= 0) throw DataError("label space: num_fine_actions must be positive");
        if (goal_levels.empty()) throw DataError("label space: at least one goal level is required");
        for (std::size_t k = 0; k < goal_levels.size(); ++k)
            if (goal_levels[k].num_goals <= 0)
                throw DataError("label space: goal level " + std::to_string(k) + " has non-positive size");
        if (num_verbs <= 0 || num_nouns <= 0) throw DataError("label space: verb/noun counts must be positive");
        if (static_cast<int>(action_to_verb.size()) != num_fine_actions ||
            static_cast<int>(action_to_noun.size()) != num_fine_actions)
            throw DataError("label space: verb/noun maps must cover every action exactly once");
        for (int a = 0; a < num_fine_actions; ++a) {
            if (action_to_verb[a] < 0 || action_to_verb[a] >= num_verbs)
                throw DataError("label space: verb id out of range for action " + std::to_string(a));
            if (action_to_noun[a] < 0 || action_to_noun[a] >= num_nouns)
                throw DataError("label space: noun id out of range for action " + std::to_string(a));
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json levels = nlohmann::json::array();
        for (const auto& l : goal_levels) levels.push_back({{"num_goals", l.num_goals}});
        return {{"num_fine_actions", num_fine_actions},
                {"goal_levels", levels},
                {"action_to_verb", action_to_verb},
                {"action_to_noun", action_to_noun},
                {"num_verbs", num_verbs},
                {"num_nouns", num_nouns}};
    }

    static LabelSpace from_json(const nlohmann::json& j) {
        LabelSpace s;
        try {
            s.num_fine_actions = j.at("num_fine_actions").get<int>();
            for (const auto& l : j.at("goal_levels")) s.goal_levels.push_back({l.at("num_goals").get<int>()});
            s.action_to_verb = j.at("action_to_verb").get<std::vector<int>>();
            s.action_to_noun = j.at("action_to_noun").get<std::vector<int>>();
            s.num_verbs = j.at("num_verbs").get<int>();
            s.num_nouns = j.at("num_nouns").get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("label space: malformed JSON: ") + e.what());
        }
        s.validate();
        return s;
    }

    // Stable content hash, stored in checkpoints so eval can refuse a
    // checkpoint trained against a different label space.
    std::uint64_t hash() const {
        const std::string canon = to_json().dump();
        return fnv1a64(canon.data(), canon.size());
    }
};

// Collapses an action distribution onto verbs (or nouns) by summing the
// probability of every action that maps to the same coarse id.
inline std::vector<double> marginalize_action_distribution(std::span<const double> action_probs,
                                                           std::span<const int> mapping,
                                                           int num_targets) {
    if (action_probs.size() != mapping.size())
        throw std::invalid_argument("marginalize_action_distribution: mapping size mismatch");
    double total = 0.0;
    for (double p : action_probs) total += p;
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("marginalize_action_distribution: input is not a probability vector");
    std::vector<double> out(static_cast<std::size_t>(num_targets), 0.0);
    for (std::size_t c = 0; c < action_probs.size(); ++c) {
        const int t = mapping[c];
        if (t < 0 || t >= num_targets)
            throw std::invalid_argument("marginalize_action_distribution: mapped id out of range");
        out[static_cast<std::size_t>(t)] += action_probs[c];
    }
    return out;
}

} // namespace gca
