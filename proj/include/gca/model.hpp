#pragma once
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gca/errors.hpp"
#include "gca/io.hpp"
#include "gca/label_space.hpp"
#include "gca/mat.hpp"

namespace gca {

// Non-owning view over one observed segment: snippet_count rows of dim floats.
struct FeatureView {
    const float* data = nullptr;
    std::int64_t snippet_count = 0;
    std::int64_t dim = 0;
};

// Two-branch predictor: mean-pooled snippets -> one hidden relu layer ->
// a fine-action head plus one goal head per level. The trunk is deliberately
// small and sits behind forward/backward so a richer encoder can replace it
// without touching the losses.
struct ModelParams {
    MatD trunk_w;                     // D x H
    std::vector<double> trunk_b;      // H
    MatD fine_head_w;                 // H x |C|
    std::vector<double> fine_head_b;  // |C|

    struct GoalHead {
        MatD w;                  // H x |L_k|
        std::vector<double> b;   // |L_k|
    };
    std::vector<GoalHead> goal_heads;

    std::int64_t feature_dim() const { return trunk_w.rows; }
    std::int64_t hidden_width() const { return trunk_w.cols; }
    std::int64_t num_fine_actions() const { return fine_head_w.cols; }

    static ModelParams zeros_like(const ModelParams& p) {
        ModelParams z;
        z.trunk_w = MatD(p.trunk_w.rows, p.trunk_w.cols);
        z.trunk_b.assign(p.trunk_b.size(), 0.0);
        z.fine_head_w = MatD(p.fine_head_w.rows, p.fine_head_w.cols);
        z.fine_head_b.assign(p.fine_head_b.size(), 0.0);
        for (const auto& gh : p.goal_heads)
            z.goal_heads.push_back({MatD(gh.w.rows, gh.w.cols), std::vector<double>(gh.b.size(), 0.0)});
        return z;
    }

    // Visits every parameter tensor as a flat span, in declared field order.
    template <class Fn>
    void for_each_tensor(Fn&& fn) {
        fn(std::span<double>(trunk_w.v));
        fn(std::span<double>(trunk_b));
        fn(std::span<double>(fine_head_w.v));
        fn(std::span<double>(fine_head_b));
        for (auto& gh : goal_heads) {
            fn(std::span<double>(gh.w.v));
            fn(std::span<double>(gh.b));
        }
    }

    template <class Fn>
    void for_each_tensor(Fn&& fn) const {
        fn(std::span<const double>(trunk_w.v));
        fn(std::span<const double>(trunk_b));
        fn(std::span<const double>(fine_head_w.v));
        fn(std::span<const double>(fine_head_b));
        for (const auto& gh : goal_heads) {
            fn(std::span<const double>(gh.w.v));
            fn(std::span<const double>(gh.b));
        }
    }
};

struct ForwardOutput {
    std::vector<double> fine_logits;
    std::vector<std::vector<double>> goal_logits;
    std::vector<double> trunk_activation;  // post-relu, retained for backprop
};

inline ModelParams init_params(const LabelSpace& space, int feature_dim, int hidden_width, std::uint64_t seed) {
    if (feature_dim <= 0 || hidden_width <= 0)
        throw std::invalid_argument("init_params: dimensions must be positive");
    space.validate();
    std::mt19937_64 rng(seed);
    auto glorot_fill = [&rng](MatD& w) {
        const double bound = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& e : w.v) e = dist(rng);
    };
    ModelParams p;
    p.trunk_w = MatD(feature_dim, hidden_width);
    glorot_fill(p.trunk_w);
    p.trunk_b.assign(static_cast<std::size_t>(hidden_width), 0.0);
    p.fine_head_w = MatD(hidden_width, space.num_fine_actions);
    glorot_fill(p.fine_head_w);
    p.fine_head_b.assign(static_cast<std::size_t>(space.num_fine_actions), 0.0);
    for (const auto& level : space.goal_levels) {
        ModelParams::GoalHead gh;
        gh.w = MatD(hidden_width, level.num_goals);
        glorot_fill(gh.w);
        gh.b.assign(static_cast<std::size_t>(level.num_goals), 0.0);
        p.goal_heads.push_back(std::move(gh));
    }
    return p;
}

inline std::vector<double> mean_pool(const FeatureView& features) {
    if (features.snippet_count < 1 || features.dim < 1 || features.data == nullptr)
        throw std::invalid_argument("mean_pool: empty feature sequence");
    std::vector<double> pooled(static_cast<std::size_t>(features.dim), 0.0);
    for (std::int64_t s = 0; s < features.snippet_count; ++s) {
        const float* row = features.data + s * features.dim;
        for (std::int64_t d = 0; d < features.dim; ++d) pooled[static_cast<std::size_t>(d)] += row[d];
    }
    const double inv = 1.0 / static_cast<double>(features.snippet_count);
    for (double& e : pooled) e *= inv;
    return pooled;
}

inline ForwardOutput forward(const ModelParams& params, const FeatureView& features) {
    if (features.dim != params.feature_dim())
        throw std::invalid_argument("forward: feature dim " + std::to_string(features.dim) +
                                    " does not match model dim " + std::to_string(params.feature_dim()));
    const auto pooled = mean_pool(features);
    const std::int64_t H = params.hidden_width();

    ForwardOutput out;
    out.trunk_activation.assign(static_cast<std::size_t>(H), 0.0);
    for (std::int64_t h = 0; h < H; ++h) {
        double pre = params.trunk_b[static_cast<std::size_t>(h)];
        for (std::int64_t d = 0; d < params.trunk_w.rows; ++d)
            pre += pooled[static_cast<std::size_t>(d)] * params.trunk_w(d, h);
        out.trunk_activation[static_cast<std::size_t>(h)] = pre > 0.0 ? pre : 0.0;
    }

    auto head = [&](const MatD& w, const std::vector<double>& b) {
        std::vector<double> logits(b);
        for (std::int64_t h = 0; h < H; ++h) {
            const double a = out.trunk_activation[static_cast<std::size_t>(h)];
            if (a == 0.0) continue;
            const double* wrow = w.row_ptr(h);
            for (std::int64_t c = 0; c < w.cols; ++c) logits[static_cast<std::size_t>(c)] += a * wrow[c];
        }
        return logits;
    };
    out.fine_logits = head(params.fine_head_w, params.fine_head_b);
    for (const auto& gh : params.goal_heads) out.goal_logits.push_back(head(gh.w, gh.b));
    return out;
}

// Exact gradients of the provided logit gradients w.r.t. every parameter.
// The relu subgradient at 0 is taken as 0.
inline ModelParams backward(const ModelParams& params,
                            const FeatureView& features,
                            const ForwardOutput& output,
                            std::span<const double> grad_fine_logits,
                            std::span<const std::vector<double>> grad_goal_logits) {
    const std::int64_t H = params.hidden_width();
    if (static_cast<std::int64_t>(grad_fine_logits.size()) != params.num_fine_actions())
        throw std::invalid_argument("backward: fine gradient size mismatch");
    if (grad_goal_logits.size() != params.goal_heads.size())
        throw std::invalid_argument("backward: goal gradient level count mismatch");
    for (std::size_t k = 0; k < grad_goal_logits.size(); ++k)
        if (grad_goal_logits[k].size() != params.goal_heads[k].b.size())
            throw std::invalid_argument("backward: goal gradient size mismatch at level " + std::to_string(k));

    ModelParams grads = ModelParams::zeros_like(params);
    std::vector<double> grad_act(static_cast<std::size_t>(H), 0.0);

    for (std::int64_t h = 0; h < H; ++h) {
        const double a = output.trunk_activation[static_cast<std::size_t>(h)];
        double acc = 0.0;
        const double* wrow = params.fine_head_w.row_ptr(h);
        double* growp = grads.fine_head_w.row_ptr(h);
        for (std::int64_t c = 0; c < params.fine_head_w.cols; ++c) {
            acc += wrow[c] * grad_fine_logits[static_cast<std::size_t>(c)];
            growp[c] = a * grad_fine_logits[static_cast<std::size_t>(c)];
        }
        grad_act[static_cast<std::size_t>(h)] = acc;
    }
    for (std::int64_t c = 0; c < params.fine_head_w.cols; ++c)
        grads.fine_head_b[static_cast<std::size_t>(c)] = grad_fine_logits[static_cast<std::size_t>(c)];

    for (std::size_t k = 0; k < params.goal_heads.size(); ++k) {
        const auto& gh = params.goal_heads[k];
        auto& gg = grads.goal_heads[k];
        const auto& gl = grad_goal_logits[k];
        for (std::int64_t h = 0; h < H; ++h) {
            const double a = output.trunk_activation[static_cast<std::size_t>(h)];
            double acc = 0.0;
            const double* wrow = gh.w.row_ptr(h);
            double* growp = gg.w.row_ptr(h);
            for (std::int64_t l = 0; l < gh.w.cols; ++l) {
                acc += wrow[l] * gl[static_cast<std::size_t>(l)];
                growp[l] = a * gl[static_cast<std::size_t>(l)];
            }
            grad_act[static_cast<std::size_t>(h)] += acc;
        }
        for (std::int64_t l = 0; l < gh.w.cols; ++l) gg.b[static_cast<std::size_t>(l)] = gl[static_cast<std::size_t>(l)];
    }

    const auto pooled = mean_pool(features);
    for (std::int64_t h = 0; h < H; ++h) {
        const bool active = output.trunk_activation[static_cast<std::size_t>(h)] > 0.0;
        const double gpre = active ? grad_act[static_cast<std::size_t>(h)] : 0.0;
        grads.trunk_b[static_cast<std::size_t>(h)] = gpre;
        if (gpre == 0.0) continue;
        for (std::int64_t d = 0; d < params.trunk_w.rows; ++d) grads.trunk_w(d, h) = pooled[static_cast<std::size_t>(d)] * gpre;
    }
    return grads;
}

// --------------------------------------------------------------------------
// Checkpoint format: one line of JSON (dims, seed, label-space hash) followed
// by the weight tensors as float64 GCFT blobs in declared field order.
// --------------------------------------------------------------------------

struct Checkpoint {
    ModelParams params;
    std::uint64_t seed = 0;
    std::uint64_t label_space_hash = 0;
};

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                            std::uint64_t seed, std::uint64_t label_space_hash) {
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& gh : params.goal_heads) levels.push_back(gh.w.cols);
    const nlohmann::json header = {
        {"dims",
         {{"feature_dim", params.feature_dim()},
          {"hidden_width", params.hidden_width()},
          {"num_fine_actions", params.num_fine_actions()},
          {"goal_levels", levels}}},
        {"seed", seed},
        {"label_space_hash", label_space_hash}};

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
    os << header.dump() << '\n';

    auto write_vec = [&os](const std::vector<double>& v) {
        MatD m(1, static_cast<std::int64_t>(v.size()));
        m.v = v;
        write_gcft_f64(os, m);
    };
    write_gcft_f64(os, params.trunk_w);
    write_vec(params.trunk_b);
    write_gcft_f64(os, params.fine_head_w);
    write_vec(params.fine_head_b);
    for (const auto& gh : params.goal_heads) {
        write_gcft_f64(os, gh.w);
        write_vec(gh.b);
    }
    if (!os) throw DataError("short write to checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path.string());
    std::string header_line;
    if (!std::getline(is, header_line)) throw DataError("checkpoint missing header: " + path.string());

    Checkpoint ck;
    std::int64_t feature_dim = 0, hidden = 0, num_actions = 0;
    std::vector<std::int64_t> levels;
    try {
        const auto header = nlohmann::json::parse(header_line);
        feature_dim = header.at("dims").at("feature_dim").get<std::int64_t>();
        hidden = header.at("dims").at("hidden_width").get<std::int64_t>();
        num_actions = header.at("dims").at("num_fine_actions").get<std::int64_t>();
        levels = header.at("dims").at("goal_levels").get<std::vector<std::int64_t>>();
        ck.seed = header.at("seed").get<std::uint64_t>();
        ck.label_space_hash = header.at("label_space_hash").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed header: ") + e.what());
    }

    auto read_vec = [&is, &path](std::int64_t expect) {
        MatD m = read_gcft_f64(is, "checkpoint " + path.string());
        if (m.rows != 1 || m.cols != expect) throw DataError("checkpoint: tensor shape mismatch in " + path.string());
        return m.v;
    };
    auto read_mat = [&is, &path](std::int64_t r, std::int64_t c) {
        MatD m = read_gcft_f64(is, "checkpoint " + path.string());
        if (m.rows != r || m.cols != c) throw DataError("checkpoint: tensor shape mismatch in " + path.string());
        return m;
    };
    ck.params.trunk_w = read_mat(feature_dim, hidden);
    ck.params.trunk_b = read_vec(hidden);
    ck.params.fine_head_w = read_mat(hidden, num_actions);
    ck.params.fine_head_b = read_vec(num_actions);
    for (std::int64_t lk : levels) {
        ModelParams::GoalHead gh;
        gh.w = read_mat(hidden, lk);
        gh.b = read_vec(lk);
        ck.params.goal_heads.push_back(std::move(gh));
    }
    return ck;
}

} // namespace gca
