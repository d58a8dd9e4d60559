#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "gca/gradcheck.hpp"
#include "gca/model.hpp"

using namespace gca;

namespace {

LabelSpace space_with(int actions, std::vector<int> level_sizes) {
    LabelSpace s;
    s.num_fine_actions = actions;
    for (int n : level_sizes) s.goal_levels.push_back({n});
    s.num_verbs = 1;
    s.num_nouns = 1;
    s.action_to_verb.assign(static_cast<std::size_t>(actions), 0);
    s.action_to_noun.assign(static_cast<std::size_t>(actions), 0);
    return s;
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

TEST_CASE("init_params is deterministic and bounded", "[model]") {
    const auto space = space_with(48, {6});
    const auto a = init_params(space, 32, 16, 99);
    const auto b = init_params(space, 32, 16, 99);
    REQUIRE(params_equal(a, b));
    const auto c = init_params(space, 32, 16, 100);
    REQUIRE_FALSE(params_equal(a, c));

    REQUIRE(a.fine_head_w.rows == 16);
    REQUIRE(a.fine_head_w.cols == 48);
    const double bound = std::sqrt(6.0 / 64.0);
    for (double w : a.fine_head_w.v) REQUIRE(std::abs(w) <= bound);
    for (double bq : a.trunk_b) REQUIRE(bq == 0.0);
    for (double bq : a.fine_head_b) REQUIRE(bq == 0.0);
    REQUIRE(a.goal_heads.size() == 1);
    REQUIRE(a.goal_heads[0].w.cols == 6);
}

TEST_CASE("forward on zero features with zero biases is zero", "[model]") {
    const auto space = space_with(5, {3});
    auto params = init_params(space, 4, 8, 1);
    MatF feats(3, 4, 0.0f);
    const auto out = forward(params, FeatureView{feats.v.data(), 3, 4});
    for (double l : out.fine_logits) REQUIRE(l == 0.0);
    for (const auto& gl : out.goal_logits)
        for (double l : gl) REQUIRE(l == 0.0);
}

TEST_CASE("forward is invariant to snippet duplication and order", "[model]") {
    const auto space = space_with(6, {2});
    const auto params = init_params(space, 5, 7, 3);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    MatF feats(4, 5);
    for (auto& f : feats.v) f = dist(rng);

    const auto base = forward(params, FeatureView{feats.v.data(), 4, 5});

    MatF doubled(8, 5);
    for (int s = 0; s < 8; ++s)
        for (int d = 0; d < 5; ++d) doubled(s, d) = feats(s % 4, d);
    const auto dup = forward(params, FeatureView{doubled.v.data(), 8, 5});
    for (std::size_t c = 0; c < base.fine_logits.size(); ++c)
        REQUIRE(dup.fine_logits[c] == Catch::Approx(base.fine_logits[c]).margin(1e-9));

    MatF shuffled(4, 5);
    const int perm[4] = {2, 0, 3, 1};
    for (int s = 0; s < 4; ++s)
        for (int d = 0; d < 5; ++d) shuffled(s, d) = feats(perm[s], d);
    const auto shuf = forward(params, FeatureView{shuffled.v.data(), 4, 5});
    for (std::size_t c = 0; c < base.fine_logits.size(); ++c)
        REQUIRE(shuf.fine_logits[c] == Catch::Approx(base.fine_logits[c]).margin(1e-9));
}

TEST_CASE("forward matches an independent arithmetic oracle", "[model]") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<float> fdist(-1.5f, 1.5f);
    for (int trial = 0; trial < 25; ++trial) {
        const int D = std::uniform_int_distribution<int>(1, 10)(rng);
        const int H = std::uniform_int_distribution<int>(1, 10)(rng);
        const int C = std::uniform_int_distribution<int>(2, 10)(rng);
        const int L = std::uniform_int_distribution<int>(2, 6)(rng);
        const int S = std::uniform_int_distribution<int>(1, 6)(rng);
        auto params = init_params(space_with(C, {L}), D, H, rng());
        std::uniform_real_distribution<double> bdist(-0.5, 0.5);
        for (double& b : params.trunk_b) b = bdist(rng);
        for (double& b : params.fine_head_b) b = bdist(rng);
        for (double& b : params.goal_heads[0].b) b = bdist(rng);

        MatF feats(S, D);
        for (auto& f : feats.v) f = fdist(rng);
        const auto out = forward(params, FeatureView{feats.v.data(), S, D});

        // step-by-step re-evaluation of the defining formula
        std::vector<double> pooled(static_cast<std::size_t>(D), 0.0);
        for (int s = 0; s < S; ++s)
            for (int d = 0; d < D; ++d) pooled[static_cast<std::size_t>(d)] += feats(s, d);
        for (double& e : pooled) e /= static_cast<double>(S);
        std::vector<double> act(static_cast<std::size_t>(H));
        for (int h = 0; h < H; ++h) {
            double pre = params.trunk_b[static_cast<std::size_t>(h)];
            for (int d = 0; d < D; ++d) pre += pooled[static_cast<std::size_t>(d)] * params.trunk_w(d, h);
            act[static_cast<std::size_t>(h)] = std::max(pre, 0.0);
        }
        for (int c = 0; c < C; ++c) {
            double logit = params.fine_head_b[static_cast<std::size_t>(c)];
            for (int h = 0; h < H; ++h) logit += act[static_cast<std::size_t>(h)] * params.fine_head_w(h, c);
            REQUIRE(std::abs(out.fine_logits[static_cast<std::size_t>(c)] - logit) < 1e-12);
        }
        for (int l = 0; l < L; ++l) {
            double logit = params.goal_heads[0].b[static_cast<std::size_t>(l)];
            for (int h = 0; h < H; ++h) logit += act[static_cast<std::size_t>(h)] * params.goal_heads[0].w(h, l);
            REQUIRE(std::abs(out.goal_logits[0][static_cast<std::size_t>(l)] - logit) < 1e-12);
        }
    }
}

TEST_CASE("backward structure", "[model]") {
    const auto space = space_with(4, {3});
    const auto params = init_params(space, 3, 5, 7);
    MatF feats(2, 3);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (auto& f : feats.v) f = dist(rng);
    const FeatureView view{feats.v.data(), 2, 3};
    const auto out = forward(params, view);

    SECTION("zero logit gradients give zero parameter gradients") {
        const std::vector<double> gf(4, 0.0);
        const std::vector<std::vector<double>> gg = {std::vector<double>(3, 0.0)};
        auto grads = backward(params, view, out, gf, gg);
        grads.for_each_tensor([](std::span<double> t) {
            for (double e : t) REQUIRE(e == 0.0);
        });
    }
    SECTION("fine head bias gradient equals the logit gradient exactly") {
        const std::vector<double> gf = {0.3, -0.1, 0.7, 0.05};
        const std::vector<std::vector<double>> gg = {{0.2, -0.4, 0.1}};
        const auto grads = backward(params, view, out, gf, gg);
        REQUIRE(grads.fine_head_b == gf);
        REQUIRE(grads.goal_heads[0].b == gg[0]);
    }
    SECTION("dimension mismatches are rejected") {
        const std::vector<double> bad_gf(3, 0.0);
        const std::vector<std::vector<double>> gg = {std::vector<double>(3, 0.0)};
        REQUIRE_THROWS_AS(backward(params, view, out, bad_gf, gg), std::invalid_argument);
        const std::vector<double> gf(4, 0.0);
        const std::vector<std::vector<double>> bad_gg = {std::vector<double>(2, 0.0)};
        REQUIRE_THROWS_AS(backward(params, view, out, gf, bad_gg), std::invalid_argument);
    }
    SECTION("forward rejects mismatched feature dims") {
        MatF wrong(2, 4, 0.0f);
        REQUIRE_THROWS_AS(forward(params, FeatureView{wrong.v.data(), 2, 4}), std::invalid_argument);
    }
}

TEST_CASE("backward agrees with finite differences", "[model]") {
    const auto report = gradcheck_model_backward(30, 2024);
    INFO("model_backward max rel err " << report.max_rel_err << " over " << report.comparisons << " comparisons");
    REQUIRE(report.trials == 30);
    REQUIRE(report.ok());
}

TEST_CASE("checkpoint round-trip is exact", "[model]") {
    const auto space = space_with(9, {4, 2});
    const auto params = init_params(space, 6, 5, 31);
    const auto dir = std::filesystem::temp_directory_path() / "gca_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "model.ckpt";

    save_checkpoint(path, params, 31, space.hash());
    const auto loaded = load_checkpoint(path);
    REQUIRE(loaded.seed == 31);
    REQUIRE(loaded.label_space_hash == space.hash());
    REQUIRE(params_equal(loaded.params, params));

    // truncated files are a data error, not UB
    const auto bytes = read_file_bytes(path);
    const auto cut = dir / "cut.ckpt";
    write_file_bytes(cut, std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2)));
    REQUIRE_THROWS_AS(load_checkpoint(cut), DataError);
    std::filesystem::remove_all(dir);
}
