#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "gca/errors.hpp"
#include "gca/io.hpp"
#include "gca/label_space.hpp"
#include "gca/model.hpp"

namespace gca {

// One anticipation example: the observed snippets live in the feature store
// at [feature_offset, feature_offset + snippet_count), and the labels describe
// the action that starts anticipation_gap seconds after the observed segment.
struct SegmentRecord {
    std::string sequence_id;
    std::string view_id;
    std::int32_t snippet_count = 0;
    std::int64_t feature_offset = 0;
    int fine_label = 0;
    std::vector<int> goal_labels;
    int verb_label = 0;
    int noun_label = 0;
    bool is_unseen = false;
    bool is_tail = false;
    double anticipation_gap = 1.0;
};

enum class Split { Train, Val };

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    throw ConfigError("unknown split '" + s + "' (expected train or val)");
}

struct FeatureStore {
    std::int64_t dim = 0;
    std::vector<float> data;  // row-major, total_snippets x dim

    std::int64_t total_snippets() const { return dim > 0 ? static_cast<std::int64_t>(data.size()) / dim : 0; }

    FeatureView view(std::int64_t offset, std::int64_t count) const {
        return FeatureView{data.data() + offset * dim, count, dim};
    }
    FeatureView view(const SegmentRecord& r) const { return view(r.feature_offset, r.snippet_count); }
};

inline void write_feature_store(const std::filesystem::path& path, const FeatureStore& store) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open feature store for writing: " + path.string());
    MatF m(store.total_snippets(), store.dim);
    m.v = store.data;
    write_gcft_f32(os, m);
    if (!os) throw DataError("short write to feature store " + path.string());
}

inline FeatureStore load_feature_store(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("missing feature file: " + path.string());
    MatF m = read_gcft_f32(is, "feature store " + path.string());
    for (float f : m.v)
        if (!std::isfinite(f)) throw DataError("feature store " + path.string() + " contains non-finite entries");
    FeatureStore store;
    store.dim = m.cols;
    store.data = std::move(m.v);
    return store;
}

struct DatasetManifest {
    LabelSpace label_space;
    std::vector<SegmentRecord> records;
    std::vector<std::int32_t> train_ids;
    std::vector<std::int32_t> val_ids;
    int feature_dim = 0;
    std::string feature_file = "features.gcft";

    std::int64_t num_train_records() const { return static_cast<std::int64_t>(train_ids.size()); }

    const std::vector<std::int32_t>& split_ids(Split s) const { return s == Split::Train ? train_ids : val_ids; }

    std::vector<std::pair<int, int>> fine_goal_pairs(Split s, int level) const {
        std::vector<std::pair<int, int>> pairs;
        pairs.reserve(split_ids(s).size());
        for (auto id : split_ids(s)) {
            const auto& r = records[static_cast<std::size_t>(id)];
            pairs.emplace_back(r.fine_label, r.goal_labels[static_cast<std::size_t>(level)]);
        }
        return pairs;
    }

    // Checks every record and split invariant; feature bounds are checked
    // separately once the store header is known.
    void validate() const {
        label_space.validate();
        if (feature_dim <= 0) throw DataError("manifest: feature_dim must be positive");
        const int levels = label_space.num_levels();
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            const std::string at = " at record " + std::to_string(i);
            if (r.snippet_count < 1) throw DataError("manifest: snippet_count must be >= 1" + at);
            if (r.feature_offset < 0) throw DataError("manifest: negative feature_offset" + at);
            if (r.fine_label < 0 || r.fine_label >= label_space.num_fine_actions)
                throw DataError("manifest: fine label out of range" + at);
            if (static_cast<int>(r.goal_labels.size()) != levels)
                throw DataError("manifest: expected " + std::to_string(levels) + " goal labels" + at);
            for (int k = 0; k < levels; ++k)
                if (r.goal_labels[static_cast<std::size_t>(k)] < 0 ||
                    r.goal_labels[static_cast<std::size_t>(k)] >= label_space.goal_levels[static_cast<std::size_t>(k)].num_goals)
                    throw DataError("manifest: goal label out of range for level " + std::to_string(k) + at);
            if (r.verb_label != label_space.action_to_verb[static_cast<std::size_t>(r.fine_label)])
                throw DataError("manifest: verb label inconsistent with fine label" + at);
            if (r.noun_label != label_space.action_to_noun[static_cast<std::size_t>(r.fine_label)])
                throw DataError("manifest: noun label inconsistent with fine label" + at);
            if (!(r.anticipation_gap > 0.0)) throw DataError("manifest: anticipation_gap must be positive" + at);
        }
        std::unordered_set<std::int32_t> seen;
        auto check_split = [&](const std::vector<std::int32_t>& ids, const char* name) {
            for (auto id : ids) {
                if (id < 0 || id >= static_cast<std::int32_t>(records.size()))
                    throw DataError(std::string("manifest: ") + name + " split references record " + std::to_string(id) +
                                    " which does not exist");
                if (!seen.insert(id).second)
                    throw DataError("manifest: splits are not disjoint (record " + std::to_string(id) + ")");
            }
        };
        check_split(train_ids, "train");
        check_split(val_ids, "val");
    }

    void validate_feature_bounds(std::int64_t total_snippets, std::int64_t store_dim) const {
        if (store_dim != feature_dim)
            throw DataError("manifest: feature_dim " + std::to_string(feature_dim) +
                            " does not match feature store dim " + std::to_string(store_dim));
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            if (r.feature_offset + r.snippet_count > total_snippets)
                throw DataError("manifest: record " + std::to_string(i) + " points past the end of the feature store");
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json recs = nlohmann::json::array();
        for (const auto& r : records) {
            recs.push_back({{"sequence_id", r.sequence_id},
                            {"view_id", r.view_id},
                            {"snippet_count", r.snippet_count},
                            {"feature_offset", r.feature_offset},
                            {"fine_label", r.fine_label},
                            {"goal_labels", r.goal_labels},
                            {"verb_label", r.verb_label},
                            {"noun_label", r.noun_label},
                            {"is_unseen", r.is_unseen},
                            {"is_tail", r.is_tail},
                            {"anticipation_gap", r.anticipation_gap}});
        }
        return {{"label_space", label_space.to_json()},
                {"feature_dim", feature_dim},
                {"feature_file", feature_file},
                {"num_train_records", num_train_records()},
                {"records", recs},
                {"splits", {{"train", train_ids}, {"val", val_ids}}}};
    }

    static DatasetManifest from_json(const nlohmann::json& j) {
        DatasetManifest m;
        try {
            m.label_space = LabelSpace::from_json(j.at("label_space"));
            m.feature_dim = j.at("feature_dim").get<int>();
            m.feature_file = j.at("feature_file").get<std::string>();
            for (const auto& rj : j.at("records")) {
                SegmentRecord r;
                r.sequence_id = rj.at("sequence_id").get<std::string>();
                r.view_id = rj.at("view_id").get<std::string>();
                r.snippet_count = rj.at("snippet_count").get<std::int32_t>();
                r.feature_offset = rj.at("feature_offset").get<std::int64_t>();
                r.fine_label = rj.at("fine_label").get<int>();
                r.goal_labels = rj.at("goal_labels").get<std::vector<int>>();
                r.verb_label = rj.at("verb_label").get<int>();
                r.noun_label = rj.at("noun_label").get<int>();
                r.is_unseen = rj.at("is_unseen").get<bool>();
                r.is_tail = rj.at("is_tail").get<bool>();
                r.anticipation_gap = rj.at("anticipation_gap").get<double>();
                m.records.push_back(std::move(r));
            }
            m.train_ids = j.at("splits").at("train").get<std::vector<std::int32_t>>();
            m.val_ids = j.at("splits").at("val").get<std::vector<std::int32_t>>();
            const auto n = j.at("num_train_records").get<std::int64_t>();
            if (n != m.num_train_records())
                throw DataError("manifest: num_train_records does not match the train split size");
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("manifest: malformed JSON: ") + e.what());
        }
        m.validate();
        return m;
    }
};

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    write_file_bytes(path, manifest.to_json().dump(2) + "\n");
}

// Loads and fully validates a manifest, including the referenced feature
// file's header (existence, dimension, offset bounds).
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest: parse error in " + path.string() + ": " + e.what());
    }
    DatasetManifest m = DatasetManifest::from_json(j);
    const auto feature_path = path.parent_path() / m.feature_file;
    std::ifstream fs(feature_path, std::ios::binary);
    if (!fs) throw DataError("missing feature file: " + feature_path.string());
    const GcftHeader h = read_gcft_header(fs, "feature store " + feature_path.string());
    if (h.version != kGcftVersionF32)
        throw DataError("feature store " + feature_path.string() + ": unexpected version " + std::to_string(h.version));
    m.validate_feature_bounds(h.rows, h.cols);
    return m;
}

struct Dataset {
    DatasetManifest manifest;
    FeatureStore store;
};

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
    Dataset d;
    d.manifest = load_manifest(manifest_path);
    d.store = load_feature_store(manifest_path.parent_path() / d.manifest.feature_file);
    return d;
}

// Seeded epoch batching over one split. Every epoch is an independent
// deterministic permutation of the split; the final partial batch is kept.
class Batcher {
public:
    Batcher(const DatasetManifest& manifest, Split split, int batch_size, std::uint64_t seed)
        : ids_(manifest.split_ids(split)), batch_size_(batch_size), seed_(seed) {
        if (ids_.empty()) throw std::invalid_argument("batches: split is empty");
        if (batch_size_ < 1) throw std::invalid_argument("batches: batch_size must be >= 1");
    }

    std::vector<std::vector<std::int32_t>> epoch(int epoch_index) const {
        std::vector<std::int32_t> order = ids_;
        std::mt19937_64 rng(seed_ + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch_index + 1));
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::vector<std::int32_t>> out;
        for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size_)) {
            const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size_));
            out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
        }
        return out;
    }

private:
    std::vector<std::int32_t> ids_;
    int batch_size_;
    std::uint64_t seed_;
};

} // namespace gca
