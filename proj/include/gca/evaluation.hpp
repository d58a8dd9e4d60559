#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gca/dataset.hpp"
#include "gca/errors.hpp"
#include "gca/label_space.hpp"
#include "gca/losses.hpp"
#include "gca/model.hpp"

namespace gca {

// One scored validation example: the fine-action distribution plus the record
// metadata needed for grouping, marginalization and subset filtering.
struct Prediction {
    std::vector<double> probs;
    std::string sequence_id;
    std::string view_id;
    int fine_label = 0;
    int verb_label = 0;
    int noun_label = 0;
    std::vector<int> goal_labels;
    bool is_unseen = false;
    bool is_tail = false;
};

using PredictionSet = std::vector<Prediction>;

struct ClassRecall {
    int class_id = 0;
    std::int64_t instances = 0;
    std::int64_t hits = 0;
    double recall_percent = 0.0;
};

struct RecallResult {
    double mean_percent = 0.0;
    int class_count = 0;  // classes with at least one instance
    std::vector<ClassRecall> per_class;
};

// A sample is a hit iff its true label ranks among the K largest
// probabilities, ties broken toward the lower class index. Per-class recall
// is averaged over the classes that appear in the evaluated set.
inline RecallResult topk_classmean_recall(std::span<const std::vector<double>> predictions,
                                          std::span<const int> labels,
                                          int k,
                                          int num_classes) {
    if (k < 1) throw std::invalid_argument("topk_classmean_recall: K must be >= 1");
    if (predictions.empty()) throw std::invalid_argument("topk_classmean_recall: no samples");
    if (predictions.size() != labels.size())
        throw std::invalid_argument("topk_classmean_recall: predictions/labels size mismatch");

    std::vector<std::int64_t> instances(static_cast<std::size_t>(num_classes), 0);
    std::vector<std::int64_t> hits(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= num_classes) throw std::invalid_argument("topk_classmean_recall: label out of range");
        const auto& p = predictions[i];
        if (static_cast<int>(p.size()) != num_classes)
            throw std::invalid_argument("topk_classmean_recall: prediction vector length mismatch");
        const double py = p[static_cast<std::size_t>(y)];
        // rank of y under (probability desc, index asc)
        int rank = 0;
        for (int c = 0; c < num_classes; ++c) {
            if (p[static_cast<std::size_t>(c)] > py || (p[static_cast<std::size_t>(c)] == py && c < y)) ++rank;
        }
        instances[static_cast<std::size_t>(y)] += 1;
        if (rank < k) hits[static_cast<std::size_t>(y)] += 1;
    }

    RecallResult out;
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        if (instances[static_cast<std::size_t>(c)] == 0) continue;
        ClassRecall cr;
        cr.class_id = c;
        cr.instances = instances[static_cast<std::size_t>(c)];
        cr.hits = hits[static_cast<std::size_t>(c)];
        cr.recall_percent = 100.0 * static_cast<double>(cr.hits) / static_cast<double>(cr.instances);
        sum += cr.recall_percent;
        out.per_class.push_back(cr);
        ++out.class_count;
    }
    out.mean_percent = sum / static_cast<double>(out.class_count);
    return out;
}

// Collapses all views of one sequence into a single prediction by averaging
// the per-view probability vectors (then renormalizing). Views of one
// sequence must agree on every label and flag.
inline PredictionSet multiview_aggregate(const PredictionSet& predictions) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const Prediction*>> groups;
    for (const auto& p : predictions) {
        auto [it, inserted] = groups.try_emplace(p.sequence_id);
        if (inserted) order.push_back(p.sequence_id);
        it->second.push_back(&p);
    }

    PredictionSet out;
    out.reserve(order.size());
    for (const auto& sid : order) {
        const auto& views = groups[sid];
        const Prediction& first = *views.front();
        for (const Prediction* v : views) {
            if (v->fine_label != first.fine_label || v->verb_label != first.verb_label ||
                v->noun_label != first.noun_label || v->goal_labels != first.goal_labels ||
                v->is_unseen != first.is_unseen || v->is_tail != first.is_tail)
                throw DataError("multiview_aggregate: conflicting labels across views of sequence " + sid);
            if (v->probs.size() != first.probs.size())
                throw DataError("multiview_aggregate: conflicting prediction sizes for sequence " + sid);
        }
        Prediction merged = first;
        merged.view_id = "multi";
        std::vector<double> mean(first.probs.size(), 0.0);
        for (const Prediction* v : views)
            for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += v->probs[c];
        double total = 0.0;
        for (double& e : mean) {
            e /= static_cast<double>(views.size());
            total += e;
        }
        for (double& e : mean) e /= total;
        merged.probs = std::move(mean);
        out.push_back(std::move(merged));
    }
    return out;
}

struct EvalCell {
    std::string kind;      // action | verb | noun
    std::string protocol;  // per_view | multi_view
    std::string subset;    // overall | unseen | tail
    double recall_percent = 0.0;
    int class_count = 0;
    std::vector<ClassRecall> per_class;
};

struct EvalReport {
    int top_k = 5;
    std::vector<EvalCell> cells;

    const EvalCell* find(const std::string& kind, const std::string& protocol, const std::string& subset) const {
        for (const auto& c : cells)
            if (c.kind == kind && c.protocol == protocol && c.subset == subset) return &c;
        return nullptr;
    }

    nlohmann::json to_json() const {
        nlohmann::json cj = nlohmann::json::array();
        for (const auto& c : cells) {
            nlohmann::json pc = nlohmann::json::array();
            for (const auto& r : c.per_class)
                pc.push_back({{"class_id", r.class_id},
                              {"instances", r.instances},
                              {"hits", r.hits},
                              {"recall_percent", r.recall_percent}});
            cj.push_back({{"kind", c.kind},
                          {"protocol", c.protocol},
                          {"subset", c.subset},
                          {"recall_percent", c.recall_percent},
                          {"class_count", c.class_count},
                          {"per_class", pc}});
        }
        return {{"top_k", top_k}, {"cells", cj}};
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "kind,protocol,subset,recall,class_count\n";
        os.setf(std::ios::fixed);
        os.precision(6);
        for (const auto& c : cells)
            os << c.kind << ',' << c.protocol << ',' << c.subset << ',' << c.recall_percent << ',' << c.class_count
               << '\n';
        return os.str();
    }
};

namespace detail {

inline void add_subset_cells(EvalReport& report,
                             const std::string& kind,
                             const std::string& protocol,
                             const PredictionSet& preds,
                             const std::vector<std::vector<double>>& probs,
                             const std::vector<int>& labels,
                             int k,
                             int num_classes) {
    struct SubsetDef {
        const char* name;
        bool (*keep)(const Prediction&);
    };
    static constexpr SubsetDef kSubsets[] = {
        {"overall", [](const Prediction&) { return true; }},
        {"unseen", [](const Prediction& p) { return p.is_unseen; }},
        {"tail", [](const Prediction& p) { return p.is_tail; }},
    };
    for (const auto& sub : kSubsets) {
        std::vector<std::vector<double>> sp;
        std::vector<int> sl;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (!sub.keep(preds[i])) continue;
            sp.push_back(probs[i]);
            sl.push_back(labels[i]);
        }
        if (sp.empty()) continue;  // absent subsets are omitted, never reported as 0
        auto res = topk_classmean_recall(sp, sl, k, num_classes);
        EvalCell cell;
        cell.kind = kind;
        cell.protocol = protocol;
        cell.subset = sub.name;
        cell.recall_percent = res.mean_percent;
        cell.class_count = res.class_count;
        cell.per_class = std::move(res.per_class);
        report.cells.push_back(std::move(cell));
    }
}

} // namespace detail

inline PredictionSet predict(const ModelParams& params,
                             const DatasetManifest& manifest,
                             const FeatureStore& store,
                             Split split) {
    PredictionSet preds;
    preds.reserve(manifest.split_ids(split).size());
    for (auto id : manifest.split_ids(split)) {
        const auto& r = manifest.records[static_cast<std::size_t>(id)];
        const auto fwd = forward(params, store.view(r));
        Prediction p;
        p.probs = softmax(fwd.fine_logits);
        p.sequence_id = r.sequence_id;
        p.view_id = r.view_id;
        p.fine_label = r.fine_label;
        p.verb_label = r.verb_label;
        p.noun_label = r.noun_label;
        p.goal_labels = r.goal_labels;
        p.is_unseen = r.is_unseen;
        p.is_tail = r.is_tail;
        preds.push_back(std::move(p));
    }
    return preds;
}

// Scores a split with the fine branch only. Verb and noun recall come from
// marginalizing the action distribution through the label-space maps; the
// per-view protocol treats every view as a sample, the multi-view protocol
// averages the views of each sequence first.
inline EvalReport evaluate_predictions(const PredictionSet& per_view,
                                       const LabelSpace& space,
                                       int top_k = 5) {
    EvalReport report;
    report.top_k = top_k;
    const PredictionSet multi_view = multiview_aggregate(per_view);

    struct ProtocolDef {
        const char* name;
        const PredictionSet* preds;
    };
    const ProtocolDef protocols[] = {{"per_view", &per_view}, {"multi_view", &multi_view}};

    for (const auto& proto : protocols) {
        const PredictionSet& preds = *proto.preds;
        std::vector<std::vector<double>> action_probs, verb_probs, noun_probs;
        std::vector<int> action_labels, verb_labels, noun_labels;
        action_probs.reserve(preds.size());
        for (const auto& p : preds) {
            action_probs.push_back(p.probs);
            action_labels.push_back(p.fine_label);
            verb_probs.push_back(marginalize_action_distribution(p.probs, space.action_to_verb, space.num_verbs));
            verb_labels.push_back(p.verb_label);
            noun_probs.push_back(marginalize_action_distribution(p.probs, space.action_to_noun, space.num_nouns));
            noun_labels.push_back(p.noun_label);
        }
        detail::add_subset_cells(report, "action", proto.name, preds, action_probs, action_labels, top_k,
                                 space.num_fine_actions);
        detail::add_subset_cells(report, "verb", proto.name, preds, verb_probs, verb_labels, top_k, space.num_verbs);
        detail::add_subset_cells(report, "noun", proto.name, preds, noun_probs, noun_labels, top_k, space.num_nouns);
    }
    return report;
}

inline EvalReport evaluate(const ModelParams& params,
                           const DatasetManifest& manifest,
                           const FeatureStore& store,
                           Split split,
                           int top_k = 5) {
    if (manifest.split_ids(split).empty()) throw std::invalid_argument("evaluate: split is empty");
    return evaluate_predictions(predict(params, manifest, store, split), manifest.label_space, top_k);
}

} // namespace gca
