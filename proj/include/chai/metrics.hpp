#ifndef CHAI_METRICS_HPP
#define CHAI_METRICS_HPP

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "labels.hpp"
#include "retrieval.hpp"

namespace chai {

struct ScoredLabel {
    double score;
    bool positive;
};

/**
 * Area under the ROC curve as the Mann-Whitney statistic
 * P(score_pos > score_neg) + P(score_pos == score_neg) / 2.
 *
 * Pairs are counted exactly in integers over score-sorted tie groups, so the
 * result equals the O(P*N) pairwise count bit for bit.
 */
inline double auc(std::vector<ScoredLabel> scores) {
    std::uint64_t pos = 0, neg = 0;
    for (const auto& s : scores) {
        (s.positive ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) {
        throw UndefinedMetric("AUC needs at least one positive and one negative sample");
    }
    std::sort(scores.begin(), scores.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score < b.score; });
    std::uint64_t wins = 0, ties = 0, negatives_below = 0;
    for (std::size_t i = 0; i < scores.size();) {
        std::size_t j = i;
        std::uint64_t p = 0, n = 0;
        while (j < scores.size() && scores[j].score == scores[i].score) {
            (scores[j].positive ? p : n) += 1;
            ++j;
        }
        wins += p * negatives_below;
        ties += p * n;
        negatives_below += n;
        i = j;
    }
    return static_cast<double>(2 * wins + ties) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

/// Number of neighbors in the query's (disease, similarity group).
inline std::size_t rel_at_k(const HierLabel& query, const NeighborList& neighbors, const LabelMap& labels) {
    if (!query.has_group() || !query.disease) {
        throw InvalidInput("query '" + neighbors.query_id + "' lacks a (disease, group) annotation");
    }
    const auto key = query.group_key();
    std::size_t matches = 0;
    for (const auto& n : neighbors.items) {
        auto it = labels.find(n.id);
        if (it == labels.end() || !it->second.has_group() || !it->second.disease) {
            throw InvalidInput("neighbor '" + n.id + "' lacks a (disease, group) annotation");
        }
        matches += (*it->second.disease == *query.disease && it->second.group_key() == key) ? 1 : 0;
    }
    return matches;
}

}

#endif
