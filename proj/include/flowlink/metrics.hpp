#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flowlink/errors.hpp"
#include "flowlink/random.hpp"

namespace flowlink {

// Mann-Whitney AUC: P(pos > neg) with ties counted one half. Uses doubled
// mid-ranks so the statistic is accumulated in exact integer arithmetic.
inline double auc(std::span<const double> pos, std::span<const double> neg) {
    if (pos.empty() || neg.empty()) throw DomainError("auc needs at least one positive and one negative score");
    struct Item {
        double score;
        bool positive;
    };
    std::vector<Item> items;
    items.reserve(pos.size() + neg.size());
    for (double s : pos) items.push_back({s, true});
    for (double s : neg) items.push_back({s, false});
    for (const auto& it : items)
        if (std::isnan(it.score)) throw DomainError("auc: NaN score");
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

    std::int64_t rank_sum_x2 = 0;  // sum of doubled 1-based mid-ranks of positives
    std::size_t i = 0;
    while (i < items.size()) {
        std::size_t j = i + 1;
        while (j < items.size() && items[j].score == items[i].score) ++j;
        const auto doubled = static_cast<std::int64_t>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (items[k].positive) rank_sum_x2 += doubled;
        i = j;
    }
    const auto n1 = static_cast<std::int64_t>(pos.size());
    const auto n0 = static_cast<std::int64_t>(neg.size());
    const std::int64_t u_x2 = rank_sum_x2 - n1 * (n1 + 1);
    return static_cast<double>(u_x2) / static_cast<double>(2 * n1 * n0);
}

// Percentage of positives scoring strictly above the k-th largest negative,
// i.e. ranked within the top k when equal-scored negatives rank first.
inline double hits_at_k(std::span<const double> pos, std::span<const double> neg_pool, std::size_t k) {
    if (pos.empty()) throw DomainError("hits@k needs at least one positive score");
    if (k == 0 || k > neg_pool.size()) {
        throw DomainError("hits@k: k = " + std::to_string(k) + " exceeds the negative pool size " +
                          std::to_string(neg_pool.size()));
    }
    std::vector<double> sorted(neg_pool.begin(), neg_pool.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end(),
                     std::greater<>());
    const double threshold = sorted[k - 1];
    std::size_t hits = 0;
    for (double s : pos)
        if (s > threshold) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(pos.size());
}

// Evaluation pool: all negatives when there are at most `max_size`,
// otherwise a seeded uniform subset.
inline std::vector<double> negative_pool(std::span<const double> neg, std::size_t max_size, std::uint64_t seed) {
    std::vector<double> out(neg.begin(), neg.end());
    if (out.size() <= max_size) return out;
    Rng rng(seed);
    shuffle(out.begin(), out.end(), rng);
    out.resize(max_size);
    return out;
}

}  // namespace flowlink
