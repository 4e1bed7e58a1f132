// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace lorasim {

struct KMeansResult {
    std::vector<double> centroids;  // ascending
    std::vector<std::size_t> sizes;
    double wcss = 0.0;
    int iterations = 0;
};

/// Lloyd's algorithm on sorted 1-D data with quantile-initialized centroids.
inline KMeansResult kmeans_1d(std::span<const double> sorted, std::size_t k, int max_iterations = 100) {
    KMeansResult res;
    const std::size_t n = sorted.size();
    if (n == 0 || k == 0) return res;
    k = std::min(k, n);
    res.centroids.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
        auto idx = static_cast<std::size_t>((static_cast<double>(j) + 0.5) / static_cast<double>(k) * static_cast<double>(n));
        res.centroids[j] = sorted[std::min(idx, n - 1)];
    }

    std::vector<std::size_t> assign(n, 0), prev(n, k);
    for (int it = 0; it < max_iterations; ++it) {
        res.iterations = it + 1;
        // Centroids stay sorted, so nearest-centroid assignment is a forward sweep.
        std::size_t c = 0;
        for (std::size_t i = 0; i < n; ++i) {
            while (c + 1 < k && sorted[i] - res.centroids[c] > res.centroids[c + 1] - sorted[i]) ++c;
            assign[i] = c;
        }
        if (assign == prev) break;
        prev = assign;
        std::vector<double> sum(k, 0.0);
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[assign[i]] += sorted[i];
            ++cnt[assign[i]];
        }
        for (std::size_t j = 0; j < k; ++j)
            if (cnt[j] > 0) res.centroids[j] = sum[j] / static_cast<double>(cnt[j]);
        std::sort(res.centroids.begin(), res.centroids.end());
    }

    res.sizes.assign(k, 0);
    res.wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = sorted[i] - res.centroids[assign[i]];
        res.wcss += d * d;
        ++res.sizes[assign[i]];
    }
    return res;
}

struct QueueLayout {
    std::size_t k = 1;
    std::vector<double> centroids;
    std::vector<double> boundaries;  // k - 1 ascending cut-offs
    std::vector<double> wcss_curve;  // WCSS for K = 1..K_max
};

/// Chooses the queue count from the WCSS curve and places cut-offs at the
/// midpoints between consecutive centroids. Queues are added while each extra
/// cluster shrinks WCSS to at most `stop_ratio` of the previous value.
inline QueueLayout fit_layout(std::span<const double> samples, std::size_t k_max, double stop_ratio) {
    QueueLayout layout;
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.empty()) return layout;
    if (sorted.size() < k_max || sorted.front() == sorted.back()) {
        layout.centroids = {std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size())};
        return layout;
    }

    std::vector<KMeansResult> fits;
    for (std::size_t k = 1; k <= k_max; ++k) {
        fits.push_back(kmeans_1d(sorted, k));
        layout.wcss_curve.push_back(fits.back().wcss);
    }
    std::size_t chosen = 1;
    for (std::size_t k = 1; k < k_max; ++k) {
        const double cur = layout.wcss_curve[k - 1];
        if (cur <= 0.0) break;
        if (layout.wcss_curve[k] / cur > stop_ratio) break;
        chosen = k + 1;
    }
    layout.k = chosen;
    layout.centroids = fits[chosen - 1].centroids;
    for (std::size_t j = 0; j + 1 < layout.centroids.size(); ++j)
        layout.boundaries.push_back((layout.centroids[j] + layout.centroids[j + 1]) / 2.0);
    return layout;
}

/// Smallest queue whose cut-off is >= wrs; the last queue takes the rest.
inline std::size_t admit_index(double wrs, std::span<const double> boundaries) {
    for (std::size_t q = 0; q < boundaries.size(); ++q)
        if (wrs <= boundaries[q]) return q;
    return boundaries.size();
}

}  // namespace lorasim
