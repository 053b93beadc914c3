#include "syntaxlm/syntax_distance.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>
#include <string>

#include "syntaxlm/errors.hpp"

namespace syntaxlm {

DistanceMode parse_distance_mode(std::string_view s) {
    if (s == "directed") return DistanceMode::directed;
    if (s == "undirected") return DistanceMode::undirected;
    throw ConfigError("distance_mode must be 'directed' or 'undirected', got '" + std::string(s) + "'");
}

std::string_view to_string(DistanceMode m) { return m == DistanceMode::directed ? "directed" : "undirected"; }

DpMaskPolicy parse_dp_mask_policy(std::string_view s) {
    if (s == "as_distance_one") return DpMaskPolicy::as_distance_one;
    if (s == "drop") return DpMaskPolicy::drop;
    throw ConfigError("dp_mask_policy must be 'as_distance_one' or 'drop', got '" + std::string(s) + "'");
}

std::string_view to_string(DpMaskPolicy p) { return p == DpMaskPolicy::as_distance_one ? "as_distance_one" : "drop"; }

std::size_t DistanceMatrix::count_nonzero() const {
    return static_cast<std::size_t>(std::count_if(d_.begin(), d_.end(), [](std::int32_t v) { return v != 0; }));
}

DistanceMatrix compute_distances(const SubwordEdgeSet& edges, int n, DistanceMode mode) {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (const auto& e : edges) {
        if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n)
            throw std::out_of_range("edge " + std::to_string(e.from) + "->" + std::to_string(e.to) +
                                    " outside a sequence of length " + std::to_string(n));
        adj[static_cast<std::size_t>(e.from)].push_back(e.to);
        if (mode == DistanceMode::undirected) adj[static_cast<std::size_t>(e.to)].push_back(e.from);
    }

    DistanceMatrix d(n);
    std::vector<int> dist(static_cast<std::size_t>(n));
    std::deque<int> queue;
    for (int src = 0; src < n; ++src) {
        std::fill(dist.begin(), dist.end(), -1);
        dist[static_cast<std::size_t>(src)] = 0;
        queue.assign(1, src);
        while (!queue.empty()) {
            const int v = queue.front();
            queue.pop_front();
            for (int u : adj[static_cast<std::size_t>(v)]) {
                if (dist[static_cast<std::size_t>(u)] >= 0) continue;
                dist[static_cast<std::size_t>(u)] = dist[static_cast<std::size_t>(v)] + 1;
                queue.push_back(u);
            }
        }
        for (int j = 0; j < n; ++j)
            if (dist[static_cast<std::size_t>(j)] > 0) d(src, j) = dist[static_cast<std::size_t>(j)];
    }
    return d;
}

namespace {

StrengthMatrix normalize_impl(const DistanceMatrix& dm, DpMaskPolicy policy) {
    const int n = dm.size();
    StrengthMatrix s = StrengthMatrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        double total = 0.0;
        for (int j = 0; j < n; ++j) {
            std::int32_t d = dm(i, j);
            if (d == kMaskedDistance) d = policy == DpMaskPolicy::as_distance_one ? 1 : 0;
            if (d < 0) throw std::invalid_argument("negative distance in matrix");
            if (d == 0) continue;
            s(i, j) = 1.0 / static_cast<double>(d);
            total += s(i, j);
        }
        if (total > 0.0) s.row(i) /= total;
    }
    return s;
}

}  // namespace

StrengthMatrix normalize(const DistanceMatrix& distances) {
    const int n = distances.size();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (distances(i, j) < 0) throw std::invalid_argument("normalize() received a corrupted matrix");
    return normalize_impl(distances, DpMaskPolicy::drop);
}

StrengthMatrix normalize_corrupted(const DistanceMatrix& corrupted, DpMaskPolicy policy) {
    return normalize_impl(corrupted, policy);
}

int bucketize(int distance, int classes) {
    if (distance < 1) throw std::invalid_argument("bucketize() needs a distance >= 1, got " + std::to_string(distance));
    if (classes < 2) throw std::invalid_argument("bucketize() needs at least 2 classes");
    return std::min(distance, classes) - 1;
}

DpCorruption corrupt_for_dp(const DistanceMatrix& distances, double rate, int classes, Rng& rng) {
    if (!(rate > 0.0 && rate < 1.0)) throw std::invalid_argument("DP corruption rate must lie in (0, 1)");
    DpCorruption out;
    out.corrupted = distances;
    const int n = distances.size();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const int d = distances(i, j);
            if (d <= 0) continue;
            if (!rng.bernoulli(rate)) continue;
            out.targets.push_back({i, j, bucketize(d, classes)});
            const double r = rng.uniform();
            if (r < 0.8) {
                out.corrupted(i, j) = kMaskedDistance;
                ++out.masked;
            } else if (r < 0.9) {
                out.corrupted(i, j) = static_cast<std::int32_t>(rng.uniform_int(1, classes - 1));
                ++out.randomized;
            } else {
                ++out.kept;
            }
        }
    }
    return out;
}

}  // namespace syntaxlm
