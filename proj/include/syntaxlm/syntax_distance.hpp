#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "syntaxlm/rng.hpp"
#include "syntaxlm/tokenizer.hpp"

namespace syntaxlm {

enum class DistanceMode { directed, undirected };
enum class DpMaskPolicy { as_distance_one, drop };

DistanceMode parse_distance_mode(std::string_view s);
std::string_view to_string(DistanceMode m);
DpMaskPolicy parse_dp_mask_policy(std::string_view s);
std::string_view to_string(DpMaskPolicy p);

// Marks an entry hidden by DP corruption. Never produced by compute_distances.
inline constexpr std::int32_t kMaskedDistance = -1;

// d(i, j) = shortest edge path from i to j; 0 on the diagonal and where no path exists.
class DistanceMatrix {
public:
    DistanceMatrix() = default;
    explicit DistanceMatrix(int n) : n_(n), d_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0) {}

    int size() const noexcept { return n_; }
    std::int32_t operator()(int i, int j) const { return d_[index(i, j)]; }
    std::int32_t& operator()(int i, int j) { return d_[index(i, j)]; }
    std::size_t count_nonzero() const;

    bool operator==(const DistanceMatrix&) const = default;

private:
    std::size_t index(int i, int j) const {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j);
    }
    int n_ = 0;
    std::vector<std::int32_t> d_;
};

// Row-normalized inverse distances, n x n.
using StrengthMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

DistanceMatrix compute_distances(const SubwordEdgeSet& edges, int n, DistanceMode mode = DistanceMode::directed);

// s(i, j) = (1/d(i,j)) / sum_{z: d(i,z) != 0} 1/d(i,z) where d(i,j) != 0, else 0.
// Requires a clean matrix (no masked entries).
StrengthMatrix normalize(const DistanceMatrix& distances);

// Resolves masked entries per policy (as distance 1, or as 0) and normalizes.
StrengthMatrix normalize_corrupted(const DistanceMatrix& corrupted, DpMaskPolicy policy);

// min(distance, classes) - 1.
int bucketize(int distance, int classes);

struct DpTarget {
    int row;
    int col;
    int label;
};

struct DpCorruption {
    std::vector<DpTarget> targets;  // selected entries and their clean class
    DistanceMatrix corrupted;
    std::size_t masked = 0;
    std::size_t randomized = 0;
    std::size_t kept = 0;
};

// Selects each nonzero entry with probability `rate`; selected entries become
// kMaskedDistance (80%), a uniform integer in [1, classes-1] (10%), or stay (10%).
DpCorruption corrupt_for_dp(const DistanceMatrix& distances, double rate, int classes, Rng& rng);

}  // namespace syntaxlm
