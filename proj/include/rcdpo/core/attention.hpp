#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rcdpo {

/// Attention weights A[l][h][t][k] of one forward pass, stored densely.
/// Rows are causal (k > t is zero) and sum to one over k <= t.
class AttentionTensor {
public:
    AttentionTensor() = default;
    AttentionTensor(std::size_t layers, std::size_t heads, std::size_t length);

    std::size_t layers() const noexcept { return layers_; }
    std::size_t heads() const noexcept { return heads_; }
    std::size_t length() const noexcept { return length_; }

    double at(std::size_t layer, std::size_t head, std::size_t query, std::size_t key) const;
    double& at(std::size_t layer, std::size_t head, std::size_t query, std::size_t key);

    /// Row of weights for one (layer, head, query), all `length()` keys.
    std::span<const double> row(std::size_t layer, std::size_t head, std::size_t query) const;
    std::span<double> row(std::size_t layer, std::size_t head, std::size_t query);

    /// Largest |row sum - 1| over all rows, or +inf if any k > t entry is non-zero.
    double max_normalization_error() const;

    bool operator==(const AttentionTensor&) const = default;

private:
    std::size_t offset(std::size_t layer, std::size_t head, std::size_t query) const;

    std::size_t layers_ = 0;
    std::size_t heads_ = 0;
    std::size_t length_ = 0;
    std::vector<double> weights_;
};

}  // namespace rcdpo
