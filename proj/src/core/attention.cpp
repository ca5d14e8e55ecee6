#include "rcdpo/core/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rcdpo/errors.hpp"

namespace rcdpo {

AttentionTensor::AttentionTensor(std::size_t layers, std::size_t heads, std::size_t length)
    : layers_(layers), heads_(heads), length_(length), weights_(layers * heads * length * length, 0.0) {}

std::size_t AttentionTensor::offset(std::size_t layer, std::size_t head, std::size_t query) const {
    if (layer >= layers_ || head >= heads_ || query >= length_) {
        throw IndexOutOfRange("attention index (" + std::to_string(layer) + "," + std::to_string(head) +
                              "," + std::to_string(query) + ") out of range");
    }
    return ((layer * heads_ + head) * length_ + query) * length_;
}

double AttentionTensor::at(std::size_t layer, std::size_t head, std::size_t query, std::size_t key) const {
    if (key >= length_) throw IndexOutOfRange("attention key index out of range");
    return weights_[offset(layer, head, query) + key];
}

double& AttentionTensor::at(std::size_t layer, std::size_t head, std::size_t query, std::size_t key) {
    if (key >= length_) throw IndexOutOfRange("attention key index out of range");
    return weights_[offset(layer, head, query) + key];
}

std::span<const double> AttentionTensor::row(std::size_t layer, std::size_t head, std::size_t query) const {
    return {weights_.data() + offset(layer, head, query), length_};
}

std::span<double> AttentionTensor::row(std::size_t layer, std::size_t head, std::size_t query) {
    return {weights_.data() + offset(layer, head, query), length_};
}

double AttentionTensor::max_normalization_error() const {
    double worst = 0.0;
    for (std::size_t l = 0; l < layers_; ++l) {
        for (std::size_t h = 0; h < heads_; ++h) {
            for (std::size_t t = 0; t < length_; ++t) {
                auto r = row(l, h, t);
                double sum = 0.0;
                for (std::size_t k = 0; k < length_; ++k) {
                    if (k > t && r[k] != 0.0) return std::numeric_limits<double>::infinity();
                    if (r[k] < 0.0 || r[k] > 1.0) return std::numeric_limits<double>::infinity();
                    sum += r[k];
                }
                worst = std::max(worst, std::abs(sum - 1.0));
            }
        }
    }
    return worst;
}

}  // namespace rcdpo
