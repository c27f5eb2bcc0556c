#pragma once

#include <vector>

#include "lcomp/errors.hpp"
#include "lcomp/tensor.hpp"

namespace lcomp {

struct GuidanceConfig {
    float scale = 7.0f;                    // s >= 1
    std::vector<float> composite_weights;  // empty means all 1
    // Divide by sum(w_i) instead of the count k. Off by default: the
    // aggregation divides by k even when the weights do not sum to k.
    bool renormalize = false;

    void validate(size_t k) const {
        if (scale < 1.0f) throw DomainError("guidance scale must be >= 1");
        if (!composite_weights.empty() && composite_weights.size() != k)
            throw DomainError("composite weight count must equal adapter count");
        for (float w : composite_weights)
            if (w < 0.0f) throw DomainError("composite weights must be non-negative");
    }

    float weight(size_t i) const {
        return composite_weights.empty() ? 1.0f : composite_weights[i];
    }
};

// e_uncond + s * (e_cond - e_uncond); the per-element arithmetic runs in
// double so the result matches composite_guidance's accumulation exactly.
inline Tensor cfg(const Tensor& e_uncond, const Tensor& e_cond, float s) {
    if (!e_uncond.same_shape(e_cond)) throw ShapeError("cfg: shape mismatch");
    if (s == 1.0f) return e_cond;
    Tensor out = e_uncond;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double u = e_uncond.data[i], c = e_cond.data[i];
        out.data[i] = static_cast<float>(u + static_cast<double>(s) * (c - u));
    }
    return out;
}

struct ScorePair {
    Tensor e_uncond;
    Tensor e_cond;
};

// (1/k) * sum_i w_i * [e_uncond_i + s * (e_cond_i - e_uncond_i)]
// The normalizer is the adapter count k, not sum(w_i), unless renormalize is
// set. Accumulation is in double, index order, so equivalence tests can pin
// exact expected values.
inline Tensor composite_guidance(const std::vector<ScorePair>& pairs,
                                 const std::vector<float>& weights, float s,
                                 bool renormalize = false) {
    if (pairs.empty()) throw DomainError("composite_guidance: empty pair list");
    const size_t k = pairs.size();
    if (weights.size() != k) throw DomainError("composite_guidance: weight count != k");
    for (size_t i = 0; i < k; ++i)
        if (!pairs[i].e_uncond.same_shape(pairs[0].e_uncond) ||
            !pairs[i].e_cond.same_shape(pairs[0].e_uncond))
            throw ShapeError("composite_guidance: inconsistent score shapes");

    if (k == 1 && weights[0] == 1.0f && !renormalize)
        return cfg(pairs[0].e_uncond, pairs[0].e_cond, s);

    double norm = static_cast<double>(k);
    if (renormalize) {
        double wsum = 0.0;
        for (float w : weights) wsum += w;
        if (wsum <= 0.0) throw DomainError("composite_guidance: renormalize needs sum(w) > 0");
        norm = wsum;
    }

    const size_t n = pairs[0].e_uncond.numel();
    Tensor out = Tensor::zeros(pairs[0].e_uncond.shape);
    for (size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (size_t i = 0; i < k; ++i) {
            const double u = pairs[i].e_uncond.data[j];
            const double c = pairs[i].e_cond.data[j];
            acc += static_cast<double>(weights[i]) * (u + static_cast<double>(s) * (c - u));
        }
        out.data[j] = static_cast<float>(acc / norm);
    }
    return out;
}

}  // namespace lcomp
