#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lcomp/errors.hpp"
#include "lcomp/rng.hpp"
#include "lcomp/tensor.hpp"

namespace lcomp {

struct NoiseSchedule {
    size_t T = 0;
    std::vector<double> betas;       // length T, each in (0,1)
    std::vector<double> alpha_bars;  // cumulative products of (1 - beta)

    // alpha_bar with the t=0 convention alpha_bar_0 = 1.
    double alpha_bar(size_t t) const {
        if (t > T) throw DomainError("alpha_bar: t out of range");
        return t == 0 ? 1.0 : alpha_bars[t - 1];
    }
};

inline NoiseSchedule build_schedule(size_t T, double beta_start, double beta_end) {
    if (T < 1) throw DomainError("build_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw DomainError("build_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alpha_bars.resize(T);
    double prod = 1.0;
    for (size_t i = 0; i < T; ++i) {
        s.betas[i] = (T == 1) ? beta_start
                              : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                                 static_cast<double>(T - 1);
        prod *= 1.0 - s.betas[i];
        s.alpha_bars[i] = prod;
    }
    return s;
}

enum class SamplerKind { Deterministic, Ancestral };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::Deterministic;
    size_t steps = 100;
    uint64_t seed = 0;
};

// sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps
inline Tensor add_noise(const Tensor& z0, const Tensor& eps, size_t t, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw DomainError("add_noise: t out of range");
    if (!z0.same_shape(eps)) throw ShapeError("add_noise: z0/eps shape mismatch");
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out = z0;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>(a * static_cast<double>(z0.data[i]) +
                                         b * static_cast<double>(eps.data[i]));
    return out;
}

// One reverse update from t to t_prev. Deterministic kind predicts z0 and
// re-noises to the target level; ancestral adds posterior-scaled Gaussian
// noise from rng. Internals in double so reconstruction oracles hold at
// float tolerances.
inline Tensor sampler_step(const Tensor& z_t, const Tensor& eps_hat, size_t t, size_t t_prev,
                           const NoiseSchedule& sched, const SamplerConfig& config, Rng& rng) {
    if (!(t > t_prev)) throw DomainError("sampler_step: need t > t_prev >= 0");
    if (t > sched.T) throw DomainError("sampler_step: t out of range");
    if (!z_t.same_shape(eps_hat)) throw ShapeError("sampler_step: shape mismatch");
    if (!eps_hat.finite()) throw NumericError("sampler_step: non-finite eps_hat");

    const double ab_t = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t_prev);
    const double sa_t = std::sqrt(ab_t), sb_t = std::sqrt(1.0 - ab_t);

    double sigma = 0.0;
    if (config.kind == SamplerKind::Ancestral && t_prev > 0) {
        // DDPM posterior variance between the two levels
        sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev));
    }
    const double eps_coeff = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));

    Tensor out = z_t;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double z = static_cast<double>(z_t.data[i]);
        const double e = static_cast<double>(eps_hat.data[i]);
        const double z0_hat = (z - sb_t * e) / sa_t;
        double v = std::sqrt(ab_prev) * z0_hat + eps_coeff * e;
        if (sigma > 0.0) v += sigma * rng.next_gaussian();
        out.data[i] = static_cast<float>(v);
    }
    return out;
}

// Uniformly strided timestep sequence T = t_1 > t_2 > ... > t_S, paired with
// the previous level each step descends to (last pair ends at 0).
inline std::vector<std::pair<size_t, size_t>> make_timesteps(size_t T, size_t steps) {
    if (steps < 1 || steps > T) throw DomainError("make_timesteps: need 1 <= steps <= T");
    std::vector<size_t> ts(steps);
    for (size_t i = 0; i < steps; ++i) {
        // descend from T to T/steps in equal strides
        ts[i] = T - (T * i) / steps;
    }
    std::vector<std::pair<size_t, size_t>> pairs;
    for (size_t i = 0; i < steps; ++i)
        pairs.emplace_back(ts[i], i + 1 < steps ? ts[i + 1] : 0);
    return pairs;
}

}  // namespace lcomp
