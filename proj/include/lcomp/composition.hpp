#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "lcomp/denoiser.hpp"
#include "lcomp/errors.hpp"
#include "lcomp/guidance.hpp"
#include "lcomp/lowrank.hpp"

namespace lcomp {

enum class Strategy { Merge, Switch, Composite, Hybrid };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Merge: return "merge";
        case Strategy::Switch: return "switch";
        case Strategy::Composite: return "composite";
        case Strategy::Hybrid: return "hybrid";
    }
    return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
    if (s == "merge") return Strategy::Merge;
    if (s == "switch") return Strategy::Switch;
    if (s == "composite") return Strategy::Composite;
    if (s == "hybrid") return Strategy::Hybrid;
    throw DomainError("unknown strategy: " + s);
}

enum class TauScheduleKind { Fixed, Incremental, Decremental, Warmup };

struct TauSchedule {
    TauScheduleKind kind = TauScheduleKind::Fixed;
    size_t tau_from = 5;
    size_t tau_to = 5;

    static TauSchedule fixed(size_t tau) { return {TauScheduleKind::Fixed, tau, tau}; }
    static TauSchedule incremental(size_t a, size_t b) { return {TauScheduleKind::Incremental, a, b}; }
    static TauSchedule decremental(size_t a, size_t b) { return {TauScheduleKind::Decremental, a, b}; }
    static TauSchedule warmup(size_t a, size_t b) { return {TauScheduleKind::Warmup, a, b}; }
};

struct CompositionConfig {
    Strategy strategy = Strategy::Merge;
    TauSchedule tau_schedule = TauSchedule::fixed(5);
    // Permutation of adapter indices (0-based). Empty means canonical
    // category order: Character, Clothing, Style, Background, Object.
    std::vector<size_t> order;
    // Hybrid: partition of adapter indices into groups, rotated by the
    // switch rule; the active group is composited.
    std::vector<std::vector<size_t>> groups;
    // Switch prompt mode: condition on the active adapter's trigger only
    // instead of the full multi-element prompt.
    bool per_active_trigger = false;

    void validate(size_t k) const {
        if (k == 0) throw DomainError("composition needs at least one adapter");
        if (tau_schedule.tau_from < 1 || tau_schedule.tau_to < 1)
            throw DomainError("tau must be >= 1");
        if (!order.empty()) {
            if (order.size() != k) throw DomainError("order length must equal adapter count");
            std::vector<bool> seen(k, false);
            for (size_t i : order) {
                if (i >= k || seen[i]) throw DomainError("order is not a permutation");
                seen[i] = true;
            }
        }
        if (strategy == Strategy::Hybrid) {
            if (groups.empty()) throw DomainError("hybrid needs a group partition");
            std::vector<bool> seen(k, false);
            for (const auto& g : groups) {
                if (g.empty()) throw DomainError("hybrid groups must be non-empty");
                for (size_t i : g) {
                    if (i >= k || seen[i]) throw DomainError("groups must partition the adapter set");
                    seen[i] = true;
                }
            }
            for (bool s : seen)
                if (!s) throw DomainError("groups must cover every adapter");
        }
    }
};

// floor(((t-1) mod (k*tau)) / tau) + 1, 1-based.
inline size_t active_index(size_t t, size_t k, size_t tau) {
    if (t < 1 || k < 1 || tau < 1) throw DomainError("active_index: t, k, tau must be >= 1");
    return ((t - 1) % (k * tau)) / tau + 1;
}

// Per-step tau under a dynamic schedule, t in 1..N.
inline size_t effective_tau(size_t t, size_t N, const TauSchedule& sched) {
    if (t < 1 || t > N) throw DomainError("effective_tau: t out of range");
    auto lerp = [](size_t a, size_t b, size_t t1, size_t span) -> size_t {
        if (span == 0) return b;
        const double v = static_cast<double>(a) +
                         (static_cast<double>(b) - static_cast<double>(a)) *
                             static_cast<double>(t1) / static_cast<double>(span);
        const auto r = static_cast<long long>(std::llround(v));
        return static_cast<size_t>(std::max(1LL, r));
    };
    switch (sched.kind) {
        case TauScheduleKind::Fixed:
            return sched.tau_from;
        case TauScheduleKind::Incremental:
        case TauScheduleKind::Decremental:
            return lerp(sched.tau_from, sched.tau_to, t - 1, N - 1);
        case TauScheduleKind::Warmup: {
            const size_t half = (N + 1) / 2;
            if (t > half) return sched.tau_to;
            return lerp(sched.tau_from, sched.tau_to, t - 1, half - 1);
        }
    }
    throw DomainError("effective_tau: bad schedule kind");
}

// Canonical activation order: by category rank, ties by adapter list position.
inline std::vector<size_t> canonical_order(const std::vector<LoraAdapter>& adapters) {
    std::vector<size_t> idx(adapters.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        return category_rank(adapters[a].category) < category_rank(adapters[b].category);
    });
    return idx;
}

// Materialized overlay for a subset of adapters, summed in subset order.
// Only the selected adapters' deltas are ever touched.
inline Overlays build_overlay(const DenoiserModel& model, const std::vector<LoraAdapter>& adapters,
                              const std::vector<size_t>& subset) {
    Overlays ov;
    for (const auto& hook : model.hook_names()) {
        Tensor sum;
        bool any = false;
        for (size_t i : subset) {
            if (!adapters[i].deltas.count(hook)) continue;
            Tensor d = delta_matrix(adapters[i], hook);
            if (!any) {
                sum = std::move(d);
                any = true;
            } else {
                for (size_t j = 0; j < sum.data.size(); ++j) sum.data[j] += d.data[j];
            }
        }
        if (any) ov[hook] = std::move(sum);
    }
    return ov;
}

// Evaluates one strategy's guided score per denoising step. Holds the
// per-run state: the merged overlay is built once, and dynamic-tau switching
// tracks how long the current adapter has been active (Eq.-style indexing is
// only defined for constant tau, so the dynamic variant advances whenever the
// running count reaches the current tau).
class StrategyRunner {
public:
    StrategyRunner(CompositionConfig config, const DenoiserModel& model,
                   std::vector<LoraAdapter> adapters, size_t total_steps,
                   GuidanceConfig guidance, Tensor cond,
                   std::vector<Tensor> per_adapter_cond = {})
        : config_(std::move(config)),
          model_(model),
          adapters_(std::move(adapters)),
          total_steps_(total_steps),
          guidance_(std::move(guidance)),
          cond_(std::move(cond)),
          per_adapter_cond_(std::move(per_adapter_cond)) {
        const size_t k = adapters_.size();
        config_.validate(k);
        guidance_.validate(k);
        if (config_.per_active_trigger && per_adapter_cond_.size() != k)
            throw DomainError("per-active-trigger mode needs one condition per adapter");
        order_ = config_.order.empty() ? canonical_order(adapters_) : config_.order;
        null_cond_ = Tensor::zeros({model_.d_c});
        if (config_.strategy == Strategy::Merge) {
            std::vector<size_t> all(k);
            std::iota(all.begin(), all.end(), 0);
            merged_overlay_ = build_overlay(model_, adapters_, all);
        }
    }

    // step: denoising step counter 1..N (drives switching);
    // t_level: schedule timestep fed to the model's time embedding.
    Tensor epsilon(const Tensor& z_t, size_t step, size_t t_level, size_t T) {
        switch (config_.strategy) {
            case Strategy::Merge:
                return cfg(forward(model_, merged_overlay_, z_t, t_level, T, null_cond_),
                           forward(model_, merged_overlay_, z_t, t_level, T, cond_),
                           guidance_.scale);
            case Strategy::Switch: {
                const size_t pos = switch_position(step, order_.size());
                const size_t idx = order_[pos];
                const Overlays ov = build_overlay(model_, adapters_, {idx});
                const Tensor& c = config_.per_active_trigger ? per_adapter_cond_[idx] : cond_;
                return cfg(forward(model_, ov, z_t, t_level, T, null_cond_),
                           forward(model_, ov, z_t, t_level, T, c), guidance_.scale);
            }
            case Strategy::Composite: {
                std::vector<size_t> all(adapters_.size());
                std::iota(all.begin(), all.end(), 0);
                return composite_over(all, z_t, t_level, T);
            }
            case Strategy::Hybrid: {
                const size_t pos = switch_position(step, config_.groups.size());
                return composite_over(config_.groups[pos], z_t, t_level, T);
            }
        }
        throw DomainError("unknown strategy");
    }

    const std::vector<size_t>& order() const { return order_; }

private:
    // Rotation position (0-based) among `slots` entries at step t.
    size_t switch_position(size_t t, size_t slots) {
        if (config_.tau_schedule.kind == TauScheduleKind::Fixed)
            return active_index(t, slots, config_.tau_schedule.tau_from) - 1;
        // Dynamic tau: sequential counter interpretation.
        if (t != last_step_ + 1)
            throw DomainError("dynamic tau schedules require sequential step evaluation");
        last_step_ = t;
        const size_t tau_t = effective_tau(t, total_steps_, config_.tau_schedule);
        if (t == 1) {
            pos_ = 0;
            steps_on_current_ = 1;
        } else if (steps_on_current_ >= tau_t) {
            pos_ = (pos_ + 1) % slots;
            steps_on_current_ = 1;
        } else {
            ++steps_on_current_;
        }
        return pos_;
    }

    Tensor composite_over(const std::vector<size_t>& subset, const Tensor& z_t, size_t t_level,
                          size_t T) {
        std::vector<ScorePair> pairs;
        std::vector<float> weights;
        pairs.reserve(subset.size());
        for (size_t i : subset) {
            const Overlays ov = build_overlay(model_, adapters_, {i});
            pairs.push_back({forward(model_, ov, z_t, t_level, T, null_cond_),
                             forward(model_, ov, z_t, t_level, T, cond_)});
            weights.push_back(guidance_.weight(i));
        }
        return composite_guidance(pairs, weights, guidance_.scale, guidance_.renormalize);
    }

    CompositionConfig config_;
    const DenoiserModel& model_;
    std::vector<LoraAdapter> adapters_;
    size_t total_steps_;
    GuidanceConfig guidance_;
    Tensor cond_;
    std::vector<Tensor> per_adapter_cond_;
    std::vector<size_t> order_;
    Tensor null_cond_;
    Overlays merged_overlay_;

    size_t last_step_ = 0;
    size_t pos_ = 0;
    size_t steps_on_current_ = 0;
};

// Stateless convenience wrapper for fixed-tau configs.
inline Tensor epsilon_at_step(const CompositionConfig& config, const DenoiserModel& model,
                              const std::vector<LoraAdapter>& adapters, const Tensor& z_t,
                              size_t step, size_t t_level, size_t T, const Tensor& cond,
                              const GuidanceConfig& guidance, size_t total_steps) {
    StrategyRunner runner(config, model, adapters, total_steps, guidance, cond);
    return runner.epsilon(z_t, step, t_level, T);
}

}  // namespace lcomp
