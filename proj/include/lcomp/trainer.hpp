#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lcomp/denoiser.hpp"
#include "lcomp/diffusion.hpp"
#include "lcomp/errors.hpp"
#include "lcomp/lowrank.hpp"
#include "lcomp/rng.hpp"
#include "lcomp/tensor.hpp"

namespace lcomp {

struct TrainConfig {
    size_t epochs = 20;
    size_t batch_size = 16;
    double learning_rate = 1e-2;
    double momentum = 0.0;
    size_t rank = 4;
    uint64_t seed = 0;
    // Probability of replacing the condition by the null vector, so the
    // unconditional branch of guidance gets trained too.
    double cond_drop_prob = 0.1;

    void validate() const {
        if (epochs == 0 || batch_size == 0 || rank == 0)
            throw DomainError("train config: epochs, batch size, rank must be positive");
        if (learning_rate < 0.0) throw DomainError("train config: negative learning rate");
    }
};

struct Sample {
    Tensor z0;    // [d]
    Tensor cond;  // [d_c]
};

// A sample with its drawn timestep, noise, and condition-drop flag. Freezing
// these draws makes the loss a pure function of the parameters, which is
// what the finite-difference oracle needs.
struct NoisedSample {
    Tensor z0;
    Tensor cond;
    size_t t = 1;
    Tensor eps;
    bool cond_dropped = false;
};

inline std::vector<NoisedSample> make_noised_batch(const std::vector<Sample>& batch,
                                                   const NoiseSchedule& sched, Rng& rng,
                                                   double cond_drop_prob = 0.0) {
    if (batch.empty()) throw DomainError("empty batch");
    std::vector<NoisedSample> out;
    out.reserve(batch.size());
    for (const auto& s : batch) {
        NoisedSample n;
        n.z0 = s.z0;
        n.cond = s.cond;
        n.t = static_cast<size_t>(rng.next_range(1, sched.T));
        n.eps = Tensor::zeros(s.z0.shape);
        for (auto& v : n.eps.data) v = static_cast<float>(rng.next_gaussian());
        n.cond_dropped = cond_drop_prob > 0.0 && rng.next_double() < cond_drop_prob;
        out.push_back(std::move(n));
    }
    return out;
}

namespace detail {

// Double-precision matrices for the training path; parameters stay float32
// but all arithmetic here runs in double so analytic gradients line up with
// central differences to ~1e-7.
struct DMat {
    size_t rows = 0, cols = 0;
    std::vector<double> v;
    DMat() = default;
    DMat(size_t r, size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
    double& at(size_t i, size_t j) { return v[i * cols + j]; }
    double at(size_t i, size_t j) const { return v[i * cols + j]; }
};

inline DMat to_dmat(const Tensor& t) {
    DMat m(t.rows(), t.cols());
    for (size_t i = 0; i < t.data.size(); ++i) m.v[i] = t.data[i];
    return m;
}

struct EffectiveWeights {
    DMat w1, w2;
    std::vector<double> b1, b2;
};

// W + w_scale * B * A per hook, in double.
inline EffectiveWeights effective_weights(const DenoiserModel& model, const LoraAdapter* adapter) {
    EffectiveWeights e;
    e.w1 = to_dmat(model.layer1);
    e.w2 = to_dmat(model.layer2);
    e.b1.assign(model.bias1.data.begin(), model.bias1.data.end());
    e.b2.assign(model.bias2.data.begin(), model.bias2.data.end());
    if (adapter) {
        auto apply = [&](const std::string& hook, DMat& w) {
            auto it = adapter->deltas.find(hook);
            if (it == adapter->deltas.end()) return;
            const DMat b = to_dmat(it->second.up), a = to_dmat(it->second.down);
            const double s = adapter->weight_scale;
            for (size_t i = 0; i < w.rows; ++i)
                for (size_t j = 0; j < w.cols; ++j) {
                    double acc = 0.0;
                    for (size_t r = 0; r < b.cols; ++r) acc += b.at(i, r) * a.at(r, j);
                    w.at(i, j) += s * acc;
                }
        };
        apply("layer1", e.w1);
        apply("layer2", e.w2);
    }
    return e;
}

struct ForwardTrace {
    std::vector<double> x;       // concat input
    std::vector<double> hidden;  // tanh activations
    std::vector<double> out;
};

inline ForwardTrace forward_trace(const DenoiserModel& model, const EffectiveWeights& e,
                                  const NoisedSample& ns, const NoiseSchedule& sched) {
    const Tensor z_t = add_noise(ns.z0, ns.eps, ns.t, sched);
    const Tensor time_emb = embed_time(ns.t, sched.T, model.d_t);
    ForwardTrace tr;
    tr.x.resize(model.input_dim());
    for (size_t i = 0; i < model.d; ++i) tr.x[i] = z_t.data[i];
    for (size_t i = 0; i < model.d_t; ++i) tr.x[model.d + i] = time_emb.data[i];
    for (size_t i = 0; i < model.d_c; ++i)
        tr.x[model.d + model.d_t + i] = ns.cond_dropped ? 0.0 : ns.cond.data[i];

    tr.hidden.resize(model.h);
    for (size_t i = 0; i < model.h; ++i) {
        double acc = e.b1[i];
        for (size_t k = 0; k < model.input_dim(); ++k) acc += e.w1.at(i, k) * tr.x[k];
        tr.hidden[i] = std::tanh(acc);
    }
    tr.out.resize(model.d);
    for (size_t i = 0; i < model.d; ++i) {
        double acc = e.b2[i];
        for (size_t k = 0; k < model.h; ++k) acc += e.w2.at(i, k) * tr.hidden[k];
        tr.out[i] = acc;
    }
    return tr;
}

}  // namespace detail

// Mean over the batch of || eps - eps_hat ||^2 on the frozen noise draws.
inline double loss_on_noised(const DenoiserModel& model, const LoraAdapter* adapter,
                             const std::vector<NoisedSample>& batch, const NoiseSchedule& sched) {
    if (batch.empty()) throw DomainError("empty batch");
    const detail::EffectiveWeights e = detail::effective_weights(model, adapter);
    double total = 0.0;
    for (const auto& ns : batch) {
        const detail::ForwardTrace tr = detail::forward_trace(model, e, ns, sched);
        for (size_t i = 0; i < model.d; ++i) {
            const double r = static_cast<double>(ns.eps.data[i]) - tr.out[i];
            total += r * r;
        }
    }
    const double loss = total / static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw NumericError("non-finite denoising loss");
    return loss;
}

// Draws (t, eps, drop) from rng, then evaluates the objective.
inline double denoising_loss(const DenoiserModel& model, const LoraAdapter* adapter,
                             const std::vector<Sample>& batch, const NoiseSchedule& sched,
                             Rng& rng, double cond_drop_prob = 0.0) {
    return loss_on_noised(model, adapter, make_noised_batch(batch, sched, rng, cond_drop_prob),
                          sched);
}

enum class GradMode { BaseParams, AdapterFactors };

struct Gradients {
    // base mode
    Tensor layer1, bias1, layer2, bias2;
    // adapter mode: up = dL/dB, down = dL/dA per hook
    std::map<std::string, LoraDelta> factors;
};

// Analytic gradients of loss_on_noised. Base mode differentiates W1,b1,W2,b2
// (with any adapter delta held fixed); adapter mode differentiates only the
// low-rank factors, the freezing contract.
inline Gradients param_gradients(const DenoiserModel& model, const LoraAdapter* adapter,
                                 const std::vector<NoisedSample>& batch,
                                 const NoiseSchedule& sched, GradMode mode) {
    if (batch.empty()) throw DomainError("empty batch");
    if (mode == GradMode::AdapterFactors && !adapter)
        throw DomainError("adapter-factor gradients need an adapter");

    const detail::EffectiveWeights e = detail::effective_weights(model, adapter);
    const size_t in = model.input_dim();
    detail::DMat dw1(model.h, in), dw2(model.d, model.h);
    std::vector<double> db1(model.h, 0.0), db2(model.d, 0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    for (const auto& ns : batch) {
        const detail::ForwardTrace tr = detail::forward_trace(model, e, ns, sched);
        std::vector<double> g_out(model.d);
        for (size_t i = 0; i < model.d; ++i)
            g_out[i] = 2.0 * (tr.out[i] - static_cast<double>(ns.eps.data[i])) * inv_b;

        for (size_t i = 0; i < model.d; ++i) {
            db2[i] += g_out[i];
            for (size_t k = 0; k < model.h; ++k) dw2.at(i, k) += g_out[i] * tr.hidden[k];
        }
        std::vector<double> g_pre(model.h, 0.0);
        for (size_t k = 0; k < model.h; ++k) {
            double acc = 0.0;
            for (size_t i = 0; i < model.d; ++i) acc += e.w2.at(i, k) * g_out[i];
            g_pre[k] = acc * (1.0 - tr.hidden[k] * tr.hidden[k]);
        }
        for (size_t i = 0; i < model.h; ++i) {
            db1[i] += g_pre[i];
            for (size_t k = 0; k < in; ++k) dw1.at(i, k) += g_pre[i] * tr.x[k];
        }
    }

    Gradients g;
    if (mode == GradMode::BaseParams) {
        g.layer1 = Tensor::zeros({model.h, in});
        g.layer2 = Tensor::zeros({model.d, model.h});
        g.bias1 = Tensor::zeros({model.h});
        g.bias2 = Tensor::zeros({model.d});
        for (size_t i = 0; i < dw1.v.size(); ++i) g.layer1.data[i] = static_cast<float>(dw1.v[i]);
        for (size_t i = 0; i < dw2.v.size(); ++i) g.layer2.data[i] = static_cast<float>(dw2.v[i]);
        for (size_t i = 0; i < model.h; ++i) g.bias1.data[i] = static_cast<float>(db1[i]);
        for (size_t i = 0; i < model.d; ++i) g.bias2.data[i] = static_cast<float>(db2[i]);
        return g;
    }

    // dB = w * dW * A^T, dA = w * B^T * dW
    for (const auto& [hook, delta] : adapter->deltas) {
        const detail::DMat& dw = (hook == "layer1") ? dw1 : dw2;
        const detail::DMat b = detail::to_dmat(delta.up), a = detail::to_dmat(delta.down);
        const double s = adapter->weight_scale;
        LoraDelta fg;
        fg.up = Tensor::zeros(delta.up.shape);
        fg.down = Tensor::zeros(delta.down.shape);
        for (size_t i = 0; i < b.rows; ++i)
            for (size_t r = 0; r < b.cols; ++r) {
                double acc = 0.0;
                for (size_t j = 0; j < a.cols; ++j) acc += dw.at(i, j) * a.at(r, j);
                fg.up.data[i * b.cols + r] = static_cast<float>(s * acc);
            }
        for (size_t r = 0; r < a.rows; ++r)
            for (size_t j = 0; j < a.cols; ++j) {
                double acc = 0.0;
                for (size_t i = 0; i < b.rows; ++i) acc += b.at(i, r) * dw.at(i, j);
                fg.down.data[r * a.cols + j] = static_cast<float>(s * acc);
            }
        g.factors[hook] = std::move(fg);
    }
    return g;
}

struct TrainResult {
    DenoiserModel model;
    std::vector<double> epoch_losses;
};

namespace detail {

inline void sgd_update(Tensor& param, Tensor& vel, const Tensor& grad, double lr, double momentum) {
    if (vel.data.empty()) vel = Tensor::zeros(param.shape);
    for (size_t i = 0; i < param.data.size(); ++i) {
        vel.data[i] = static_cast<float>(momentum * vel.data[i] - lr * grad.data[i]);
        param.data[i] += vel.data[i];
    }
}

}  // namespace detail

// Gradient descent on the base parameters over the full dataset, rng-driven
// minibatches, deterministic given config.seed.
inline TrainResult train_base(const std::vector<Sample>& dataset, const TrainConfig& config,
                              const NoiseSchedule& sched, size_t d, size_t h, size_t d_t,
                              size_t d_c) {
    config.validate();
    if (dataset.empty()) throw DomainError("train_base: empty dataset");
    Rng rng(config.seed);

    DenoiserModel model = DenoiserModel::zeros(d, h, d_t, d_c);
    const float s1 = 1.0f / std::sqrt(static_cast<float>(model.input_dim()));
    const float s2 = 1.0f / std::sqrt(static_cast<float>(h));
    model.layer1 = Tensor::gaussian(model.layer1.shape, rng, s1);
    model.layer2 = Tensor::gaussian(model.layer2.shape, rng, s2);

    Tensor v_w1, v_b1, v_w2, v_b2;
    TrainResult result;
    const size_t batches = (dataset.size() + config.batch_size - 1) / config.batch_size;
    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (size_t b = 0; b < batches; ++b) {
            std::vector<Sample> batch;
            for (size_t i = 0; i < config.batch_size; ++i)
                batch.push_back(dataset[rng.next_range(0, dataset.size() - 1)]);
            const auto noised = make_noised_batch(batch, sched, rng, config.cond_drop_prob);
            epoch_loss += loss_on_noised(model, nullptr, noised, sched);
            const Gradients g =
                param_gradients(model, nullptr, noised, sched, GradMode::BaseParams);
            detail::sgd_update(model.layer1, v_w1, g.layer1, config.learning_rate, config.momentum);
            detail::sgd_update(model.bias1, v_b1, g.bias1, config.learning_rate, config.momentum);
            detail::sgd_update(model.layer2, v_w2, g.layer2, config.learning_rate, config.momentum);
            detail::sgd_update(model.bias2, v_b2, g.bias2, config.learning_rate, config.momentum);
        }
        epoch_loss /= static_cast<double>(batches);
        if (!std::isfinite(epoch_loss)) throw TrainingError("base training diverged");
        result.epoch_losses.push_back(epoch_loss);
    }
    result.model = std::move(model);
    return result;
}

struct LoraTrainResult {
    LoraAdapter adapter;
    std::vector<double> epoch_losses;
};

// Fits only the low-rank factors against a frozen base. B starts at zero and
// A at a small Gaussian, so the fresh adapter is an exact no-op.
inline LoraTrainResult train_lora(const DenoiserModel& base, const std::vector<Sample>& dataset,
                                  const TrainConfig& config, const NoiseSchedule& sched,
                                  const std::string& name, Category category,
                                  const std::string& trigger, float weight_scale = 0.8f) {
    config.validate();
    if (dataset.empty()) throw DomainError("train_lora: empty dataset");
    Rng rng(config.seed);

    LoraAdapter adapter;
    adapter.name = name;
    adapter.category = category;
    adapter.trigger_phrase = trigger;
    adapter.rank = config.rank;
    adapter.weight_scale = weight_scale;
    adapter.deltas["layer1"] = {Tensor::zeros({base.h, config.rank}),
                                Tensor::gaussian({config.rank, base.input_dim()}, rng, 0.01f)};
    adapter.deltas["layer2"] = {Tensor::zeros({base.d, config.rank}),
                                Tensor::gaussian({config.rank, base.h}, rng, 0.01f)};
    adapter.validate();

    std::map<std::string, LoraDelta> vel;
    LoraTrainResult result;
    const size_t batches = (dataset.size() + config.batch_size - 1) / config.batch_size;
    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (size_t b = 0; b < batches; ++b) {
            std::vector<Sample> batch;
            for (size_t i = 0; i < config.batch_size; ++i)
                batch.push_back(dataset[rng.next_range(0, dataset.size() - 1)]);
            const auto noised = make_noised_batch(batch, sched, rng, config.cond_drop_prob);
            epoch_loss += loss_on_noised(base, &adapter, noised, sched);
            const Gradients g =
                param_gradients(base, &adapter, noised, sched, GradMode::AdapterFactors);
            for (auto& [hook, fg] : g.factors) {
                detail::sgd_update(adapter.deltas[hook].up, vel[hook].up, fg.up,
                                   config.learning_rate, config.momentum);
                detail::sgd_update(adapter.deltas[hook].down, vel[hook].down, fg.down,
                                   config.learning_rate, config.momentum);
            }
        }
        epoch_loss /= static_cast<double>(batches);
        if (!std::isfinite(epoch_loss)) throw TrainingError("adapter training diverged");
        result.epoch_losses.push_back(epoch_loss);
    }
    result.adapter = std::move(adapter);
    return result;
}

}  // namespace lcomp
