#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lcomp/container.hpp"
#include "lcomp/errors.hpp"
#include "lcomp/tensor.hpp"

namespace lcomp {

// Two-layer noise predictor. Both weight matrices are hook points for
// low-rank deltas:
//   hidden = tanh((W1 + D1) * concat(z_t, time_emb, cond) + b1)
//   out    = (W2 + D2) * hidden + b2
struct DenoiserModel {
    size_t d = 256;   // flattened image size
    size_t h = 128;   // hidden width
    size_t d_t = 8;   // time embedding size
    size_t d_c = 0;   // condition vocabulary size

    Tensor layer1;  // h x (d + d_t + d_c)
    Tensor bias1;   // h
    Tensor layer2;  // d x h
    Tensor bias2;   // d

    size_t input_dim() const { return d + d_t + d_c; }

    static DenoiserModel zeros(size_t d, size_t h, size_t d_t, size_t d_c) {
        DenoiserModel m;
        m.d = d;
        m.h = h;
        m.d_t = d_t;
        m.d_c = d_c;
        m.layer1 = Tensor::zeros({h, m.input_dim()});
        m.bias1 = Tensor::zeros({h});
        m.layer2 = Tensor::zeros({d, h});
        m.bias2 = Tensor::zeros({d});
        return m;
    }

    const Tensor& hook(const std::string& name) const {
        if (name == "layer1") return layer1;
        if (name == "layer2") return layer2;
        throw DomainError("unknown hook point: " + name);
    }

    std::vector<std::string> hook_names() const { return {"layer1", "layer2"}; }
};

// Sinusoidal embedding at geometrically spaced frequencies.
inline Tensor embed_time(size_t t, size_t T, size_t d_t) {
    if (t > T) throw DomainError("embed_time: t out of range");
    if (d_t % 2 != 0) throw DomainError("embed_time: d_t must be even");
    Tensor e = Tensor::zeros({d_t});
    const size_t half = d_t / 2;
    for (size_t j = 0; j < half; ++j) {
        const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(half));
        e.data[2 * j] = static_cast<float>(std::sin(static_cast<double>(t) * freq));
        e.data[2 * j + 1] = static_cast<float>(std::cos(static_cast<double>(t) * freq));
    }
    return e;
}

// Multi-hot over the trigger vocabulary; empty list is the null condition.
inline Tensor embed_condition(const std::vector<std::string>& triggers,
                              const std::vector<std::string>& vocab) {
    Tensor c = Tensor::zeros({vocab.size()});
    for (const auto& trig : triggers) {
        bool found = false;
        for (size_t i = 0; i < vocab.size(); ++i) {
            if (vocab[i] == trig) {
                c.data[i] = 1.0f;
                found = true;
                break;
            }
        }
        if (!found) throw DomainError("trigger not in vocabulary: " + trig);
    }
    return c;
}

using Overlays = std::map<std::string, Tensor>;  // hook -> materialized delta

// Effective weights are materialized as W + delta before the product, so a
// run with overlays and a run on pre-merged weights follow the same
// arithmetic path.
inline Tensor forward(const DenoiserModel& model, const Overlays& overlays, const Tensor& z_t,
                      size_t t, size_t T, const Tensor& cond) {
    if (z_t.numel() != model.d)
        throw ShapeError("forward: z_t size " + std::to_string(z_t.numel()) +
                         " != model d " + std::to_string(model.d));
    if (cond.numel() != model.d_c)
        throw ShapeError("forward: condition size mismatch");

    auto effective = [&](const std::string& hook, const Tensor& base) -> Tensor {
        auto it = overlays.find(hook);
        if (it == overlays.end()) return base;
        if (!it->second.same_shape(base))
            throw ShapeError("forward: overlay shape mismatch on " + hook);
        return add(base, it->second);
    };

    const Tensor time_emb = embed_time(t, T, model.d_t);
    Tensor x = Tensor::zeros({model.input_dim()});
    std::copy(z_t.data.begin(), z_t.data.end(), x.data.begin());
    std::copy(time_emb.data.begin(), time_emb.data.end(), x.data.begin() + model.d);
    std::copy(cond.data.begin(), cond.data.end(), x.data.begin() + model.d + model.d_t);

    const Tensor w1 = effective("layer1", model.layer1);
    const Tensor w2 = effective("layer2", model.layer2);

    Tensor hidden = Tensor::zeros({model.h});
    for (size_t i = 0; i < model.h; ++i) {
        float acc = model.bias1.data[i];
        const float* row = &w1.data[i * model.input_dim()];
        for (size_t k = 0; k < model.input_dim(); ++k) acc += row[k] * x.data[k];
        hidden.data[i] = std::tanh(acc);
    }
    Tensor out = Tensor::zeros({model.d});
    for (size_t i = 0; i < model.d; ++i) {
        float acc = model.bias2.data[i];
        const float* row = &w2.data[i * model.h];
        for (size_t k = 0; k < model.h; ++k) acc += row[k] * hidden.data[k];
        out.data[i] = acc;
    }
    return out;
}

// ---- checkpoint I/O (same container format as adapters) ----

inline void write_model(const std::string& path, const DenoiserModel& m) {
    Container c;
    c.header["kind"] = "model";
    c.header["dims"] = {{"d", m.d}, {"h", m.h}, {"d_t", m.d_t}, {"d_c", m.d_c}};
    c.header["tensors"] = nlohmann::json::array();
    auto push = [&](const std::string& hook, const std::string& role, const Tensor& t) {
        c.header["tensors"].push_back({{"hook", hook}, {"role", role}, {"shape", t.shape}});
        c.payloads.push_back(t);
    };
    push("layer1", "weight", m.layer1);
    push("layer1", "bias", m.bias1);
    push("layer2", "weight", m.layer2);
    push("layer2", "bias", m.bias2);
    write_container(path, c);
}

inline DenoiserModel read_model(const std::string& path) {
    Container c = read_container(path);
    if (c.header.value("kind", "") != "model")
        throw ValidationError("container is not a model checkpoint");
    DenoiserModel m;
    m.d = c.header.at("dims").at("d").get<size_t>();
    m.h = c.header.at("dims").at("h").get<size_t>();
    m.d_t = c.header.at("dims").at("d_t").get<size_t>();
    m.d_c = c.header.at("dims").at("d_c").get<size_t>();
    for (size_t i = 0; i < c.payloads.size(); ++i) {
        const auto& entry = c.header["tensors"][i];
        const std::string hook = entry.at("hook").get<std::string>();
        const std::string role = entry.at("role").get<std::string>();
        Tensor& dst = (hook == "layer1") ? (role == "weight" ? m.layer1 : m.bias1)
                                         : (role == "weight" ? m.layer2 : m.bias2);
        dst = c.payloads[i];
    }
    if (m.layer1.shape != std::vector<size_t>{m.h, m.input_dim()} ||
        m.layer2.shape != std::vector<size_t>{m.d, m.h})
        throw ValidationError("model checkpoint shapes inconsistent with dims record");
    return m;
}

}  // namespace lcomp
