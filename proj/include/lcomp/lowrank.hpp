#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lcomp/errors.hpp"
#include "lcomp/tensor.hpp"

namespace lcomp {

enum class Category { Character, Clothing, Style, Background, Object };

inline const char* category_name(Category c) {
    switch (c) {
        case Category::Character: return "Character";
        case Category::Clothing: return "Clothing";
        case Category::Style: return "Style";
        case Category::Background: return "Background";
        case Category::Object: return "Object";
    }
    return "?";
}

inline Category category_from_name(const std::string& s) {
    if (s == "Character") return Category::Character;
    if (s == "Clothing") return Category::Clothing;
    if (s == "Style") return Category::Style;
    if (s == "Background") return Category::Background;
    if (s == "Object") return Category::Object;
    throw ValidationError("unknown category: " + s);
}

// Canonical prompt/activation ordering: Character, Clothing, Style,
// Background, Object.
inline int category_rank(Category c) { return static_cast<int>(c); }

struct LoraDelta {
    Tensor up;    // B: n x r
    Tensor down;  // A: r x m
};

// Named low-rank delta set. Immutable after construction by convention.
struct LoraAdapter {
    std::string name;
    Category category = Category::Character;
    std::string trigger_phrase;
    size_t rank = 1;
    float weight_scale = 0.8f;  // default per common practice in this setup
    std::map<std::string, LoraDelta> deltas;

    void validate() const {
        if (weight_scale < 0.0f)
            throw ValidationError("adapter " + name + ": weight_scale must be >= 0");
        if (rank == 0) throw ValidationError("adapter " + name + ": rank must be positive");
        for (const auto& [hook, d] : deltas) {
            if (!d.up.is_matrix() || !d.down.is_matrix())
                throw ValidationError("adapter " + name + " hook " + hook + ": factors must be matrices");
            if (d.up.cols() != rank || d.down.rows() != rank)
                throw ValidationError("adapter " + name + " hook " + hook +
                                      ": factor inner dims do not match rank " + std::to_string(rank));
            if (rank > std::min(d.up.rows(), d.down.cols()))
                throw ValidationError("adapter " + name + " hook " + hook + ": rank exceeds min(n, m)");
            if (!d.up.finite() || !d.down.finite())
                throw ValidationError("adapter " + name + " hook " + hook + ": non-finite factor entries");
        }
    }
};

// w * B * A for one hook point.
inline Tensor delta_matrix(const LoraAdapter& adapter, const std::string& hook,
                           std::optional<float> scale_override = std::nullopt) {
    auto it = adapter.deltas.find(hook);
    if (it == adapter.deltas.end())
        throw DomainError("adapter " + adapter.name + " has no hook point '" + hook + "'");
    const float w = scale_override.value_or(adapter.weight_scale);
    return scale(matmul(it->second.up, it->second.down), w);
}

// base + sum_i w_i * B_i * A_i, accumulated in list order.
inline Tensor merge_weights(const Tensor& base, const std::vector<LoraAdapter>& adapters,
                            const std::string& hook) {
    Tensor out = base;
    for (const auto& a : adapters) {
        Tensor d = delta_matrix(a, hook);
        if (!d.same_shape(base))
            throw ShapeError("merge_weights: delta shape " + shape_str(d) +
                             " does not match base " + shape_str(base));
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += d.data[i];
    }
    return out;
}

}  // namespace lcomp
