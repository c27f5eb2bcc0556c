#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcomp/errors.hpp"
#include "lcomp/lowrank.hpp"
#include "lcomp/rng.hpp"
#include "lcomp/tensor.hpp"

namespace lcomp {

constexpr size_t kCanvas = 16;  // 16x16 grayscale, d = 256

enum class StyleSubset { Realistic, Anime };

inline const char* style_subset_name(StyleSubset s) {
    return s == StyleSubset::Realistic ? "realistic" : "anime";
}

inline StyleSubset style_subset_from_name(const std::string& s) {
    if (s == "realistic") return StyleSubset::Realistic;
    if (s == "anime") return StyleSubset::Anime;
    throw ValidationError("unknown style subset: " + s);
}

// Half-open pixel rectangle.
struct Region {
    size_t r0, r1, c0, c1;
    size_t area() const { return (r1 - r0) * (c1 - c0); }
};

// Each non-style category owns a disjoint canvas region; style acts as a
// global intensity transform applied after compositing.
inline Region category_region(Category c) {
    switch (c) {
        case Category::Character: return {5, 11, 5, 11};    // center glyph
        case Category::Clothing: return {12, 16, 2, 14};    // bottom band
        case Category::Background: return {0, 4, 0, 4};     // corner texture
        case Category::Object: return {2, 7, 11, 15};       // off-center glyph
        case Category::Style: throw DomainError("style elements have no region");
    }
    throw DomainError("bad category");
}

struct ElementSpec {
    std::string id;
    Category category = Category::Character;
    std::string trigger_phrase;
    StyleSubset style_subset = StyleSubset::Realistic;
    int template_id = 0;
};

// Template over the element's region: an indicator sub-block, chosen so
// templates of the same category are disjoint and therefore negatively
// correlated. Values are 0/1 over the full region.
inline std::vector<float> element_template(const ElementSpec& e) {
    const Region rg = category_region(e.category);
    const size_t rows = rg.r1 - rg.r0, cols = rg.c1 - rg.c0;
    std::vector<float> tpl(rows * cols, 0.0f);
    // split the region into horizontal bands, one per template id
    const int bands = (e.category == Category::Character) ? 3 : 2;
    const size_t band_h = rows / bands;
    const size_t b0 = static_cast<size_t>(e.template_id) * band_h;
    const size_t b1 = (e.template_id == bands - 1) ? rows : b0 + band_h;
    for (size_t r = b0; r < b1; ++r)
        for (size_t c = 0; c < cols; ++c) tpl[r * cols + c] = 1.0f;
    return tpl;
}

// Style transforms: brighten-compress vs darken.
inline float apply_style(int template_id, float v) {
    return template_id == 0 ? 0.5f + 0.5f * v : 0.5f * v;
}

inline double style_target_mean(int template_id) { return template_id == 0 ? 0.75 : 0.25; }

struct Catalog {
    std::vector<ElementSpec> elements;  // 22 total, fixed construction order

    const ElementSpec& find(const std::string& id) const {
        for (const auto& e : elements)
            if (e.id == id) return e;
        throw DomainError("unknown element id: " + id);
    }

    std::vector<const ElementSpec*> subset(StyleSubset s) const {
        std::vector<const ElementSpec*> out;
        for (const auto& e : elements)
            if (e.style_subset == s) out.push_back(&e);
        return out;
    }

    // Trigger vocabulary in catalog order.
    std::vector<std::string> vocab() const {
        std::vector<std::string> v;
        for (const auto& e : elements) v.push_back(e.trigger_phrase);
        return v;
    }
};

inline Catalog build_catalog() {
    Catalog cat;
    struct Row {
        Category category;
        int count;
        const char* realistic_triggers[3];
        const char* anime_triggers[3];
    };
    const Row rows[] = {
        {Category::Character, 3,
         {"captain aria", "old fisherman", "street dancer"},
         {"moon princess", "shadow ninja", "robot kid"}},
        {Category::Clothing, 2,
         {"leather jacket", "summer dress"},
         {"school uniform", "battle armor"}},
        {Category::Style, 2,
         {"film photo look", "noir lighting"},
         {"cel shaded look", "ink wash look"}},
        {Category::Background, 2,
         {"harbor at dawn", "forest clearing"},
         {"neon city", "floating islands"}},
        {Category::Object, 2,
         {"red umbrella", "brass telescope"},
         {"magic lantern", "mecha sword"}},
    };
    for (StyleSubset s : {StyleSubset::Realistic, StyleSubset::Anime}) {
        const std::string prefix = style_subset_name(s);
        for (const auto& row : rows) {
            for (int i = 0; i < row.count; ++i) {
                ElementSpec e;
                e.category = row.category;
                e.style_subset = s;
                e.template_id = i;
                e.trigger_phrase = (s == StyleSubset::Realistic) ? row.realistic_triggers[i]
                                                                 : row.anime_triggers[i];
                std::string catname = category_name(row.category);
                std::transform(catname.begin(), catname.end(), catname.begin(), ::tolower);
                e.id = prefix + "-" + catname + "-" + std::to_string(i);
                cat.elements.push_back(std::move(e));
            }
        }
    }
    return cat;
}

struct CompositionSet {
    StyleSubset style_subset = StyleSubset::Realistic;
    std::vector<std::string> element_ids;

    std::string id() const {
        std::string s = style_subset_name(style_subset);
        for (const auto& e : element_ids) s += "+" + e;
        return s;
    }

    void validate(const Catalog& cat) const {
        int chars = 0;
        std::vector<bool> seen_cat(5, false);
        for (const auto& id : element_ids) {
            const ElementSpec& e = cat.find(id);
            if (e.style_subset != style_subset)
                throw ValidationError("set mixes style subsets: " + id);
            const int cr = category_rank(e.category);
            if (seen_cat[cr]) throw ValidationError("duplicate category in set");
            seen_cat[cr] = true;
            if (e.category == Category::Character) ++chars;
        }
        if (chars != 1) throw ValidationError("set must contain exactly one character");
    }
};

// All sets with one character plus (k-1) further categories, one element per
// category, per style subset; deterministic lexicographic order. Counts
// follow 2 * 3 * C(4, k-1) * 2^(k-1).
inline std::vector<CompositionSet> enumerate_sets(const Catalog& cat, size_t k) {
    if (k < 2 || k > 5) throw DomainError("enumerate_sets: k must be in 2..5");
    const Category extra[] = {Category::Clothing, Category::Style, Category::Background,
                              Category::Object};
    std::vector<CompositionSet> out;
    for (StyleSubset s : {StyleSubset::Realistic, StyleSubset::Anime}) {
        std::vector<const ElementSpec*> by_cat[5];
        for (const ElementSpec* e : cat.subset(s)) by_cat[category_rank(e->category)].push_back(e);

        // choose k-1 of the 4 extra categories via bitmask, ascending
        for (unsigned mask = 0; mask < 16; ++mask) {
            if (static_cast<size_t>(__builtin_popcount(mask)) != k - 1) continue;
            std::vector<Category> chosen;
            for (int b = 0; b < 4; ++b)
                if (mask & (1u << b)) chosen.push_back(extra[b]);

            for (const ElementSpec* ch : by_cat[category_rank(Category::Character)]) {
                std::vector<size_t> pick(chosen.size(), 0);
                bool done = false;
                while (!done) {
                    CompositionSet set;
                    set.style_subset = s;
                    set.element_ids.push_back(ch->id);
                    for (size_t i = 0; i < chosen.size(); ++i)
                        set.element_ids.push_back(by_cat[category_rank(chosen[i])][pick[i]]->id);
                    out.push_back(std::move(set));

                    // odometer over element choices
                    done = true;
                    for (size_t i = chosen.size(); i-- > 0;) {
                        if (++pick[i] < by_cat[category_rank(chosen[i])].size()) {
                            done = false;
                            break;
                        }
                        pick[i] = 0;
                    }
                }
            }
        }
    }
    return out;
}

// Trigger phrases in fixed category order (Character, Clothing, Style,
// Background, Object), independent of the stored element order.
inline std::vector<std::string> build_prompt(const Catalog& cat, const CompositionSet& set) {
    std::vector<const ElementSpec*> els;
    for (const auto& id : set.element_ids) els.push_back(&cat.find(id));
    std::stable_sort(els.begin(), els.end(), [](const ElementSpec* a, const ElementSpec* b) {
        return category_rank(a->category) < category_rank(b->category);
    });
    std::vector<std::string> prompt;
    for (const ElementSpec* e : els) prompt.push_back(e->trigger_phrase);
    return prompt;
}

// Composites each element's template into its category region over a seeded
// noise background; style transforms run last; values stay in [0, 1].
inline Tensor synth_image(const std::vector<const ElementSpec*>& elements, uint64_t seed) {
    std::vector<bool> seen_cat(5, false);
    for (const ElementSpec* e : elements) {
        const int cr = category_rank(e->category);
        if (seen_cat[cr]) throw DomainError("synth_image: overlapping categories");
        seen_cat[cr] = true;
    }
    Rng rng(seed);
    Tensor img = Tensor::zeros({kCanvas, kCanvas});
    for (auto& v : img.data) v = static_cast<float>(rng.next_double());

    for (const ElementSpec* e : elements) {
        if (e->category == Category::Style) continue;
        const Region rg = category_region(e->category);
        const std::vector<float> tpl = element_template(*e);
        const size_t cols = rg.c1 - rg.c0;
        for (size_t r = rg.r0; r < rg.r1; ++r)
            for (size_t c = rg.c0; c < rg.c1; ++c)
                img.data[r * kCanvas + c] = tpl[(r - rg.r0) * cols + (c - rg.c0)];
    }
    for (const ElementSpec* e : elements) {
        if (e->category != Category::Style) continue;
        for (auto& v : img.data) v = apply_style(e->template_id, v);
    }
    for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

// Normalized correlation between the image's category region and the
// element's template, mapped affinely to [0, 1]. Style elements compare the
// global mean against the transform's nominal target instead.
inline double detect_element(const Tensor& image, const ElementSpec& element) {
    if (image.numel() != kCanvas * kCanvas)
        throw ShapeError("detect_element: image must be " + std::to_string(kCanvas) + "x" +
                         std::to_string(kCanvas));

    if (element.category == Category::Style) {
        double mean = 0.0;
        for (float v : image.data) mean += v;
        mean /= static_cast<double>(image.numel());
        const double diff = std::abs(mean - style_target_mean(element.template_id));
        return std::clamp(1.0 - 4.0 * std::max(0.0, diff - 0.05), 0.0, 1.0);
    }

    const Region rg = category_region(element.category);
    const std::vector<float> tpl = element_template(element);
    const size_t cols = rg.c1 - rg.c0;
    std::vector<double> a, b;
    for (size_t r = rg.r0; r < rg.r1; ++r)
        for (size_t c = rg.c0; c < rg.c1; ++c) {
            a.push_back(image.data[r * kCanvas + c]);
            b.push_back(tpl[(r - rg.r0) * cols + (c - rg.c0)]);
        }
    const size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    const double corr = (va <= 0.0 || vb <= 0.0) ? 0.0 : cov / std::sqrt(va * vb);
    return (corr + 1.0) / 2.0;
}

// ---- JSON manifest ----

inline nlohmann::json catalog_to_json(const Catalog& cat) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : cat.elements)
        j.push_back({{"id", e.id},
                     {"category", category_name(e.category)},
                     {"trigger_phrase", e.trigger_phrase},
                     {"style_subset", style_subset_name(e.style_subset)},
                     {"template_id", e.template_id}});
    return j;
}

inline Catalog catalog_from_json(const nlohmann::json& j) {
    Catalog cat;
    for (const auto& item : j) {
        ElementSpec e;
        e.id = item.at("id").get<std::string>();
        e.category = category_from_name(item.at("category").get<std::string>());
        e.trigger_phrase = item.at("trigger_phrase").get<std::string>();
        e.style_subset = style_subset_from_name(item.at("style_subset").get<std::string>());
        e.template_id = item.at("template_id").get<int>();
        cat.elements.push_back(std::move(e));
    }
    return cat;
}

}  // namespace lcomp
