#pragma once

#include <cmath>
#include <cstdio>
#include <regex>
#include <string>
#include <vector>

#include "lcomp/errors.hpp"
#include "lcomp/tensor.hpp"
#include "lcomp/testbed.hpp"

namespace lcomp {

inline bool on_half_grid(double v) {
    return v >= 0.0 && v <= 10.0 && std::abs(v * 2.0 - std::round(v * 2.0)) < 1e-9;
}

// Parsed pairwise scores. "Image 1" is whichever image was passed first;
// order bookkeeping for debiasing lives in compare_pair_debiased.
struct JudgeVerdict {
    double comp1 = 0, img1 = 0, comp2 = 0, img2 = 0;
    std::string raw_text;

    void validate() const {
        for (double v : {comp1, img1, comp2, img2})
            if (!on_half_grid(v))
                throw ValidationError("score off the 0..10 half-point grid: " + std::to_string(v));
    }
};

struct ElementFeature {
    std::string label;     // e.g. "Character (Captain Aria)"
    std::string features;  // comma-separated feature phrases
};

// The comparative-evaluation rubric: element list, per-dimension deduction
// rules, and the fixed output format block the parser expects.
inline std::string build_judge_prompt(const std::vector<ElementFeature>& elements) {
    if (elements.empty()) throw DomainError("build_judge_prompt: empty element list");
    std::string p;
    p += "I need assistance in comparatively evaluating two text-to-image models based on "
         "their ability to compose different elements into a single image. The key elements are:\n";
    for (size_t i = 0; i < elements.size(); ++i)
        p += std::to_string(i + 1) + ". " + elements[i].label + ": " + elements[i].features + "\n";
    p += "\nPlease help me rate both given images on the following evaluation dimensions and "
         "criteria:\n\n";
    p += "Composition Quality:\n";
    p += "- Score on a scale of 0 to 10, in 0.5 increments, where 10 is the best and 0 is the "
         "worst.\n";
    p += "- Deduct 3 points if any element is missing or incorrectly depicted.\n";
    p += "- Deduct 1 point for each missing or incorrect feature within an element.\n";
    p += "- Deduct 1 point for minor inconsistencies or lack of harmony between elements.\n\n";
    p += "Image Quality:\n";
    p += "- Score on a scale of 0 to 10, in 0.5 increments, where 10 is the best and 0 is the "
         "worst.\n";
    p += "- Deduct 3 points for each deformity in the image.\n";
    p += "- Deduct 2 points for noticeable issues with texture, lighting, or color.\n";
    p += "- Deduct 1 point for each minor flaw or imperfection.\n\n";
    p += "Please format the evaluation as follows:\n\n";
    p += "For Image 1:\n[Explanation of evaluation]\n\n";
    p += "For Image 2:\n[Explanation of evaluation]\n\n";
    p += "Scores:\n";
    p += "Image 1: Composition Quality: [score]/10, Image Quality: [score]/10\n";
    p += "Image 2: Composition Quality: [score]/10, Image Quality: [score]/10\n";
    return p;
}

inline std::string format_verdict(const JudgeVerdict& v) {
    auto num = [](double x) {
        char buf[16];
        if (std::abs(x - std::round(x)) < 1e-9)
            std::snprintf(buf, sizeof(buf), "%d", static_cast<int>(std::round(x)));
        else
            std::snprintf(buf, sizeof(buf), "%.1f", x);
        return std::string(buf);
    };
    return "Scores:\nImage 1: Composition Quality: " + num(v.comp1) + "/10, Image Quality: " +
           num(v.img1) + "/10\nImage 2: Composition Quality: " + num(v.comp2) +
           "/10, Image Quality: " + num(v.img2) + "/10\n";
}

// Extracts the four scores from the final "Scores:" block.
inline JudgeVerdict parse_verdict(const std::string& text) {
    size_t count = 0, pos = 0, last = std::string::npos;
    while ((pos = text.find("Scores:", pos)) != std::string::npos) {
        ++count;
        last = pos;
        pos += 7;
    }
    if (count == 0) throw ParseError("no Scores block in judge response", text);
    if (count > 1) throw ParseError("duplicate Scores blocks in judge response", text);

    const std::string block = text.substr(last);
    static const std::regex line_re(
        R"(Image\s+([12])\s*:\s*Composition Quality:\s*([0-9]+(?:\.[05])?)\s*/\s*10\s*,\s*Image Quality:\s*([0-9]+(?:\.[05])?)\s*/\s*10)");
    JudgeVerdict v;
    v.raw_text = text;
    bool got1 = false, got2 = false;
    for (std::sregex_iterator it(block.begin(), block.end(), line_re), end; it != end; ++it) {
        const bool first = (*it)[1].str() == "1";
        const double comp = std::stod((*it)[2].str());
        const double img = std::stod((*it)[3].str());
        if (first) {
            if (got1) throw ParseError("duplicate Image 1 score line", text);
            v.comp1 = comp;
            v.img1 = img;
            got1 = true;
        } else {
            if (got2) throw ParseError("duplicate Image 2 score line", text);
            v.comp2 = comp;
            v.img2 = img;
            got2 = true;
        }
    }
    if (!got1 || !got2) throw ParseError("Scores block lacks both image score lines", text);
    v.validate();
    return v;
}

// Judge abstraction: scores (first, second) image pairs. Implementations may
// be order-biased; the debiasing protocol averages that away.
class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeVerdict evaluate(const Tensor& first, const Tensor& second,
                                  const std::vector<ElementFeature>& elements, uint64_t seed) = 0;
};

enum class Outcome { Win, Tie, Lose };

inline const char* outcome_name(Outcome o) {
    return o == Outcome::Win ? "win" : (o == Outcome::Tie ? "tie" : "lose");
}

struct PairResult {
    double mean_a_comp = 0, mean_a_img = 0, mean_b_comp = 0, mean_b_img = 0;
    Outcome comp = Outcome::Tie;
    Outcome img = Outcome::Tie;
};

inline Outcome outcome_of(double a, double b) {
    if (a > b) return Outcome::Win;
    if (a < b) return Outcome::Lose;
    return Outcome::Tie;
}

// Queries the judge in both input orders per seed, maps scores back to
// methods, and averages over orders and seeds. An additive positional bias
// contributes equally to both methods and cancels in the averages.
inline PairResult compare_pair_debiased(Judge& judge, const Tensor& image_a, const Tensor& image_b,
                                        const std::vector<ElementFeature>& elements,
                                        const std::vector<uint64_t>& seeds) {
    if (seeds.empty()) throw DomainError("compare_pair_debiased: need at least one seed");
    double a_comp = 0, a_img = 0, b_comp = 0, b_img = 0;
    for (uint64_t seed : seeds) {
        const JudgeVerdict ab = judge.evaluate(image_a, image_b, elements, seed);
        const JudgeVerdict ba = judge.evaluate(image_b, image_a, elements, seed);
        a_comp += ab.comp1 + ba.comp2;
        a_img += ab.img1 + ba.img2;
        b_comp += ab.comp2 + ba.comp1;
        b_img += ab.img2 + ba.img1;
    }
    const double n = 2.0 * static_cast<double>(seeds.size());
    PairResult r;
    r.mean_a_comp = a_comp / n;
    r.mean_a_img = a_img / n;
    r.mean_b_comp = b_comp / n;
    r.mean_b_img = b_img / n;
    r.comp = outcome_of(r.mean_a_comp, r.mean_b_comp);
    r.img = outcome_of(r.mean_a_img, r.mean_b_img);
    return r;
}

// Deterministic detector-based scorer mirroring the rubric's deduction
// structure: 3 points per missing element, quality deduction scaled by the
// fraction of out-of-range pixels.
inline std::pair<double, double> offline_judge(const Tensor& image, const CompositionSet& set,
                                               const Catalog& cat,
                                               double present_threshold = 0.8) {
    int missing = 0;
    for (const auto& id : set.element_ids)
        if (detect_element(image, cat.find(id)) < present_threshold) ++missing;
    const double comp = std::clamp(10.0 - 3.0 * missing, 0.0, 10.0);

    size_t outside = 0;
    for (float v : image.data)
        if (v < 0.0f || v > 1.0f) ++outside;
    const double frac = static_cast<double>(outside) / static_cast<double>(image.numel());
    double img = std::clamp(10.0 - 2.0 * (10.0 * frac), 0.0, 10.0);
    img = std::round(img * 2.0) / 2.0;  // snap to the verdict grid
    return {comp, img};
}

class OfflineJudge : public Judge {
public:
    OfflineJudge(CompositionSet set, const Catalog& cat) : set_(std::move(set)), cat_(cat) {}

    JudgeVerdict evaluate(const Tensor& first, const Tensor& second,
                          const std::vector<ElementFeature>&, uint64_t) override {
        JudgeVerdict v;
        std::tie(v.comp1, v.img1) = offline_judge(first, set_, cat_);
        std::tie(v.comp2, v.img2) = offline_judge(second, set_, cat_);
        v.raw_text = format_verdict(v);
        v.validate();
        return v;
    }

private:
    CompositionSet set_;
    const Catalog& cat_;
};

struct AggregateRow {
    double win_pct = 0, tie_pct = 0, lose_pct = 0;
    double mean_a = 0, mean_b = 0;
};

struct Aggregate {
    AggregateRow comp, img;
    size_t count = 0;
};

inline Aggregate aggregate(const std::vector<PairResult>& results) {
    if (results.empty()) throw DomainError("aggregate: empty result list");
    Aggregate agg;
    agg.count = results.size();
    const double n = static_cast<double>(results.size());
    auto tally = [&](AggregateRow& row, auto outcome_of_r, auto a_of_r, auto b_of_r) {
        size_t w = 0, t = 0, l = 0;
        for (const auto& r : results) {
            const Outcome o = outcome_of_r(r);
            (o == Outcome::Win ? w : o == Outcome::Tie ? t : l) += 1;
            row.mean_a += a_of_r(r);
            row.mean_b += b_of_r(r);
        }
        row.win_pct = 100.0 * w / n;
        row.tie_pct = 100.0 * t / n;
        row.lose_pct = 100.0 * l / n;
        row.mean_a /= n;
        row.mean_b /= n;
    };
    tally(agg.comp, [](const PairResult& r) { return r.comp; },
          [](const PairResult& r) { return r.mean_a_comp; },
          [](const PairResult& r) { return r.mean_b_comp; });
    tally(agg.img, [](const PairResult& r) { return r.img; },
          [](const PairResult& r) { return r.mean_a_img; },
          [](const PairResult& r) { return r.mean_b_img; });
    return agg;
}

// Sample Pearson correlation coefficient, two-pass centered sums.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw DomainError("pearson: need equal lengths >= 2");
    const size_t n = x.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double cov = 0, vx = 0, vy = 0;
    for (size_t i = 0; i < n; ++i) {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
    }
    if (vx <= 0.0 || vy <= 0.0) throw DomainError("pearson: zero variance input");
    return cov / std::sqrt(vx * vy);
}

}  // namespace lcomp
