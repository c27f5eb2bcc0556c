#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "lcomp/errors.hpp"
#include "lcomp/hash.hpp"
#include "lcomp/judge.hpp"
#include "lcomp/png.hpp"
#include "lcomp/tensor.hpp"

namespace lcomp {

namespace detail {

inline std::string base64_encode(const std::string& in) {
    static const char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 3 <= in.size()) {
        const uint32_t v = (static_cast<uint8_t>(in[i]) << 16) |
                           (static_cast<uint8_t>(in[i + 1]) << 8) |
                           static_cast<uint8_t>(in[i + 2]);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back(tbl[v & 63]);
        i += 3;
    }
    const size_t rem = in.size() - i;
    if (rem == 1) {
        const uint32_t v = static_cast<uint8_t>(in[i]) << 16;
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out += "==";
    } else if (rem == 2) {
        const uint32_t v =
            (static_cast<uint8_t>(in[i]) << 16) | (static_cast<uint8_t>(in[i + 1]) << 8);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out += "=";
    }
    return out;
}

}  // namespace detail

struct JudgeClientConfig {
    std::string base_url = "http://localhost:8080";
    std::string path = "/v1/judge";
    std::string model = "gpt-4-vision-preview";
    std::string api_key_env = "LCOMP_JUDGE_API_KEY";
    std::string cache_path;  // empty disables caching
    int retries = 2;
};

// Chat-style HTTP judge. Every query and raw response is appended to a
// line-record cache keyed by content hash, so re-runs replay for free.
class HttpJudge : public Judge {
public:
    explicit HttpJudge(JudgeClientConfig config) : config_(std::move(config)) {
        if (!config_.cache_path.empty()) load_cache();
    }

    JudgeVerdict evaluate(const Tensor& first, const Tensor& second,
                          const std::vector<ElementFeature>& elements, uint64_t seed) override {
        const std::string prompt = build_judge_prompt(elements);
        const std::string png1 = encode_png_gray(first, kCanvas, kCanvas);
        const std::string png2 = encode_png_gray(second, kCanvas, kCanvas);
        const std::string key =
            fnv1a64_hex(prompt + "\x1f" + png1 + "\x1f" + png2 + "\x1f" +
                                 std::to_string(seed) + "\x1f" + config_.model);

        if (auto it = cache_.find(key); it != cache_.end()) {
            JudgeVerdict v = parse_verdict(it->second);
            v.validate();
            return v;
        }

        nlohmann::json body = {
            {"model", config_.model},
            {"seed", seed},
            {"prompt", prompt},
            {"images",
             nlohmann::json::array({{{"format", "png"}, {"data", detail::base64_encode(png1)}},
                                    {{"format", "png"}, {"data", detail::base64_encode(png2)}}})}};

        const std::string raw = post_with_retries(body.dump());
        JudgeVerdict v = parse_verdict(raw);
        v.validate();
        append_cache(key, prompt, raw, v);
        cache_[key] = raw;
        return v;
    }

    size_t network_calls() const { return network_calls_; }

private:
    std::string post_with_retries(const std::string& body) {
        httplib::Client cli(config_.base_url);
        cli.set_read_timeout(120, 0);
        httplib::Headers headers;
        if (const char* key = std::getenv(config_.api_key_env.c_str()))
            headers.emplace("Authorization", std::string("Bearer ") + key);
        std::string last_error;
        for (int attempt = 0; attempt <= config_.retries; ++attempt) {
            auto res = cli.Post(config_.path, headers, body, "application/json");
            ++network_calls_;
            if (res && res->status == 200) {
                // accept either a raw text body or {"text": ...}
                try {
                    const auto j = nlohmann::json::parse(res->body);
                    if (j.is_object() && j.contains("text")) return j["text"].get<std::string>();
                } catch (const nlohmann::json::exception&) {
                }
                return res->body;
            }
            last_error = res ? "HTTP " + std::to_string(res->status)
                             : "transport: " + httplib::to_string(res.error());
        }
        throw QueryError("judge query failed after retries: " + last_error);
    }

    void load_cache() {
        std::ifstream f(config_.cache_path);
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                cache_[j.at("hash").get<std::string>()] = j.at("raw_response").get<std::string>();
            } catch (const nlohmann::json::exception&) {
                // skip corrupt lines; the cache is advisory
            }
        }
    }

    void append_cache(const std::string& key, const std::string& prompt, const std::string& raw,
                      const JudgeVerdict& v) {
        if (config_.cache_path.empty()) return;
        nlohmann::json rec = {{"hash", key},
                              {"prompt", prompt},
                              {"model", config_.model},
                              {"raw_response", raw},
                              {"parsed",
                               {{"comp1", v.comp1},
                                {"img1", v.img1},
                                {"comp2", v.comp2},
                                {"img2", v.img2}}}};
        std::ofstream f(config_.cache_path, std::ios::app);
        f << rec.dump() << "\n";
    }

    JudgeClientConfig config_;
    std::map<std::string, std::string> cache_;
    size_t network_calls_ = 0;
};

}  // namespace lcomp
