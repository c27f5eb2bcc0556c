#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcomp/errors.hpp"
#include "lcomp/lowrank.hpp"
#include "lcomp/tensor.hpp"

namespace lcomp {

// Single-file tensor container:
//   magic "LCMP" | version u16 LE | header length u32 LE | UTF-8 JSON header
//   | raw little-endian f32 payloads in header table order, no padding.
// The header's "tensors" array lists {hook, role, shape} per payload.
constexpr char kContainerMagic[4] = {'L', 'C', 'M', 'P'};
constexpr uint16_t kContainerVersion = 1;

struct Container {
    nlohmann::json header;
    std::vector<Tensor> payloads;  // in header table order
};

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint16_t get_u16(const std::string& s, size_t off) {
    return static_cast<uint16_t>(static_cast<uint8_t>(s[off])) |
           (static_cast<uint16_t>(static_cast<uint8_t>(s[off + 1])) << 8);
}

inline uint32_t get_u32(const std::string& s, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<uint8_t>(s[off + i])) << (8 * i);
    return v;
}

}  // namespace detail

inline std::string encode_container(const Container& c) {
    if (!c.header.contains("tensors") || !c.header["tensors"].is_array() ||
        c.header["tensors"].size() != c.payloads.size())
        throw ValidationError("container header tensor table does not match payload count");

    std::string out;
    out.append(kContainerMagic, 4);
    detail::put_u16(out, kContainerVersion);
    const std::string header = c.header.dump();
    detail::put_u32(out, static_cast<uint32_t>(header.size()));
    out += header;
    for (size_t i = 0; i < c.payloads.size(); ++i) {
        const Tensor& t = c.payloads[i];
        const auto& entry = c.header["tensors"][i];
        std::vector<size_t> declared = entry["shape"].get<std::vector<size_t>>();
        if (declared != t.shape)
            throw ValidationError("container tensor " + std::to_string(i) +
                                  " shape does not match header table");
        // Assumes little-endian host; holds for every supported target.
        static_assert(sizeof(float) == 4);
        out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 4);
    }
    return out;
}

inline Container decode_container(const std::string& bytes) {
    if (bytes.size() < 10)
        throw FormatError("container truncated before header", bytes.size());
    if (std::memcmp(bytes.data(), kContainerMagic, 4) != 0)
        throw FormatError("bad magic bytes", 0);
    const uint16_t version = detail::get_u16(bytes, 4);
    if (version != kContainerVersion)
        throw FormatError("unsupported container version " + std::to_string(version), 4);
    const uint32_t header_len = detail::get_u32(bytes, 6);
    if (bytes.size() < 10 + static_cast<size_t>(header_len))
        throw FormatError("container truncated inside header", bytes.size());

    Container c;
    try {
        c.header = nlohmann::json::parse(bytes.substr(10, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("header is not valid JSON: ") + e.what(), 10);
    }
    if (!c.header.contains("tensors") || !c.header["tensors"].is_array())
        throw FormatError("header lacks tensor table", 10);

    size_t off = 10 + header_len;
    for (const auto& entry : c.header["tensors"]) {
        std::vector<size_t> shape = entry["shape"].get<std::vector<size_t>>();
        size_t n = 1;
        for (size_t s : shape) n *= s;
        if (bytes.size() < off + n * 4)
            throw FormatError("container truncated inside payload", off);
        std::vector<float> data(n);
        std::memcpy(data.data(), bytes.data() + off, n * 4);
        off += n * 4;
        c.payloads.emplace_back(std::move(shape), std::move(data));
    }
    if (off != bytes.size())
        throw FormatError("trailing bytes after last payload", off);
    return c;
}

inline void write_container(const std::string& path, const Container& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DomainError("cannot open for writing: " + path);
    const std::string bytes = encode_container(c);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Container read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DomainError("cannot open for reading: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_container(bytes);
}

// ---- adapter round trip ----

inline void write_adapter(const std::string& path, const LoraAdapter& adapter) {
    adapter.validate();
    Container c;
    c.header["kind"] = "adapter";
    c.header["name"] = adapter.name;
    c.header["category"] = category_name(adapter.category);
    c.header["trigger_phrase"] = adapter.trigger_phrase;
    c.header["rank"] = adapter.rank;
    c.header["weight_scale"] = adapter.weight_scale;
    c.header["tensors"] = nlohmann::json::array();
    for (const auto& [hook, d] : adapter.deltas) {
        c.header["tensors"].push_back({{"hook", hook}, {"role", "up"}, {"shape", d.up.shape}});
        c.payloads.push_back(d.up);
        c.header["tensors"].push_back({{"hook", hook}, {"role", "down"}, {"shape", d.down.shape}});
        c.payloads.push_back(d.down);
    }
    write_container(path, c);
}

inline LoraAdapter adapter_from_container(const Container& c) {
    if (c.header.value("kind", "") != "adapter")
        throw ValidationError("container is not an adapter file");
    LoraAdapter a;
    a.name = c.header.at("name").get<std::string>();
    a.category = category_from_name(c.header.at("category").get<std::string>());
    a.trigger_phrase = c.header.at("trigger_phrase").get<std::string>();
    a.rank = c.header.at("rank").get<size_t>();
    a.weight_scale = c.header.at("weight_scale").get<float>();
    for (size_t i = 0; i < c.payloads.size(); ++i) {
        const auto& entry = c.header["tensors"][i];
        const std::string hook = entry.at("hook").get<std::string>();
        const std::string role = entry.at("role").get<std::string>();
        if (role == "up")
            a.deltas[hook].up = c.payloads[i];
        else if (role == "down")
            a.deltas[hook].down = c.payloads[i];
        else
            throw ValidationError("adapter tensor role must be up/down, got " + role);
    }
    a.validate();
    return a;
}

inline LoraAdapter read_adapter(const std::string& path) {
    return adapter_from_container(read_container(path));
}

}  // namespace lcomp
