#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rflab/errors.hpp"
#include "rflab/series.hpp"

namespace rflab {

struct NamedTensorView {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<float> values;
};

inline constexpr std::uint32_t kParamsFileVersion = 1;

/// Model parameter container: magic "MBAT", version u32, then per-parameter
/// records (u32 name length, UTF-8 name, u32 rank, dims as u64 little-endian,
/// 32-bit IEEE values little-endian). Records run to end of file.
inline void write_params_file(const std::string& path, const std::vector<NamedTensorView>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot create params file: " + path);
    os.write("MBAT", 4);
    ioutil::write_u32(os, kParamsFileVersion);
    for (const auto& t : tensors) {
        ioutil::write_u32(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        ioutil::write_u32(os, static_cast<std::uint32_t>(t.dims.size()));
        std::uint64_t n = 1;
        for (std::uint64_t d : t.dims) {
            ioutil::write_u64(os, d);
            n *= d;
        }
        if (n != t.values.size()) throw FormatError("params writer: dims/value count mismatch for " + t.name);
        for (float v : t.values) ioutil::write_f32(os, v);
    }
    if (!os) throw IoError("short write on params file: " + path);
}

inline std::vector<NamedTensorView> read_params_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open params file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "MBAT") throw FormatError("bad params magic in " + path);
    const std::uint32_t version = ioutil::read_u32(is);
    if (version != kParamsFileVersion)
        throw FormatError("unsupported params version " + std::to_string(version) + " in " + path);

    std::vector<NamedTensorView> out;
    while (true) {
        is.peek();
        if (is.eof()) break;
        NamedTensorView t;
        const std::uint32_t name_len = ioutil::read_u32(is);
        t.name.resize(name_len);
        is.read(t.name.data(), name_len);
        if (!is) throw FormatError("truncated parameter name in " + path);
        const std::uint32_t rank = ioutil::read_u32(is);
        std::uint64_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint64_t d = ioutil::read_u64(is);
            t.dims.push_back(d);
            n *= d;
        }
        t.values.resize(n);
        for (auto& v : t.values) v = ioutil::read_f32(is);
        out.push_back(std::move(t));
    }
    return out;
}

} // namespace rflab
