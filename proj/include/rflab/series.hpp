#pragma once

#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rflab/errors.hpp"

namespace rflab {

/// Complex baseband IQ record.
struct ComplexSeries {
    std::vector<std::complex<double>> iq;
    double sample_rate_hz = 0.0;
    double center_freq_hz = 0.0;

    std::size_t size() const { return iq.size(); }
};

enum class SampleScalar { f32, s16 };

/// Declares the on-disk layout of a capture: interleaved I,Q pairs,
/// little-endian, scalar type per descriptor.
struct FormatDescriptor {
    SampleScalar scalar = SampleScalar::f32;
    double sample_rate_hz = 2e6;
    double center_freq_hz = 2.414e9;
    double full_scale = 1.0; // s16 counts mapping to 1.0
};

namespace ioutil {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("unexpected end of file reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw FormatError("unexpected end of file reading u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline float read_f32(std::istream& is) {
    const std::uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace ioutil

/// Reads a whole interleaved-IQ capture. Sample count = file bytes /
/// bytes-per-complex; a trailing partial scalar pair is a format error.
inline ComplexSeries read_capture(const std::string& path, const FormatDescriptor& desc) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open capture: " + path);
    is.seekg(0, std::ios::end);
    const std::uint64_t bytes = static_cast<std::uint64_t>(is.tellg());
    is.seekg(0, std::ios::beg);

    const std::size_t scalar_bytes = desc.scalar == SampleScalar::f32 ? 4 : 2;
    const std::size_t complex_bytes = 2 * scalar_bytes;
    if (bytes == 0) throw FormatError("capture is empty: " + path);
    if (bytes % complex_bytes != 0)
        throw FormatError("capture " + path + " truncated: " + std::to_string(bytes) +
                          " bytes is not a whole number of I,Q pairs");

    ComplexSeries s;
    s.sample_rate_hz = desc.sample_rate_hz;
    s.center_freq_hz = desc.center_freq_hz;
    const std::size_t n = bytes / complex_bytes;
    s.iq.reserve(n);
    std::vector<char> buf(bytes);
    is.read(buf.data(), static_cast<std::streamsize>(bytes));
    if (!is) throw IoError("short read on capture: " + path);

    if (desc.scalar == SampleScalar::f32) {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bi, bq;
            std::memcpy(&bi, buf.data() + i * 8, 4);
            std::memcpy(&bq, buf.data() + i * 8 + 4, 4);
            float fi, fq;
            std::memcpy(&fi, &bi, 4);
            std::memcpy(&fq, &bq, 4);
            s.iq.emplace_back(fi, fq);
        }
    } else {
        const double norm = desc.full_scale / 32767.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::int16_t vi, vq;
            std::memcpy(&vi, buf.data() + i * 4, 2);
            std::memcpy(&vq, buf.data() + i * 4 + 2, 2);
            s.iq.emplace_back(vi * norm, vq * norm);
        }
    }
    return s;
}

/// Writes interleaved little-endian 32-bit IEEE I,Q (the default capture
/// layout; metadata travels in the JSON descriptor).
inline void write_capture_f32(const std::string& path, const ComplexSeries& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot create capture: " + path);
    for (const auto& z : s.iq) {
        ioutil::write_f32(os, static_cast<float>(z.real()));
        ioutil::write_f32(os, static_cast<float>(z.imag()));
    }
    if (!os) throw IoError("short write on capture: " + path);
}

} // namespace rflab
