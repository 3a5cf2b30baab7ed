#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rflab/errors.hpp"
#include "rflab/fft.hpp"
#include "rflab/iir.hpp"
#include "rflab/series.hpp"

namespace rflab {

enum class DecimMode { plain, anti_aliased };
enum class FeatureFormat { mag_phase_psd, raw_iq };

/// Input tensor for the network: 3 x M (magnitude, phase, PSD) or the 2 x M
/// raw-IQ ablation layout. Stored row-major in doubles; files carry f32.
struct FeatureTensor {
    std::size_t rows = 0;
    std::size_t m = 0;
    std::vector<double> data;

    FeatureTensor() = default;
    FeatureTensor(std::size_t r, std::size_t cols) : rows(r), m(cols), data(r * cols, 0.0) {}

    double& at(std::size_t r, std::size_t i) { return data[r * m + i]; }
    double at(std::size_t r, std::size_t i) const { return data[r * m + i]; }
};

/// Keeps samples at indices 0, factor, 2*factor, ...; divides the rate.
inline ComplexSeries downsample(const ComplexSeries& x, std::size_t factor) {
    if (factor < 1) throw ArgumentError("downsample: factor must be >= 1");
    if (x.iq.size() < factor) throw ArgumentError("downsample: series shorter than factor");
    ComplexSeries y;
    y.sample_rate_hz = x.sample_rate_hz / static_cast<double>(factor);
    y.center_freq_hz = x.center_freq_hz;
    y.iq.reserve(x.iq.size() / factor + 1);
    for (std::size_t i = 0; i < x.iq.size(); i += factor) y.iq.push_back(x.iq[i]);
    return y;
}

/// Anti-aliasing filter used ahead of decimation: order 8 Chebyshev I,
/// 0.05 dB ripple, cutoff at 0.8x the post-decimation Nyquist.
inline IirFilter default_aa_filter(std::size_t factor) {
    return design_cheby1(8, 0.05, 0.8 / static_cast<double>(factor));
}

/// Forward-filter (single pass, zero initial state) then downsample.
inline ComplexSeries decimate_aa(const ComplexSeries& x, std::size_t factor, const IirFilter& filter) {
    if (factor < 1) throw ArgumentError("decimate_aa: factor must be >= 1");
    if (x.iq.size() < factor) throw ArgumentError("decimate_aa: series shorter than factor");
    ComplexSeries filtered;
    filtered.sample_rate_hz = x.sample_rate_hz;
    filtered.center_freq_hz = x.center_freq_hz;
    filtered.iq = iir_filter_forward(filter, x.iq);
    return downsample(filtered, factor);
}

inline ComplexSeries decimate_aa(const ComplexSeries& x, std::size_t factor) {
    if (factor == 1) return x;
    return decimate_aa(x, factor, default_aa_filter(factor));
}

/// Single-record periodogram |FFT(x)|^2 / (M * fs), shifted so index 0 is
/// -fs/2. Length equals the input length.
inline std::vector<double> psd(const ComplexSeries& x) {
    const std::size_t m = x.iq.size();
    if (m < 2) throw ArgumentError("psd: need at least 2 samples");
    std::vector<std::complex<double>> spec = fft(x.iq);
    std::vector<double> p(m);
    const double norm = 1.0 / (static_cast<double>(m) * x.sample_rate_hz);
    const std::size_t half = (m + 1) / 2; // first shifted output bin is ceil(m/2)
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t shifted = (k + m - half) % m;
        p[shifted] = std::norm(spec[k]) * norm;
    }
    return p;
}

namespace featdetail {

inline void standardize_row(double* row, std::size_t n) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += row[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = row[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    const double inv = sd > 1e-30 ? 1.0 / sd : 1.0;
    for (std::size_t i = 0; i < n; ++i) row[i] = (row[i] - mean) * inv;
}

inline ComplexSeries decimate_for_features(const ComplexSeries& x, std::size_t m, DecimMode mode) {
    if (m < 2) throw ArgumentError("feature tensor: M must be >= 2");
    const std::size_t factor = x.iq.size() / m;
    if (factor < 1)
        throw ArgumentError("feature tensor: series of " + std::to_string(x.iq.size()) +
                            " samples cannot produce M = " + std::to_string(m));
    ComplexSeries head = x;
    head.iq.resize(m * factor);
    ComplexSeries dec = (mode == DecimMode::anti_aliased && factor > 1)
                            ? decimate_aa(head, factor)
                            : downsample(head, factor);
    dec.iq.resize(m);
    return dec;
}

} // namespace featdetail

/// Builds the 3 x M tensor: rows are |y|, angle(y) in (-pi, pi], PSD(y) of
/// the decimated series. The decimation factor is floor(len/M); mode selects
/// plain downsampling or Chebyshev anti-aliased decimation. Per-row
/// standardization to zero mean / unit variance is applied last unless
/// disabled.
inline FeatureTensor build_feature_tensor(const ComplexSeries& x, std::size_t m, DecimMode mode,
                                          bool standardize = true) {
    const ComplexSeries dec = featdetail::decimate_for_features(x, m, mode);
    FeatureTensor t(3, m);
    for (std::size_t i = 0; i < m; ++i) {
        t.at(0, i) = std::abs(dec.iq[i]);
        double ph = std::arg(dec.iq[i]);
        if (ph <= -M_PI) ph = M_PI; // keep phase in (-pi, pi]
        t.at(1, i) = ph;
    }
    const std::vector<double> p = psd(dec);
    for (std::size_t i = 0; i < m; ++i) t.at(2, i) = p[i];
    if (standardize)
        for (std::size_t r = 0; r < 3; ++r) featdetail::standardize_row(t.data.data() + r * m, m);
    return t;
}

/// Raw-IQ ablation input: rows are Re(y), Im(y) of the decimated series.
inline FeatureTensor build_raw_iq_tensor(const ComplexSeries& x, std::size_t m, DecimMode mode,
                                         bool standardize = true) {
    const ComplexSeries dec = featdetail::decimate_for_features(x, m, mode);
    FeatureTensor t(2, m);
    for (std::size_t i = 0; i < m; ++i) {
        t.at(0, i) = dec.iq[i].real();
        t.at(1, i) = dec.iq[i].imag();
    }
    if (standardize)
        for (std::size_t r = 0; r < 2; ++r) featdetail::standardize_row(t.data.data() + r * m, m);
    return t;
}

/// Tensor cache file: magic "FT3M" (3 rows) or "FT2M" (raw IQ), M as u64
/// little-endian, then rows*M 32-bit IEEE values row-major.
inline void write_feature_tensor(const std::string& path, const FeatureTensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot create tensor file: " + path);
    const char* magic = t.rows == 3 ? "FT3M" : "FT2M";
    if (t.rows != 3 && t.rows != 2) throw FormatError("tensor file supports 2 or 3 rows");
    os.write(magic, 4);
    ioutil::write_u64(os, t.m);
    for (double v : t.data) ioutil::write_f32(os, static_cast<float>(v));
    if (!os) throw IoError("short write on tensor file: " + path);
}

inline FeatureTensor read_feature_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open tensor file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is) throw FormatError("tensor file too short: " + path);
    std::size_t rows;
    if (std::string(magic, 4) == "FT3M") rows = 3;
    else if (std::string(magic, 4) == "FT2M") rows = 2;
    else throw FormatError("bad tensor magic in " + path);
    const std::uint64_t m = ioutil::read_u64(is);
    FeatureTensor t(rows, m);
    for (auto& v : t.data) v = ioutil::read_f32(is);
    return t;
}

} // namespace rflab
