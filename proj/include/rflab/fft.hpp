#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "rflab/errors.hpp"

namespace rflab {
namespace fftdetail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// In-place iterative Cooley-Tukey, n a power of two.
inline void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 1.0 : -1.0) * kTwoPi / static_cast<double>(len);
        const std::complex<double> wstep(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wstep;
            }
        }
    }
}

} // namespace fftdetail

/// DFT of arbitrary length: radix-2 when possible, Bluestein's chirp-z
/// otherwise. inverse=true applies the 1/N-scaled inverse transform.
inline std::vector<std::complex<double>> fft(std::vector<std::complex<double>> a, bool inverse = false) {
    const std::size_t n = a.size();
    if (n == 0) throw ArgumentError("fft: empty input");
    if (n == 1) return a;

    if (fftdetail::is_pow2(n)) {
        fftdetail::fft_pow2(a, inverse);
    } else {
        // Bluestein: x_k * chirp_k convolved with conjugate chirp.
        std::size_t m = 1;
        while (m < 2 * n - 1) m <<= 1;
        std::vector<std::complex<double>> chirp(n);
        for (std::size_t k = 0; k < n; ++k) {
            // k^2 mod 2n keeps the angle argument small
            const std::size_t k2 = static_cast<std::size_t>((static_cast<unsigned long long>(k) * k) % (2 * n));
            const double ang = (inverse ? 1.0 : -1.0) * fftdetail::kTwoPi * 0.5 * static_cast<double>(k2) /
                               static_cast<double>(n);
            chirp[k] = std::complex<double>(std::cos(ang), std::sin(ang));
        }
        std::vector<std::complex<double>> u(m, {0.0, 0.0}), v(m, {0.0, 0.0});
        for (std::size_t k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
        v[0] = std::conj(chirp[0]);
        for (std::size_t k = 1; k < n; ++k) v[k] = v[m - k] = std::conj(chirp[k]);
        fftdetail::fft_pow2(u, false);
        fftdetail::fft_pow2(v, false);
        for (std::size_t k = 0; k < m; ++k) u[k] *= v[k];
        fftdetail::fft_pow2(u, true);
        const double norm = 1.0 / static_cast<double>(m);
        for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * norm * chirp[k];
    }
    if (inverse) {
        const double norm = 1.0 / static_cast<double>(n);
        for (auto& z : a) z *= norm;
    }
    return a;
}

} // namespace rflab
