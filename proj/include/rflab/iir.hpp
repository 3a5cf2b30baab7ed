#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rflab/errors.hpp"

namespace rflab {

/// One second-order section, denominator normalized to a0 = 1.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;
};

struct IirFilter {
    std::vector<Biquad> sections;

    /// All poles strictly inside the unit circle.
    bool stable() const {
        for (const Biquad& s : sections) {
            // roots of z^2 + a1 z + a2
            const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
            const std::complex<double> r1 = (-s.a1 + disc) * 0.5;
            const std::complex<double> r2 = (-s.a1 - disc) * 0.5;
            if (std::abs(r1) >= 1.0 || std::abs(r2) >= 1.0) return false;
        }
        return true;
    }

    /// H(e^{j omega}), omega in radians/sample.
    std::complex<double> response(double omega) const {
        const std::complex<double> z1 = std::polar(1.0, -omega);
        const std::complex<double> z2 = z1 * z1;
        std::complex<double> h(1.0, 0.0);
        for (const Biquad& s : sections)
            h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
        return h;
    }
};

/// Chebyshev type I low-pass via analog prototype + bilinear transform,
/// emitted as cascaded second-order sections. cutoff_norm is the passband
/// edge as a fraction of Nyquist. Even orders only; the DC gain then equals
/// the passband-ripple floor 10^(-ripple_db/20).
inline IirFilter design_cheby1(int order, double ripple_db, double cutoff_norm) {
    if (order < 2 || order % 2 != 0) throw ArgumentError("design_cheby1: order must be even and >= 2");
    if (!(cutoff_norm > 0.0 && cutoff_norm < 1.0))
        throw ArgumentError("design_cheby1: cutoff " + std::to_string(cutoff_norm) + " outside (0, 1)");
    if (ripple_db <= 0.0) throw ArgumentError("design_cheby1: ripple must be positive");

    const int n = order;
    const double eps = std::sqrt(std::pow(10.0, ripple_db / 10.0) - 1.0);
    const double mu = std::asinh(1.0 / eps) / n;
    const double warped = std::tan(M_PI * cutoff_norm / 2.0); // prewarped analog edge (fs = 2)

    IirFilter f;
    const double dc_gain = std::pow(10.0, -ripple_db / 20.0);
    const double gain_per_section = std::pow(dc_gain, 2.0 / n);
    for (int k = 1; k <= n / 2; ++k) {
        const double theta = M_PI * (2.0 * k - 1.0) / (2.0 * n);
        std::complex<double> p(-std::sinh(mu) * std::sin(theta), std::cosh(mu) * std::cos(theta));
        p *= warped;
        const std::complex<double> zp = (1.0 + p) / (1.0 - p); // bilinear
        Biquad s;
        s.a1 = -2.0 * zp.real();
        s.a2 = std::norm(zp);
        // zeros at z = -1; scale so this section's DC gain is gain_per_section
        const double scale = gain_per_section * (1.0 + s.a1 + s.a2) / 4.0;
        s.b0 = scale;
        s.b1 = 2.0 * scale;
        s.b2 = scale;
        f.sections.push_back(s);
    }
    return f;
}

/// Single forward pass, zero initial state, direct form II transposed.
/// Real coefficients applied to a complex signal.
inline std::vector<std::complex<double>> iir_filter_forward(const IirFilter& f,
                                                            std::span<const std::complex<double>> x) {
    std::vector<std::complex<double>> y(x.begin(), x.end());
    for (const Biquad& s : f.sections) {
        std::complex<double> z1(0.0, 0.0), z2(0.0, 0.0);
        for (auto& v : y) {
            const std::complex<double> in = v;
            const std::complex<double> out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
    return y;
}

} // namespace rflab
