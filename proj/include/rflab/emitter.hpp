#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "rflab/errors.hpp"
#include "rflab/rng.hpp"
#include "rflab/series.hpp"

namespace rflab {

/// Hardware impairment set defining one synthetic device's fingerprint.
struct EmitterProfile {
    double cfo_hz = 0.0;                  // carrier frequency offset
    double iq_gain_imbalance = 1.0;       // I-path gain relative to Q
    double iq_phase_imbalance_rad = 0.0;  // quadrature skew
    std::complex<double> dc_offset{0.0, 0.0};
    double pa_a3 = 0.0;                   // odd-order PA nonlinearity
    double pa_a5 = 0.0;
    double phase_noise_std_rad = 0.0;
    std::uint64_t seed = 0;               // payload bits / burst phases

    void validate() const {
        if (!(iq_gain_imbalance > 0.0)) throw ArgumentError("emitter: iq_gain_imbalance must be > 0");
        if (phase_noise_std_rad < 0.0) throw ArgumentError("emitter: phase_noise_std_rad must be >= 0");
    }
};

/// Frequency-hopping plan as seen by a receiver parked on one channel.
struct HopConfig {
    int num_channels = 40;
    double channel_spacing_hz = 2e6;
    double hop_rate_hz = 1600.0;
    int tuned_channel = 0;
    double symbol_rate_hz = 1e6;
    double modulation_index = 0.5;
    double burst_duty = 1.0; // fraction of a dwell carrying signal

    void validate() const {
        if (num_channels < 1) throw ArgumentError("hops: num_channels must be >= 1");
        if (tuned_channel < 0 || tuned_channel >= num_channels)
            throw ArgumentError("hops: tuned_channel out of range");
        if (!(hop_rate_hz > 0.0)) throw ArgumentError("hops: hop_rate_hz must be > 0");
        if (!(burst_duty > 0.0 && burst_duty <= 1.0)) throw ArgumentError("hops: burst_duty must be in (0, 1]");
    }
};

/// Narrowband ambient emitter at the capture site (CW tone), level relative
/// to the mean signal power.
struct Interferer {
    double freq_hz = 0.0;
    double level_db = 0.0;
};

/// Multipath taps, ambient interferers, and AWGN level for one capture setup.
struct ChannelModel {
    std::vector<std::size_t> tap_delays_samples{0};
    std::vector<std::complex<double>> tap_gains{{1.0, 0.0}};
    std::vector<Interferer> interferers;
    double snr_db = std::numeric_limits<double>::infinity();

    void validate() const {
        if (tap_delays_samples.empty() || tap_gains.size() != tap_delays_samples.size())
            throw ArgumentError("channel: need matching, nonempty tap delay/gain lists");
        if (tap_delays_samples[0] != 0) throw ArgumentError("channel: tap 0 must have delay 0");
    }
};

namespace emdetail {

inline constexpr double kGfskBt = 0.5;      // Gaussian filter bandwidth-time product
inline constexpr double kNoiseFloorDb = -50.0; // receiver floor relative to unit burst power
inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Gaussian pulse-shaping kernel sampled at fs, normalized to unit sum.
inline std::vector<double> gaussian_taps(double sps, double bt) {
    const double sigma = std::sqrt(std::log(2.0)) / (kTwoPi * bt / sps); // in samples
    const int half = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> taps(2 * half + 1);
    double sum = 0.0;
    for (int i = -half; i <= half; ++i) {
        const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
        taps[i + half] = v;
        sum += v;
    }
    for (double& v : taps) v /= sum;
    return taps;
}

/// One GFSK burst of n samples: NRZ bits -> Gaussian filter -> phase
/// integration at the configured modulation index.
inline std::vector<std::complex<double>> gfsk_burst(std::size_t n, std::size_t sps, double mod_index,
                                                    double phase0, Rng& bit_rng) {
    const std::size_t nbits = n / sps + 3;
    std::vector<double> bits(nbits);
    for (auto& b : bits) b = bit_rng.uniform() < 0.5 ? -1.0 : 1.0;

    const std::vector<double> taps = gaussian_taps(static_cast<double>(sps), kGfskBt);
    const int half = static_cast<int>(taps.size() / 2);
    std::vector<std::complex<double>> out(n);
    double phase = phase0;
    const double step = M_PI * mod_index / static_cast<double>(sps);
    for (std::size_t i = 0; i < n; ++i) {
        double f = 0.0;
        for (int k = -half; k <= half; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + k;
            std::size_t bi;
            if (src < 0) bi = 0;
            else {
                bi = static_cast<std::size_t>(src) / sps;
                if (bi >= nbits) bi = nbits - 1;
            }
            f += taps[k + half] * bits[bi];
        }
        phase += step * f;
        out[i] = std::polar(1.0, phase);
    }
    return out;
}

} // namespace emdetail

/// Pseudorandom channel index per dwell, uniform over the hop set.
inline std::vector<int> hop_sequence(const HopConfig& hops, std::uint64_t hop_seed, std::size_t n_dwells) {
    Rng rng(Rng::mix(hop_seed, 0x686F7073ULL)); // "hops"
    std::vector<int> seq(n_dwells);
    for (auto& c : seq) c = static_cast<int>(rng.index(static_cast<std::uint64_t>(hops.num_channels)));
    return seq;
}

/// Synthesizes the tuned-channel receiver view of one emitter: GFSK bursts
/// appear when the hop sequence lands on tuned_channel, otherwise only the
/// noise floor. Impairments are applied in fixed order: IQ imbalance ->
/// DC offset -> PA odd-order nonlinearity -> CFO rotation -> phase noise.
inline ComplexSeries gen_emission(const EmitterProfile& profile, const HopConfig& hops, double duration_s,
                                  double fs, std::uint64_t hop_seed = 0) {
    profile.validate();
    hops.validate();
    if (!(fs > 0.0) || duration_s * fs < 1.0) throw ArgumentError("gen_emission: duration*fs must be >= 1");
    if (fs < 2.0 * hops.symbol_rate_hz)
        throw ArgumentError("gen_emission: fs must be >= 2x symbol rate");

    const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * fs));
    const std::size_t sps = static_cast<std::size_t>(std::llround(fs / hops.symbol_rate_hz));
    const std::size_t dwell = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fs / hops.hop_rate_hz)));
    const std::size_t burst_len = std::max<std::size_t>(sps, static_cast<std::size_t>(std::llround(hops.burst_duty * static_cast<double>(dwell))));

    if (hop_seed == 0) hop_seed = Rng::mix(profile.seed, 0x64656661756C74ULL);
    const std::size_t n_dwells = n / dwell + 1;
    const std::vector<int> seq = hop_sequence(hops, hop_seed, n_dwells);

    Rng base(profile.seed);
    Rng phase_rng = base.derive({0x7068617365ULL});
    Rng noise_rng = base.derive({0x6E6F697365ULL});
    Rng pn_rng = base.derive({0x706E6F69ULL});

    ComplexSeries s;
    s.sample_rate_hz = fs;
    s.center_freq_hz = hops.tuned_channel * hops.channel_spacing_hz;
    s.iq.assign(n, {0.0, 0.0});
    std::vector<std::pair<std::size_t, std::size_t>> bursts; // (start, len)

    for (std::size_t d = 0; d < n_dwells; ++d) {
        if (seq[d] != hops.tuned_channel) continue;
        const std::size_t start = d * dwell;
        if (start >= n) break;
        const std::size_t len = std::min(burst_len, n - start);
        Rng bit_rng = base.derive({0x62697473ULL, d});
        const double phase0 = phase_rng.uniform(0.0, emdetail::kTwoPi);
        const auto burst = emdetail::gfsk_burst(len, sps, hops.modulation_index, phase0, bit_rng);
        for (std::size_t i = 0; i < len; ++i) s.iq[start + i] = burst[i];
        bursts.emplace_back(start, len);
    }

    // IQ imbalance (gain on I, quadrature skew feeding I into Q)
    const double g = profile.iq_gain_imbalance;
    const double th = profile.iq_phase_imbalance_rad;
    if (g != 1.0 || th != 0.0) {
        const double ct = std::cos(th), st = std::sin(th);
        for (auto& z : s.iq) {
            const double i = z.real(), q = z.imag();
            z = {g * i, q * ct + i * st};
        }
    }
    // DC offset exists only while the PA is keyed
    if (profile.dc_offset != std::complex<double>(0.0, 0.0)) {
        for (const auto& [start, len] : bursts)
            for (std::size_t i = start; i < start + len; ++i) s.iq[i] += profile.dc_offset;
    }
    // PA odd-order nonlinearity y = x + a3 x|x|^2 + a5 x|x|^4
    if (profile.pa_a3 != 0.0 || profile.pa_a5 != 0.0) {
        for (auto& z : s.iq) {
            const double p = std::norm(z);
            z *= (1.0 + profile.pa_a3 * p + profile.pa_a5 * p * p);
        }
    }
    // CFO rotation
    if (profile.cfo_hz != 0.0) {
        const double w = emdetail::kTwoPi * profile.cfo_hz / fs;
        for (std::size_t i = 0; i < n; ++i) s.iq[i] *= std::polar(1.0, w * static_cast<double>(i));
    }
    // white phase jitter
    if (profile.phase_noise_std_rad > 0.0) {
        for (auto& z : s.iq) z *= std::polar(1.0, profile.phase_noise_std_rad * pn_rng.gaussian());
    }
    // receiver noise floor
    {
        const double amp = std::pow(10.0, emdetail::kNoiseFloorDb / 20.0);
        const double comp = amp / std::sqrt(2.0);
        for (auto& z : s.iq) z += std::complex<double>(comp * noise_rng.gaussian(), comp * noise_rng.gaussian());
    }
    return s;
}

/// FIR multipath convolution then complex AWGN at snr_db relative to the
/// filtered signal power. Infinite snr_db skips the noise.
inline ComplexSeries apply_channel(const ComplexSeries& x, const ChannelModel& ch, Rng& rng) {
    ch.validate();
    for (std::size_t d : ch.tap_delays_samples)
        if (d >= x.iq.size()) throw ArgumentError("channel: tap delay exceeds series length");

    ComplexSeries y;
    y.sample_rate_hz = x.sample_rate_hz;
    y.center_freq_hz = x.center_freq_hz;
    y.iq.assign(x.iq.size(), {0.0, 0.0});
    for (std::size_t t = 0; t < ch.tap_delays_samples.size(); ++t) {
        const std::size_t d = ch.tap_delays_samples[t];
        const std::complex<double> gtap = ch.tap_gains[t];
        for (std::size_t i = d; i < x.iq.size(); ++i) y.iq[i] += gtap * x.iq[i - d];
    }
    double power = 0.0;
    for (const auto& z : y.iq) power += std::norm(z);
    power /= static_cast<double>(y.iq.size());
    for (const Interferer& tone : ch.interferers) {
        const double amp = std::sqrt(power * std::pow(10.0, tone.level_db / 10.0));
        const double w = emdetail::kTwoPi * tone.freq_hz / y.sample_rate_hz;
        const double phase0 = rng.uniform(0.0, emdetail::kTwoPi);
        for (std::size_t i = 0; i < y.iq.size(); ++i)
            y.iq[i] += std::polar(amp, phase0 + w * static_cast<double>(i));
    }
    if (std::isfinite(ch.snr_db)) {
        const double nvar = power / std::pow(10.0, ch.snr_db / 10.0);
        const double comp = std::sqrt(nvar / 2.0);
        for (auto& z : y.iq) z += std::complex<double>(comp * rng.gaussian(), comp * rng.gaussian());
    }
    return y;
}

} // namespace rflab
