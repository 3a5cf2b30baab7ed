#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rflab/emitter.hpp"
#include "rflab/errors.hpp"
#include "rflab/features.hpp"
#include "rflab/threadpool.hpp"

namespace rflab {

using json = nlohmann::json;

namespace jsonutil {

inline const json& require(const json& j, const std::string& field, const std::string& where) {
    auto it = j.find(field);
    if (it == j.end()) throw FormatError(where + ": missing field '" + field + "'");
    return *it;
}

inline json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open json file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw FormatError(path + ": " + e.what());
    }
    return j;
}

inline void save_json_file(const std::string& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot create json file: " + path);
    os << j.dump(2) << "\n";
}

} // namespace jsonutil

inline json to_json(const EmitterProfile& p) {
    return json{{"cfo_hz", p.cfo_hz},
                {"iq_gain_imbalance", p.iq_gain_imbalance},
                {"iq_phase_imbalance_rad", p.iq_phase_imbalance_rad},
                {"dc_offset", {p.dc_offset.real(), p.dc_offset.imag()}},
                {"pa_a3", p.pa_a3},
                {"pa_a5", p.pa_a5},
                {"phase_noise_std_rad", p.phase_noise_std_rad},
                {"seed", p.seed}};
}

inline EmitterProfile profile_from_json(const json& j, const std::string& where) {
    EmitterProfile p;
    p.cfo_hz = jsonutil::require(j, "cfo_hz", where).get<double>();
    p.iq_gain_imbalance = j.value("iq_gain_imbalance", 1.0);
    p.iq_phase_imbalance_rad = j.value("iq_phase_imbalance_rad", 0.0);
    if (j.contains("dc_offset")) {
        const auto& d = j["dc_offset"];
        if (!d.is_array() || d.size() != 2) throw FormatError(where + ": field 'dc_offset' must be [re, im]");
        p.dc_offset = {d[0].get<double>(), d[1].get<double>()};
    }
    p.pa_a3 = j.value("pa_a3", 0.0);
    p.pa_a5 = j.value("pa_a5", 0.0);
    p.phase_noise_std_rad = j.value("phase_noise_std_rad", 0.0);
    p.seed = j.value("seed", std::uint64_t(0));
    p.validate();
    return p;
}

inline json to_json(const HopConfig& h) {
    return json{{"num_channels", h.num_channels},
                {"channel_spacing_hz", h.channel_spacing_hz},
                {"hop_rate_hz", h.hop_rate_hz},
                {"tuned_channel", h.tuned_channel},
                {"symbol_rate_hz", h.symbol_rate_hz},
                {"modulation_index", h.modulation_index},
                {"burst_duty", h.burst_duty}};
}

inline HopConfig hops_from_json(const json& j, const std::string& where) {
    HopConfig h;
    h.num_channels = j.value("num_channels", 40);
    h.channel_spacing_hz = j.value("channel_spacing_hz", 2e6);
    h.hop_rate_hz = j.value("hop_rate_hz", 1600.0);
    h.tuned_channel = j.value("tuned_channel", 0);
    h.symbol_rate_hz = j.value("symbol_rate_hz", 1e6);
    h.modulation_index = j.value("modulation_index", 0.5);
    h.burst_duty = j.value("burst_duty", 1.0);
    try {
        h.validate();
    } catch (const ArgumentError& e) {
        throw FormatError(where + ": " + e.what());
    }
    return h;
}

inline json to_json(const ChannelModel& c) {
    json taps = json::array();
    for (std::size_t i = 0; i < c.tap_delays_samples.size(); ++i)
        taps.push_back(json{{"delay", c.tap_delays_samples[i]},
                            {"gain", {c.tap_gains[i].real(), c.tap_gains[i].imag()}}});
    json j{{"taps", taps}};
    if (!c.interferers.empty()) {
        json tones = json::array();
        for (const auto& t : c.interferers) tones.push_back(json{{"freq_hz", t.freq_hz}, {"level_db", t.level_db}});
        j["interferers"] = tones;
    }
    if (std::isfinite(c.snr_db)) j["snr_db"] = c.snr_db;
    return j;
}

inline ChannelModel channel_from_json(const json& j, const std::string& where) {
    ChannelModel c;
    c.tap_delays_samples.clear();
    c.tap_gains.clear();
    const json& taps = jsonutil::require(j, "taps", where);
    for (const auto& t : taps) {
        c.tap_delays_samples.push_back(jsonutil::require(t, "delay", where).get<std::size_t>());
        const auto& g = jsonutil::require(t, "gain", where);
        if (!g.is_array() || g.size() != 2) throw FormatError(where + ": tap field 'gain' must be [re, im]");
        c.tap_gains.emplace_back(g[0].get<double>(), g[1].get<double>());
    }
    if (j.contains("interferers")) {
        for (const auto& t : j["interferers"]) {
            Interferer tone;
            tone.freq_hz = jsonutil::require(t, "freq_hz", where).get<double>();
            tone.level_db = jsonutil::require(t, "level_db", where).get<double>();
            c.interferers.push_back(tone);
        }
    }
    if (j.contains("snr_db")) c.snr_db = j["snr_db"].get<double>();
    try {
        c.validate();
    } catch (const ArgumentError& e) {
        throw FormatError(where + ": " + e.what());
    }
    return c;
}

enum class Regime { tts, ttd };

inline const char* regime_name(Regime r) { return r == Regime::tts ? "tts" : "ttd"; }

/// Everything needed to synthesize one labeled corpus deterministically.
struct DatasetConfig {
    std::vector<EmitterProfile> profiles;
    HopConfig hops;
    ChannelModel train_channel; // TTS regime
    ChannelModel test_channel;  // TTD regime
    std::size_t n_per_class = 0;     // TTS pool (split into train/val/test)
    std::size_t n_ttd_per_class = 0; // TTD evaluation pool
    std::size_t m = 0;
    std::size_t factor = 10; // raw samples per example = m * factor
    double fs_hz = 2e6;
    DecimMode mode = DecimMode::anti_aliased;
    FeatureFormat format = FeatureFormat::mag_phase_psd;
    std::uint64_t master_seed = 1;

    void validate() const {
        if (profiles.size() < 2) throw ArgumentError("dataset: need at least 2 profiles");
        if (n_per_class < 1) throw ArgumentError("dataset: n_per_class must be >= 1");
        if (m < 2 || factor < 1) throw ArgumentError("dataset: need m >= 2 and factor >= 1");
    }
};

/// One labeled feature tensor. `id` is the stable identity used for the
/// deterministic train/val/test split.
struct LabeledExample {
    FeatureTensor x;
    int label = 0;
    Regime regime = Regime::tts;
    std::string id;
};

/// Deterministic per-example synthesis: every example derives its own rng
/// streams from (master_seed, regime, class, index), so generation order and
/// worker scheduling never matter.
inline LabeledExample gen_example(const DatasetConfig& cfg, Regime regime, std::size_t cls, std::size_t index) {
    const std::uint64_t regime_tag = regime == Regime::tts ? 0x545453ULL : 0x545444ULL;
    const std::uint64_t inst = Rng::mix(Rng::mix(Rng::mix(cfg.master_seed, regime_tag), cls), index);

    EmitterProfile prof = cfg.profiles[cls];
    prof.seed = inst;
    const std::uint64_t hop_seed = Rng::mix(inst, 0x484F5053ULL);

    const double duration = static_cast<double>(cfg.m * cfg.factor) / cfg.fs_hz;
    ComplexSeries x = gen_emission(prof, cfg.hops, duration, cfg.fs_hz, hop_seed);
    x.iq.resize(cfg.m * cfg.factor); // llround can leave one extra sample

    const ChannelModel& ch = regime == Regime::tts ? cfg.train_channel : cfg.test_channel;
    Rng ch_rng = Rng(inst).derive({0x6368616EULL});
    x = apply_channel(x, ch, ch_rng);

    LabeledExample ex;
    ex.x = cfg.format == FeatureFormat::mag_phase_psd ? build_feature_tensor(x, cfg.m, cfg.mode)
                                                      : build_raw_iq_tensor(x, cfg.m, cfg.mode);
    ex.label = static_cast<int>(cls);
    ex.regime = regime;
    ex.id = std::string(regime_name(regime)) + "/c" + std::to_string(cls) + "/i" + std::to_string(index);
    return ex;
}

/// In-memory dataset (tests and small runs).
struct Dataset {
    DatasetConfig config;
    std::vector<LabeledExample> examples;
};

inline Dataset make_dataset(const DatasetConfig& cfg, std::size_t workers = 1) {
    cfg.validate();
    Dataset ds;
    ds.config = cfg;
    struct Slot { Regime regime; std::size_t cls, index; };
    std::vector<Slot> slots;
    for (std::size_t c = 0; c < cfg.profiles.size(); ++c)
        for (std::size_t i = 0; i < cfg.n_per_class; ++i) slots.push_back({Regime::tts, c, i});
    for (std::size_t c = 0; c < cfg.profiles.size(); ++c)
        for (std::size_t i = 0; i < cfg.n_ttd_per_class; ++i) slots.push_back({Regime::ttd, c, i});
    ds.examples.resize(slots.size());
    parallel_for(slots.size(), workers, [&](std::size_t i, std::size_t) {
        ds.examples[i] = gen_example(cfg, slots[i].regime, slots[i].cls, slots[i].index);
    });
    return ds;
}

/// Manifest entry for one tensor file on disk.
struct ManifestEntry {
    std::string path; // relative to the manifest directory
    int label = 0;
    Regime regime = Regime::tts;
    std::string id;
};

struct Manifest {
    DatasetConfig config;
    std::vector<ManifestEntry> entries;
    std::string dir; // directory containing manifest.json
};

inline json dataset_config_to_json(const DatasetConfig& cfg) {
    json profiles = json::array();
    for (const auto& p : cfg.profiles) profiles.push_back(to_json(p));
    return json{{"profiles", profiles},
                {"hops", to_json(cfg.hops)},
                {"channels", {{"train", to_json(cfg.train_channel)}, {"test", to_json(cfg.test_channel)}}},
                {"n_per_class", cfg.n_per_class},
                {"n_ttd_per_class", cfg.n_ttd_per_class},
                {"m", cfg.m},
                {"factor", cfg.factor},
                {"fs_hz", cfg.fs_hz},
                {"mode", cfg.mode == DecimMode::anti_aliased ? "aa" : "plain"},
                {"format", cfg.format == FeatureFormat::mag_phase_psd ? "eq2" : "raw-iq"},
                {"seed", cfg.master_seed}};
}

inline DatasetConfig dataset_config_from_json(const json& j, const std::string& where) {
    DatasetConfig cfg;
    for (const auto& p : jsonutil::require(j, "profiles", where)) cfg.profiles.push_back(profile_from_json(p, where));
    cfg.hops = hops_from_json(jsonutil::require(j, "hops", where), where);
    const json& ch = jsonutil::require(j, "channels", where);
    cfg.train_channel = channel_from_json(jsonutil::require(ch, "train", where), where + ".channels.train");
    cfg.test_channel = channel_from_json(jsonutil::require(ch, "test", where), where + ".channels.test");
    cfg.n_per_class = jsonutil::require(j, "n_per_class", where).get<std::size_t>();
    cfg.n_ttd_per_class = j.value("n_ttd_per_class", std::size_t(0));
    cfg.m = jsonutil::require(j, "m", where).get<std::size_t>();
    cfg.factor = j.value("factor", std::size_t(10));
    cfg.fs_hz = j.value("fs_hz", 2e6);
    const std::string mode = j.value("mode", "aa");
    if (mode != "aa" && mode != "plain") throw FormatError(where + ": field 'mode' must be 'aa' or 'plain'");
    cfg.mode = mode == "aa" ? DecimMode::anti_aliased : DecimMode::plain;
    const std::string fmt = j.value("format", "eq2");
    if (fmt != "eq2" && fmt != "raw-iq") throw FormatError(where + ": field 'format' must be 'eq2' or 'raw-iq'");
    cfg.format = fmt == "eq2" ? FeatureFormat::mag_phase_psd : FeatureFormat::raw_iq;
    cfg.master_seed = j.value("seed", std::uint64_t(1));
    return cfg;
}

/// Generates every example to disk (FT3M/FT2M files) plus manifest.json.
inline Manifest generate_dataset_files(const DatasetConfig& cfg, const std::string& out_dir,
                                       std::size_t workers = 1) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    Manifest mf;
    mf.config = cfg;
    mf.dir = out_dir;

    struct Slot { Regime regime; std::size_t cls, index; };
    std::vector<Slot> slots;
    for (std::size_t c = 0; c < cfg.profiles.size(); ++c)
        for (std::size_t i = 0; i < cfg.n_per_class; ++i) slots.push_back({Regime::tts, c, i});
    for (std::size_t c = 0; c < cfg.profiles.size(); ++c)
        for (std::size_t i = 0; i < cfg.n_ttd_per_class; ++i) slots.push_back({Regime::ttd, c, i});

    mf.entries.resize(slots.size());
    parallel_for(slots.size(), workers, [&](std::size_t i, std::size_t) {
        const Slot& s = slots[i];
        LabeledExample ex = gen_example(cfg, s.regime, s.cls, s.index);
        ManifestEntry e;
        e.path = std::string(regime_name(s.regime)) + "_c" + std::to_string(s.cls) + "_i" +
                 std::to_string(s.index) + ".ft";
        e.label = ex.label;
        e.regime = ex.regime;
        e.id = ex.id;
        write_feature_tensor(out_dir + "/" + e.path, ex.x);
        mf.entries[i] = std::move(e);
    });

    json j = dataset_config_to_json(cfg);
    json entries = json::array();
    for (const auto& e : mf.entries)
        entries.push_back(json{{"path", e.path}, {"label", e.label}, {"regime", regime_name(e.regime)}, {"id", e.id}});
    j["examples"] = entries;
    jsonutil::save_json_file(out_dir + "/manifest.json", j);
    return mf;
}

inline Manifest read_manifest(const std::string& manifest_path) {
    const json j = jsonutil::load_json_file(manifest_path);
    Manifest mf;
    mf.config = dataset_config_from_json(j, manifest_path);
    mf.dir = std::filesystem::path(manifest_path).parent_path().string();
    if (mf.dir.empty()) mf.dir = ".";
    for (const auto& e : jsonutil::require(j, "examples", manifest_path)) {
        ManifestEntry me;
        me.path = jsonutil::require(e, "path", manifest_path).get<std::string>();
        me.label = jsonutil::require(e, "label", manifest_path).get<int>();
        const std::string r = jsonutil::require(e, "regime", manifest_path).get<std::string>();
        if (r != "tts" && r != "ttd") throw FormatError(manifest_path + ": bad regime '" + r + "'");
        me.regime = r == "tts" ? Regime::tts : Regime::ttd;
        me.id = e.value("id", me.path);
        mf.entries.push_back(std::move(me));
    }
    return mf;
}

/// Loads the tensors referenced by a manifest into memory.
inline Dataset load_dataset(const Manifest& mf) {
    Dataset ds;
    ds.config = mf.config;
    ds.examples.resize(mf.entries.size());
    for (std::size_t i = 0; i < mf.entries.size(); ++i) {
        const ManifestEntry& e = mf.entries[i];
        LabeledExample ex;
        ex.x = read_feature_tensor(mf.dir + "/" + e.path);
        ex.label = e.label;
        ex.regime = e.regime;
        ex.id = e.id;
        ds.examples[i] = std::move(ex);
    }
    return ds;
}

} // namespace rflab
