#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "rflab/errors.hpp"
#include "rflab/features.hpp"
#include "rflab/gru.hpp"
#include "rflab/ops.hpp"
#include "rflab/tensor.hpp"

namespace rflab {

enum class LayerKind { conv1d, prelu, relu, silu, maxpool, dropout, dense, flatten, gru, softmax };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv1d: return "conv1d";
        case LayerKind::prelu: return "prelu";
        case LayerKind::relu: return "relu";
        case LayerKind::silu: return "silu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::dropout: return "dropout";
        case LayerKind::dense: return "dense";
        case LayerKind::flatten: return "flatten";
        case LayerKind::gru: return "gru";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int channels = 0; // conv out channels
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    int units = 0;  // dense
    int window = 0; // maxpool
    double rate = 0.0; // dropout / gru inter-layer dropout
    int hidden = 0, layers = 0, chunk = 1; // gru

    static LayerSpec conv(int ch, int k, int s, int p = 0) {
        LayerSpec l; l.kind = LayerKind::conv1d; l.channels = ch; l.kernel = k; l.stride = s; l.padding = p; return l;
    }
    static LayerSpec act(LayerKind k) { LayerSpec l; l.kind = k; return l; }
    static LayerSpec pool(int w) { LayerSpec l; l.kind = LayerKind::maxpool; l.window = w; return l; }
    static LayerSpec drop(double r) { LayerSpec l; l.kind = LayerKind::dropout; l.rate = r; return l; }
    static LayerSpec fc(int units) { LayerSpec l; l.kind = LayerKind::dense; l.units = units; return l; }
    static LayerSpec flat() { LayerSpec l; l.kind = LayerKind::flatten; return l; }
    static LayerSpec make_gru(int hidden, int layers, double rate, int chunk) {
        LayerSpec l; l.kind = LayerKind::gru; l.hidden = hidden; l.layers = layers; l.rate = rate; l.chunk = chunk; return l;
    }
};

/// Shape of an intermediate value: {channels, length} for 2-D maps,
/// {width, 0} once flattened to a vector.
using StageShape = std::array<std::size_t, 2>;

inline std::size_t stage_numel(const StageShape& s) { return s[1] == 0 ? s[0] : s[0] * s[1]; }

/// Static shape propagation through a layer stack. Throws ConfigError naming
/// the failing layer; this is the oracle the runtime shapes are tested
/// against.
inline std::vector<StageShape> infer_stack_shapes(const std::vector<LayerSpec>& stack, StageShape in,
                                                  const std::string& stack_name) {
    std::vector<StageShape> out;
    StageShape cur = in;
    for (std::size_t i = 0; i < stack.size(); ++i) {
        const LayerSpec& l = stack[i];
        const std::string where = stack_name + " layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
        switch (l.kind) {
            case LayerKind::conv1d: {
                if (cur[1] == 0) throw ConfigError(where + ": needs a 2-D input");
                if (l.channels < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0)
                    throw ConfigError(where + ": bad conv parameters");
                const std::size_t len = cur[1] + 2 * static_cast<std::size_t>(l.padding);
                if (len < static_cast<std::size_t>(l.kernel))
                    throw ConfigError(where + ": input length " + std::to_string(cur[1]) + " too short for kernel " +
                                      std::to_string(l.kernel));
                cur = {static_cast<std::size_t>(l.channels), (len - l.kernel) / l.stride + 1};
                break;
            }
            case LayerKind::maxpool: {
                if (cur[1] == 0) throw ConfigError(where + ": needs a 2-D input");
                if (l.window < 1 || cur[1] < static_cast<std::size_t>(l.window))
                    throw ConfigError(where + ": window " + std::to_string(l.window) + " > length " +
                                      std::to_string(cur[1]));
                cur = {cur[0], cur[1] / l.window};
                break;
            }
            case LayerKind::dense: {
                if (cur[1] != 0) throw ConfigError(where + ": needs a flattened input");
                if (l.units < 1) throw ConfigError(where + ": units must be positive");
                cur = {static_cast<std::size_t>(l.units), 0};
                break;
            }
            case LayerKind::flatten:
                cur = {stage_numel(cur), 0};
                break;
            case LayerKind::dropout:
                if (l.rate < 0.0 || l.rate >= 1.0) throw ConfigError(where + ": rate outside [0, 1)");
                break;
            case LayerKind::prelu:
            case LayerKind::relu:
            case LayerKind::silu:
            case LayerKind::softmax:
                break;
            case LayerKind::gru:
                throw ConfigError(where + ": gru is not a stack layer");
        }
        out.push_back(cur);
    }
    return out;
}

/// Declarative Mbed-ATN description: the Mbed embedding stack, an optional
/// ATN (two conv branches + GRU branch + dense head), and the temporary
/// stage-1 classification head.
struct ModelGraph {
    int in_channels = 3;
    std::size_t input_len = 0;
    double scale = 1.0;
    int num_classes = 0;

    std::vector<LayerSpec> mbed;
    std::vector<LayerSpec> temp_head;
    bool has_atn = false;
    std::vector<LayerSpec> branch1, branch2;
    LayerSpec gru;
    std::vector<LayerSpec> head;

    struct Shapes {
        std::vector<StageShape> mbed;
        std::size_t feature_width = 0;
        std::vector<StageShape> branch1, branch2;
        std::size_t gru_steps = 0, gru_feat = 0, gru_hidden = 0;
        std::size_t concat_width = 0;
        std::vector<StageShape> head;
        std::vector<StageShape> temp_head;
    };

    Shapes infer() const {
        Shapes s;
        s.mbed = infer_stack_shapes(mbed, {static_cast<std::size_t>(in_channels), input_len}, "mbed");
        if (s.mbed.empty() || s.mbed.back()[1] != 0) throw ConfigError("mbed must end in a flat vector");
        s.feature_width = s.mbed.back()[0];
        if (!temp_head.empty()) s.temp_head = infer_stack_shapes(temp_head, {s.feature_width, 0}, "temp_head");
        if (has_atn) {
            s.branch1 = infer_stack_shapes(branch1, {1, s.feature_width}, "atn.branch1");
            s.branch2 = infer_stack_shapes(branch2, {1, s.feature_width}, "atn.branch2");
            if (s.branch1.back()[1] != 0 || s.branch2.back()[1] != 0)
                throw ConfigError("atn branches must end flattened");
            if (gru.chunk < 1 || s.feature_width % static_cast<std::size_t>(gru.chunk) != 0)
                throw ConfigError("atn.gru: chunk width " + std::to_string(gru.chunk) +
                                  " does not divide feature width " + std::to_string(s.feature_width));
            s.gru_feat = static_cast<std::size_t>(gru.chunk);
            s.gru_steps = s.feature_width / s.gru_feat;
            s.gru_hidden = static_cast<std::size_t>(gru.hidden);
            s.concat_width = s.branch1.back()[0] + s.branch2.back()[0] + s.gru_hidden;
            s.head = infer_stack_shapes(head, {s.concat_width, 0}, "atn.head");
        }
        return s;
    }
};

namespace modeldetail {
inline int scaled(int base, double scale) {
    const int v = static_cast<int>(std::lround(base * scale));
    return v < 1 ? 1 : v;
}
} // namespace modeldetail

/// Mbed embedding stack (Table-oriented: conv strides and the extra pooling
/// stage switch at M = 1e6). Channel counts and the dense width scale by the
/// width factor, minimum 1.
inline std::vector<LayerSpec> build_mbed_stack(std::size_t m, double scale) {
    if (!(scale > 0.0 && scale <= 1.0)) throw ArgumentError("build_mbed: scale must be in (0, 1]");
    using modeldetail::scaled;
    const bool big = m >= 1000000;
    std::vector<LayerSpec> v;
    v.push_back(LayerSpec::conv(scaled(100, scale), 10, big ? 20 : 10));
    v.push_back(LayerSpec::act(LayerKind::prelu));
    v.push_back(LayerSpec::conv(scaled(50, scale), 6, big ? 6 : 3));
    v.push_back(LayerSpec::act(LayerKind::prelu));
    v.push_back(LayerSpec::pool(8));
    v.push_back(LayerSpec::drop(0.5));
    v.push_back(LayerSpec::conv(scaled(40, scale), 10, big ? 5 : 10));
    v.push_back(LayerSpec::act(LayerKind::prelu));
    if (big) {
        v.push_back(LayerSpec::pool(5));
        v.push_back(LayerSpec::drop(0.5));
    }
    v.push_back(LayerSpec::flat());
    v.push_back(LayerSpec::fc(scaled(1024, scale)));
    v.push_back(LayerSpec::act(LayerKind::relu));
    return v;
}

/// ATN: two conv branches (kernel 7 and kernel 3), a 3-layer GRU branch
/// scored by SiLU, concatenated into the dense head.
inline void build_atn_into(ModelGraph& g, std::size_t in_width, double scale, int num_classes, int chunk) {
    using modeldetail::scaled;
    if (in_width < 8) throw ConfigError("build_atn: input width " + std::to_string(in_width) + " < 8");
    if (num_classes < 2) throw ConfigError("build_atn: need at least 2 classes");
    auto branch = [&](int kernel) {
        std::vector<LayerSpec> b;
        b.push_back(LayerSpec::conv(scaled(15, scale), kernel, 1, 1));
        b.push_back(LayerSpec::act(LayerKind::prelu));
        b.push_back(LayerSpec::drop(0.1));
        b.push_back(LayerSpec::conv(scaled(32, scale), kernel, 1));
        b.push_back(LayerSpec::act(LayerKind::prelu));
        b.push_back(LayerSpec::pool(2));
        b.push_back(LayerSpec::drop(0.5));
        b.push_back(LayerSpec::flat());
        return b;
    };
    g.has_atn = true;
    g.branch1 = branch(7);
    g.branch2 = branch(3);
    g.gru = LayerSpec::make_gru(scaled(80, scale), 3, 0.5, chunk);
    g.head.clear();
    g.head.push_back(LayerSpec::fc(scaled(1024, scale)));
    g.head.push_back(LayerSpec::act(LayerKind::prelu));
    g.head.push_back(LayerSpec::drop(0.2));
    g.head.push_back(LayerSpec::fc(scaled(64, scale)));
    g.head.push_back(LayerSpec::act(LayerKind::prelu));
    g.head.push_back(LayerSpec::drop(0.2));
    g.head.push_back(LayerSpec::fc(num_classes));
    g.head.push_back(LayerSpec::act(LayerKind::softmax));
}

/// Full Mbed-ATN graph. The temporary stage-1 softmax head is not part of
/// this graph (stage 1 trains on the mbed-only graph and is discarded), so
/// the parameter store matches the deployed-model count exactly. Throws
/// ConfigError if the stride/pool cascade underflows for the given M.
inline ModelGraph build_mbed_atn(std::size_t m, double scale, int num_classes, int in_channels = 3,
                                 int gru_chunk = 1) {
    ModelGraph g;
    g.in_channels = in_channels;
    g.input_len = m;
    g.scale = scale;
    g.num_classes = num_classes;
    g.mbed = build_mbed_stack(m, scale);
    const auto mbed_shapes = infer_stack_shapes(g.mbed, {static_cast<std::size_t>(in_channels), m}, "mbed");
    build_atn_into(g, mbed_shapes.back()[0], scale, num_classes, gru_chunk);
    g.infer(); // full validation
    return g;
}

/// Mbed plus temporary head only (no ATN) - the stage-1 training graph.
inline ModelGraph build_mbed_only(std::size_t m, double scale, int num_classes, int in_channels = 3) {
    ModelGraph g;
    g.in_channels = in_channels;
    g.input_len = m;
    g.scale = scale;
    g.num_classes = num_classes;
    g.mbed = build_mbed_stack(m, scale);
    g.temp_head.push_back(LayerSpec::fc(num_classes));
    g.temp_head.push_back(LayerSpec::act(LayerKind::softmax));
    g.infer();
    return g;
}

} // namespace rflab
