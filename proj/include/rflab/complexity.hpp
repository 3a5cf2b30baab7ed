#pragma once

#include <array>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "rflab/model.hpp"

namespace rflab {

/// Analytic complexity profile of a ModelGraph: trainable parameters, forward
/// FLOPs (multiply-accumulate = 2 FLOPs), and the five-stage training-memory
/// model. Derived purely from the graph description - never from execution.
struct ComplexityReport {
    struct Row {
        std::string name;
        std::uint64_t params = 0;
        std::uint64_t flops = 0;
    };

    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::vector<Row> rows;

    // bytes: [model, +activations, +gradients, +optimizer moments, steady-state max]
    std::array<std::uint64_t, 5> memory_stage_bytes{};
    std::uint64_t activation_elems = 0; // per example, stored forward values
    std::uint64_t batch = 1;
    std::uint64_t bytes_per_scalar = 4;
};

namespace cxdetail {

inline std::uint64_t act_flops_per_elem(LayerKind k) {
    switch (k) {
        case LayerKind::relu: return 1;
        case LayerKind::prelu: return 2;  // compare + multiply
        case LayerKind::silu: return 4;   // sigmoid + multiply
        case LayerKind::softmax: return 4;
        case LayerKind::dropout: return 1;
        default: return 0;
    }
}

inline void profile_stack(const std::string& prefix, const std::vector<LayerSpec>& stack, StageShape in,
                          const std::vector<StageShape>& shapes, ComplexityReport& rep) {
    StageShape cur = in;
    for (std::size_t i = 0; i < stack.size(); ++i) {
        const LayerSpec& l = stack[i];
        const StageShape out = shapes[i];
        ComplexityReport::Row row;
        switch (l.kind) {
            case LayerKind::conv1d: {
                const std::uint64_t co = static_cast<std::uint64_t>(l.channels);
                const std::uint64_t ci = cur[0];
                const std::uint64_t k = static_cast<std::uint64_t>(l.kernel);
                row.name = prefix + ".conv(" + std::to_string(ci) + "x" + std::to_string(cur[1]) + "->" +
                           std::to_string(co) + "x" + std::to_string(out[1]) + ",k=" + std::to_string(l.kernel) +
                           ",s=" + std::to_string(l.stride) + ")";
                row.params = co * ci * k + co;
                row.flops = 2 * co * ci * k * out[1];
                break;
            }
            case LayerKind::dense: {
                const std::uint64_t n_in = stage_numel(cur);
                const std::uint64_t n_out = static_cast<std::uint64_t>(l.units);
                row.name = prefix + ".dense(" + std::to_string(n_in) + "->" + std::to_string(n_out) + ")";
                row.params = n_out * n_in + n_out;
                row.flops = 2 * n_out * n_in;
                break;
            }
            case LayerKind::prelu:
                row.name = prefix + ".prelu";
                row.params = 1;
                row.flops = act_flops_per_elem(l.kind) * stage_numel(out);
                break;
            case LayerKind::maxpool:
                row.name = prefix + ".maxpool(" + std::to_string(l.window) + ")";
                row.flops = stage_numel(cur); // one comparison per scanned element
                break;
            case LayerKind::flatten:
                row.name = prefix + ".flatten(" + std::to_string(stage_numel(out)) + ")";
                break;
            default:
                row.name = prefix + "." + layer_kind_name(l.kind);
                row.flops = act_flops_per_elem(l.kind) * stage_numel(out);
                break;
        }
        rep.rows.push_back(row);
        rep.params += row.params;
        rep.flops += row.flops;
        rep.activation_elems += stage_numel(out);
        cur = out;
    }
}

inline void profile_gru(const std::string& prefix, const LayerSpec& gru, std::size_t steps, std::size_t feat,
                        ComplexityReport& rep) {
    const std::uint64_t h = static_cast<std::uint64_t>(gru.hidden);
    for (int l = 0; l < gru.layers; ++l) {
        const std::uint64_t f = l == 0 ? feat : h;
        ComplexityReport::Row row;
        row.name = prefix + ".gru.l" + std::to_string(l) + "(T=" + std::to_string(steps) + ",F=" +
                   std::to_string(f) + ",H=" + std::to_string(h) + ")";
        row.params = 3 * (h * f + h * h + h);
        row.flops = (2 * 3 * (h * f + h * h) + 9 * h) * steps;
        rep.rows.push_back(row);
        rep.params += row.params;
        rep.flops += row.flops;
        rep.activation_elems += steps * h; // per-step hidden states retained per layer
    }
}

} // namespace cxdetail

/// Parameters + FLOPs + per-layer breakdown for a graph. FLOPs cover the
/// forward pass of the deployed model (ATN path when present; the discarded
/// stage-1 head is excluded there but reported for mbed-only graphs).
inline ComplexityReport profile_graph(const ModelGraph& g) {
    const ModelGraph::Shapes s = g.infer();
    ComplexityReport rep;
    rep.activation_elems += static_cast<std::uint64_t>(g.in_channels) * g.input_len; // input retained for backprop
    cxdetail::profile_stack("mbed", g.mbed, {static_cast<std::size_t>(g.in_channels), g.input_len}, s.mbed, rep);
    if (g.has_atn) {
        cxdetail::profile_stack("atn.b1", g.branch1, {1, s.feature_width}, s.branch1, rep);
        cxdetail::profile_stack("atn.b2", g.branch2, {1, s.feature_width}, s.branch2, rep);
        cxdetail::profile_gru("atn", g.gru, s.gru_steps, s.gru_feat, rep);
        // SiLU scoring of the GRU output + concatenation buffer
        ComplexityReport::Row silu_row;
        silu_row.name = "atn.silu(" + std::to_string(s.gru_hidden) + ")";
        silu_row.flops = 4 * s.gru_hidden;
        rep.rows.push_back(silu_row);
        rep.flops += silu_row.flops;
        rep.activation_elems += s.gru_hidden + s.concat_width;
        cxdetail::profile_stack("atn.head", g.head, {s.concat_width, 0}, s.head, rep);
    } else if (!g.temp_head.empty()) {
        cxdetail::profile_stack("temp_head", g.temp_head, {s.feature_width, 0}, s.temp_head, rep);
    }
    return rep;
}

/// Five-stage training-memory estimates with P parameters and A stored
/// activation elements per example:
///   1 model load: P*b,  2 forward: P*b + A*batch*b,  3 backward: 2P*b,
///   4 optimizer (Adam moments): 4P*b,  5 steady state: 4P*b + A*batch*b.
inline void fill_memory_stages(ComplexityReport& rep, std::uint64_t batch, std::uint64_t bytes_per_scalar = 4) {
    if (batch < 1) throw ArgumentError("memory stages: batch must be >= 1");
    rep.batch = batch;
    rep.bytes_per_scalar = bytes_per_scalar;
    const std::uint64_t p = rep.params * bytes_per_scalar;
    const std::uint64_t a = rep.activation_elems * batch * bytes_per_scalar;
    rep.memory_stage_bytes = {p, p + a, 2 * p, 4 * p, 4 * p + a};
}

inline ComplexityReport complexity_report(const ModelGraph& g, std::uint64_t batch,
                                          std::uint64_t bytes_per_scalar = 4) {
    ComplexityReport rep = profile_graph(g);
    fill_memory_stages(rep, batch, bytes_per_scalar);
    return rep;
}

inline std::string format_count(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    if (v >= 1e9) os << v / 1e9 << "G";
    else if (v >= 1e6) os << v / 1e6 << "M";
    else if (v >= 1e3) os << v / 1e3 << "k";
    else os << std::setprecision(0) << v;
    return os.str();
}

/// Aligned text table in the Model / FLOPs / #Parameters / Supported Sample
/// length layout, followed by the per-layer breakdown and memory stages.
inline std::string render_complexity_table(const std::string& model_name, const ComplexityReport& rep,
                                           std::size_t m, std::size_t supported_len = 1000000) {
    std::ostringstream os;
    os << std::left << std::setw(12) << "Model" << std::setw(12) << "FLOPs" << std::setw(14) << "#Parameters"
       << "Supported Sample length\n";
    os << std::setw(12) << model_name << std::setw(12) << format_count(static_cast<double>(rep.flops))
       << std::setw(14) << format_count(static_cast<double>(rep.params)) << format_count(static_cast<double>(supported_len))
       << "\n\n";
    os << "Per-layer breakdown (M = " << m << "):\n";
    for (const auto& r : rep.rows)
        os << "  " << std::left << std::setw(44) << r.name << std::right << std::setw(12) << r.params
           << " params " << std::setw(14) << r.flops << " FLOPs\n";
    static const char* stage_names[5] = {"model load", "forward (+activations)", "backward (+gradients)",
                                         "optimizer (+moments)", "steady state"};
    os << "Memory stages (batch " << rep.batch << ", " << rep.bytes_per_scalar << " B/scalar):\n";
    for (int i = 0; i < 5; ++i)
        os << "  stage " << i + 1 << " " << std::left << std::setw(24) << stage_names[i] << std::right
           << std::setw(14) << rep.memory_stage_bytes[i] << " bytes\n";
    return os.str();
}

} // namespace rflab
