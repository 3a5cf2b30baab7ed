#pragma once

#include <string>

#include <json.hpp>

#include "rflab/dataset.hpp"
#include "rflab/model.hpp"

namespace rflab {

inline json to_json(const LayerSpec& l) {
    json j{{"kind", layer_kind_name(l.kind)}};
    switch (l.kind) {
        case LayerKind::conv1d:
            j["channels"] = l.channels;
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            j["padding"] = l.padding;
            break;
        case LayerKind::dense:
            j["units"] = l.units;
            break;
        case LayerKind::maxpool:
            j["window"] = l.window;
            break;
        case LayerKind::dropout:
            j["rate"] = l.rate;
            break;
        case LayerKind::gru:
            j["hidden"] = l.hidden;
            j["layers"] = l.layers;
            j["rate"] = l.rate;
            j["chunk"] = l.chunk;
            break;
        default:
            break;
    }
    return j;
}

inline LayerSpec layer_from_json(const json& j, const std::string& where) {
    const std::string kind = jsonutil::require(j, "kind", where).get<std::string>();
    LayerSpec l;
    if (kind == "conv1d") {
        l = LayerSpec::conv(jsonutil::require(j, "channels", where).get<int>(),
                            jsonutil::require(j, "kernel", where).get<int>(), j.value("stride", 1),
                            j.value("padding", 0));
    } else if (kind == "dense") {
        l = LayerSpec::fc(jsonutil::require(j, "units", where).get<int>());
    } else if (kind == "maxpool") {
        l = LayerSpec::pool(jsonutil::require(j, "window", where).get<int>());
    } else if (kind == "dropout") {
        l = LayerSpec::drop(jsonutil::require(j, "rate", where).get<double>());
    } else if (kind == "gru") {
        l = LayerSpec::make_gru(jsonutil::require(j, "hidden", where).get<int>(),
                                jsonutil::require(j, "layers", where).get<int>(), j.value("rate", 0.0),
                                j.value("chunk", 1));
    } else if (kind == "prelu") l = LayerSpec::act(LayerKind::prelu);
    else if (kind == "relu") l = LayerSpec::act(LayerKind::relu);
    else if (kind == "silu") l = LayerSpec::act(LayerKind::silu);
    else if (kind == "flatten") l = LayerSpec::flat();
    else if (kind == "softmax") l = LayerSpec::act(LayerKind::softmax);
    else throw FormatError(where + ": unknown layer kind '" + kind + "'");
    return l;
}

inline json to_json(const ModelGraph& g) {
    auto stack = [](const std::vector<LayerSpec>& v) {
        json a = json::array();
        for (const auto& l : v) a.push_back(to_json(l));
        return a;
    };
    json j{{"in_channels", g.in_channels}, {"input_len", g.input_len},     {"scale", g.scale},
           {"num_classes", g.num_classes}, {"mbed", stack(g.mbed)},        {"has_atn", g.has_atn}};
    if (!g.temp_head.empty()) j["temp_head"] = stack(g.temp_head);
    if (g.has_atn) {
        j["branch1"] = stack(g.branch1);
        j["branch2"] = stack(g.branch2);
        j["gru"] = to_json(g.gru);
        j["head"] = stack(g.head);
    }
    return j;
}

inline ModelGraph graph_from_json(const json& j, const std::string& where) {
    auto stack = [&](const json& a) {
        std::vector<LayerSpec> v;
        for (const auto& l : a) v.push_back(layer_from_json(l, where));
        return v;
    };
    ModelGraph g;
    g.in_channels = jsonutil::require(j, "in_channels", where).get<int>();
    g.input_len = jsonutil::require(j, "input_len", where).get<std::size_t>();
    g.scale = j.value("scale", 1.0);
    g.num_classes = jsonutil::require(j, "num_classes", where).get<int>();
    g.mbed = stack(jsonutil::require(j, "mbed", where));
    if (j.contains("temp_head")) g.temp_head = stack(j["temp_head"]);
    g.has_atn = j.value("has_atn", false);
    if (g.has_atn) {
        g.branch1 = stack(jsonutil::require(j, "branch1", where));
        g.branch2 = stack(jsonutil::require(j, "branch2", where));
        g.gru = layer_from_json(jsonutil::require(j, "gru", where), where);
        g.head = stack(jsonutil::require(j, "head", where));
    }
    g.infer(); // validate geometry on load
    return g;
}

} // namespace rflab
