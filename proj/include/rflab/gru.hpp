#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rflab/errors.hpp"
#include "rflab/ops.hpp"
#include "rflab/tensor.hpp"

namespace rflab {

/// One GRU layer: gates
///   u_t = sigmoid(W_u x_t + R_u h_{t-1} + b_u)
///   r_t = sigmoid(W_r x_t + R_r h_{t-1} + b_r)
///   hc_t = tanh(W_h x_t + R_h (r_t * h_{t-1}) + b_h)
///   h_t = (1 - u_t) * h_{t-1} + u_t * hc_t
template <typename T>
struct GruLayerParams {
    Tensor<T> W_u, W_r, W_h; // hidden x input
    Tensor<T> R_u, R_r, R_h; // hidden x hidden
    Tensor<T> b_u, b_r, b_h; // hidden

    static GruLayerParams make(std::size_t hidden, std::size_t input) {
        GruLayerParams p;
        p.W_u = Tensor<T>({hidden, input});
        p.W_r = Tensor<T>({hidden, input});
        p.W_h = Tensor<T>({hidden, input});
        p.R_u = Tensor<T>({hidden, hidden});
        p.R_r = Tensor<T>({hidden, hidden});
        p.R_h = Tensor<T>({hidden, hidden});
        p.b_u = Tensor<T>({hidden});
        p.b_r = Tensor<T>({hidden});
        p.b_h = Tensor<T>({hidden});
        return p;
    }
};

template <typename T>
struct GruParams {
    std::size_t hidden = 0;
    std::size_t num_layers = 0;
    std::size_t input_width = 0; // feature width feeding layer 0
    std::vector<GruLayerParams<T>> layer;

    static GruParams make(std::size_t hidden, std::size_t num_layers, std::size_t input_width) {
        if (hidden == 0 || num_layers == 0) throw ArgumentError("gru: hidden and layers must be positive");
        GruParams p;
        p.hidden = hidden;
        p.num_layers = num_layers;
        p.input_width = input_width;
        for (std::size_t l = 0; l < num_layers; ++l)
            p.layer.push_back(GruLayerParams<T>::make(hidden, l == 0 ? input_width : hidden));
        return p;
    }

    std::size_t layer_input_width(std::size_t l) const { return l == 0 ? input_width : hidden; }
};

/// Per-step intermediates retained for backpropagation through time.
template <typename T>
struct GruTrace {
    std::size_t steps = 0;
    // layer-major storage, each vector is steps*width (or steps*hidden)
    std::vector<std::vector<T>> in;   // layer inputs after inter-layer dropout
    std::vector<std::vector<T>> u, r, hc, h;
    std::vector<std::vector<T>> drop_mask; // between layer l and l+1 (train mode)
};

template <typename T>
struct GruOutput {
    Tensor<T> outputs; // T x hidden (last layer)
    Tensor<T> h_final; // layers x hidden
};

namespace detail {

template <typename T>
inline void gru_mv(const Tensor<T>& m, const T* v, std::size_t n, T* acc) {
    for (std::size_t o = 0; o < m.dim(0); ++o) {
        const T* row = m.data.data() + o * n;
        T s = T(0);
        for (std::size_t i = 0; i < n; ++i) s += row[i] * v[i];
        acc[o] += s;
    }
}

// acc_v += M^T g
template <typename T>
inline void gru_mtv(const Tensor<T>& m, const T* g, std::size_t n, T* acc_v) {
    for (std::size_t o = 0; o < m.dim(0); ++o) {
        const T go = g[o];
        const T* row = m.data.data() + o * n;
        for (std::size_t i = 0; i < n; ++i) acc_v[i] += row[i] * go;
    }
}

// dM += g v^T
template <typename T>
inline void gru_outer(std::span<T> dm, const T* g, std::size_t rows, const T* v, std::size_t n) {
    for (std::size_t o = 0; o < rows; ++o) {
        const T go = g[o];
        T* row = dm.data() + o * n;
        for (std::size_t i = 0; i < n; ++i) row[i] += go * v[i];
    }
}

} // namespace detail

/// Runs the stacked GRU over seq (T x F). Inter-layer dropout is applied in
/// train mode only (none after the last layer). Pass a trace to enable
/// backward. Returns last-layer outputs for every step plus the final hidden
/// state of every layer.
template <typename T>
GruOutput<T> gru_forward(const Tensor<T>& seq, const GruParams<T>& params, const Tensor<T>& h0,
                         RunMode mode = RunMode::eval, double dropout_rate = 0.0, Rng* rng = nullptr,
                         GruTrace<T>* trace = nullptr) {
    if (seq.rank() != 2) throw DimensionError("gru: sequence rank != 2");
    const std::size_t steps = seq.dim(0), feat = seq.dim(1);
    if (feat != params.input_width)
        throw DimensionError("gru: sequence width " + std::to_string(feat) + " != layer-0 input width " +
                             std::to_string(params.input_width));
    if (h0.rank() != 2 || h0.dim(0) != params.num_layers || h0.dim(1) != params.hidden)
        throw DimensionError("gru: h0 must be layers x hidden");

    const std::size_t H = params.hidden;
    const bool drop = mode == RunMode::train && dropout_rate > 0.0 && params.num_layers > 1;
    if (drop && !rng) throw ArgumentError("gru: train-mode dropout needs an rng");

    if (trace) {
        trace->steps = steps;
        trace->in.assign(params.num_layers, {});
        trace->u.assign(params.num_layers, std::vector<T>(steps * H));
        trace->r.assign(params.num_layers, std::vector<T>(steps * H));
        trace->hc.assign(params.num_layers, std::vector<T>(steps * H));
        trace->h.assign(params.num_layers, std::vector<T>(steps * H));
        trace->drop_mask.assign(params.num_layers, {});
    }

    std::vector<T> cur(seq.data);      // current layer input, steps x width
    std::size_t cur_w = feat;
    GruOutput<T> out{Tensor<T>({steps, H}), Tensor<T>({params.num_layers, H})};

    std::vector<T> h(H), pre_u(H), pre_r(H), pre_h(H), rh(H);
    for (std::size_t l = 0; l < params.num_layers; ++l) {
        const GruLayerParams<T>& lp = params.layer[l];
        if (trace) trace->in[l] = cur;
        for (std::size_t i = 0; i < H; ++i) h[i] = h0(l, i);

        std::vector<T> next(steps * H);
        for (std::size_t t = 0; t < steps; ++t) {
            const T* x_t = cur.data() + t * cur_w;
            for (std::size_t i = 0; i < H; ++i) { pre_u[i] = lp.b_u.data[i]; pre_r[i] = lp.b_r.data[i]; pre_h[i] = lp.b_h.data[i]; }
            detail::gru_mv(lp.W_u, x_t, cur_w, pre_u.data());
            detail::gru_mv(lp.R_u, h.data(), H, pre_u.data());
            detail::gru_mv(lp.W_r, x_t, cur_w, pre_r.data());
            detail::gru_mv(lp.R_r, h.data(), H, pre_r.data());
            for (std::size_t i = 0; i < H; ++i) { pre_u[i] = sigmoid(pre_u[i]); pre_r[i] = sigmoid(pre_r[i]); }
            for (std::size_t i = 0; i < H; ++i) rh[i] = pre_r[i] * h[i];
            detail::gru_mv(lp.W_h, x_t, cur_w, pre_h.data());
            detail::gru_mv(lp.R_h, rh.data(), H, pre_h.data());
            for (std::size_t i = 0; i < H; ++i) {
                const T hc = std::tanh(pre_h[i]);
                const T hn = (T(1) - pre_u[i]) * h[i] + pre_u[i] * hc;
                if (trace) {
                    trace->u[l][t * H + i] = pre_u[i];
                    trace->r[l][t * H + i] = pre_r[i];
                    trace->hc[l][t * H + i] = hc;
                    trace->h[l][t * H + i] = hn;
                }
                next[t * H + i] = hn;
                h[i] = hn;
            }
        }
        for (std::size_t i = 0; i < H; ++i) out.h_final(l, i) = h[i];

        if (l + 1 < params.num_layers && drop) {
            const T keep_scale = static_cast<T>(1.0 / (1.0 - dropout_rate));
            std::vector<T> mask(next.size());
            for (std::size_t i = 0; i < next.size(); ++i) {
                const T m = rng->uniform() < dropout_rate ? T(0) : keep_scale;
                mask[i] = m;
                next[i] *= m;
            }
            if (trace) trace->drop_mask[l] = std::move(mask);
        }
        cur = std::move(next);
        cur_w = H;
    }
    out.outputs.data = cur;
    return out;
}

/// Parameter gradient buffers for one layer, laid out as spans over the
/// caller's storage in the same order as GruLayerParams fields.
template <typename T>
struct GruLayerGrads {
    std::span<T> W_u, W_r, W_h, R_u, R_r, R_h, b_u, b_r, b_h;
};

/// BPTT over the stacked GRU. d_outputs is T x hidden gradient on the last
/// layer's per-step outputs (zero rows allowed), d_hT an optional layers x
/// hidden gradient on the final hidden states. Accumulates parameter
/// gradients; returns gradient w.r.t. the input sequence if dseq != nullptr.
template <typename T>
void gru_backward(const GruParams<T>& params, const Tensor<T>& h0, const GruTrace<T>& trace,
                  const Tensor<T>* d_outputs, const Tensor<T>* d_hT,
                  std::vector<GruLayerGrads<T>>& grads, Tensor<T>* dseq) {
    const std::size_t H = params.hidden;
    const std::size_t steps = trace.steps;
    if (grads.size() != params.num_layers) throw DimensionError("gru_backward: grads per layer mismatch");

    // Gradient flowing into the current layer's per-step outputs.
    std::vector<T> dout(steps * H, T(0));
    if (d_outputs) {
        if (d_outputs->numel() != steps * H) throw DimensionError("gru_backward: d_outputs shape mismatch");
        std::copy(d_outputs->data.begin(), d_outputs->data.end(), dout.begin());
    }

    std::vector<T> dh(H), da_u(H), da_r(H), da_h(H), dx_t;
    for (std::size_t li = params.num_layers; li-- > 0;) {
        const GruLayerParams<T>& lp = params.layer[li];
        GruLayerGrads<T>& lg = grads[li];
        const std::size_t in_w = params.layer_input_width(li);
        const std::vector<T>& xin = trace.in[li];
        std::vector<T> dlower(li > 0 ? steps * H : 0, T(0));

        std::fill(dh.begin(), dh.end(), T(0));
        if (d_hT)
            for (std::size_t i = 0; i < H; ++i) dh[i] += (*d_hT)(li, i);

        dx_t.assign(in_w, T(0));
        for (std::size_t t = steps; t-- > 0;) {
            const T* u = trace.u[li].data() + t * H;
            const T* r = trace.r[li].data() + t * H;
            const T* hc = trace.hc[li].data() + t * H;
            const T* hp = t > 0 ? trace.h[li].data() + (t - 1) * H : nullptr;
            const T* x_t = xin.data() + t * in_w;

            for (std::size_t i = 0; i < H; ++i) dh[i] += dout[t * H + i];

            // through h_t = (1-u)h_prev + u*hc
            for (std::size_t i = 0; i < H; ++i) {
                const T hprev = hp ? hp[i] : h0(li, i);
                const T du = dh[i] * (hc[i] - hprev);
                const T dhc = dh[i] * u[i];
                da_u[i] = du * u[i] * (T(1) - u[i]);
                da_h[i] = dhc * (T(1) - hc[i] * hc[i]);
                dh[i] = dh[i] * (T(1) - u[i]); // partial: direct path to h_{t-1}
            }
            // through hc pre-activation: W_h x + R_h (r*h_prev) + b_h
            std::fill(da_r.begin(), da_r.end(), T(0));
            detail::gru_mtv(lp.R_h, da_h.data(), H, da_r.data()); // da_r holds d(r*h_prev) for now
            for (std::size_t i = 0; i < H; ++i) {
                const T hprev = hp ? hp[i] : h0(li, i);
                const T drh = da_r[i];
                dh[i] += drh * r[i];
                da_r[i] = drh * hprev * r[i] * (T(1) - r[i]);
            }
            std::fill(dx_t.begin(), dx_t.end(), T(0));
            detail::gru_mtv(lp.W_h, da_h.data(), in_w, dx_t.data());
            detail::gru_mtv(lp.W_u, da_u.data(), in_w, dx_t.data());
            detail::gru_mtv(lp.W_r, da_r.data(), in_w, dx_t.data());

            // parameter gradients
            for (std::size_t i = 0; i < H; ++i) {
                lg.b_u[i] += da_u[i];
                lg.b_r[i] += da_r[i];
                lg.b_h[i] += da_h[i];
            }
            detail::gru_outer(lg.W_u, da_u.data(), H, x_t, in_w);
            detail::gru_outer(lg.W_r, da_r.data(), H, x_t, in_w);
            detail::gru_outer(lg.W_h, da_h.data(), H, x_t, in_w);
            {
                // rh_t = r * h_prev
                std::vector<T> rh(H);
                for (std::size_t i = 0; i < H; ++i) rh[i] = r[i] * (hp ? hp[i] : h0(li, i));
                detail::gru_outer(lg.R_h, da_h.data(), H, rh.data(), H);
            }
            if (hp) {
                detail::gru_outer(lg.R_u, da_u.data(), H, hp, H);
                detail::gru_outer(lg.R_r, da_r.data(), H, hp, H);
            } else {
                std::vector<T> h0v(H);
                for (std::size_t i = 0; i < H; ++i) h0v[i] = h0(li, i);
                detail::gru_outer(lg.R_u, da_u.data(), H, h0v.data(), H);
                detail::gru_outer(lg.R_r, da_r.data(), H, h0v.data(), H);
            }
            detail::gru_mtv(lp.R_u, da_u.data(), H, dh.data());
            detail::gru_mtv(lp.R_r, da_r.data(), H, dh.data());

            if (li > 0) {
                T* dl = dlower.data() + t * H;
                for (std::size_t i = 0; i < H; ++i) dl[i] += dx_t[i];
            } else if (dseq) {
                T* ds = dseq->data.data() + t * in_w;
                for (std::size_t i = 0; i < in_w; ++i) ds[i] += dx_t[i];
            }
        }

        if (li > 0) {
            // undo inter-layer dropout scaling on the way down
            const std::vector<T>& mask = trace.drop_mask[li - 1];
            if (!mask.empty())
                for (std::size_t i = 0; i < dlower.size(); ++i) dlower[i] *= mask[i];
            dout = std::move(dlower);
        }
    }
}

} // namespace rflab
