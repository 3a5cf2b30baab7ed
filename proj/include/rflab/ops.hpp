#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rflab/errors.hpp"
#include "rflab/rng.hpp"
#include "rflab/tensor.hpp"

namespace rflab {

enum class RunMode { train, eval };

inline std::size_t conv1d_out_len(std::size_t len, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (len + 2 * padding < kernel)
        throw DimensionError("conv1d: input length " + std::to_string(len) + " + 2*padding " +
                             std::to_string(padding) + " < kernel " + std::to_string(kernel));
    return (len + 2 * padding - kernel) / stride + 1;
}

/// Cross-correlation over the length axis. x: C_in x L, w: C_out x C_in x K,
/// b: C_out. Output C_out x L_out.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride, std::size_t padding) {
    if (x.rank() != 2) throw DimensionError("conv1d: input rank != 2");
    if (w.rank() != 3) throw DimensionError("conv1d: kernel rank != 3");
    const std::size_t c_in = x.dim(0), len = x.dim(1);
    const std::size_t c_out = w.dim(0), k = w.dim(2);
    if (w.dim(1) != c_in)
        throw DimensionError("conv1d: kernel channel axis " + std::to_string(w.dim(1)) +
                             " != input channels " + std::to_string(c_in));
    if (b.numel() != c_out)
        throw DimensionError("conv1d: bias length " + std::to_string(b.numel()) +
                             " != out channels " + std::to_string(c_out));
    if (stride == 0) throw ArgumentError("conv1d: stride must be positive");
    const std::size_t l_out = conv1d_out_len(len, k, stride, padding);

    Tensor<T> y({c_out, l_out});
    for (std::size_t co = 0; co < c_out; ++co) {
        T* out = y.data.data() + co * l_out;
        for (std::size_t t = 0; t < l_out; ++t) out[t] = b.data[co];
        for (std::size_t ci = 0; ci < c_in; ++ci) {
            const T* in = x.data.data() + ci * len;
            const T* ker = w.data.data() + (co * c_in + ci) * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const T wv = ker[kk];
                // valid output range for this kernel tap given the padding
                const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(padding);
                for (std::size_t t = 0; t < l_out; ++t) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride) + off;
                    if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) out[t] += wv * in[src];
                }
            }
        }
    }
    return y;
}

/// Accumulates dL/dw into dw, dL/db into db, and (when dx != nullptr) dL/dx into dx.
template <typename T>
void conv1d_backward(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding,
                     const Tensor<T>& dy, Tensor<T>* dx, std::span<T> dw, std::span<T> db) {
    const std::size_t c_in = x.dim(0), len = x.dim(1);
    const std::size_t c_out = w.dim(0), k = w.dim(2);
    const std::size_t l_out = dy.dim(1);
    if (dw.size() != w.numel() || db.size() != c_out)
        throw DimensionError("conv1d_backward: gradient buffer size mismatch");

    for (std::size_t co = 0; co < c_out; ++co) {
        const T* dout = dy.data.data() + co * l_out;
        T acc = T(0);
        for (std::size_t t = 0; t < l_out; ++t) acc += dout[t];
        db[co] += acc;
        for (std::size_t ci = 0; ci < c_in; ++ci) {
            const T* in = x.data.data() + ci * len;
            T* dker = dw.data() + (co * c_in + ci) * k;
            const T* ker = w.data.data() + (co * c_in + ci) * k;
            T* din = dx ? dx->data.data() + ci * len : nullptr;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(padding);
                T wgrad = T(0);
                for (std::size_t t = 0; t < l_out; ++t) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride) + off;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                    wgrad += dout[t] * in[src];
                    if (din) din[src] += ker[kk] * dout[t];
                }
                dker[kk] += wgrad;
            }
        }
    }
}

template <typename T>
struct MaxPoolResult {
    Tensor<T> y;                     // C x floor(L/window)
    std::vector<std::size_t> argmax; // flat source index per output element
};

/// Non-overlapping max pooling (stride = window); trailing remainder dropped.
/// Ties resolve to the first maximal index.
template <typename T>
MaxPoolResult<T> maxpool1d(const Tensor<T>& x, std::size_t window) {
    if (x.rank() != 2) throw DimensionError("maxpool1d: input rank != 2");
    const std::size_t c = x.dim(0), len = x.dim(1);
    if (window == 0) throw ArgumentError("maxpool1d: window must be positive");
    if (window > len)
        throw DimensionError("maxpool1d: window " + std::to_string(window) + " > length " + std::to_string(len));
    const std::size_t l_out = len / window;

    MaxPoolResult<T> r{Tensor<T>({c, l_out}), std::vector<std::size_t>(c * l_out)};
    for (std::size_t ci = 0; ci < c; ++ci) {
        const T* in = x.data.data() + ci * len;
        for (std::size_t t = 0; t < l_out; ++t) {
            std::size_t best = t * window;
            T bv = in[best];
            for (std::size_t j = 1; j < window; ++j) {
                const std::size_t idx = t * window + j;
                if (in[idx] > bv) { bv = in[idx]; best = idx; }
            }
            r.y(ci, t) = bv;
            r.argmax[ci * l_out + t] = ci * len + best;
        }
    }
    return r;
}

template <typename T>
void maxpool1d_backward(const std::vector<std::size_t>& argmax, const Tensor<T>& dy, Tensor<T>* dx) {
    for (std::size_t i = 0; i < dy.numel(); ++i) dx->data[argmax[i]] += dy.data[i];
}

/// Affine map y = W x + b. x: N_in, w: N_out x N_in, b: N_out.
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const std::size_t n_in = x.numel();
    if (w.rank() != 2 || w.dim(1) != n_in)
        throw DimensionError("dense: weight columns " + std::to_string(w.rank() == 2 ? w.dim(1) : 0) +
                             " != input width " + std::to_string(n_in));
    const std::size_t n_out = w.dim(0);
    if (b.numel() != n_out)
        throw DimensionError("dense: bias length " + std::to_string(b.numel()) + " != rows " + std::to_string(n_out));
    Tensor<T> y({n_out});
    const T* xv = x.data.data();
    for (std::size_t o = 0; o < n_out; ++o) {
        const T* row = w.data.data() + o * n_in;
        T acc = b.data[o];
        for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * xv[i];
        y.data[o] = acc;
    }
    return y;
}

template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                    Tensor<T>* dx, std::span<T> dw, std::span<T> db) {
    const std::size_t n_in = x.numel(), n_out = w.dim(0);
    if (dw.size() != w.numel() || db.size() != n_out)
        throw DimensionError("dense_backward: gradient buffer size mismatch");
    for (std::size_t o = 0; o < n_out; ++o) {
        const T g = dy.data[o];
        db[o] += g;
        T* drow = dw.data() + o * n_in;
        const T* row = w.data.data() + o * n_in;
        const T* xv = x.data.data();
        if (dx) {
            T* dxv = dx->data.data();
            for (std::size_t i = 0; i < n_in; ++i) {
                drow[i] += g * xv[i];
                dxv[i] += g * row[i];
            }
        } else {
            for (std::size_t i = 0; i < n_in; ++i) drow[i] += g * xv[i];
        }
    }
}

/// PReLU with one trainable slope per layer: f(x) = x for x > 0, a*x otherwise.
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, T a) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v > T(0) ? v : a * v;
    return y;
}

/// da accumulates the slope gradient summed over non-positive inputs.
template <typename T>
void prelu_backward(const Tensor<T>& x, T a, const Tensor<T>& dy, Tensor<T>* dx, T* da) {
    T ag = T(0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (x.data[i] > T(0)) {
            dx->data[i] += dy.data[i];
        } else {
            dx->data[i] += a * dy.data[i];
            ag += dy.data[i] * x.data[i];
        }
    }
    if (da) *da += ag;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = std::max(v, T(0));
    return y;
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) {
    for (std::size_t i = 0; i < x.numel(); ++i)
        if (x.data[i] > T(0)) dx->data[i] += dy.data[i];
}

template <typename T>
T sigmoid(T v) {
    return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

/// SiLU: x * sigmoid(x).
template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v * sigmoid(v);
    return y;
}

template <typename T>
void silu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) {
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T s = sigmoid(x.data[i]);
        dx->data[i] += dy.data[i] * (s + x.data[i] * s * (T(1) - s));
    }
}

template <typename T>
struct DropoutResult {
    Tensor<T> y;
    std::vector<T> mask; // 0 or 1/(1-p); empty in eval mode
};

/// Inverted dropout: eval mode is the identity, train mode zeroes with
/// probability p and scales survivors by 1/(1-p).
template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, double p, RunMode mode, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ArgumentError("dropout: rate must be in [0, 1)");
    DropoutResult<T> r{x, {}};
    if (mode == RunMode::eval || p == 0.0) return r;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    r.mask.resize(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T m = rng.uniform() < p ? T(0) : keep_scale;
        r.mask[i] = m;
        r.y.data[i] = x.data[i] * m;
    }
    return r;
}

template <typename T>
void dropout_backward(const std::vector<T>& mask, const Tensor<T>& dy, Tensor<T>* dx) {
    if (mask.empty()) {
        for (std::size_t i = 0; i < dy.numel(); ++i) dx->data[i] += dy.data[i];
        return;
    }
    for (std::size_t i = 0; i < dy.numel(); ++i) dx->data[i] += dy.data[i] * mask[i];
}

/// Numerically stable softmax.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    Tensor<T> p = logits;
    T mx = p.data[0];
    for (T v : p.data) mx = std::max(mx, v);
    T sum = T(0);
    for (auto& v : p.data) { v = std::exp(v - mx); sum += v; }
    for (auto& v : p.data) v /= sum;
    return p;
}

template <typename T>
struct XentResult {
    T loss;
    Tensor<T> probs;
};

/// Softmax cross-entropy. Gradient w.r.t. logits is probs - onehot(label).
template <typename T>
XentResult<T> softmax_xent(const Tensor<T>& logits, std::size_t label) {
    if (label >= logits.numel())
        throw ArgumentError("softmax_xent: label " + std::to_string(label) + " out of range " +
                            std::to_string(logits.numel()));
    XentResult<T> r{T(0), softmax(logits)};
    const T p = std::max(r.probs.data[label], std::numeric_limits<T>::min());
    r.loss = -std::log(p);
    return r;
}

template <typename T>
void softmax_xent_backward(const Tensor<T>& probs, std::size_t label, Tensor<T>* dlogits, T scale = T(1)) {
    for (std::size_t i = 0; i < probs.numel(); ++i)
        dlogits->data[i] += scale * (probs.data[i] - (i == label ? T(1) : T(0)));
}

} // namespace rflab
