#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rflab/errors.hpp"
#include "rflab/gru.hpp"
#include "rflab/model.hpp"
#include "rflab/ops.hpp"
#include "rflab/serialize.hpp"

namespace rflab {

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor = nullptr;
    bool trainable = true;
};

/// Gradient storage parallel to a model's parameter list. Kept separate from
/// the parameters so concurrent workers can accumulate privately and reduce
/// deterministically.
template <typename T>
struct GradBuffer {
    std::vector<std::vector<T>> g;

    void init_like(const std::vector<ParamRef<T>>& params) {
        g.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) g[i].assign(params[i].tensor->numel(), T(0));
    }
    void zero() {
        for (auto& v : g) std::fill(v.begin(), v.end(), T(0));
    }
    void add(const GradBuffer& o) {
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = 0; j < g[i].size(); ++j) g[i][j] += o.g[i][j];
    }
    void scale(T s) {
        for (auto& v : g)
            for (auto& x : v) x *= s;
    }
    std::span<T> at(std::size_t i) { return {g[i].data(), g[i].size()}; }
};

template <typename T>
struct StackTrace {
    Tensor<T> in;
    std::vector<Tensor<T>> outs;
    std::vector<std::vector<std::size_t>> argmax;
    std::vector<std::vector<T>> mask;
};

template <typename T>
struct AtnTrace {
    StackTrace<T> b1, b2, head;
    Tensor<T> gru_in;  // steps x feat view of f
    GruTrace<T> gru;
    Tensor<T> gru_h0, gru_hT;
    Tensor<T> o3, s;   // last hidden state and its SiLU score
    Tensor<T> concat;
};

template <typename T>
struct FullTrace {
    StackTrace<T> mbed;
    Tensor<T> f;
    StackTrace<T> temp;
    AtnTrace<T> atn;
};

/// Instantiated Mbed-ATN: owns the parameter tensors behind a ModelGraph and
/// runs forward/backward. Parameters are shared-read during forward; training
/// mutates them only through the optimizer between batches.
template <typename T>
class Model {
public:
    explicit Model(ModelGraph graph) : graph_(std::move(graph)), shapes_(graph_.infer()) {
        build_stack("mbed.", graph_.mbed, {static_cast<std::size_t>(graph_.in_channels), graph_.input_len},
                    mbed_idx_);
        build_stack("temp_head.", graph_.temp_head, {shapes_.feature_width, 0}, temp_idx_);
        if (graph_.has_atn) {
            build_stack("atn.b1.", graph_.branch1, {1, shapes_.feature_width}, b1_idx_);
            build_stack("atn.b2.", graph_.branch2, {1, shapes_.feature_width}, b2_idx_);
            gru_ = GruParams<T>::make(shapes_.gru_hidden, graph_.gru.layers, shapes_.gru_feat);
            for (std::size_t l = 0; l < gru_.num_layers; ++l) {
                const std::string p = "atn.gru.l" + std::to_string(l) + ".";
                auto& lp = gru_.layer[l];
                add_param(p + "W_u", &lp.W_u);
                add_param(p + "W_r", &lp.W_r);
                add_param(p + "W_h", &lp.W_h);
                add_param(p + "R_u", &lp.R_u);
                add_param(p + "R_r", &lp.R_r);
                add_param(p + "R_h", &lp.R_h);
                add_param(p + "b_u", &lp.b_u);
                add_param(p + "b_r", &lp.b_r);
                add_param(p + "b_h", &lp.b_h);
            }
            build_stack("atn.head.", graph_.head, {shapes_.concat_width, 0}, head_idx_);
        }
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelGraph& graph() const { return graph_; }
    const ModelGraph::Shapes& shapes() const { return shapes_; }
    const std::vector<ParamRef<T>>& params() const { return params_; }
    std::vector<ParamRef<T>>& params_mutable() { return params_; }

    std::size_t param_count(const std::string& prefix = "") const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p.name.rfind(prefix, 0) == 0) n += p.tensor->numel();
        return n;
    }

    /// Kaiming-uniform fan-in for conv/dense, +-1/sqrt(hidden) for GRU
    /// matrices, 0.25 for PReLU slopes, zero biases.
    void init_params(Rng rng) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            ParamRef<T>& p = params_[i];
            Rng prng = rng.derive({0x696E6974ULL, i});
            const std::string& n = p.name;
            const bool is_gru = n.find(".gru.") != std::string::npos;
            if (n.ends_with(".a")) {
                p.tensor->data.assign(p.tensor->numel(), T(0.25));
            } else if (is_gru && (n.ends_with("W_u") || n.ends_with("W_r") || n.ends_with("W_h") ||
                                  n.ends_with("R_u") || n.ends_with("R_r") || n.ends_with("R_h"))) {
                const double bound = 1.0 / std::sqrt(static_cast<double>(gru_.hidden));
                p.tensor->fill_uniform(prng, -bound, bound);
            } else if (n.ends_with(".w")) {
                const std::size_t fan_in = p.tensor->rank() == 3 ? p.tensor->dim(1) * p.tensor->dim(2)
                                                                 : p.tensor->dim(1);
                const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
                p.tensor->fill_uniform(prng, -bound, bound);
            } else {
                p.tensor->data.assign(p.tensor->numel(), T(0)); // biases
            }
        }
    }

    void set_trainable(const std::string& prefix, bool on) {
        for (auto& p : params_)
            if (p.name.rfind(prefix, 0) == 0) p.trainable = on;
    }

    /// FNV-1a over the raw bytes of every parameter whose name starts with
    /// prefix, in declaration order.
    std::uint64_t checksum(const std::string& prefix = "") const {
        std::uint64_t h = 1469598103934665603ULL;
        for (const auto& p : params_) {
            if (p.name.rfind(prefix, 0) != 0) continue;
            const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p.tensor->data.data());
            const std::size_t nb = p.tensor->numel() * sizeof(T);
            for (std::size_t i = 0; i < nb; ++i) {
                h ^= bytes[i];
                h *= 1099511628211ULL;
            }
        }
        return h;
    }

    void save_params(const std::string& path, const std::string& prefix = "") const {
        std::vector<NamedTensorView> views;
        for (const auto& p : params_) {
            if (p.name.rfind(prefix, 0) != 0) continue;
            NamedTensorView v;
            v.name = p.name;
            v.dims.assign(p.tensor->shape.begin(), p.tensor->shape.end());
            v.values.reserve(p.tensor->numel());
            for (T x : p.tensor->data) v.values.push_back(static_cast<float>(x));
            views.push_back(std::move(v));
        }
        write_params_file(path, views);
    }

    /// Loads by name; every record must match an existing parameter shape.
    void load_params(const std::string& path) {
        for (const auto& rec : read_params_file(path)) {
            auto it = by_name_.find(rec.name);
            if (it == by_name_.end()) throw FormatError("params file has unknown parameter: " + rec.name);
            Tensor<T>* t = params_[it->second].tensor;
            if (rec.values.size() != t->numel())
                throw FormatError("params file shape mismatch for " + rec.name);
            for (std::size_t i = 0; i < rec.values.size(); ++i) t->data[i] = static_cast<T>(rec.values[i]);
        }
    }

    Tensor<T> input_from(const FeatureTensor& x) const {
        if (x.rows != static_cast<std::size_t>(graph_.in_channels) || x.m != graph_.input_len)
            throw DimensionError("model input must be " + std::to_string(graph_.in_channels) + " x " +
                                 std::to_string(graph_.input_len) + ", got " + std::to_string(x.rows) + " x " +
                                 std::to_string(x.m));
        Tensor<T> t({x.rows, x.m});
        for (std::size_t i = 0; i < x.data.size(); ++i) t.data[i] = static_cast<T>(x.data[i]);
        return t;
    }

    /// Embedding vector f.
    Tensor<T> forward_mbed(const Tensor<T>& x, RunMode mode, Rng* rng, StackTrace<T>* tr = nullptr) const {
        StackTrace<T> local;
        StackTrace<T>& t = tr ? *tr : local;
        return run_stack(graph_.mbed, mbed_idx_, x, mode, rng, t);
    }

    Tensor<T> forward_temp_logits(const Tensor<T>& f, RunMode mode, Rng* rng, StackTrace<T>* tr = nullptr) const {
        if (graph_.temp_head.empty()) throw ConfigError("model has no temporary classification head");
        StackTrace<T> local;
        return run_stack(graph_.temp_head, temp_idx_, f, mode, rng, tr ? *tr : local);
    }

    /// ATN logits from the embedding vector (Eq-style: two conv branches, a
    /// GRU branch scored by SiLU, concatenation, dense head).
    Tensor<T> forward_atn_logits(const Tensor<T>& f, RunMode mode, Rng* rng, AtnTrace<T>* tr = nullptr) const {
        if (!graph_.has_atn) throw ConfigError("model has no ATN module");
        AtnTrace<T> local;
        AtnTrace<T>& t = tr ? *tr : local;

        Tensor<T> fin({1, f.numel()}, f.data);
        Tensor<T> o1 = run_stack(graph_.branch1, b1_idx_, fin, mode, rng, t.b1);
        Tensor<T> o2 = run_stack(graph_.branch2, b2_idx_, fin, mode, rng, t.b2);

        t.gru_in = Tensor<T>({shapes_.gru_steps, shapes_.gru_feat}, f.data);
        t.gru_h0 = Tensor<T>({gru_.num_layers, gru_.hidden});
        GruOutput<T> go = gru_forward(t.gru_in, gru_, t.gru_h0, mode, graph_.gru.rate, rng,
                                      tr ? &t.gru : nullptr);
        t.gru_hT = std::move(go.h_final);
        t.o3 = Tensor<T>({gru_.hidden});
        for (std::size_t i = 0; i < gru_.hidden; ++i) t.o3.data[i] = t.gru_hT(gru_.num_layers - 1, i);
        t.s = silu(t.o3);

        t.concat = Tensor<T>({shapes_.concat_width});
        std::size_t off = 0;
        for (T v : o1.data) t.concat.data[off++] = v;
        for (T v : o2.data) t.concat.data[off++] = v;
        for (T v : t.s.data) t.concat.data[off++] = v;

        return run_stack(graph_.head, head_idx_, t.concat, mode, rng, t.head);
    }

    /// Class probabilities through the full model (ATN when present, the
    /// temporary stage-1 head otherwise).
    std::vector<T> forward_probs(const Tensor<T>& x, RunMode mode, Rng* rng = nullptr) const {
        Tensor<T> f = forward_mbed(x, mode, rng);
        Tensor<T> logits = graph_.has_atn ? forward_atn_logits(f, mode, rng) : forward_temp_logits(f, mode, rng);
        return softmax(logits).data;
    }

    /// Stage-1 training step piece: loss + gradients for mbed and temp head.
    T loss_and_grad_stage1(const Tensor<T>& x, std::size_t label, Rng& rng, GradBuffer<T>& gb) const {
        FullTrace<T> tr;
        Tensor<T> f = forward_mbed(x, RunMode::train, &rng, &tr.mbed);
        Tensor<T> logits = forward_temp_logits(f, RunMode::train, &rng, &tr.temp);
        XentResult<T> xe = softmax_xent(logits, label);
        Tensor<T> dlogits(logits.shape);
        softmax_xent_backward(xe.probs, label, &dlogits);
        Tensor<T> df = backward_stack(graph_.temp_head, temp_idx_, tr.temp, dlogits, gb);
        backward_stack(graph_.mbed, mbed_idx_, tr.mbed, df, gb);
        return xe.loss;
    }

    /// Stage-2 training step piece: ATN loss + gradients from a precomputed
    /// embedding vector. Mbed parameters are untouched by construction.
    T loss_and_grad_atn(const Tensor<T>& f, std::size_t label, Rng& rng, GradBuffer<T>& gb) const {
        AtnTrace<T> tr;
        Tensor<T> logits = forward_atn_logits(f, RunMode::train, &rng, &tr);
        XentResult<T> xe = softmax_xent(logits, label);
        Tensor<T> dlogits(logits.shape);
        softmax_xent_backward(xe.probs, label, &dlogits);
        backward_atn(tr, dlogits, gb, nullptr);
        return xe.loss;
    }

    /// Whole-model gradient (through mbed) - used by the gradient checks.
    T loss_and_grad_full(const Tensor<T>& x, std::size_t label, Rng& rng, GradBuffer<T>& gb,
                         Tensor<T>* dx = nullptr) const {
        FullTrace<T> tr;
        Tensor<T> f = forward_mbed(x, RunMode::train, &rng, &tr.mbed);
        Tensor<T> logits;
        if (graph_.has_atn) logits = forward_atn_logits(f, RunMode::train, &rng, &tr.atn);
        else logits = forward_temp_logits(f, RunMode::train, &rng, &tr.temp);
        XentResult<T> xe = softmax_xent(logits, label);
        Tensor<T> dlogits(logits.shape);
        softmax_xent_backward(xe.probs, label, &dlogits);
        Tensor<T> df(f.shape);
        if (graph_.has_atn) backward_atn(tr.atn, dlogits, gb, &df);
        else df = backward_stack(graph_.temp_head, temp_idx_, tr.temp, dlogits, gb);
        Tensor<T> dxin = backward_stack(graph_.mbed, mbed_idx_, tr.mbed, df, gb);
        if (dx) *dx = std::move(dxin);
        return xe.loss;
    }

private:
    struct StepParams {
        int a = -1, b = -1;
    };

    ModelGraph graph_;
    ModelGraph::Shapes shapes_;
    std::deque<Tensor<T>> store_;
    GruParams<T> gru_;
    std::vector<ParamRef<T>> params_;
    std::unordered_map<std::string, std::size_t> by_name_;
    std::vector<StepParams> mbed_idx_, temp_idx_, b1_idx_, b2_idx_, head_idx_;

    int add_param(const std::string& name, Tensor<T>* t) {
        params_.push_back(ParamRef<T>{name, t, true});
        by_name_[name] = params_.size() - 1;
        return static_cast<int>(params_.size() - 1);
    }

    Tensor<T>* alloc(std::vector<std::size_t> shape) {
        store_.emplace_back(std::move(shape));
        return &store_.back();
    }

    void build_stack(const std::string& prefix, const std::vector<LayerSpec>& stack, StageShape in,
                     std::vector<StepParams>& idx) {
        const auto shapes = infer_stack_shapes(stack, in, prefix);
        idx.assign(stack.size(), {});
        StageShape cur = in;
        for (std::size_t i = 0; i < stack.size(); ++i) {
            const LayerSpec& l = stack[i];
            const std::string base = prefix + std::to_string(i) + "." + layer_kind_name(l.kind);
            if (l.kind == LayerKind::conv1d) {
                idx[i].a = add_param(base + ".w", alloc({static_cast<std::size_t>(l.channels), cur[0],
                                                         static_cast<std::size_t>(l.kernel)}));
                idx[i].b = add_param(base + ".b", alloc({static_cast<std::size_t>(l.channels)}));
            } else if (l.kind == LayerKind::dense) {
                idx[i].a = add_param(base + ".w", alloc({static_cast<std::size_t>(l.units), stage_numel(cur)}));
                idx[i].b = add_param(base + ".b", alloc({static_cast<std::size_t>(l.units)}));
            } else if (l.kind == LayerKind::prelu) {
                idx[i].a = add_param(base + ".a", alloc({1}));
            }
            cur = shapes[i];
        }
    }

    Tensor<T> run_stack(const std::vector<LayerSpec>& stack, const std::vector<StepParams>& idx,
                        const Tensor<T>& input, RunMode mode, Rng* rng, StackTrace<T>& tr) const {
        tr.in = input;
        tr.outs.assign(stack.size(), Tensor<T>());
        tr.argmax.assign(stack.size(), {});
        tr.mask.assign(stack.size(), {});
        const Tensor<T>* cur = &tr.in;
        for (std::size_t i = 0; i < stack.size(); ++i) {
            const LayerSpec& l = stack[i];
            switch (l.kind) {
                case LayerKind::conv1d:
                    tr.outs[i] = conv1d(*cur, *params_[idx[i].a].tensor, *params_[idx[i].b].tensor,
                                        static_cast<std::size_t>(l.stride), static_cast<std::size_t>(l.padding));
                    break;
                case LayerKind::prelu:
                    tr.outs[i] = prelu(*cur, params_[idx[i].a].tensor->data[0]);
                    break;
                case LayerKind::relu:
                    tr.outs[i] = relu(*cur);
                    break;
                case LayerKind::silu:
                    tr.outs[i] = silu(*cur);
                    break;
                case LayerKind::maxpool: {
                    MaxPoolResult<T> r = maxpool1d(*cur, static_cast<std::size_t>(l.window));
                    tr.outs[i] = std::move(r.y);
                    tr.argmax[i] = std::move(r.argmax);
                    break;
                }
                case LayerKind::dropout: {
                    if (mode == RunMode::train && !rng)
                        throw ArgumentError("train-mode forward needs an rng for dropout");
                    DropoutResult<T> r = dropout(*cur, l.rate, mode, mode == RunMode::train ? *rng : dummy_rng_);
                    tr.outs[i] = std::move(r.y);
                    tr.mask[i] = std::move(r.mask);
                    break;
                }
                case LayerKind::dense:
                    tr.outs[i] = dense(*cur, *params_[idx[i].a].tensor, *params_[idx[i].b].tensor);
                    break;
                case LayerKind::flatten:
                    tr.outs[i] = Tensor<T>({cur->numel()}, cur->data);
                    break;
                case LayerKind::softmax:
                    tr.outs[i] = *cur; // logits pass through; softmax applied at the loss/prob boundary
                    break;
                case LayerKind::gru:
                    throw ConfigError("gru inside a plain stack");
            }
            cur = &tr.outs[i];
        }
        return *cur;
    }

    Tensor<T> backward_stack(const std::vector<LayerSpec>& stack, const std::vector<StepParams>& idx,
                             const StackTrace<T>& tr, const Tensor<T>& dout, GradBuffer<T>& gb) const {
        Tensor<T> dcur = dout;
        for (std::size_t i = stack.size(); i-- > 0;) {
            const LayerSpec& l = stack[i];
            const Tensor<T>& in = i == 0 ? tr.in : tr.outs[i - 1];
            Tensor<T> dprev(in.shape);
            switch (l.kind) {
                case LayerKind::conv1d:
                    conv1d_backward(in, *params_[idx[i].a].tensor, static_cast<std::size_t>(l.stride),
                                    static_cast<std::size_t>(l.padding), dcur, &dprev,
                                    gb.at(static_cast<std::size_t>(idx[i].a)), gb.at(static_cast<std::size_t>(idx[i].b)));
                    break;
                case LayerKind::prelu:
                    prelu_backward(in, params_[idx[i].a].tensor->data[0], dcur, &dprev,
                                   gb.at(static_cast<std::size_t>(idx[i].a)).data());
                    break;
                case LayerKind::relu:
                    relu_backward(in, dcur, &dprev);
                    break;
                case LayerKind::silu:
                    silu_backward(in, dcur, &dprev);
                    break;
                case LayerKind::maxpool:
                    maxpool1d_backward(tr.argmax[i], dcur, &dprev);
                    break;
                case LayerKind::dropout:
                    dropout_backward(tr.mask[i], dcur, &dprev);
                    break;
                case LayerKind::dense:
                    dense_backward(in, *params_[idx[i].a].tensor, dcur, &dprev,
                                   gb.at(static_cast<std::size_t>(idx[i].a)), gb.at(static_cast<std::size_t>(idx[i].b)));
                    break;
                case LayerKind::flatten:
                    dprev.data = dcur.data;
                    break;
                case LayerKind::softmax:
                    dprev.data = dcur.data;
                    break;
                case LayerKind::gru:
                    throw ConfigError("gru inside a plain stack");
            }
            dcur = std::move(dprev);
        }
        return dcur;
    }

    /// Backward through branches + GRU + head; accumulates parameter grads
    /// and optionally the gradient w.r.t. the embedding vector f.
    void backward_atn(const AtnTrace<T>& tr, const Tensor<T>& dlogits, GradBuffer<T>& gb, Tensor<T>* df) const {
        Tensor<T> dconcat = backward_stack(graph_.head, head_idx_, tr.head, dlogits, gb);

        const std::size_t w1 = shapes_.branch1.back()[0];
        const std::size_t w2 = shapes_.branch2.back()[0];
        const std::size_t hw = shapes_.gru_hidden;

        Tensor<T> d_o1({w1});
        Tensor<T> d_o2({w2});
        Tensor<T> d_s({hw});
        std::copy_n(dconcat.data.begin(), w1, d_o1.data.begin());
        std::copy_n(dconcat.data.begin() + w1, w2, d_o2.data.begin());
        std::copy_n(dconcat.data.begin() + w1 + w2, hw, d_s.data.begin());

        Tensor<T> df1 = backward_stack(graph_.branch1, b1_idx_, tr.b1, d_o1, gb);
        Tensor<T> df2 = backward_stack(graph_.branch2, b2_idx_, tr.b2, d_o2, gb);

        Tensor<T> d_o3({hw});
        silu_backward(tr.o3, d_s, &d_o3);
        Tensor<T> d_hT({gru_.num_layers, gru_.hidden});
        for (std::size_t i = 0; i < hw; ++i) d_hT(gru_.num_layers - 1, i) = d_o3.data[i];

        std::vector<GruLayerGrads<T>> lg(gru_.num_layers);
        for (std::size_t l = 0; l < gru_.num_layers; ++l) {
            const std::size_t base = by_name_.at("atn.gru.l" + std::to_string(l) + ".W_u");
            lg[l].W_u = gb.at(base);
            lg[l].W_r = gb.at(base + 1);
            lg[l].W_h = gb.at(base + 2);
            lg[l].R_u = gb.at(base + 3);
            lg[l].R_r = gb.at(base + 4);
            lg[l].R_h = gb.at(base + 5);
            lg[l].b_u = gb.at(base + 6);
            lg[l].b_r = gb.at(base + 7);
            lg[l].b_h = gb.at(base + 8);
        }
        Tensor<T> dseq({shapes_.gru_steps, shapes_.gru_feat});
        gru_backward(gru_, tr.gru_h0, tr.gru, static_cast<const Tensor<T>*>(nullptr), &d_hT, lg,
                     df ? &dseq : nullptr);

        if (df) {
            for (std::size_t i = 0; i < df->numel(); ++i)
                df->data[i] = df1.data[i] + df2.data[i] + dseq.data[i];
        }
    }

    mutable Rng dummy_rng_{0};
};

} // namespace rflab
