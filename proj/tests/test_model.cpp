#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "rflab/model.hpp"
#include "rflab/model_json.hpp"
#include "rflab/runtime.hpp"

using namespace rflab;

namespace {

FeatureTensor random_feature(std::size_t rows, std::size_t m, std::uint64_t seed) {
    FeatureTensor t(rows, m);
    Rng rng(seed);
    for (auto& v : t.data) v = rng.uniform(-1.5, 1.5);
    return t;
}

const Tensor<float>* find_param(const Model<float>& m, const std::string& name) {
    for (const auto& p : m.params())
        if (p.name == name) return p.tensor;
    return nullptr;
}

// independent single-layer replays used by the trace oracle
std::vector<float> oracle_conv(const std::vector<float>& x, std::size_t c_in, std::size_t len,
                               const Tensor<float>& w, const Tensor<float>& b, std::size_t stride,
                               std::size_t pad, std::size_t& out_len) {
    const std::size_t c_out = w.dim(0), k = w.dim(2);
    out_len = (len + 2 * pad - k) / stride + 1;
    std::vector<float> y(c_out * out_len);
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t t = 0; t < out_len; ++t) {
            double acc = b.data[co];
            for (std::size_t ci = 0; ci < c_in; ++ci)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + kk) -
                                               static_cast<std::ptrdiff_t>(pad);
                    if (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
                        acc += static_cast<double>(w(co, ci, kk)) * x[ci * len + static_cast<std::size_t>(src)];
                }
            y[co * out_len + t] = static_cast<float>(acc);
        }
    return y;
}

} // namespace

TEST_CASE("mbed shape cascade matches the pinned example at M=10000") {
    const auto stack = build_mbed_stack(10000, 1.0);
    const auto shapes = infer_stack_shapes(stack, {3, 10000}, "mbed");
    // conv1 -> 100x1000, conv2 -> 50x332, pool8 -> 50x41, conv3 -> 40x4, dense in 160 -> 1024
    CHECK(shapes[0] == StageShape{100, 1000});
    CHECK(shapes[2] == StageShape{50, 332});
    CHECK(shapes[4] == StageShape{50, 41});
    CHECK(shapes[6] == StageShape{40, 4});
    bool saw_flatten = false;
    for (std::size_t i = 0; i < stack.size(); ++i)
        if (stack[i].kind == LayerKind::flatten) {
            CHECK(shapes[i] == StageShape{160, 0});
            saw_flatten = true;
        }
    CHECK(saw_flatten);
    CHECK(shapes.back() == StageShape{1024, 0});
}

TEST_CASE("M >= 1e6 switches strides and enables the second pooling stage") {
    const auto stack = build_mbed_stack(1000000, 1.0);
    REQUIRE(stack[0].stride == 20);
    REQUIRE(stack[2].stride == 6);
    REQUIRE(stack[6].stride == 5);
    int pools = 0;
    for (const auto& l : stack)
        if (l.kind == LayerKind::maxpool) ++pools;
    CHECK(pools == 2);

    const auto small = build_mbed_stack(100000, 1.0);
    int pools_small = 0;
    for (const auto& l : small)
        if (l.kind == LayerKind::maxpool) ++pools_small;
    CHECK(pools_small == 1);

    const auto shapes = infer_stack_shapes(stack, {3, 1000000}, "mbed");
    CHECK(shapes[0][1] == 50000);
    CHECK(shapes[2][1] == 8333);
    CHECK(shapes[4][1] == 1041);
    CHECK(shapes[6][1] == 207);
    CHECK(shapes[8][1] == 41); // pool 5
}

TEST_CASE("too-small M fails with a configuration error naming the layer") {
    CHECK_THROWS_AS(build_mbed_atn(1000, 1.0, 10), ConfigError);
    try {
        build_mbed_atn(1000, 1.0, 10);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("conv1d") != std::string::npos);
    }
}

TEST_CASE("atn geometry: head width, score width, concat width") {
    ModelGraph g = build_mbed_atn(10000, 1.0, 10);
    const auto s = g.infer();
    CHECK(s.feature_width == 1024);
    CHECK(s.gru_hidden == 80);
    CHECK(s.branch1.back()[0] == 16224); // 32 ch x 507
    CHECK(s.branch2.back()[0] == 16352); // 32 ch x 511
    CHECK(s.concat_width == 16224 + 16352 + 80);
    CHECK(s.head.back() == StageShape{10, 0});
    CHECK(g.head[g.head.size() - 2].units == 10);
    CHECK(g.head.back().kind == LayerKind::softmax);

    CHECK_THROWS_AS(build_atn_into(g, 4, 1.0, 10, 1), ConfigError);
}

TEST_CASE("shape inference oracle equals runtime shapes") {
    const ModelGraph g = build_mbed_atn(4000, 0.1, 5);
    const auto s = g.infer();
    Model<float> model(g);
    model.init_params(Rng(1));

    StackTrace<float> mtr;
    Tensor<float> x = model.input_from(random_feature(3, 4000, 2));
    Tensor<float> f = model.forward_mbed(x, RunMode::eval, nullptr, &mtr);
    REQUIRE(mtr.outs.size() == s.mbed.size());
    for (std::size_t i = 0; i < s.mbed.size(); ++i) {
        if (s.mbed[i][1] == 0) {
            CHECK(mtr.outs[i].shape == std::vector<std::size_t>{s.mbed[i][0]});
        } else {
            CHECK(mtr.outs[i].shape == std::vector<std::size_t>{s.mbed[i][0], s.mbed[i][1]});
        }
    }
    CHECK(f.numel() == s.feature_width);

    AtnTrace<float> atr;
    Tensor<float> logits = model.forward_atn_logits(f, RunMode::eval, nullptr, &atr);
    CHECK(atr.b1.outs.back().numel() == s.branch1.back()[0]);
    CHECK(atr.b2.outs.back().numel() == s.branch2.back()[0]);
    CHECK(atr.concat.numel() == s.concat_width);
    CHECK(logits.numel() == static_cast<std::size_t>(g.num_classes));
}

TEST_CASE("zeroed final dense gives uniform class probabilities") {
    const ModelGraph g = build_mbed_atn(4000, 0.1, 5);
    Model<float> model(g);
    model.init_params(Rng(3));
    for (const auto& p : model.params())
        if (p.name.find("atn.head.6.dense") != std::string::npos)
            p.tensor->data.assign(p.tensor->numel(), 0.0f);

    Tensor<float> x = model.input_from(random_feature(3, 4000, 5));
    const std::vector<float> probs = model.forward_probs(x, RunMode::eval);
    REQUIRE(probs.size() == 5);
    for (float p : probs) CHECK(p == Catch::Approx(0.2).epsilon(1e-5));
}

TEST_CASE("eval-mode forward is bit-identical across calls and softmax normalizes") {
    const ModelGraph g = build_mbed_atn(4000, 0.1, 5);
    Model<float> model(g);
    model.init_params(Rng(7));
    Tensor<float> x = model.input_from(random_feature(3, 4000, 8));
    const auto p1 = model.forward_probs(x, RunMode::eval);
    const auto p2 = model.forward_probs(x, RunMode::eval);
    CHECK(p1 == p2);
    float sum = 0.0f;
    for (float p : p1) sum += p;
    CHECK(std::abs(sum - 1.0f) <= 1e-6f);
}

TEST_CASE("composition invariant: full forward equals atn(mbed(x))") {
    const ModelGraph g = build_mbed_atn(4000, 0.1, 5);
    Model<float> model(g);
    model.init_params(Rng(11));
    Tensor<float> x = model.input_from(random_feature(3, 4000, 12));

    const std::vector<float> probs = model.forward_probs(x, RunMode::eval);
    Tensor<float> f = model.forward_mbed(x, RunMode::eval, nullptr);
    Tensor<float> logits = model.forward_atn_logits(f, RunMode::eval, nullptr);
    const std::vector<float> manual = softmax(logits).data;
    CHECK(probs == manual);
}

TEST_CASE("argmax is invariant under adding a constant to all logits") {
    const ModelGraph g = build_mbed_atn(4000, 0.1, 5);
    Model<float> model(g);
    model.init_params(Rng(13));
    Tensor<float> x = model.input_from(random_feature(3, 4000, 14));
    const auto probs = model.forward_probs(x, RunMode::eval);
    const auto argmax = [](const std::vector<float>& v) {
        std::size_t b = 0;
        for (std::size_t i = 1; i < v.size(); ++i)
            if (v[i] > v[b]) b = i;
        return b;
    };
    const std::size_t before = argmax(probs);

    // shift every logit by a constant through the final dense bias
    for (const auto& p : model.params())
        if (p.name.find("atn.head.6.dense.b") != std::string::npos)
            for (auto& v : p.tensor->data) v += 3.7f;
    const auto shifted = model.forward_probs(x, RunMode::eval);
    CHECK(argmax(shifted) == before);
}

TEST_CASE("forward trace matches an independent per-layer replay (32-bit)") {
    const ModelGraph g = build_mbed_atn(4000, 0.1, 5);
    Model<float> model(g);
    model.init_params(Rng(17));
    Tensor<float> x = model.input_from(random_feature(3, 4000, 18));

    StackTrace<float> tr;
    model.forward_mbed(x, RunMode::eval, nullptr, &tr);

    // replay the mbed stack layer by layer
    std::vector<float> cur = x.data;
    std::size_t ch = 3, len = 4000;
    for (std::size_t i = 0; i < g.mbed.size(); ++i) {
        const LayerSpec& l = g.mbed[i];
        const std::string base = "mbed." + std::to_string(i) + "." + layer_kind_name(l.kind);
        std::vector<float> next;
        switch (l.kind) {
            case LayerKind::conv1d: {
                std::size_t out_len = 0;
                next = oracle_conv(cur, ch, len, *find_param(model, base + ".w"), *find_param(model, base + ".b"),
                                   l.stride, l.padding, out_len);
                ch = l.channels;
                len = out_len;
                break;
            }
            case LayerKind::prelu: {
                const float a = find_param(model, base + ".a")->data[0];
                next = cur;
                for (auto& v : next) v = v > 0 ? v : a * v;
                break;
            }
            case LayerKind::relu:
                next = cur;
                for (auto& v : next) v = std::max(v, 0.0f);
                break;
            case LayerKind::maxpool: {
                const std::size_t w = static_cast<std::size_t>(l.window), lo = len / w;
                next.resize(ch * lo);
                for (std::size_t c = 0; c < ch; ++c)
                    for (std::size_t t = 0; t < lo; ++t) {
                        float m = cur[c * len + t * w];
                        for (std::size_t j = 1; j < w; ++j) m = std::max(m, cur[c * len + t * w + j]);
                        next[c * lo + t] = m;
                    }
                len = lo;
                break;
            }
            case LayerKind::dropout: // eval mode: identity
            case LayerKind::flatten:
            case LayerKind::softmax:
                next = cur;
                break;
            case LayerKind::dense: {
                const Tensor<float>& w = *find_param(model, base + ".w");
                const Tensor<float>& b = *find_param(model, base + ".b");
                next.resize(w.dim(0));
                for (std::size_t o = 0; o < w.dim(0); ++o) {
                    double acc = b.data[o];
                    for (std::size_t j = 0; j < w.dim(1); ++j) acc += static_cast<double>(w(o, j)) * cur[j];
                    next[o] = static_cast<float>(acc);
                }
                break;
            }
            default:
                FAIL("unexpected layer in mbed stack");
        }
        cur = std::move(next);
        REQUIRE(tr.outs[i].numel() == cur.size());
        for (std::size_t j = 0; j < cur.size(); ++j)
            CHECK(std::abs(tr.outs[i].data[j] - cur[j]) <= 1e-5f * std::max(1.0f, std::abs(cur[j])));
    }
}

TEST_CASE("train-mode forward with the same rng stream is reproducible") {
    const ModelGraph g = build_mbed_atn(4000, 0.1, 5);
    Model<float> model(g);
    model.init_params(Rng(19));
    Tensor<float> x = model.input_from(random_feature(3, 4000, 20));
    Rng r1(123), r2(123);
    Tensor<float> f1 = model.forward_mbed(x, RunMode::train, &r1);
    Tensor<float> f2 = model.forward_mbed(x, RunMode::train, &r2);
    CHECK(f1.data == f2.data);
}

TEST_CASE("raw-iq graphs take 2-channel input") {
    const ModelGraph g = build_mbed_atn(4000, 0.1, 5, /*in_channels=*/2);
    Model<float> model(g);
    model.init_params(Rng(23));
    Tensor<float> x = model.input_from(random_feature(2, 4000, 24));
    CHECK(model.forward_probs(x, RunMode::eval).size() == 5);
    CHECK_THROWS_AS(model.input_from(random_feature(3, 4000, 25)), DimensionError);
}

TEST_CASE("gru chunk option reshapes the branch sequence") {
    const ModelGraph g = build_mbed_atn(10000, 1.0, 10, 3, /*gru_chunk=*/4);
    const auto s = g.infer();
    CHECK(s.gru_steps == 256);
    CHECK(s.gru_feat == 4);
    // feature width not divisible by chunk is a configuration error
    ModelGraph bad = g;
    bad.gru.chunk = 7;
    CHECK_THROWS_AS(bad.infer(), ConfigError);
}

TEST_CASE("params file round trip restores the exact forward behavior") {
    const ModelGraph g = build_mbed_atn(4000, 0.1, 5);
    Model<float> a(g);
    a.init_params(Rng(29));
    const std::string path = (std::filesystem::temp_directory_path() / "rflab_model.params").string();
    a.save_params(path);

    Model<float> b(g);
    b.init_params(Rng(31)); // different init, then overwritten by load
    b.load_params(path);
    CHECK(a.checksum() == b.checksum());

    Tensor<float> x = a.input_from(random_feature(3, 4000, 30));
    CHECK(a.forward_probs(x, RunMode::eval) == b.forward_probs(x, RunMode::eval));
    std::filesystem::remove(path);
}

TEST_CASE("graph json round trip preserves the architecture") {
    const ModelGraph g = build_mbed_atn(10000, 0.5, 7, 3, 2);
    const json j = to_json(g);
    const ModelGraph back = graph_from_json(j, "test");
    CHECK(back.input_len == g.input_len);
    CHECK(back.num_classes == 7);
    CHECK(back.infer().concat_width == g.infer().concat_width);
    CHECK(back.gru.chunk == 2);
    CHECK(back.mbed.size() == g.mbed.size());
}

TEST_CASE("full-model gradient check on a scaled graph (64-bit)") {
    const ModelGraph g = build_mbed_atn(4000, 0.05, 3);
    Model<double> model(g);
    model.init_params(Rng(37));
    Tensor<double> x = model.input_from(random_feature(3, 4000, 38));
    const std::size_t label = 1;

    // a fixed rng stream per evaluation keeps the dropout masks identical,
    // so the train-mode loss is a deterministic differentiable function
    auto loss_at = [&]() {
        Rng r(555);
        GradBuffer<double> scratch;
        scratch.init_like(model.params());
        return model.loss_and_grad_full(x, label, r, scratch);
    };

    GradBuffer<double> gb;
    gb.init_like(model.params());
    {
        Rng r(555);
        model.loss_and_grad_full(x, label, r, gb);
    }

    Rng pick(41);
    const double h = 1e-6, tol = 1e-4;
    const auto& params = model.params();
    for (int sample = 0; sample < 60; ++sample) {
        const std::size_t pi = pick.index(params.size());
        if (params[pi].tensor->numel() == 0) continue;
        const std::size_t ei = pick.index(params[pi].tensor->numel());
        const double keep = params[pi].tensor->data[ei];
        params[pi].tensor->data[ei] = keep + h;
        const double jp = loss_at();
        params[pi].tensor->data[ei] = keep - h;
        const double jm = loss_at();
        params[pi].tensor->data[ei] = keep;
        const double fd = (jp - jm) / (2 * h);
        const double got = gb.g[pi][ei];
        CHECK(std::abs(got - fd) / std::max(1.0, std::abs(fd)) <= tol);
    }
}
