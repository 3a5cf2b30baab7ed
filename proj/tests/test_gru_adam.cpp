#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rflab/adam.hpp"
#include "rflab/gru.hpp"
#include "rflab/rng.hpp"

using namespace rflab;

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Scalar-loop oracle for one GRU layer over a full sequence. Independent of
// the implementation's traversal and storage.
std::vector<double> gru_layer_oracle(const GruLayerParams<double>& p, const std::vector<double>& seq,
                                     std::size_t steps, std::size_t feat, std::vector<double> h) {
    const std::size_t H = p.b_u.numel();
    std::vector<double> out(steps * H);
    for (std::size_t t = 0; t < steps; ++t) {
        std::vector<double> u(H), r(H), hc(H);
        for (std::size_t i = 0; i < H; ++i) {
            double au = p.b_u.data[i], ar = p.b_r.data[i];
            for (std::size_t j = 0; j < feat; ++j) {
                au += p.W_u(i, j) * seq[t * feat + j];
                ar += p.W_r(i, j) * seq[t * feat + j];
            }
            for (std::size_t j = 0; j < H; ++j) {
                au += p.R_u(i, j) * h[j];
                ar += p.R_r(i, j) * h[j];
            }
            u[i] = sig(au);
            r[i] = sig(ar);
        }
        for (std::size_t i = 0; i < H; ++i) {
            double ah = p.b_h.data[i];
            for (std::size_t j = 0; j < feat; ++j) ah += p.W_h(i, j) * seq[t * feat + j];
            for (std::size_t j = 0; j < H; ++j) ah += p.R_h(i, j) * (r[j] * h[j]);
            hc[i] = std::tanh(ah);
        }
        for (std::size_t i = 0; i < H; ++i) {
            h[i] = (1.0 - u[i]) * h[i] + u[i] * hc[i];
            out[t * H + i] = h[i];
        }
    }
    return out;
}

void randomize(GruParams<double>& p, Rng& rng) {
    for (auto& l : p.layer) {
        for (Tensor<double>* t : {&l.W_u, &l.W_r, &l.W_h, &l.R_u, &l.R_r, &l.R_h, &l.b_u, &l.b_r, &l.b_h})
            t->fill_uniform(rng, -0.8, 0.8);
    }
}

} // namespace

TEST_CASE("gru closed form with zero weights") {
    // u = r = 0.5, candidate 0, so h_t = 0.5^t * v
    const std::size_t H = 3, T = 6;
    GruParams<double> p = GruParams<double>::make(H, 1, 2);
    Tensor<double> h0({1, H}, {1.0, -2.0, 0.5});
    Tensor<double> seq({T, 2});
    Rng rng(5);
    seq.fill_uniform(rng, -1, 1); // values are irrelevant with zero weights
    auto out = gru_forward(seq, p, h0);
    for (std::size_t t = 0; t < T; ++t) {
        const double f = std::pow(0.5, static_cast<double>(t + 1));
        for (std::size_t i = 0; i < H; ++i)
            CHECK(out.outputs(t, i) == Catch::Approx(f * h0(0, i)).epsilon(1e-12));
    }
    for (std::size_t i = 0; i < H; ++i)
        CHECK(out.h_final(0, i) == Catch::Approx(std::pow(0.5, T) * h0(0, i)).epsilon(1e-12));
}

TEST_CASE("gru single step matches hand-unrolled gates") {
    Rng rng(17);
    GruParams<double> p = GruParams<double>::make(4, 1, 3);
    randomize(p, rng);
    Tensor<double> h0({1, 4});
    h0.fill_uniform(rng, -1, 1);
    Tensor<double> seq({1, 3});
    seq.fill_uniform(rng, -1, 1);

    auto out = gru_forward(seq, p, h0);
    std::vector<double> h(4);
    for (std::size_t i = 0; i < 4; ++i) h[i] = h0(0, i);
    auto ref = gru_layer_oracle(p.layer[0], seq.data, 1, 3, h);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out.h_final(0, i) - ref[i]) <= 1e-12);
}

TEST_CASE("stacked gru matches layer-by-layer oracle") {
    Rng rng(29);
    const std::size_t H = 4, T = 5, F = 3, L = 3;
    GruParams<double> p = GruParams<double>::make(H, L, F);
    randomize(p, rng);
    Tensor<double> h0({L, H});
    h0.fill_uniform(rng, -0.5, 0.5);
    Tensor<double> seq({T, F});
    seq.fill_uniform(rng, -1, 1);

    auto out = gru_forward(seq, p, h0);

    std::vector<double> cur = seq.data;
    std::size_t cur_w = F;
    for (std::size_t l = 0; l < L; ++l) {
        std::vector<double> h(H);
        for (std::size_t i = 0; i < H; ++i) h[i] = h0(l, i);
        cur = gru_layer_oracle(p.layer[l], cur, T, cur_w, h);
        cur_w = H;
    }
    for (std::size_t i = 0; i < T * H; ++i) CHECK(std::abs(out.outputs.data[i] - cur[i]) <= 1e-10);
}

TEST_CASE("gru rejects width mismatch") {
    GruParams<double> p = GruParams<double>::make(4, 1, 3);
    Tensor<double> h0({1, 4});
    Tensor<double> seq({5, 2});
    CHECK_THROWS_AS(gru_forward(seq, p, h0), DimensionError);
}

TEST_CASE("gru backward matches finite differences") {
    Rng rng(37);
    const std::size_t H = 4, T = 4, F = 2, L = 2;
    GruParams<double> p = GruParams<double>::make(H, L, F);
    randomize(p, rng);
    Tensor<double> h0({L, H}); // zero initial state
    Tensor<double> seq({T, F});
    seq.fill_uniform(rng, -1, 1);
    Tensor<double> r_hT({L, H});
    r_hT.fill_uniform(rng, -1, 1);
    Tensor<double> r_out({T, H});
    r_out.fill_uniform(rng, -1, 1);

    auto J = [&](const GruParams<double>& pp, const Tensor<double>& ss) {
        auto o = gru_forward(ss, pp, h0);
        double s = 0.0;
        for (std::size_t i = 0; i < o.h_final.numel(); ++i) s += r_hT.data[i] * o.h_final.data[i];
        for (std::size_t i = 0; i < o.outputs.numel(); ++i) s += r_out.data[i] * o.outputs.data[i];
        return s;
    };

    GruTrace<double> trace;
    gru_forward(seq, p, h0, RunMode::eval, 0.0, nullptr, &trace);

    // gradient buffers per layer
    std::vector<std::vector<std::vector<double>>> bufs(L);
    std::vector<GruLayerGrads<double>> lg(L);
    for (std::size_t l = 0; l < L; ++l) {
        auto& lp = p.layer[l];
        Tensor<double>* ts[9] = {&lp.W_u, &lp.W_r, &lp.W_h, &lp.R_u, &lp.R_r, &lp.R_h, &lp.b_u, &lp.b_r, &lp.b_h};
        bufs[l].resize(9);
        std::span<double>* spans[9] = {&lg[l].W_u, &lg[l].W_r, &lg[l].W_h, &lg[l].R_u, &lg[l].R_r,
                                       &lg[l].R_h, &lg[l].b_u, &lg[l].b_r, &lg[l].b_h};
        for (int k = 0; k < 9; ++k) {
            bufs[l][k].assign(ts[k]->numel(), 0.0);
            *spans[k] = {bufs[l][k].data(), bufs[l][k].size()};
        }
    }
    Tensor<double> dseq({T, F});
    gru_backward(p, h0, trace, &r_out, &r_hT, lg, &dseq);

    const double h = 1e-6, tol = 1e-5;
    // input gradient
    for (std::size_t i = 0; i < seq.numel(); ++i) {
        Tensor<double> sp = seq, sm = seq;
        sp.data[i] += h;
        sm.data[i] -= h;
        const double fd = (J(p, sp) - J(p, sm)) / (2 * h);
        CHECK(std::abs(dseq.data[i] - fd) / std::max(1.0, std::abs(fd)) <= tol);
    }
    // a sample of parameter gradients from every matrix of every layer
    for (std::size_t l = 0; l < L; ++l) {
        GruParams<double> pc = p;
        Tensor<double>* ts[9] = {&pc.layer[l].W_u, &pc.layer[l].W_r, &pc.layer[l].W_h,
                                 &pc.layer[l].R_u, &pc.layer[l].R_r, &pc.layer[l].R_h,
                                 &pc.layer[l].b_u, &pc.layer[l].b_r, &pc.layer[l].b_h};
        for (int k = 0; k < 9; ++k) {
            for (std::size_t i = 0; i < ts[k]->numel(); i += std::max<std::size_t>(1, ts[k]->numel() / 3)) {
                const double keep = ts[k]->data[i];
                ts[k]->data[i] = keep + h;
                const double jp = J(pc, seq);
                ts[k]->data[i] = keep - h;
                const double jm = J(pc, seq);
                ts[k]->data[i] = keep;
                const double fd = (jp - jm) / (2 * h);
                CHECK(std::abs(bufs[l][k][i] - fd) / std::max(1.0, std::abs(fd)) <= tol);
            }
        }
    }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    std::vector<double> w{1.0, -2.0, 3.0};
    std::vector<double> g{0.0, 0.0, 0.0};
    AdamState<double> st(3);
    adam_step<double>(w, g, st, {}, 1);
    CHECK(w == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam first step moves by ~lr against the gradient sign") {
    std::vector<double> w{0.0, 0.0};
    std::vector<double> g{0.7, -1.3};
    AdamState<double> st(2);
    AdamConfig cfg;
    cfg.lr = 1e-4;
    adam_step<double>(w, g, st, cfg, 1);
    CHECK(w[0] == Catch::Approx(-1e-4).epsilon(1e-3));
    CHECK(w[1] == Catch::Approx(1e-4).epsilon(1e-3));
}

TEST_CASE("adam on f(w)=w^2 matches a scalar reference and descends") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    std::vector<double> w{1.0};
    AdamState<double> st(1);

    // independent scalar reference
    double wr = 1.0, m = 0.0, v = 0.0;
    double prev = std::abs(wr);
    for (int t = 1; t <= 5; ++t) {
        std::vector<double> g{2.0 * w[0]};
        adam_step<double>(w, g, st, cfg, t);

        const double gr = 2.0 * wr;
        m = 0.9 * m + 0.1 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        wr -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);

        CHECK(std::abs(w[0] - wr) <= 1e-12);
        CHECK(std::abs(w[0]) < prev);
        prev = std::abs(w[0]);
    }
}

TEST_CASE("adam rejects mismatched shapes") {
    std::vector<double> w{1.0, 2.0};
    std::vector<double> g{1.0};
    AdamState<double> st(2);
    CHECK_THROWS_AS((adam_step<double>(w, g, st, {}, 1)), DimensionError);
}
