#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rflab/ops.hpp"
#include "rflab/rng.hpp"

using namespace rflab;

namespace {

// Independent brute-force oracles. These deliberately use the bluntest
// possible loops and no shared code with the implementation.

std::vector<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                                std::size_t stride, std::size_t padding) {
    const std::size_t c_in = x.dim(0), len = x.dim(1), c_out = w.dim(0), k = w.dim(2);
    const std::size_t l_out = (len + 2 * padding - k) / stride + 1;
    std::vector<double> y(c_out * l_out, 0.0);
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t t = 0; t < l_out; ++t) {
            double acc = b.data[co];
            for (std::size_t ci = 0; ci < c_in; ++ci)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const std::ptrdiff_t src =
                        static_cast<std::ptrdiff_t>(t * stride + kk) - static_cast<std::ptrdiff_t>(padding);
                    if (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
                        acc += w(co, ci, kk) * x(ci, static_cast<std::size_t>(src));
                }
            y[co * l_out + t] = acc;
        }
    return y;
}

std::vector<double> pool_oracle(const Tensor<double>& x, std::size_t window) {
    const std::size_t c = x.dim(0), len = x.dim(1), l_out = len / window;
    std::vector<double> y(c * l_out);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t t = 0; t < l_out; ++t) {
            double m = x(ci, t * window);
            for (std::size_t j = 1; j < window; ++j) m = std::max(m, x(ci, t * window + j));
            y[ci * l_out + t] = m;
        }
    return y;
}

std::vector<double> dense_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
    const std::size_t n_in = x.numel(), n_out = w.dim(0);
    std::vector<double> y(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
        double acc = b.data[o];
        for (std::size_t i = 0; i < n_in; ++i) acc += w(o, i) * x.data[i];
        y[o] = acc;
    }
    return y;
}

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    t.fill_uniform(rng, lo, hi);
    return t;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_CASE("conv1d matches hand examples") {
    Tensor<double> x({1, 4}, {1, 2, 3, 4});
    Tensor<double> k({1, 1, 2}, {1, 1});
    Tensor<double> b({1}, {0});
    auto y = conv1d(x, k, b, 1, 0);
    REQUIRE(y.shape == std::vector<std::size_t>{1, 3});
    CHECK(y.data == std::vector<double>{3, 5, 7});

    Tensor<double> ident({1, 1, 1}, {1});
    auto y2 = conv1d(x, ident, b, 1, 0);
    CHECK(y2.data == x.data);
}

TEST_CASE("conv1d matches brute-force oracle on random instances") {
    Rng rng(42);
    for (int it = 0; it < 30; ++it) {
        const std::size_t c_in = 1 + rng.index(4), c_out = 1 + rng.index(5);
        const std::size_t k = 1 + rng.index(7);
        const std::size_t stride = 1 + rng.index(4), pad = rng.index(3);
        const std::size_t len = k + rng.index(40);
        if (len + 2 * pad < k) continue;
        auto x = random_tensor({c_in, len}, rng);
        auto w = random_tensor({c_out, c_in, k}, rng);
        auto b = random_tensor({c_out}, rng);
        auto y = conv1d(x, w, b, stride, pad);
        CHECK(max_abs_diff(y.data, conv_oracle(x, w, b, stride, pad)) <= 1e-12);
    }
    // the spec's pinned instance
    auto x = random_tensor({3, 50}, rng);
    auto w = random_tensor({4, 3, 7}, rng);
    auto b = random_tensor({4}, rng);
    auto y = conv1d(x, w, b, 3, 0);
    CHECK(max_abs_diff(y.data, conv_oracle(x, w, b, 3, 0)) <= 1e-12);
}

TEST_CASE("conv1d rejects bad shapes") {
    Tensor<double> x({1, 4}, {1, 2, 3, 4});
    Tensor<double> k({1, 2, 2}, {1, 1, 1, 1}); // wrong channel count
    Tensor<double> b({1}, {0});
    CHECK_THROWS_AS(conv1d(x, k, b, 1, 0), DimensionError);
    Tensor<double> k2({1, 1, 6}, std::vector<double>(6, 1.0)); // kernel longer than input
    CHECK_THROWS_AS(conv1d(x, k2, b, 1, 0), DimensionError);
}

TEST_CASE("maxpool1d examples and oracle") {
    Tensor<double> x({1, 4}, {1, 3, 2, 8});
    auto r = maxpool1d(x, 2);
    CHECK(r.y.data == std::vector<double>{3, 8});

    Tensor<double> c({1, 9}, std::vector<double>(9, 7.0));
    auto rc = maxpool1d(c, 4);
    REQUIRE(rc.y.numel() == 2); // trailing remainder dropped
    CHECK(rc.y.data == std::vector<double>{7, 7});

    Rng rng(7);
    auto big = random_tensor({2, 100}, rng);
    auto rb = maxpool1d(big, 8);
    CHECK(max_abs_diff(rb.y.data, pool_oracle(big, 8)) == 0.0);

    CHECK_THROWS_AS(maxpool1d(x, 5), DimensionError);
}

TEST_CASE("maxpool backward routes gradient to first maximal index") {
    Tensor<double> x({1, 4}, {2, 2, 1, 0});
    auto r = maxpool1d(x, 4);
    Tensor<double> dy({1, 1}, {1.0});
    Tensor<double> dx({1, 4});
    maxpool1d_backward(r.argmax, dy, &dx);
    CHECK(dx.data == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("dense examples and oracle") {
    Rng rng(3);
    Tensor<double> x({4}, {1, 2, 3, 4});
    Tensor<double> ident({4, 4});
    for (std::size_t i = 0; i < 4; ++i) ident(i, i) = 1.0;
    Tensor<double> zero_b({4});
    CHECK(dense(x, ident, zero_b).data == x.data);

    Tensor<double> zero_w({4, 4});
    Tensor<double> b({4}, {5, 6, 7, 8});
    CHECK(dense(x, zero_w, b).data == b.data);

    auto xr = random_tensor({64}, rng);
    auto w = random_tensor({10, 64}, rng);
    auto br = random_tensor({10}, rng);
    CHECK(max_abs_diff(dense(xr, w, br).data, dense_oracle(xr, w, br)) <= 1e-12);

    CHECK_THROWS_AS(dense(x, w, br), DimensionError);
}

TEST_CASE("prelu matches its closed form") {
    Tensor<double> x({3}, {3.0, -2.0, 0.0});
    auto y = prelu(x, 0.25);
    CHECK(y.data[0] == 3.0);
    CHECK(y.data[1] == -0.5);
    CHECK(y.data[2] == 0.0);

    // a = 0 degenerates to ReLU
    Rng rng(11);
    auto xr = random_tensor({64}, rng, -2.0, 2.0);
    CHECK(prelu(xr, 0.0).data == relu(xr).data);
}

TEST_CASE("silu matches x*sigmoid(x)") {
    CHECK(silu(Tensor<double>({1}, {0.0})).data[0] == 0.0);
    CHECK(silu(Tensor<double>({1}, {100.0})).data[0] == Catch::Approx(100.0).margin(1e-9));

    Rng rng(13);
    auto x = random_tensor({128}, rng, -6.0, 6.0);
    auto y = silu(x);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double ref = x.data[i] / (1.0 + std::exp(-x.data[i]));
        CHECK(std::abs(y.data[i] - ref) <= 1e-12);
    }
}

TEST_CASE("dropout contract") {
    Rng rng(17);
    Tensor<double> x({100});
    x.fill_uniform(rng, -1, 1);

    auto ev = dropout(x, 0.7, RunMode::eval, rng);
    CHECK(ev.y.data == x.data);
    auto p0 = dropout(x, 0.0, RunMode::train, rng);
    CHECK(p0.y.data == x.data);

    Tensor<double> ones({100000}, std::vector<double>(100000, 1.0));
    auto tr = dropout(ones, 0.5, RunMode::train, rng);
    double mean = 0.0;
    for (double v : tr.y.data) mean += v;
    mean /= static_cast<double>(ones.numel());
    CHECK(mean > 0.98);
    CHECK(mean < 1.02);

    CHECK_THROWS_AS(dropout(x, 1.0, RunMode::train, rng), ArgumentError);
    CHECK_THROWS_AS(dropout(x, -0.1, RunMode::train, rng), ArgumentError);

    // purity: same seed, same mask
    Rng a(99), b(99);
    auto ra = dropout(x, 0.3, RunMode::train, a);
    auto rb = dropout(x, 0.3, RunMode::train, b);
    CHECK(ra.y.data == rb.y.data);
}

TEST_CASE("softmax cross-entropy examples") {
    Tensor<double> equal({10}, std::vector<double>(10, 2.5));
    auto r = softmax_xent(equal, 3);
    for (double p : r.probs.data) CHECK(p == Catch::Approx(0.1).epsilon(1e-12));
    CHECK(r.loss == Catch::Approx(std::log(10.0)).epsilon(1e-12));

    Tensor<double> sharp({2}, {1000.0, 0.0});
    auto rs = softmax_xent(sharp, 0);
    CHECK(rs.loss == Catch::Approx(0.0).margin(1e-9));

    double sum = 0.0;
    for (double p : r.probs.data) sum += p;
    CHECK(std::abs(sum - 1.0) <= 1e-9);

    CHECK_THROWS_AS(softmax_xent(sharp, 2), ArgumentError);
}

TEST_CASE("softmax gradient matches central finite differences") {
    Rng rng(23);
    for (int it = 0; it < 20; ++it) {
        const std::size_t c = 2 + rng.index(9);
        auto logits = random_tensor({c}, rng, -3.0, 3.0);
        const std::size_t label = rng.index(c);
        auto r = softmax_xent(logits, label);
        Tensor<double> grad({c});
        softmax_xent_backward(r.probs, label, &grad);
        const double h = 1e-6;
        for (std::size_t i = 0; i < c; ++i) {
            Tensor<double> lp = logits, lm = logits;
            lp.data[i] += h;
            lm.data[i] -= h;
            const double fd = (softmax_xent(lp, label).loss - softmax_xent(lm, label).loss) / (2 * h);
            const double denom = std::max(1e-8, std::abs(fd));
            CHECK(std::abs(grad.data[i] - fd) / denom <= 1e-6);
        }
    }
}

TEST_CASE("op backward passes match finite differences") {
    // scalar objective J = sum(r * y); dJ/dinput via backward vs central FD
    Rng rng(31);
    const double h = 1e-6, tol = 1e-4;

    SECTION("conv1d") {
        auto x = random_tensor({2, 17}, rng);
        auto w = random_tensor({3, 2, 5}, rng);
        auto b = random_tensor({3}, rng);
        auto y0 = conv1d(x, w, b, 2, 1);
        auto r = random_tensor(y0.shape, rng);
        auto J = [&](const Tensor<double>& xx, const Tensor<double>& ww, const Tensor<double>& bb) {
            auto y = conv1d(xx, ww, bb, 2, 1);
            double s = 0.0;
            for (std::size_t i = 0; i < y.numel(); ++i) s += r.data[i] * y.data[i];
            return s;
        };
        Tensor<double> dx(x.shape);
        std::vector<double> dw(w.numel(), 0.0), db(b.numel(), 0.0);
        conv1d_backward(x, w, 2, 1, r, &dx, {dw.data(), dw.size()}, {db.data(), db.size()});
        for (std::size_t i = 0; i < x.numel(); i += 3) {
            Tensor<double> xp = x, xm = x;
            xp.data[i] += h;
            xm.data[i] -= h;
            const double fd = (J(xp, w, b) - J(xm, w, b)) / (2 * h);
            CHECK(std::abs(dx.data[i] - fd) / std::max(1.0, std::abs(fd)) <= tol);
        }
        for (std::size_t i = 0; i < w.numel(); i += 4) {
            Tensor<double> wp = w, wm = w;
            wp.data[i] += h;
            wm.data[i] -= h;
            const double fd = (J(x, wp, b) - J(x, wm, b)) / (2 * h);
            CHECK(std::abs(dw[i] - fd) / std::max(1.0, std::abs(fd)) <= tol);
        }
        for (std::size_t i = 0; i < b.numel(); ++i) {
            Tensor<double> bp = b, bm = b;
            bp.data[i] += h;
            bm.data[i] -= h;
            const double fd = (J(x, w, bp) - J(x, w, bm)) / (2 * h);
            CHECK(std::abs(db[i] - fd) / std::max(1.0, std::abs(fd)) <= tol);
        }
    }

    SECTION("dense") {
        auto x = random_tensor({12}, rng);
        auto w = random_tensor({5, 12}, rng);
        auto b = random_tensor({5}, rng);
        auto r = random_tensor({5}, rng);
        Tensor<double> dx(x.shape);
        std::vector<double> dw(w.numel(), 0.0), db(b.numel(), 0.0);
        dense_backward(x, w, r, &dx, {dw.data(), dw.size()}, {db.data(), db.size()});
        auto J = [&](const Tensor<double>& xx, const Tensor<double>& ww) {
            auto y = dense(xx, ww, b);
            double s = 0.0;
            for (std::size_t i = 0; i < y.numel(); ++i) s += r.data[i] * y.data[i];
            return s;
        };
        for (std::size_t i = 0; i < x.numel(); ++i) {
            Tensor<double> xp = x, xm = x;
            xp.data[i] += h;
            xm.data[i] -= h;
            const double fd = (J(xp, w) - J(xm, w)) / (2 * h);
            CHECK(std::abs(dx.data[i] - fd) / std::max(1.0, std::abs(fd)) <= tol);
        }
        for (std::size_t i = 0; i < w.numel(); i += 5) {
            Tensor<double> wp = w, wm = w;
            wp.data[i] += h;
            wm.data[i] -= h;
            const double fd = (J(x, wp) - J(x, wm)) / (2 * h);
            CHECK(std::abs(dw[i] - fd) / std::max(1.0, std::abs(fd)) <= tol);
        }
    }

    SECTION("prelu slope gradient") {
        auto x = random_tensor({40}, rng, -2.0, 2.0);
        const double a = 0.3;
        auto r = random_tensor({40}, rng);
        Tensor<double> dx(x.shape);
        double da = 0.0;
        prelu_backward(x, a, r, &dx, &da);
        auto J = [&](double aa) {
            auto y = prelu(x, aa);
            double s = 0.0;
            for (std::size_t i = 0; i < y.numel(); ++i) s += r.data[i] * y.data[i];
            return s;
        };
        const double fd = (J(a + h) - J(a - h)) / (2 * h);
        CHECK(std::abs(da - fd) / std::max(1.0, std::abs(fd)) <= tol);
    }

    SECTION("silu") {
        auto x = random_tensor({40}, rng, -4.0, 4.0);
        auto r = random_tensor({40}, rng);
        Tensor<double> dx(x.shape);
        silu_backward(x, r, &dx);
        for (std::size_t i = 0; i < x.numel(); i += 3) {
            Tensor<double> xp = x, xm = x;
            xp.data[i] += h;
            xm.data[i] -= h;
            const double fp = silu(xp).data[i] * r.data[i];
            const double fm = silu(xm).data[i] * r.data[i];
            const double fd = (fp - fm) / (2 * h);
            CHECK(std::abs(dx.data[i] - fd) / std::max(1.0, std::abs(fd)) <= tol);
        }
    }
}
