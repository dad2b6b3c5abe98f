#include <cmath>
#include <vector>

#include "doctest.h"
#include "hlora/rng.hpp"
#include "hlora/tensor.hpp"
#include "support/grad_check.hpp"

using namespace hlora;
using testsupport::check_gradients;
using testsupport::random_tensor;

TEST_CASE("matmul basic values") {
    Graph g;
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    Tensor out = g.matmul(eye, b);
    CHECK(out.data()[0] == 3.0);
    CHECK(out.data()[1] == 4.0);
    CHECK(out.data()[2] == 5.0);
    CHECK(out.data()[3] == 6.0);

    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor c = Tensor::from_data({2, 1}, {3, 4});
    CHECK(g.matmul(a, c).item() == 11.0);

    Tensor z = Tensor::from_data({1, 2}, {0, 0});
    CHECK(g.matmul(z, c).item() == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Graph g;
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 2});
    try {
        g.matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("elementwise values") {
    Graph g;
    Tensor a = Tensor::from_data({2}, {1, 2});
    Tensor b = Tensor::from_data({2}, {3, 4});
    Tensor m = g.mul(a, b);
    CHECK(m.data()[0] == 3.0);
    CHECK(m.data()[1] == 8.0);

    Tensor zero = Tensor::from_data({2}, {0, 0});
    Tensor s = g.add(a, zero);
    CHECK(s.data()[0] == 1.0);
    CHECK(s.data()[1] == 2.0);

    Tensor two = Tensor::scalar(2.0);
    Tensor sm = g.mul(two, b);
    CHECK(sm.data()[0] == 6.0);
    CHECK(sm.data()[1] == 8.0);

    CHECK_THROWS_AS(g.add(a, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("softmax_rows values and stability") {
    Graph g;
    Tensor a = Tensor::from_data({1, 2}, {0, 0});
    Tensor out = g.softmax_rows(a);
    CHECK(out.data()[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(out.data()[1] == doctest::Approx(0.5).epsilon(1e-14));

    Tensor big = Tensor::from_data({1, 2}, {1000, 1000});
    Tensor out2 = g.softmax_rows(big);
    CHECK(out2.data()[0] == doctest::Approx(0.5).epsilon(1e-14));

    Tensor c = Tensor::from_data({1, 2}, {std::log(2.0), 0.0});
    Tensor out3 = g.softmax_rows(c);
    CHECK(out3.data()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(out3.data()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax_rows rows sum to one on random input") {
    RngStream rng(11);
    Graph g;
    for (int rep = 0; rep < 20; ++rep) {
        Tensor a = random_tensor(rng, {4, 6}, false, -10.0, 10.0);
        Tensor p = g.softmax_rows(a);
        for (int i = 0; i < 4; ++i) {
            double s = 0.0;
            for (int j = 0; j < 6; ++j) {
                double v = p.at(i, j);
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                s += v;
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("cross_entropy values") {
    Graph g;
    SUBCASE("saturated one-hot") {
        Tensor logits = Tensor::from_data({1, 4}, {100.0, 0.0, 0.0, 0.0});
        Tensor loss = g.cross_entropy(logits, {0}, {1});
        CHECK(loss.item() < 1e-6);
    }
    SUBCASE("uniform logits") {
        Tensor logits = Tensor::zeros({2, 4});
        Tensor loss = g.cross_entropy(logits, {1, 3}, {1, 1});
        CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SUBCASE("masked position contributes nothing") {
        Tensor logits = Tensor::from_data({2, 3}, {5, 0, 0, 0, 0, 0});
        Tensor l1 = g.cross_entropy(logits, {0, 2}, {1, 0});
        Graph g2;
        Tensor l2 = g2.cross_entropy(logits, {0, 0}, {1, 0});
        CHECK(l1.item() == l2.item());
    }
    SUBCASE("all masked is an error") {
        Tensor logits = Tensor::zeros({2, 3});
        CHECK_THROWS_AS(g.cross_entropy(logits, {0, 0}, {0, 0}), DimensionError);
    }
    SUBCASE("target outside vocabulary") {
        Tensor logits = Tensor::zeros({1, 3});
        CHECK_THROWS_AS(g.cross_entropy(logits, {3}, {1}), VocabularyError);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("sum gradient is ones") {
        Graph g;
        Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
        Tensor loss = g.sum(x);
        g.backward(loss);
        REQUIRE(x.has_grad());
        CHECK(x.grad()[0] == 1.0);
        CHECK(x.grad()[1] == 1.0);
        CHECK(x.grad()[2] == 1.0);
    }
    SUBCASE("linear gradient") {
        Graph g;
        Tensor x = Tensor::from_data({1, 2}, {1, 2});
        Tensor w = Tensor::from_data({2, 1}, {0.5, -0.5}, true);
        Tensor loss = g.sum(g.matmul(x, w));
        g.backward(loss);
        REQUIRE(w.has_grad());
        CHECK(w.grad()[0] == 1.0);
        CHECK(w.grad()[1] == 2.0);
    }
    SUBCASE("untracked leaf stays grad-free") {
        Graph g;
        Tensor x = Tensor::from_data({2}, {1, 2}, false);
        Tensor y = Tensor::from_data({2}, {3, 4}, true);
        Tensor loss = g.sum(g.mul(x, y));
        g.backward(loss);
        CHECK_FALSE(x.has_grad());
        CHECK(y.has_grad());
    }
    SUBCASE("double backward is an error") {
        Graph g;
        Tensor x = Tensor::from_data({2}, {1, 2}, true);
        Tensor loss = g.sum(x);
        g.backward(loss);
        CHECK_THROWS_AS(g.backward(loss), ConfigError);
    }
    SUBCASE("non-scalar loss rejected") {
        Graph g;
        Tensor x = Tensor::from_data({2}, {1, 2}, true);
        Tensor y = g.scale(x, 2.0);
        CHECK_THROWS_AS(g.backward(y), DimensionError);
    }
    SUBCASE("loss from another graph rejected") {
        Graph g1, g2;
        Tensor x = Tensor::from_data({2}, {1, 2}, true);
        Tensor loss = g1.sum(x);
        CHECK_THROWS_AS(g2.backward(loss), ConfigError);
    }
}

TEST_CASE("finite differences across ops") {
    RngStream rng(202);
    auto run = [&](const char* name, std::vector<Tensor> params,
                   const testsupport::ForwardFn& fn) {
        auto res = check_gradients(std::move(params), fn, rng);
        INFO(name << ": " << res.detail);
        CHECK(res.ok);
    };

    for (int rep = 0; rep < 5; ++rep) {
        run("matmul",
            {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.matmul(p[0], p[1]); });
        run("add",
            {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.add(p[0], p[1]); });
        run("mul",
            {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.mul(p[0], p[1]); });
        run("mul scalar",
            {random_tensor(rng, {1}), random_tensor(rng, {2, 3})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.mul(p[0], p[1]); });
        run("scale",
            {random_tensor(rng, {2, 3})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.scale(p[0], -1.7); });
        run("add_bias",
            {random_tensor(rng, {3, 4}), random_tensor(rng, {4})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.add_bias(p[0], p[1]); });
        run("softmax_rows",
            {random_tensor(rng, {3, 5})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.softmax_rows(p[0]); });
        run("gelu",
            {random_tensor(rng, {2, 4})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.gelu(p[0]); });
        run("rmsnorm_rows",
            {random_tensor(rng, {3, 4})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.rmsnorm_rows(p[0]); });
        run("gather_rows",
            {random_tensor(rng, {5, 3})},
            [](Graph& g, const std::vector<Tensor>& p) {
                return g.gather_rows(p[0], {4, 0, 2, 2});
            });
        run("concat_rows",
            {random_tensor(rng, {2, 3}), random_tensor(rng, {3, 3})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.concat_rows({p[0], p[1]}); });
        run("slice_rows",
            {random_tensor(rng, {5, 3})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.slice_rows(p[0], 1, 4); });
        run("expand_cols",
            {random_tensor(rng, {3, 2})},
            [](Graph& g, const std::vector<Tensor>& p) { return g.expand_cols(p[0], 3, 2.5); });
        run("causal_attention",
            {random_tensor(rng, {4, 6}), random_tensor(rng, {4, 6}), random_tensor(rng, {4, 6})},
            [](Graph& g, const std::vector<Tensor>& p) {
                return g.causal_attention(p[0], p[1], p[2], 2);
            });
        run("cross_entropy",
            {random_tensor(rng, {4, 5})},
            [](Graph& g, const std::vector<Tensor>& p) {
                return g.cross_entropy(p[0], {1, 0, 4, 2}, {1, 0, 1, 1});
            });
    }
}

TEST_CASE("determinism: same seed, same op sequence, same bits") {
    auto run_once = [](uint64_t seed) {
        RngStream rng(seed);
        Tensor a = random_tensor(rng, {4, 4}, true);
        Tensor b = random_tensor(rng, {4, 4}, true);
        Graph g;
        Tensor c = g.gelu(g.matmul(a, b));
        Tensor loss = g.sum(g.softmax_rows(c));
        g.backward(loss);
        std::vector<double> out;
        out.insert(out.end(), c.data().begin(), c.data().end());
        out.insert(out.end(), a.grad().begin(), a.grad().end());
        out.insert(out.end(), b.grad().begin(), b.grad().end());
        return out;
    };
    auto r1 = run_once(77);
    auto r2 = run_once(77);
    REQUIRE(r1.size() == r2.size());
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("ops on finite inputs stay finite") {
    RngStream rng(5);
    Graph g;
    Tensor a = random_tensor(rng, {4, 4}, false, -100.0, 100.0);
    for (double v : g.softmax_rows(a).data()) CHECK(std::isfinite(v));
    for (double v : g.rmsnorm_rows(a).data()) CHECK(std::isfinite(v));
    for (double v : g.gelu(a).data()) CHECK(std::isfinite(v));
    Tensor zero_row = Tensor::zeros({2, 3});
    for (double v : g.rmsnorm_rows(zero_row).data()) CHECK(std::isfinite(v));
}
