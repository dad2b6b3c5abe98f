#include <cmath>
#include <thread>
#include <vector>

#include "doctest.h"
#include "hlora/rng.hpp"
#include "hlora/vision.hpp"
#include "support/grad_check.hpp"

using namespace hlora;

namespace {

ToyImage random_image(RngStream& rng, int h = 12, int w = 12) {
    ToyImage img = ToyImage::blank(h, w);
    for (double& v : img.pixels) v = rng.uniform();
    return img;
}

}  // namespace

TEST_CASE("encode emits one state per block with the patch-grid shape") {
    RngStream rng(70);
    EncoderStack enc = EncoderStack::random(4, 32, 4, rng);
    ToyImage img = random_image(rng);
    Graph g;
    auto states = encode(g, img, enc);
    REQUIRE(states.size() == 4);
    for (const Tensor& f : states) {
        CHECK(f.rows() == 9);
        CHECK(f.cols() == 32);
    }
    ToyImage odd = ToyImage::blank(10, 12);
    CHECK_THROWS_AS(encode(g, odd, enc), DimensionError);
}

TEST_CASE("zero image produces all-zero states through bias-free blocks") {
    RngStream rng(71);
    EncoderStack enc = EncoderStack::random(4, 16, 4, rng);
    ToyImage zero = ToyImage::blank(12, 12);
    Graph g;
    auto states = encode(g, zero, enc);
    for (const Tensor& f : states) {
        for (double v : f.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("encode is deterministic") {
    RngStream rng(72);
    EncoderStack enc = EncoderStack::random(4, 32, 4, rng);
    ToyImage img = random_image(rng);
    Graph g1, g2;
    auto s1 = encode(g1, img, enc);
    auto s2 = encode(g2, img, enc);
    for (std::size_t b = 0; b < s1.size(); ++b) {
        for (std::size_t i = 0; i < s1[b].size(); ++i) {
            CHECK(s1[b].data()[i] == s2[b].data()[i]);
        }
    }
}

TEST_CASE("select_features routes by task") {
    RngStream rng(73);
    EncoderStack enc = EncoderStack::random(4, 32, 4, rng);
    GranularitySelection taps(2, 3);
    ToyImage img = random_image(rng);
    Graph g;
    auto states = encode(g, img, enc);
    CHECK(select_features(taps, states, TaskType::generation).same_storage(states[1]));
    CHECK(select_features(taps, states, TaskType::comprehension).same_storage(states[2]));
    CHECK_THROWS_AS(GranularitySelection(3, 3), ConfigError);
    CHECK_THROWS_AS(GranularitySelection(0, 2), ConfigError);
    GranularitySelection deep(2, 9);
    CHECK_THROWS_AS(select_features(deep, states, TaskType::comprehension), ConfigError);
}

TEST_CASE("routing is stable over many random image/task pairs") {
    RngStream rng(74);
    EncoderStack enc = EncoderStack::random(4, 16, 4, rng);
    GranularitySelection taps(2, 3);
    for (int i = 0; i < 1000; ++i) {
        ToyImage img = random_image(rng);
        Graph g;
        auto states = encode(g, img, enc);
        const TaskType task = rng.below(2) == 0 ? TaskType::comprehension : TaskType::generation;
        const Tensor& sel = select_features(taps, states, task);
        const int expected = task == TaskType::generation ? 1 : 2;
        CHECK(sel.same_storage(states[expected]));
    }
}

TEST_CASE("alignment adapter projects to model width and starts silent") {
    RngStream rng(75);
    AlignmentAdapter ad = AlignmentAdapter::init(32, 48, 64, rng);
    CHECK(ad.d_model() == 64);
    Graph g;
    Tensor features = testsupport::random_tensor(rng, {9, 32}, false);
    Tensor out = ad.forward(g, features);
    CHECK(out.rows() == 9);
    CHECK(out.cols() == 64);
    // zero second layer at init -> zero visual tokens
    for (double v : out.data()) CHECK(v == 0.0);

    Tensor zero = Tensor::zeros({9, 32});
    Tensor out0 = ad.forward(g, zero);
    for (double v : out0.data()) CHECK(v == 0.0);

    Tensor wrong = Tensor::zeros({9, 16});
    CHECK_THROWS_AS(ad.forward(g, wrong), DimensionError);
}

TEST_CASE("gradients reach the adapter but not the frozen encoder") {
    RngStream rng(76);
    EncoderStack enc = EncoderStack::random(4, 16, 4, rng);
    AlignmentAdapter ad = AlignmentAdapter::init(16, 24, 32, rng);
    for (double& v : ad.w2.data_mut()) v = rng.gaussian(0.0, 0.1);
    ToyImage img = random_image(rng);
    GranularitySelection taps(2, 3);

    Graph g;
    auto states = encode(g, img, enc);
    Tensor features = select_features(taps, states, TaskType::comprehension);
    Tensor out = ad.forward(g, features);
    Tensor loss = g.sum(out);
    g.backward(loss);

    for (const Tensor& p : ad.parameters()) CHECK(p.has_grad());
    for (const Tensor& p : enc.parameters()) CHECK_FALSE(p.has_grad());
}

TEST_CASE("alignment adapter gradients pass finite differences") {
    RngStream rng(77);
    AlignmentAdapter ad = AlignmentAdapter::init(6, 5, 4, rng);
    for (double& v : ad.w2.data_mut()) v = rng.gaussian(0.0, 0.3);
    for (double& v : ad.b2.data_mut()) v = rng.gaussian(0.0, 0.3);
    Tensor features = testsupport::random_tensor(rng, {3, 6}, false);
    auto res = testsupport::check_gradients(
        ad.parameters(),
        [&](Graph& g, const std::vector<Tensor>&) { return ad.forward(g, features); }, rng);
    INFO(res.detail);
    CHECK(res.ok);
}

TEST_CASE("frozen encoder is safe for concurrent forward passes") {
    RngStream rng(78);
    EncoderStack enc = EncoderStack::random(4, 16, 4, rng);
    ToyImage img = random_image(rng);

    Graph ref_graph;
    auto ref = encode(ref_graph, img, enc);

    std::vector<std::vector<double>> results(4);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t]() {
            Graph g;
            auto states = encode(g, img, enc);
            results[t].assign(states.back().data().begin(), states.back().data().end());
        });
    }
    for (auto& th : threads) th.join();
    for (const auto& r : results) {
        REQUIRE(r.size() == ref.back().size());
        for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i] == ref.back().data()[i]);
    }
}
