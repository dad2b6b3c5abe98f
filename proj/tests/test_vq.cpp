#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "hlora/rng.hpp"
#include "hlora/vq.hpp"

using namespace hlora;

namespace {

ToyImage random_image(RngStream& rng, int h = 12, int w = 12) {
    ToyImage img = ToyImage::blank(h, w);
    for (double& v : img.pixels) v = rng.uniform();
    return img;
}

// Test-side reconstruction floor: substitute each patch latent with its
// nearest code and decode without clamping. The production decode path can
// only do as well or better since clamping moves values toward [0,1].
double quantization_floor(const ToyImage& img, const Codebook& cb, const LatentCodec& codec) {
    const auto patches = extract_patches(img, codec.patch);
    const int p2 = codec.patch * codec.patch;
    const double* d = codec.to_patch.data().data();
    double acc = 0.0;
    for (const auto& p : patches) {
        const auto z = codec.latent_of(p);
        int best = 0;
        double best_d = std::numeric_limits<double>::max();
        for (int k = 0; k < cb.size(); ++k) {
            double dist = 0.0;
            const auto code = cb.code(k);
            for (int j = 0; j < cb.dim(); ++j) {
                const double diff = z[j] - code[j];
                dist += diff * diff;
            }
            if (dist < best_d) {
                best_d = dist;
                best = k;
            }
        }
        const auto code = cb.code(best);
        for (int pix = 0; pix < p2; ++pix) {
            double rec = 0.0;
            for (int j = 0; j < cb.dim(); ++j) {
                rec += code[j] * d[static_cast<std::size_t>(j) * p2 + pix];
            }
            const double diff = rec - p[pix];
            acc += diff * diff;
        }
    }
    return acc / (static_cast<double>(img.pixels.size()));
}

std::vector<std::vector<double>> corpus_latents(RngStream& rng, const LatentCodec& codec,
                                                int images) {
    std::vector<std::vector<double>> out;
    for (int i = 0; i < images; ++i) {
        ToyImage img = random_image(rng);
        for (const auto& p : extract_patches(img, codec.patch)) {
            out.push_back(codec.latent_of(p));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("fit_codebook saturated clustering reproduces the points") {
    RngStream rng(50);
    std::vector<std::vector<double>> samples = {{0, 0}, {1, 0}, {0, 1}, {5, 5}};
    Codebook cb = fit_codebook(samples, 4, rng);
    REQUIRE(cb.size() == 4);
    for (const auto& s : samples) {
        bool found = false;
        for (int k = 0; k < cb.size(); ++k) {
            const auto c = cb.code(k);
            if (std::abs(c[0] - s[0]) < 1e-12 && std::abs(c[1] - s[1]) < 1e-12) found = true;
        }
        CHECK(found);
    }
}

TEST_CASE("fit_codebook finds well-separated blob means") {
    RngStream rng(51);
    std::vector<std::vector<double>> samples;
    std::vector<double> mean_a(2, 0.0), mean_b(2, 0.0);
    for (int i = 0; i < 40; ++i) {
        std::vector<double> a{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
        std::vector<double> b{10.0 + rng.uniform(-0.1, 0.1), 10.0 + rng.uniform(-0.1, 0.1)};
        for (int j = 0; j < 2; ++j) {
            mean_a[j] += a[j] / 40.0;
            mean_b[j] += b[j] / 40.0;
        }
        samples.push_back(std::move(a));
        samples.push_back(std::move(b));
    }
    Codebook cb = fit_codebook(samples, 2, rng);
    // Identify which code is which blob by first coordinate.
    const auto c0 = cb.code(0);
    const auto c1 = cb.code(1);
    const auto& lo = c0[0] < c1[0] ? c0 : c1;
    const auto& hi = c0[0] < c1[0] ? c1 : c0;
    for (int j = 0; j < 2; ++j) {
        CHECK(std::abs(lo[j] - mean_a[j]) < 1e-6);
        CHECK(std::abs(hi[j] - mean_b[j]) < 1e-6);
    }
}

TEST_CASE("fit_codebook rejects duplicate-only samples") {
    RngStream rng(52);
    std::vector<std::vector<double>> samples(10, std::vector<double>{1.0, 2.0});
    CHECK_THROWS_AS(fit_codebook(samples, 2, rng), ConfigError);
}

TEST_CASE("fit_codebook codes are pairwise distinct") {
    RngStream rng(53);
    LatentCodec codec = LatentCodec::random(4, 8, rng);
    auto latents = corpus_latents(rng, codec, 20);
    Codebook cb = fit_codebook(latents, 16, rng);
    for (int a = 0; a < cb.size(); ++a) {
        for (int b = a + 1; b < cb.size(); ++b) {
            double d = 0.0;
            for (int j = 0; j < cb.dim(); ++j) {
                const double diff = cb.code(a)[j] - cb.code(b)[j];
                d += diff * diff;
            }
            CHECK(std::sqrt(d) > 1e-9);
        }
    }
}

TEST_CASE("quantize picks the nearest code with low-index ties") {
    Codebook cb;
    cb.codes = Tensor::from_data({2, 2}, {0, 0, 1, 1});
    std::vector<double> z{0.9, 0.8};
    CHECK(quantize(z, cb) == 1);
    std::vector<double> exact{1.0, 1.0};
    CHECK(quantize(exact, cb) == 1);
    std::vector<double> tie{0.5, 0.5};
    CHECK(quantize(tie, cb) == 0);
    std::vector<double> bad{0.5, 0.5, 0.5};
    CHECK_THROWS_AS(quantize(bad, cb), DimensionError);
}

TEST_CASE("quantize is idempotent on the codes themselves") {
    RngStream rng(54);
    LatentCodec codec = LatentCodec::random(4, 8, rng);
    auto latents = corpus_latents(rng, codec, 15);
    Codebook cb = fit_codebook(latents, 32, rng);
    for (int k = 0; k < cb.size(); ++k) {
        CHECK(quantize(cb.code(k), cb) == k);
    }
}

TEST_CASE("encode_image shape and locality") {
    RngStream rng(55);
    LatentCodec codec = LatentCodec::random(4, 8, rng);
    auto latents = corpus_latents(rng, codec, 15);
    Codebook cb = fit_codebook(latents, 16, rng);

    ToyImage img = random_image(rng);
    IndexSequence seq = encode_image(img, cb, codec);
    CHECK(seq.indices.size() == 9);
    CHECK(seq.rows == 3);
    CHECK(seq.cols == 3);

    ToyImage constant = ToyImage::blank(12, 12);
    for (double& v : constant.pixels) v = 0.7;
    IndexSequence cseq = encode_image(constant, cb, codec);
    for (int i : cseq.indices) CHECK(i == cseq.indices[0]);

    // Perturbing one patch changes at most that position.
    ToyImage img2 = img;
    img2.at(0, 0) = img.at(0, 0) < 0.5 ? 1.0 : 0.0;
    IndexSequence seq2 = encode_image(img2, cb, codec);
    for (std::size_t i = 1; i < seq.indices.size(); ++i) {
        CHECK(seq.indices[i] == seq2.indices[i]);
    }

    ToyImage odd = ToyImage::blank(10, 12);
    CHECK_THROWS_AS(encode_image(odd, cb, codec), DimensionError);
}

TEST_CASE("decode stays at or below the quantization floor") {
    RngStream rng(56);
    LatentCodec codec = LatentCodec::random(4, 8, rng);
    auto latents = corpus_latents(rng, codec, 25);
    Codebook cb = fit_codebook(latents, 64, rng);
    for (int rep = 0; rep < 20; ++rep) {
        ToyImage img = random_image(rng);
        ToyImage rec = decode_indices(encode_image(img, cb, codec), cb, codec);
        CHECK(image_mse(img, rec) <= quantization_floor(img, cb, codec) + 1e-12);
    }
}

TEST_CASE("decode of a constant sequence tiles one patch") {
    RngStream rng(57);
    LatentCodec codec = LatentCodec::random(4, 8, rng);
    auto latents = corpus_latents(rng, codec, 15);
    Codebook cb = fit_codebook(latents, 16, rng);

    IndexSequence seq;
    seq.rows = 2;
    seq.cols = 2;
    seq.indices = {5, 5, 5, 5};
    ToyImage img = decode_indices(seq, cb, codec);
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            CHECK(img.at(r, c) == img.at(r + 4, c));
            CHECK(img.at(r, c) == img.at(r, c + 4));
        }
    }

    IndexSequence bad = seq;
    bad.indices[0] = cb.size();
    CHECK_THROWS_AS(decode_indices(bad, cb, codec), VocabularyError);
}

TEST_CASE("token id mapping is an offset bijection that excludes specials") {
    VocabularyMap vm{.text_vocab_size = 32, .codebook_size = 64};
    CHECK(vm.total() == 98);
    CHECK(vm.start_img() == 96);
    CHECK(vm.end_img() == 97);

    IndexSequence seq;
    seq.rows = 1;
    seq.cols = 3;
    seq.indices = {0, 63, 17};
    auto tokens = to_token_ids(seq, vm);
    CHECK(tokens[0] == vm.vq_base());
    CHECK(tokens[1] == vm.vq_base() + 63);

    IndexSequence back = from_token_ids(tokens, 1, 3, vm);
    CHECK(back.indices == seq.indices);

    RngStream rng(58);
    for (int rep = 0; rep < 10; ++rep) {
        IndexSequence rnd;
        rnd.rows = 2;
        rnd.cols = 3;
        for (int i = 0; i < 6; ++i) rnd.indices.push_back(static_cast<int>(rng.below(64)));
        IndexSequence rt = from_token_ids(to_token_ids(rnd, vm), 2, 3, vm);
        CHECK(rt.indices == rnd.indices);
    }

    std::vector<int> with_special{vm.start_img(), vm.vq_base(), vm.vq_base()};
    CHECK_THROWS_AS(from_token_ids(with_special, 1, 3, vm), VocabularyError);
    IndexSequence oob;
    oob.rows = 1;
    oob.cols = 1;
    oob.indices = {64};
    CHECK_THROWS_AS(to_token_ids(oob, vm), VocabularyError);
}

TEST_CASE("reconstruction error weakly improves with codebook size") {
    RngStream corpus_rng(59);
    LatentCodec codec = LatentCodec::random(4, 8, corpus_rng);
    auto latents = corpus_latents(corpus_rng, codec, 30);

    RngStream fit_rng_small(60), fit_rng_big(60);
    Codebook small = fit_codebook(latents, 8, fit_rng_small);
    Codebook big = fit_codebook(latents, 64, fit_rng_big);

    RngStream eval_rng(61);
    double err_small = 0.0, err_big = 0.0;
    for (int i = 0; i < 25; ++i) {
        ToyImage img = random_image(eval_rng);
        err_small += image_mse(img, decode_indices(encode_image(img, small, codec), small, codec));
        err_big += image_mse(img, decode_indices(encode_image(img, big, codec), big, codec));
    }
    CHECK(err_big <= err_small);
}
