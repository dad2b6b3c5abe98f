#include "hlora/vision.hpp"

#include <cmath>
#include <string>

namespace hlora {

EncoderStack EncoderStack::random(int patch_size, int d_vis, int num_blocks, RngStream& rng) {
    if (patch_size <= 0 || d_vis <= 0 || num_blocks < 2) {
        throw ConfigError("encoder needs positive patch/width and at least two blocks");
    }
    EncoderStack enc;
    enc.patch_size = patch_size;
    enc.d_vis = d_vis;
    enc.num_blocks = num_blocks;
    enc.mix_from_block = num_blocks / 2 + 1;
    const int p2 = patch_size * patch_size;
    // Raw-scale projection: shallow states keep encoder-native magnitudes,
    // well above the text embedding scale; deep states are normalized.
    enc.patch_proj = Tensor::zeros({p2, d_vis});
    for (double& v : enc.patch_proj.data_mut()) v = rng.gaussian(0.0, 8.0 / std::sqrt(p2));
    for (int b = 0; b < num_blocks; ++b) {
        Tensor w = Tensor::zeros({d_vis, d_vis});
        for (double& v : w.data_mut()) v = rng.gaussian(0.0, 1.0 / std::sqrt(d_vis));
        enc.block_w.push_back(std::move(w));
    }
    return enc;
}

std::vector<Tensor> EncoderStack::parameters() const {
    std::vector<Tensor> ps{patch_proj};
    ps.insert(ps.end(), block_w.begin(), block_w.end());
    return ps;
}

std::vector<Tensor> encode(Graph& g, const ToyImage& img, const EncoderStack& enc) {
    const auto patches = extract_patches(img, enc.patch_size);
    const int n = static_cast<int>(patches.size());
    const int p2 = enc.patch_size * enc.patch_size;
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(n) * p2);
    for (const auto& p : patches) flat.insert(flat.end(), p.begin(), p.end());
    Tensor tokens = Tensor::from_data({n, p2}, std::move(flat));

    // Shallow blocks refine patch-local detail under a residual at the
    // encoder's raw scale, keeping the magnitudes a reconstruction needs.
    // Deeper blocks normalize every token to the unit scale of the language
    // embeddings: the concrete-to-abstract axis is proximity to the text
    // space, not learned semantics. An all-zero image stays zero throughout.
    std::vector<Tensor> states;
    states.reserve(enc.num_blocks);
    Tensor f = g.matmul(tokens, enc.patch_proj);
    for (int b = 0; b < enc.num_blocks; ++b) {
        f = g.add(f, g.gelu(g.matmul(f, enc.block_w[b])));
        if (b + 1 >= enc.mix_from_block) f = g.rmsnorm_rows(f);
        states.push_back(f);
    }
    return states;
}

GranularitySelection::GranularitySelection(int concrete, int abstr)
    : concrete_tap(concrete), abstract_tap(abstr) {
    if (concrete < 1 || abstr <= concrete) {
        throw ConfigError("taps must satisfy 1 <= concrete < abstract, got " +
                          std::to_string(concrete) + ", " + std::to_string(abstr));
    }
}

const Tensor& select_features(const GranularitySelection& taps, const std::vector<Tensor>& states,
                              TaskType task) {
    const int tap = task == TaskType::generation ? taps.concrete_tap : taps.abstract_tap;
    if (tap < 1 || tap > static_cast<int>(states.size())) {
        throw ConfigError("tap " + std::to_string(tap) + " outside encoder depth " +
                          std::to_string(states.size()));
    }
    return states[tap - 1];
}

AlignmentAdapter AlignmentAdapter::init(int d_vis, int d_hidden, int d_model, RngStream& rng,
                                         bool zero_start) {
    AlignmentAdapter ad;
    ad.w1 = Tensor::zeros({d_vis, d_hidden}, true);
    for (double& v : ad.w1.data_mut()) v = rng.gaussian(0.0, 1.0 / std::sqrt(d_vis));
    ad.b1 = Tensor::zeros({d_hidden}, true);
    ad.w2 = Tensor::zeros({d_hidden, d_model}, true);
    if (!zero_start) {
        for (double& v : ad.w2.data_mut()) v = rng.gaussian(0.0, 1.0 / std::sqrt(d_hidden));
    }
    ad.b2 = Tensor::zeros({d_model}, true);
    return ad;
}

Tensor AlignmentAdapter::forward(Graph& g, const Tensor& features) const {
    if (features.cols() != w1.shape()[0]) {
        throw DimensionError("feature width " + std::to_string(features.cols()) +
                             " does not match adapter input " + std::to_string(w1.shape()[0]));
    }
    Tensor h = g.gelu(g.add_bias(g.matmul(features, w1), b1));
    return g.add_bias(g.matmul(h, w2), b2);
}

}  // namespace hlora
