#pragma once

#include <vector>

#include "hlora/image.hpp"
#include "hlora/rng.hpp"
#include "hlora/task.hpp"
#include "hlora/tensor.hpp"

namespace hlora {

// Frozen patch encoder exposing one hidden state per block. Early blocks mix
// only channels (patch-local); later blocks also average each patch with its
// grid neighbours before the channel mix, so depth trades locality for
// aggregated context. Shallow taps serve generation, deep taps comprehension.
struct EncoderStack {
    int patch_size = 4;
    int d_vis = 32;
    int num_blocks = 4;
    int mix_from_block = 3;       // first 1-based block index with neighbour mixing
    Tensor patch_proj;            // [patch*patch x d_vis], frozen
    std::vector<Tensor> block_w;  // num_blocks x [d_vis x d_vis], frozen

    static EncoderStack random(int patch_size, int d_vis, int num_blocks, RngStream& rng);
    std::vector<Tensor> parameters() const;
};

// Per-block hidden states f_1..f_L, each [num_patches x d_vis].
std::vector<Tensor> encode(Graph& g, const ToyImage& img, const EncoderStack& enc);

// Which block each granularity taps; 1-based, concrete strictly shallower.
struct GranularitySelection {
    int concrete_tap;
    int abstract_tap;

    GranularitySelection(int concrete, int abstr);
};

// Generation reads the shallow (concrete) tap, comprehension the deep
// (abstract) tap. Pure selection, no mixing.
const Tensor& select_features(const GranularitySelection& taps, const std::vector<Tensor>& states,
                              TaskType task);

// Two-layer perceptron projecting encoder features into the model width. The
// second layer starts at zero so visual tokens are silent until trained.
struct AlignmentAdapter {
    Tensor w1;  // [d_vis x d_hidden]
    Tensor b1;  // [d_hidden]
    Tensor w2;  // [d_hidden x d_model]
    Tensor b2;  // [d_model]

    // zero_start silences the output layer so visual tokens stay quiet until
    // an alignment stage trains them; pass false for an ordinary random head.
    static AlignmentAdapter init(int d_vis, int d_hidden, int d_model, RngStream& rng,
                                 bool zero_start = true);
    Tensor forward(Graph& g, const Tensor& features) const;
    std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
    int d_model() const { return w2.shape()[1]; }
};

}  // namespace hlora
