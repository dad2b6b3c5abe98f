#pragma once

#include <span>
#include <vector>

#include "hlora/image.hpp"
#include "hlora/rng.hpp"
#include "hlora/tensor.hpp"

namespace hlora {

// K learned code vectors defining the discrete image vocabulary. Frozen after
// fitting; codes are pairwise distinct.
struct Codebook {
    Tensor codes;  // [K x d_code]

    int size() const { return codes.shape()[0]; }
    int dim() const { return codes.shape()[1]; }
    std::span<const double> code(int k) const {
        return codes.data().subspan(static_cast<std::size_t>(k) * dim(), dim());
    }
};

// Per-patch code indices with their spatial arrangement.
struct IndexSequence {
    std::vector<int> indices;
    int rows = 0;
    int cols = 0;
};

// Layout of the extended token space: text ids, then VQ ids, then the two
// image-bracketing specials. The three ranges are pairwise disjoint.
struct VocabularyMap {
    int text_vocab_size = 0;
    int codebook_size = 0;

    int vq_base() const { return text_vocab_size; }
    int start_img() const { return text_vocab_size + codebook_size; }
    int end_img() const { return text_vocab_size + codebook_size + 1; }
    int total() const { return text_vocab_size + codebook_size + 2; }
    bool is_text(int id) const { return id >= 0 && id < text_vocab_size; }
    bool is_vq(int id) const { return id >= vq_base() && id < vq_base() + codebook_size; }
    bool is_special(int id) const { return id == start_img() || id == end_img(); }
};

// Fixed seeded linear patch->latent projection and its least-squares
// pseudo-inverse, standing in for a learned codec pair. Frozen at creation.
struct LatentCodec {
    int patch = 4;
    Tensor to_latent;  // [patch*patch x d_code]
    Tensor to_patch;   // [d_code x patch*patch]

    int d_code() const { return to_latent.shape()[1]; }
    static LatentCodec random(int patch, int d_code, RngStream& rng);
    std::vector<double> latent_of(std::span<const double> patch_pixels) const;
};

// Lloyd-style fit from greedy farthest-point seeding; deterministic given the
// stream. Requires at least K distinct samples.
Codebook fit_codebook(const std::vector<std::vector<double>>& samples, int K, RngStream& rng,
                      int iterations = 25);

// argmin_k |z - code_k|_2, ties broken toward the lowest index.
int quantize(std::span<const double> z, const Codebook& cb);

IndexSequence encode_image(const ToyImage& img, const Codebook& cb, const LatentCodec& codec);
ToyImage decode_indices(const IndexSequence& idx, const Codebook& cb, const LatentCodec& codec);

// Bijection between code indices and the VQ token range; specials are never
// produced or accepted by this pair.
std::vector<int> to_token_ids(const IndexSequence& idx, const VocabularyMap& vm);
IndexSequence from_token_ids(std::span<const int> tokens, int rows, int cols,
                             const VocabularyMap& vm);

}  // namespace hlora
