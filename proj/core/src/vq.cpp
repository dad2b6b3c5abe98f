#include "hlora/vq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace hlora {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

// Gauss-Jordan inverse of a small dense matrix.
std::vector<double> invert(std::vector<double> m, int n) {
    std::vector<double> inv(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) inv[static_cast<std::size_t>(i) * n + i] = 1.0;
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r) {
            if (std::abs(m[static_cast<std::size_t>(r) * n + col]) >
                std::abs(m[static_cast<std::size_t>(pivot) * n + col])) {
                pivot = r;
            }
        }
        const double pv = m[static_cast<std::size_t>(pivot) * n + col];
        if (std::abs(pv) < 1e-12) throw ConfigError("latent projection is rank deficient");
        if (pivot != col) {
            for (int c = 0; c < n; ++c) {
                std::swap(m[static_cast<std::size_t>(pivot) * n + c],
                          m[static_cast<std::size_t>(col) * n + c]);
                std::swap(inv[static_cast<std::size_t>(pivot) * n + c],
                          inv[static_cast<std::size_t>(col) * n + c]);
            }
        }
        const double scale = 1.0 / m[static_cast<std::size_t>(col) * n + col];
        for (int c = 0; c < n; ++c) {
            m[static_cast<std::size_t>(col) * n + c] *= scale;
            inv[static_cast<std::size_t>(col) * n + c] *= scale;
        }
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = m[static_cast<std::size_t>(r) * n + col];
            if (f == 0.0) continue;
            for (int c = 0; c < n; ++c) {
                m[static_cast<std::size_t>(r) * n + c] -=
                    f * m[static_cast<std::size_t>(col) * n + c];
                inv[static_cast<std::size_t>(r) * n + c] -=
                    f * inv[static_cast<std::size_t>(col) * n + c];
            }
        }
    }
    return inv;
}

}  // namespace

LatentCodec LatentCodec::random(int patch, int d_code, RngStream& rng) {
    if (patch <= 0 || d_code <= 0) throw ConfigError("codec dimensions must be positive");
    const int p2 = patch * patch;
    if (d_code > p2) throw ConfigError("latent dimension cannot exceed patch pixel count");
    LatentCodec codec;
    codec.patch = patch;
    codec.to_latent = Tensor::zeros({p2, d_code});
    for (double& v : codec.to_latent.data_mut()) v = rng.gaussian(0.0, 1.0 / std::sqrt(p2));

    // Least-squares inverse: (M^T M)^-1 M^T, so decode(encode(p)) is the
    // orthogonal projection of p onto the column space of M.
    const double* m = codec.to_latent.data().data();
    std::vector<double> mtm(static_cast<std::size_t>(d_code) * d_code, 0.0);
    for (int i = 0; i < d_code; ++i) {
        for (int j = 0; j < d_code; ++j) {
            double acc = 0.0;
            for (int r = 0; r < p2; ++r) {
                acc += m[static_cast<std::size_t>(r) * d_code + i] *
                       m[static_cast<std::size_t>(r) * d_code + j];
            }
            mtm[static_cast<std::size_t>(i) * d_code + j] = acc;
        }
    }
    std::vector<double> inv = invert(std::move(mtm), d_code);
    codec.to_patch = Tensor::zeros({d_code, p2});
    double* d = codec.to_patch.data_mut().data();
    for (int i = 0; i < d_code; ++i) {
        for (int r = 0; r < p2; ++r) {
            double acc = 0.0;
            for (int j = 0; j < d_code; ++j) {
                acc += inv[static_cast<std::size_t>(i) * d_code + j] *
                       m[static_cast<std::size_t>(r) * d_code + j];
            }
            d[static_cast<std::size_t>(i) * p2 + r] = acc;
        }
    }
    return codec;
}

std::vector<double> LatentCodec::latent_of(std::span<const double> patch_pixels) const {
    const int p2 = patch * patch;
    if (static_cast<int>(patch_pixels.size()) != p2) {
        throw DimensionError("patch has " + std::to_string(patch_pixels.size()) +
                             " pixels, codec expects " + std::to_string(p2));
    }
    const int d = d_code();
    std::vector<double> z(d, 0.0);
    const double* m = to_latent.data().data();
    for (int r = 0; r < p2; ++r) {
        const double pv = patch_pixels[r];
        if (pv == 0.0) continue;
        for (int j = 0; j < d; ++j) z[j] += pv * m[static_cast<std::size_t>(r) * d + j];
    }
    return z;
}

Codebook fit_codebook(const std::vector<std::vector<double>>& samples, int K, RngStream& rng,
                      int iterations) {
    if (K < 2) throw ConfigError("codebook size must be >= 2");
    if (samples.empty()) throw ConfigError("fit_codebook requires samples");
    const int dim = static_cast<int>(samples[0].size());
    for (const auto& s : samples) {
        if (static_cast<int>(s.size()) != dim) {
            throw DimensionError("codebook samples disagree on dimension");
        }
    }

    std::set<std::vector<double>> distinct(samples.begin(), samples.end());
    if (static_cast<int>(distinct.size()) < K) {
        throw ConfigError("fit_codebook needs at least " + std::to_string(K) +
                          " distinct samples, got " + std::to_string(distinct.size()));
    }

    const int n = static_cast<int>(samples.size());
    // Greedy farthest-point seeding from a seeded first pick.
    std::vector<int> centers;
    centers.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(n))));
    std::vector<double> nearest(n, std::numeric_limits<double>::max());
    while (static_cast<int>(centers.size()) < K) {
        const auto& last = samples[centers.back()];
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], sq_dist(samples[i], last));
            if (nearest[i] > best_d) {
                best_d = nearest[i];
                best = i;
            }
        }
        centers.push_back(best);
    }

    std::vector<std::vector<double>> codes;
    codes.reserve(K);
    for (int c : centers) codes.push_back(samples[c]);

    std::vector<int> assign(n, -1);
    for (int it = 0; it < iterations; ++it) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = sq_dist(samples[i], codes[0]);
            for (int k = 1; k < K; ++k) {
                const double d = sq_dist(samples[i], codes[k]);
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && it > 0) break;

        std::vector<std::vector<double>> sums(K, std::vector<double>(dim, 0.0));
        std::vector<int> counts(K, 0);
        for (int i = 0; i < n; ++i) {
            counts[assign[i]]++;
            for (int j = 0; j < dim; ++j) sums[assign[i]][j] += samples[i][j];
        }
        for (int k = 0; k < K; ++k) {
            if (counts[k] == 0) {
                // Reseed an empty cluster at the sample farthest from its center.
                int far = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double d = sq_dist(samples[i], codes[assign[i]]);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                codes[k] = samples[far];
                assign[far] = k;
                continue;
            }
            for (int j = 0; j < dim; ++j) codes[k][j] = sums[k][j] / counts[k];
        }
    }

    // Enforce pairwise-distinct codes; coincident centers get replaced by the
    // farthest sample not already used as a code.
    for (int a = 0; a < K; ++a) {
        for (int b = a + 1; b < K; ++b) {
            if (sq_dist(codes[a], codes[b]) <= 1e-18) {
                int far = -1;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    double min_d = std::numeric_limits<double>::max();
                    for (int k = 0; k < K; ++k) min_d = std::min(min_d, sq_dist(samples[i], codes[k]));
                    if (min_d > far_d) {
                        far_d = min_d;
                        far = i;
                    }
                }
                codes[b] = samples[far];
            }
        }
    }

    Codebook cb;
    cb.codes = Tensor::zeros({K, dim});
    double* out = cb.codes.data_mut().data();
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < dim; ++j) out[static_cast<std::size_t>(k) * dim + j] = codes[k][j];
    }
    return cb;
}

int quantize(std::span<const double> z, const Codebook& cb) {
    if (static_cast<int>(z.size()) != cb.dim()) {
        throw DimensionError("latent dimension " + std::to_string(z.size()) +
                             " does not match codebook dimension " + std::to_string(cb.dim()));
    }
    int best = 0;
    double best_d = sq_dist(z, cb.code(0));
    for (int k = 1; k < cb.size(); ++k) {
        const double d = sq_dist(z, cb.code(k));
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

IndexSequence encode_image(const ToyImage& img, const Codebook& cb, const LatentCodec& codec) {
    const auto patches = extract_patches(img, codec.patch);
    IndexSequence seq;
    seq.rows = img.height / codec.patch;
    seq.cols = img.width / codec.patch;
    seq.indices.reserve(patches.size());
    for (const auto& p : patches) {
        seq.indices.push_back(quantize(codec.latent_of(p), cb));
    }
    return seq;
}

ToyImage decode_indices(const IndexSequence& idx, const Codebook& cb, const LatentCodec& codec) {
    if (idx.rows <= 0 || idx.cols <= 0 ||
        static_cast<std::size_t>(idx.rows) * idx.cols != idx.indices.size()) {
        throw DimensionError("index sequence spatial shape does not match index count");
    }
    const int patch = codec.patch;
    const int p2 = patch * patch;
    ToyImage img = ToyImage::blank(idx.rows * patch, idx.cols * patch);
    const double* d = codec.to_patch.data().data();
    for (int pr = 0; pr < idx.rows; ++pr) {
        for (int pc = 0; pc < idx.cols; ++pc) {
            const int code_id = idx.indices[static_cast<std::size_t>(pr) * idx.cols + pc];
            if (code_id < 0 || code_id >= cb.size()) {
                throw VocabularyError("index " + std::to_string(code_id) +
                                      " outside codebook of size " + std::to_string(cb.size()));
            }
            const auto z = cb.code(code_id);
            for (int r = 0; r < patch; ++r) {
                for (int c = 0; c < patch; ++c) {
                    const int pix = r * patch + c;
                    double acc = 0.0;
                    for (int j = 0; j < codec.d_code(); ++j) {
                        acc += z[j] * d[static_cast<std::size_t>(j) * p2 + pix];
                    }
                    img.at(pr * patch + r, pc * patch + c) = std::clamp(acc, 0.0, 1.0);
                }
            }
        }
    }
    return img;
}

std::vector<int> to_token_ids(const IndexSequence& idx, const VocabularyMap& vm) {
    std::vector<int> out;
    out.reserve(idx.indices.size());
    for (int i : idx.indices) {
        if (i < 0 || i >= vm.codebook_size) {
            throw VocabularyError("code index " + std::to_string(i) +
                                  " outside codebook range [0, " +
                                  std::to_string(vm.codebook_size) + ")");
        }
        out.push_back(vm.vq_base() + i);
    }
    return out;
}

IndexSequence from_token_ids(std::span<const int> tokens, int rows, int cols,
                             const VocabularyMap& vm) {
    if (static_cast<std::size_t>(rows) * cols != tokens.size()) {
        throw DimensionError("token count " + std::to_string(tokens.size()) +
                             " does not fill a " + std::to_string(rows) + "x" +
                             std::to_string(cols) + " grid");
    }
    IndexSequence seq;
    seq.rows = rows;
    seq.cols = cols;
    seq.indices.reserve(tokens.size());
    for (int t : tokens) {
        if (!vm.is_vq(t)) {
            throw VocabularyError("token id " + std::to_string(t) +
                                  " is not in the VQ range [" + std::to_string(vm.vq_base()) +
                                  ", " + std::to_string(vm.vq_base() + vm.codebook_size) + ")");
        }
        seq.indices.push_back(t - vm.vq_base());
    }
    return seq;
}

}  // namespace hlora
