#pragma once

#include <string>
#include <vector>

#include "hlora/errors.hpp"

namespace hlora {

// Generator parameters an image was rendered from; -1 where not applicable.
struct ImageMeta {
    int shape_id = -1;
    int size = -1;
    int row = -1;
    int col = -1;
    int count = -1;
    int intensity = -1;
};

// Grayscale grid with values in [0, 1].
struct ToyImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // row-major, height*width entries
    ImageMeta meta;

    static ToyImage blank(int height, int width);
    double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
    double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
};

// Row-major patch grid; each patch flattened row-major. Throws when the image
// dimensions are not divisible by the patch size.
std::vector<std::vector<double>> extract_patches(const ToyImage& img, int patch);

// Mean squared pixel error; images must agree on dimensions.
double image_mse(const ToyImage& a, const ToyImage& b);

// Plain portable graymap (P2) with 255 levels.
void write_pgm(const ToyImage& img, const std::string& path);
ToyImage read_pgm(const std::string& path);

}  // namespace hlora
