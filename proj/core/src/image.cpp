#include "hlora/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace hlora {

ToyImage ToyImage::blank(int height, int width) {
    if (height <= 0 || width <= 0) throw DimensionError("image dimensions must be positive");
    ToyImage img;
    img.height = height;
    img.width = width;
    img.pixels.assign(static_cast<std::size_t>(height) * width, 0.0);
    return img;
}

std::vector<std::vector<double>> extract_patches(const ToyImage& img, int patch) {
    if (patch <= 0 || img.height % patch != 0 || img.width % patch != 0) {
        throw DimensionError("image " + std::to_string(img.height) + "x" +
                             std::to_string(img.width) + " not divisible into " +
                             std::to_string(patch) + "x" + std::to_string(patch) + " patches");
    }
    const int rows = img.height / patch;
    const int cols = img.width / patch;
    std::vector<std::vector<double>> patches;
    patches.reserve(static_cast<std::size_t>(rows) * cols);
    for (int pr = 0; pr < rows; ++pr) {
        for (int pc = 0; pc < cols; ++pc) {
            std::vector<double> p;
            p.reserve(static_cast<std::size_t>(patch) * patch);
            for (int r = 0; r < patch; ++r) {
                for (int c = 0; c < patch; ++c) {
                    p.push_back(img.at(pr * patch + r, pc * patch + c));
                }
            }
            patches.push_back(std::move(p));
        }
    }
    return patches;
}

double image_mse(const ToyImage& a, const ToyImage& b) {
    if (a.height != b.height || a.width != b.width) {
        throw DimensionError("image_mse dimension mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.pixels.size());
}

void write_pgm(const ToyImage& img, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "P2\n" << img.width << " " << img.height << "\n255\n";
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            const int v = static_cast<int>(std::lround(std::clamp(img.at(r, c), 0.0, 1.0) * 255.0));
            out << v << (c + 1 == img.width ? "" : " ");
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

ToyImage read_pgm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string magic;
    in >> magic;
    if (magic != "P2") throw IoError("'" + path + "' is not a plain graymap (P2)");
    int w = 0, h = 0, maxv = 0;
    in >> w >> h >> maxv;
    if (!in || w <= 0 || h <= 0 || maxv <= 0) throw IoError("bad graymap header in '" + path + "'");
    ToyImage img = ToyImage::blank(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            int v = 0;
            in >> v;
            if (!in) throw IoError("truncated graymap data in '" + path + "'");
            img.at(r, c) = static_cast<double>(v) / maxv;
        }
    }
    return img;
}

}  // namespace hlora
