#include "hlora/data.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "hlora/tokenizer.hpp"

namespace hlora {

const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::comp_qa: return "comp_qa";
        case TaskKind::gen_from_text: return "gen_from_text";
        case TaskKind::gen_transform: return "gen_transform";
    }
    return "?";
}

namespace {

constexpr double kLevels[] = {0.4, 0.7, 1.0};

// Stamps a shape into the 4x4 cell at (cell_row, cell_col) of a 3x3 cell grid.
void stamp_shape(ToyImage& img, int shape_id, int big, int cell_row, int cell_col,
                 double value) {
    const int cell = img.height / 3;
    const int r0 = cell_row * cell;
    const int c0 = cell_col * cell;
    auto put = [&](int r, int c) {
        if (r >= 0 && r < img.height && c >= 0 && c < img.width) img.at(r, c) = value;
    };
    switch (shape_id) {
        case 0:  // square block
            for (int r = 0; r < (big ? cell : 2); ++r)
                for (int c = 0; c < (big ? cell : 2); ++c) put(r0 + (big ? 0 : 1) + r, c0 + (big ? 0 : 1) + c);
            break;
        case 1:  // disc: plus-shaped blob
            for (int t = 0; t < (big ? cell : 2); ++t) {
                put(r0 + 1, c0 + t + (big ? 0 : 1));
                put(r0 + 2, c0 + t + (big ? 0 : 1));
                put(r0 + t + (big ? 0 : 1), c0 + 1);
                put(r0 + t + (big ? 0 : 1), c0 + 2);
            }
            break;
        case 2:  // cross: diagonals
            for (int t = 0; t < cell; ++t) {
                if (!big && (t == 0 || t == cell - 1)) continue;
                put(r0 + t, c0 + t);
                put(r0 + t, c0 + cell - 1 - t);
            }
            break;
        default:  // triangle: lower-left wedge
            for (int r = 0; r < cell; ++r)
                for (int c = 0; c <= r; ++c)
                    if (big || r >= 1) put(r0 + r, c0 + c);
            break;
    }
}

}  // namespace

ToyImage render_attribute_image(int image_size, int shape_id, int big, int cell_row,
                                int cell_col, int intensity_level) {
    ToyImage img = ToyImage::blank(image_size, image_size);
    stamp_shape(img, shape_id, big, cell_row, cell_col, kLevels[intensity_level]);
    img.meta.shape_id = shape_id;
    img.meta.size = big;
    img.meta.row = cell_row;
    img.meta.col = cell_col;
    img.meta.intensity = intensity_level;
    return img;
}

ToyImage render_count_image(int image_size, const std::vector<int>& cells,
                            const std::vector<int>& shapes, const std::vector<int>& levels) {
    std::vector<double> values;
    values.reserve(levels.size());
    for (int lv : levels) values.push_back(kLevels[lv]);
    return render_scene(image_size, cells, shapes, values);
}

ToyImage render_scene(int image_size, const std::vector<int>& cells,
                      const std::vector<int>& shapes, const std::vector<double>& values) {
    ToyImage img = ToyImage::blank(image_size, image_size);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        stamp_shape(img, shapes[i], 1, cells[i] / 3, cells[i] % 3, values[i]);
    }
    img.meta.count = static_cast<int>(cells.size());
    return img;
}

ToyImage invert_image(const ToyImage& img) {
    ToyImage out = img;
    for (double& v : out.pixels) v = 1.0 - v;
    return out;
}

namespace {

std::vector<int> tokens(std::initializer_list<const char*> words) {
    std::vector<int> ids;
    for (const char* w : words) ids.push_back(Tokenizer::id_of(w));
    return ids;
}

const char* shape_word(int shape_id) {
    const char* names[] = {"square", "disc", "cross", "tri"};
    return names[shape_id];
}

struct BlobScene {
    std::vector<int> cells, shapes;
    std::vector<double> values;  // per-blob intensity, 16-step grid in [0.3, 1]
    std::string key;
};

BlobScene random_scene(RngStream& rng, const std::vector<int>& shape_pool) {
    BlobScene scene;
    std::vector<int> all_cells{0, 1, 2, 3, 4, 5, 6, 7, 8};
    for (int shape : shape_pool) {
        const int pick = static_cast<int>(rng.below(all_cells.size()));
        scene.cells.push_back(all_cells[pick]);
        all_cells.erase(all_cells.begin() + pick);
        scene.shapes.push_back(shape);
        const int q = static_cast<int>(rng.below(16));
        scene.values.push_back(0.4 + 0.6 * q / 15.0);
        scene.key += "_" + std::to_string(scene.cells.back()) + "s" + std::to_string(shape) +
                     "q" + std::to_string(q);
    }
    return scene;
}

// Counting over 1..8 occupied cells: the answer is a pooled statistic of the
// scene, so it reads out directly from globally mixed deep features. attempt
// cycles the answer class so datasets stay balanced.
Sample make_comp_sample(RngStream& rng, int image_size, int attempt, std::string& key) {
    Sample s;
    s.task = TaskType::comprehension;
    const int count = 1 + attempt % 8;
    std::vector<int> pool;
    for (int i = 0; i < count; ++i) pool.push_back(static_cast<int>(rng.below(4)));
    BlobScene scene = random_scene(rng, pool);
    key = "qc" + std::to_string(count) + scene.key;
    s.image = render_scene(image_size, scene.cells, scene.shapes, scene.values);
    s.image->meta.count = count;
    s.prompt = tokens({"q", "count"});
    s.response_text = {Tokenizer::id_of(std::to_string(count))};
    return s;
}

Sample make_gen_text_sample(int image_size, int combo, const Codebook& cb,
                            const LatentCodec& codec, std::string& key) {
    const int shape_id = combo % 4;
    const int big = (combo / 4) % 2;
    const int cell_row = (combo / 8) % 3;
    const int cell_col = (combo / 24) % 3;
    const int level = (combo / 72) % 3;
    key = "g" + std::to_string(combo);
    Sample s;
    s.task = TaskType::generation;
    ToyImage img = render_attribute_image(image_size, shape_id, big, cell_row, cell_col, level);
    s.prompt = tokens({"render", shape_word(shape_id), big ? "big" : "small"});
    s.prompt.push_back(Tokenizer::id_of("r" + std::to_string(cell_row)));
    s.prompt.push_back(Tokenizer::id_of("c" + std::to_string(cell_col)));
    s.prompt.push_back(Tokenizer::id_of("lv" + std::to_string(level)));
    s.response_indices = encode_image(img, cb, codec);
    s.image = std::nullopt;  // text-conditioned generation has no input image
    return s;
}

Sample make_gen_transform_sample(RngStream& rng, int image_size, const Codebook& cb,
                                 const LatentCodec& codec, std::string& key) {
    const int count = 1 + static_cast<int>(rng.below(4));
    Sample base = make_comp_sample(rng, image_size, count, key);
    key = "t" + key;
    Sample s;
    s.task = TaskType::generation;
    s.image = base.image;
    s.prompt = tokens({"invert"});
    s.response_indices = encode_image(invert_image(*base.image), cb, codec);
    return s;
}

}  // namespace

Dataset make_dataset(const SyntheticTask& task, const Codebook& cb, const LatentCodec& codec) {
    if (task.train_count <= 0 || task.val_count < 0) {
        throw ConfigError("dataset counts must be positive");
    }
    const int want = task.train_count + task.val_count;
    RngStream rng(task.seed ^ 0x5eed5eedULL);
    std::set<std::string> seen;
    std::vector<Sample> samples;

    if (task.kind == TaskKind::gen_from_text) {
        // Finite attribute grid: shuffle all combos, take the first `want`.
        std::vector<int> combos(216);
        for (int i = 0; i < 216; ++i) combos[i] = i;
        for (int i = 215; i > 0; --i) {
            std::swap(combos[i], combos[rng.below(static_cast<uint64_t>(i) + 1)]);
        }
        if (want > static_cast<int>(combos.size())) {
            throw ConfigError("gen_from_text supports at most 216 distinct samples");
        }
        for (int i = 0; i < want; ++i) {
            std::string key;
            samples.push_back(make_gen_text_sample(task.image_size, combos[i], cb, codec, key));
        }
    } else {
        int guard = 0;
        while (static_cast<int>(samples.size()) < want) {
            if (++guard > want * 200) {
                throw ConfigError("could not generate enough distinct samples");
            }
            std::string key;
            Sample s;
            if (task.kind == TaskKind::comp_qa) {
                s = make_comp_sample(rng, task.image_size, guard, key);
            } else {
                s = make_gen_transform_sample(rng, task.image_size, cb, codec, key);
            }
            if (!seen.insert(key).second) continue;
            samples.push_back(std::move(s));
        }
    }

    Dataset ds;
    ds.train.assign(samples.begin(), samples.begin() + task.train_count);
    ds.val.assign(samples.begin() + task.train_count, samples.end());
    return ds;
}

}  // namespace hlora
