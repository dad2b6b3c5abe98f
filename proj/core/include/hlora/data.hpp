#pragma once

#include <optional>
#include <vector>

#include "hlora/image.hpp"
#include "hlora/rng.hpp"
#include "hlora/task.hpp"
#include "hlora/vq.hpp"

namespace hlora {

// The three synthetic bi-modal tasks. comp_qa: image + counting question ->
// answer token. gen_from_text: attribute tokens -> rendered-image indices.
// gen_transform: image -> inverted-image indices.
enum class TaskKind { comp_qa, gen_from_text, gen_transform };

const char* task_kind_name(TaskKind k);

struct SyntheticTask {
    TaskKind kind = TaskKind::comp_qa;
    uint64_t seed = 0;
    int train_count = 64;
    int val_count = 16;
    int image_size = 12;
};

struct Sample {
    std::optional<ToyImage> image;
    std::vector<int> prompt;           // text token ids
    std::vector<int> response_text;    // comprehension answers
    IndexSequence response_indices;    // generation targets
    TaskType task = TaskType::comprehension;
};

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> val;
};

// Shape renderers used by the generators; exposed for test oracles.
ToyImage render_attribute_image(int image_size, int shape_id, int big, int cell_row,
                                int cell_col, int intensity_level);
ToyImage render_count_image(int image_size, const std::vector<int>& cells,
                            const std::vector<int>& shapes, const std::vector<int>& levels);
// As render_count_image but with explicit per-blob intensities in (0, 1].
ToyImage render_scene(int image_size, const std::vector<int>& cells,
                      const std::vector<int>& shapes, const std::vector<double>& values);
ToyImage invert_image(const ToyImage& img);

// Deterministic given the task seed; train and val splits are disjoint by
// construction (no generated sample appears in both).
Dataset make_dataset(const SyntheticTask& task, const Codebook& cb, const LatentCodec& codec);

}  // namespace hlora
