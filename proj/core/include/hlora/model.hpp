#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hlora/adapters.hpp"
#include "hlora/image.hpp"
#include "hlora/rng.hpp"
#include "hlora/task.hpp"
#include "hlora/tensor.hpp"
#include "hlora/tokenizer.hpp"
#include "hlora/vision.hpp"
#include "hlora/vq.hpp"

namespace hlora {

struct HLoraTaskConfig {
    int rank = 4;
    int experts = 4;
    double alpha = 4.0;
};

struct ModelConfig {
    int d_model = 64;
    int layers = 2;
    int heads = 2;
    int max_seq = 128;
    int d_ff = 128;

    int image_size = 12;
    int patch = 4;
    int d_vis = 32;
    int vis_blocks = 4;
    int concrete_tap = 2;
    int abstract_tap = 3;
    // Ungated baseline: the single tap every task reads (penultimate block,
    // the standard single-feature choice).
    int shared_tap = 3;
    int adapter_hidden = 64;

    int d_code = 8;
    int codebook_size = 64;

    HLoraTaskConfig comp{4, 4, 4.0};
    HLoraTaskConfig gen{8, 4, 8.0};

    // Mixed-training baseline: one shared adapter, no task gating.
    int shared_rank = 16;
    double shared_alpha = 16.0;

    VocabularyMap vocab() const {
        return VocabularyMap{.text_vocab_size = Tokenizer::vocab_size,
                             .codebook_size = codebook_size};
    }
    void validate() const;
};

// Whether adapted layers route through per-task plugin banks or one shared
// low-rank adapter (the conflict-prone baseline).
enum class AdapterMode { task_gated, shared_lora };

// Ordered sequence layout: aligned visual tokens, then prompt text, then the
// response (text ids for comprehension; START_IMG + VQ ids + END_IMG for
// generation). Loss mask is true exactly on response positions.
struct JointSequence {
    std::optional<ToyImage> image;
    int visual_patches = 0;
    std::vector<int> prompt_tokens;
    std::vector<int> response_tokens;  // already in the extended id space
    TaskType task = TaskType::comprehension;

    int length() const {
        return visual_patches + static_cast<int>(prompt_tokens.size()) +
               static_cast<int>(response_tokens.size());
    }
    // -1 on visual positions, ids elsewhere.
    std::vector<int> token_ids() const;
    std::vector<uint8_t> loss_mask() const;
};

struct GenerateResult {
    std::vector<int> tokens;  // newly generated ids, extended space
    bool truncated = false;
    std::optional<ToyImage> image;  // decoded output for generation tasks
};

// One frozen linear with its adaptation state; name keys checkpoint entries.
struct AdaptedLinear {
    std::string name;
    FrozenLinear base;
    PluginBank plugins;        // task_gated mode
    LoraAdapter shared;        // shared_lora mode
};

// Parameter groups for stage trainability masks.
enum class ParamGroup {
    backbone,
    vision_encoder,
    comp_adapter,
    gen_adapter,
    comp_plugins,
    gen_plugins,
    embedding,
    head,
    shared_adapter,
    vq_codes,
};

const char* group_name(ParamGroup g);

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Tiny decoder-only autoregressive transformer over the extended vocabulary,
// with every attention and feed-forward linear adapted. The visual tower, the
// codec, and the backbone are frozen at construction; adapters, plugins,
// embedding and head carry requires_grad and are owned by the stage masks.
class UnifiedModel {
public:
    UnifiedModel(ModelConfig cfg, AdapterMode mode, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    AdapterMode mode() const { return mode_; }
    const VocabularyMap& vocab() const { return vocab_; }
    const Codebook& codebook() const { return codebook_; }
    const LatentCodec& codec() const { return codec_; }
    const EncoderStack& encoder() const { return encoder_; }
    const GranularitySelection& taps() const { return taps_; }
    void set_taps(GranularitySelection taps) { taps_ = taps; }
    // Index grid emitted for one image.
    int grid_rows() const { return cfg_.image_size / cfg_.patch; }
    int grid_cols() const { return cfg_.image_size / cfg_.patch; }
    int indices_per_image() const { return grid_rows() * grid_cols(); }

    JointSequence build_sequence(const std::optional<ToyImage>& image,
                                 const std::vector<int>& text,
                                 const std::optional<std::vector<int>>& response,
                                 TaskType task) const;

    Tensor forward(Graph& g, const JointSequence& seq, TaskType task,
                   OpCounter* counter = nullptr) const;
    Tensor loss(Graph& g, const JointSequence& seq, TaskType task) const;
    GenerateResult generate(const JointSequence& prompt, TaskType task, int max_new) const;

    std::vector<NamedParam> named_parameters() const;
    std::vector<Tensor> group_parameters(ParamGroup g) const;
    // Every group that exists under the current adapter mode.
    std::vector<ParamGroup> groups() const;

    // Task-gated mode only; the shared baseline has a single ungated adapter.
    AlignmentAdapter& adapter_for(TaskType task);
    AlignmentAdapter& shared_adapter();
    Tensor& embedding() { return embedding_; }
    Tensor& head() { return head_; }
    std::vector<AdaptedLinear>& adapted_layers() { return adapted_; }

private:
    Tensor adapted_forward(Graph& g, const AdaptedLinear& layer, const Tensor& x, TaskType task,
                           OpCounter* counter) const;
    Tensor embed_sequence(Graph& g, const JointSequence& seq, TaskType task) const;

    ModelConfig cfg_;
    AdapterMode mode_;
    VocabularyMap vocab_;

    EncoderStack encoder_;
    GranularitySelection taps_{2, 3};
    AlignmentAdapter comp_adapter_;   // task_gated mode
    AlignmentAdapter gen_adapter_;    // task_gated mode
    AlignmentAdapter shared_adapter_; // shared_lora mode: one adapter, one tap
    LatentCodec codec_;
    Codebook codebook_;

    Tensor embedding_;  // [vocab x d_model]
    Tensor pos_;        // [max_seq x d_model], frozen
    Tensor head_;       // [d_model x vocab]
    std::vector<AdaptedLinear> adapted_;  // layers*6: wq,wk,wv,wo,up,down
};

}  // namespace hlora
