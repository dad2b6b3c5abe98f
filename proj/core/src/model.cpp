#include "hlora/model.hpp"

#include "hlora/data.hpp"

#include <algorithm>
#include <cmath>

namespace hlora {

void ModelConfig::validate() const {
    if (d_model <= 0 || layers <= 0 || heads <= 0 || max_seq <= 0 || d_ff <= 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (d_model % heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by heads " +
                          std::to_string(heads));
    }
    if (image_size % patch != 0) {
        throw ConfigError("image size must be divisible by patch size");
    }
    if (comp.rank < 1 || gen.rank < 1 || comp.experts < 1 || gen.experts < 1) {
        throw ConfigError("per-task H-LoRA ranks and expert counts must be positive");
    }
    if (comp.alpha <= 0 || gen.alpha <= 0 || shared_alpha <= 0 || shared_rank < 1) {
        throw ConfigError("adapter scales must be positive");
    }
    if (concrete_tap < 1 || abstract_tap <= concrete_tap || abstract_tap > vis_blocks) {
        throw ConfigError("taps must satisfy 1 <= concrete < abstract <= blocks");
    }
    if (shared_tap < 1 || shared_tap > vis_blocks) {
        throw ConfigError("shared tap outside encoder depth");
    }
    if (codebook_size < 2 || d_code < 1 || d_code > patch * patch) {
        throw ConfigError("bad codec configuration");
    }
}

const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::backbone: return "backbone";
        case ParamGroup::vision_encoder: return "vision_encoder";
        case ParamGroup::comp_adapter: return "comp_adapter";
        case ParamGroup::gen_adapter: return "gen_adapter";
        case ParamGroup::comp_plugins: return "comp_plugins";
        case ParamGroup::gen_plugins: return "gen_plugins";
        case ParamGroup::embedding: return "embedding";
        case ParamGroup::head: return "head";
        case ParamGroup::shared_adapter: return "shared_adapter";
        case ParamGroup::vq_codes: return "vq_codes";
    }
    return "?";
}

std::vector<int> JointSequence::token_ids() const {
    std::vector<int> ids(static_cast<std::size_t>(visual_patches), -1);
    ids.insert(ids.end(), prompt_tokens.begin(), prompt_tokens.end());
    ids.insert(ids.end(), response_tokens.begin(), response_tokens.end());
    return ids;
}

std::vector<uint8_t> JointSequence::loss_mask() const {
    std::vector<uint8_t> mask(static_cast<std::size_t>(length()), 0);
    for (std::size_t i = mask.size() - response_tokens.size(); i < mask.size(); ++i) mask[i] = 1;
    return mask;
}

UnifiedModel::UnifiedModel(ModelConfig cfg, AdapterMode mode, uint64_t seed)
    : cfg_(cfg), mode_(mode), vocab_(cfg.vocab()), taps_(cfg.concrete_tap, cfg.abstract_tap) {
    cfg_.validate();
    SeedSplitter split(seed);

    {
        RngStream rs = split.stream("vision");
        encoder_ = EncoderStack::random(cfg_.patch, cfg_.d_vis, cfg_.vis_blocks, rs);
    }
    if (mode_ == AdapterMode::task_gated) {
        RngStream rc = split.stream("adapter.comp");
        comp_adapter_ = AlignmentAdapter::init(cfg_.d_vis, cfg_.adapter_hidden, cfg_.d_model, rc);
        RngStream rg = split.stream("adapter.gen");
        gen_adapter_ = AlignmentAdapter::init(cfg_.d_vis, cfg_.adapter_hidden, cfg_.d_model, rg);
    } else {
        // The ungated baseline never runs an alignment stage, so its adapter
        // starts live rather than silenced.
        RngStream rs = split.stream("adapter.shared");
        shared_adapter_ =
            AlignmentAdapter::init(cfg_.d_vis, cfg_.adapter_hidden, cfg_.d_model, rs, false);
    }
    {
        RngStream rs = split.stream("vq.codec");
        codec_ = LatentCodec::random(cfg_.patch, cfg_.d_code, rs);
    }
    {
        // Codebook fitted once on a seeded corpus of shape scenes, their
        // inversions, and a little uniform noise, then frozen. Fitting on the
        // image domain the model emits makes the codes resolve blob patterns
        // and intensities rather than pixel soup.
        RngStream corpus = split.stream("vq.corpus");
        std::vector<std::vector<double>> latents;
        auto add_image = [&](const ToyImage& img) {
            for (const auto& p : extract_patches(img, cfg_.patch)) {
                latents.push_back(codec_.latent_of(p));
            }
        };
        const int scenes = std::max(12, cfg_.codebook_size);
        for (int i = 0; i < scenes; ++i) {
            const int count = 1 + static_cast<int>(corpus.below(8));
            std::vector<int> cells_left{0, 1, 2, 3, 4, 5, 6, 7, 8};
            std::vector<int> cells, shapes;
            std::vector<double> values;
            for (int b = 0; b < count; ++b) {
                const int pick = static_cast<int>(corpus.below(cells_left.size()));
                cells.push_back(cells_left[pick]);
                cells_left.erase(cells_left.begin() + pick);
                shapes.push_back(static_cast<int>(corpus.below(4)));
                values.push_back(0.4 + 0.6 * corpus.below(16) / 15.0);
            }
            ToyImage img = render_scene(cfg_.image_size, cells, shapes, values);
            add_image(img);
            add_image(invert_image(img));
        }
        for (int i = 0; i < 4; ++i) {
            ToyImage img = ToyImage::blank(cfg_.image_size, cfg_.image_size);
            for (double& v : img.pixels) v = corpus.uniform();
            add_image(img);
        }
        RngStream fit = split.stream("vq.fit");
        codebook_ = fit_codebook(latents, cfg_.codebook_size, fit);
    }

    const int vocab_total = vocab_.total();
    {
        RngStream rs = split.stream("embed");
        embedding_ = Tensor::zeros({vocab_total, cfg_.d_model}, true);
        for (double& v : embedding_.data_mut()) v = rs.gaussian(0.0, 0.5);
    }
    {
        RngStream rs = split.stream("head");
        head_ = Tensor::zeros({cfg_.d_model, vocab_total}, true);
        for (double& v : head_.data_mut())
            v = rs.gaussian(0.0, 1.0 / std::sqrt(static_cast<double>(cfg_.d_model)));
    }

    RngStream backbone = split.stream("backbone");
    pos_ = Tensor::zeros({cfg_.max_seq, cfg_.d_model});
    for (double& v : pos_.data_mut()) v = backbone.gaussian(0.0, 0.5);

    RngStream comp_plugins = split.stream("plugins.comp");
    RngStream gen_plugins = split.stream("plugins.gen");
    RngStream shared = split.stream("shared");

    const struct {
        const char* name;
        int d_in, d_out;
    } layer_defs[] = {
        {"wq", cfg_.d_model, cfg_.d_model}, {"wk", cfg_.d_model, cfg_.d_model},
        {"wv", cfg_.d_model, cfg_.d_model}, {"wo", cfg_.d_model, cfg_.d_model},
        {"up", cfg_.d_model, cfg_.d_ff},    {"down", cfg_.d_ff, cfg_.d_model},
    };
    for (int l = 0; l < cfg_.layers; ++l) {
        for (const auto& def : layer_defs) {
            AdaptedLinear al;
            al.name = "blk" + std::to_string(l) + "." + def.name;
            al.base = FrozenLinear::random(def.d_in, def.d_out, backbone,
                                           1.0 / std::sqrt(static_cast<double>(def.d_in)));
            if (mode_ == AdapterMode::task_gated) {
                al.plugins.emplace(TaskType::comprehension,
                                   HLoraSubmodule::init(def.d_in, def.d_out, cfg_.comp.rank,
                                                        cfg_.comp.experts, cfg_.comp.alpha,
                                                        TaskType::comprehension, comp_plugins));
                al.plugins.emplace(TaskType::generation,
                                   HLoraSubmodule::init(def.d_in, def.d_out, cfg_.gen.rank,
                                                        cfg_.gen.experts, cfg_.gen.alpha,
                                                        TaskType::generation, gen_plugins));
            } else {
                al.shared = LoraAdapter::init(def.d_in, def.d_out, cfg_.shared_rank,
                                              cfg_.shared_alpha, shared);
            }
            adapted_.push_back(std::move(al));
        }
    }
}

JointSequence UnifiedModel::build_sequence(const std::optional<ToyImage>& image,
                                           const std::vector<int>& text,
                                           const std::optional<std::vector<int>>& response,
                                           TaskType task) const {
    JointSequence seq;
    seq.task = task;
    seq.image = image;
    seq.visual_patches = image ? indices_per_image() : 0;
    if (image && (image->height != cfg_.image_size || image->width != cfg_.image_size)) {
        throw DimensionError("image must be " + std::to_string(cfg_.image_size) + "x" +
                             std::to_string(cfg_.image_size));
    }
    for (int id : text) {
        if (!vocab_.is_text(id)) {
            throw VocabularyError("prompt token " + std::to_string(id) +
                                  " outside the text range");
        }
    }
    seq.prompt_tokens = text;
    if (response) {
        if (task == TaskType::generation) {
            seq.response_tokens.push_back(vocab_.start_img());
            for (int idx : *response) {
                if (idx < 0 || idx >= vocab_.codebook_size) {
                    throw VocabularyError("generation response index " + std::to_string(idx) +
                                          " outside the codebook");
                }
                seq.response_tokens.push_back(vocab_.vq_base() + idx);
            }
            seq.response_tokens.push_back(vocab_.end_img());
        } else {
            for (int id : *response) {
                if (!vocab_.is_text(id)) {
                    throw VocabularyError("comprehension response token " + std::to_string(id) +
                                          " outside the text range");
                }
            }
            seq.response_tokens = *response;
        }
    }
    if (seq.length() > cfg_.max_seq) {
        throw DimensionError("sequence length " + std::to_string(seq.length()) +
                             " exceeds max_seq " + std::to_string(cfg_.max_seq));
    }
    return seq;
}

Tensor UnifiedModel::adapted_forward(Graph& g, const AdaptedLinear& layer, const Tensor& x,
                                     TaskType task, OpCounter* counter) const {
    if (mode_ == AdapterMode::task_gated) {
        return hlora_forward(g, x, layer.base, select_submodule(task, layer.plugins), counter);
    }
    return lora_forward(g, x, layer.base, layer.shared, counter);
}

Tensor UnifiedModel::embed_sequence(Graph& g, const JointSequence& seq, TaskType task) const {
    std::vector<Tensor> parts;
    if (seq.image) {
        auto states = encode(g, *seq.image, encoder_);
        if (mode_ == AdapterMode::task_gated) {
            const Tensor& feats = select_features(taps_, states, task);
            const AlignmentAdapter& ad =
                task == TaskType::comprehension ? comp_adapter_ : gen_adapter_;
            parts.push_back(ad.forward(g, feats));
        } else {
            // No task gating: every task reads one tap through one adapter.
            parts.push_back(shared_adapter_.forward(g, states[cfg_.shared_tap - 1]));
        }
    }
    std::vector<int> ids = seq.prompt_tokens;
    ids.insert(ids.end(), seq.response_tokens.begin(), seq.response_tokens.end());
    if (!ids.empty()) {
        parts.push_back(g.gather_rows(embedding_, ids));
    }
    if (parts.empty()) throw DimensionError("cannot embed an empty sequence");
    Tensor x = parts.size() == 1 ? parts[0] : g.concat_rows(parts);
    return g.add(x, g.slice_rows(pos_, 0, x.rows()));
}

Tensor UnifiedModel::forward(Graph& g, const JointSequence& seq, TaskType task,
                             OpCounter* counter) const {
    if (seq.length() > cfg_.max_seq) {
        throw DimensionError("sequence length " + std::to_string(seq.length()) +
                             " exceeds max_seq " + std::to_string(cfg_.max_seq));
    }
    Tensor x = embed_sequence(g, seq, task);
    for (int l = 0; l < cfg_.layers; ++l) {
        const AdaptedLinear& wq = adapted_[static_cast<std::size_t>(l) * 6 + 0];
        const AdaptedLinear& wk = adapted_[static_cast<std::size_t>(l) * 6 + 1];
        const AdaptedLinear& wv = adapted_[static_cast<std::size_t>(l) * 6 + 2];
        const AdaptedLinear& wo = adapted_[static_cast<std::size_t>(l) * 6 + 3];
        const AdaptedLinear& up = adapted_[static_cast<std::size_t>(l) * 6 + 4];
        const AdaptedLinear& down = adapted_[static_cast<std::size_t>(l) * 6 + 5];

        Tensor xn = g.rmsnorm_rows(x);
        Tensor attn = g.causal_attention(adapted_forward(g, wq, xn, task, counter),
                                         adapted_forward(g, wk, xn, task, counter),
                                         adapted_forward(g, wv, xn, task, counter), cfg_.heads);
        x = g.add(x, adapted_forward(g, wo, attn, task, counter));

        Tensor hn = g.rmsnorm_rows(x);
        Tensor h = adapted_forward(g, down, g.gelu(adapted_forward(g, up, hn, task, counter)),
                                   task, counter);
        x = g.add(x, h);
    }
    return g.matmul(g.rmsnorm_rows(x), head_);
}

Tensor UnifiedModel::loss(Graph& g, const JointSequence& seq, TaskType task) const {
    const int len = seq.length();
    if (len < 2 || seq.response_tokens.empty()) {
        throw DimensionError("loss requires a sequence with at least one response position");
    }
    Tensor logits = forward(g, seq, task);
    const std::vector<int> ids = seq.token_ids();
    const std::vector<uint8_t> mask = seq.loss_mask();
    std::vector<int> targets(ids.begin() + 1, ids.end());
    std::vector<uint8_t> target_mask(mask.begin() + 1, mask.end());
    Tensor prefix = g.slice_rows(logits, 0, len - 1);
    return g.cross_entropy(prefix, targets, target_mask);
}

GenerateResult UnifiedModel::generate(const JointSequence& prompt, TaskType task,
                                      int max_new) const {
    GenerateResult res;
    JointSequence seq = prompt;
    seq.task = task;

    auto next_id = [&](int lo, int hi) {
        Graph g;
        Tensor logits = forward(g, seq, task);
        const int last = seq.length() - 1;
        int best = lo;
        double best_v = logits.at(last, lo);
        for (int j = lo + 1; j < hi; ++j) {
            const double v = logits.at(last, j);
            if (v > best_v) {
                best_v = v;
                best = j;
            }
        }
        return best;
    };
    auto room = [&]() { return seq.length() < cfg_.max_seq; };

    if (task == TaskType::generation) {
        // The start token is injected, not sampled.
        if (max_new < 1 || !room()) {
            res.truncated = true;
            return res;
        }
        seq.response_tokens.push_back(vocab_.start_img());
        res.tokens.push_back(vocab_.start_img());
        for (int i = 0; i < indices_per_image(); ++i) {
            if (static_cast<int>(res.tokens.size()) >= max_new || !room()) {
                res.truncated = true;
                return res;
            }
            const int id = next_id(vocab_.vq_base(), vocab_.vq_base() + vocab_.codebook_size);
            seq.response_tokens.push_back(id);
            res.tokens.push_back(id);
        }
        if (static_cast<int>(res.tokens.size()) >= max_new || !room()) {
            res.truncated = true;
            return res;
        }
        seq.response_tokens.push_back(vocab_.end_img());
        res.tokens.push_back(vocab_.end_img());

        std::vector<int> vq_tokens(res.tokens.begin() + 1, res.tokens.end() - 1);
        IndexSequence idx = from_token_ids(vq_tokens, grid_rows(), grid_cols(), vocab_);
        res.image = decode_indices(idx, codebook_, codec_);
        return res;
    }

    for (int i = 0; i < max_new && room(); ++i) {
        const int id = next_id(0, vocab_.text_vocab_size);
        seq.response_tokens.push_back(id);
        res.tokens.push_back(id);
    }
    return res;
}

AlignmentAdapter& UnifiedModel::adapter_for(TaskType task) {
    if (mode_ != AdapterMode::task_gated) {
        throw ConfigError("per-task adapters exist only in the task-gated mode");
    }
    return task == TaskType::comprehension ? comp_adapter_ : gen_adapter_;
}

AlignmentAdapter& UnifiedModel::shared_adapter() {
    if (mode_ != AdapterMode::shared_lora) {
        throw ConfigError("the shared adapter exists only in the shared-lora mode");
    }
    return shared_adapter_;
}

std::vector<NamedParam> UnifiedModel::named_parameters() const {
    std::vector<NamedParam> ps;
    ps.push_back({"embed.table", embedding_});
    ps.push_back({"head.weight", head_});
    ps.push_back({"backbone.pos", pos_});
    for (const AdaptedLinear& al : adapted_) {
        ps.push_back({"backbone." + al.name + ".weight", al.base.weight});
        if (mode_ == AdapterMode::task_gated) {
            for (const auto& [task, sub] : al.plugins) {
                const std::string prefix = std::string(task_name(task)) + "." + al.name + ".";
                ps.push_back({prefix + "A_merged", sub.a_merged});
                ps.push_back({prefix + "B_merged", sub.b_merged});
                ps.push_back({prefix + "router", sub.router.weight});
            }
        } else {
            ps.push_back({"shared." + al.name + ".A", al.shared.a});
            ps.push_back({"shared." + al.name + ".B", al.shared.b});
        }
    }
    ps.push_back({"vision.patch_proj", encoder_.patch_proj});
    for (int b = 0; b < encoder_.num_blocks; ++b) {
        ps.push_back({"vision.blk" + std::to_string(b) + ".w", encoder_.block_w[b]});
    }
    const char* mlp_names[] = {"w1", "b1", "w2", "b2"};
    if (mode_ == AdapterMode::task_gated) {
        auto cp = comp_adapter_.parameters();
        auto gp = gen_adapter_.parameters();
        for (int i = 0; i < 4; ++i) {
            ps.push_back({std::string("adapter.comp.") + mlp_names[i], cp[i]});
            ps.push_back({std::string("adapter.gen.") + mlp_names[i], gp[i]});
        }
    } else {
        auto sp = shared_adapter_.parameters();
        for (int i = 0; i < 4; ++i) {
            ps.push_back({std::string("adapter.shared.") + mlp_names[i], sp[i]});
        }
    }
    ps.push_back({"vq.codes", codebook_.codes});
    return ps;
}

std::vector<Tensor> UnifiedModel::group_parameters(ParamGroup g) const {
    std::vector<Tensor> out;
    switch (g) {
        case ParamGroup::backbone:
            out.push_back(pos_);
            for (const AdaptedLinear& al : adapted_) out.push_back(al.base.weight);
            break;
        case ParamGroup::vision_encoder: {
            auto ps = encoder_.parameters();
            out.insert(out.end(), ps.begin(), ps.end());
            break;
        }
        case ParamGroup::comp_adapter:
            if (mode_ == AdapterMode::task_gated) return comp_adapter_.parameters();
            break;
        case ParamGroup::gen_adapter:
            if (mode_ == AdapterMode::task_gated) return gen_adapter_.parameters();
            break;
        case ParamGroup::comp_plugins:
        case ParamGroup::gen_plugins: {
            const TaskType task =
                g == ParamGroup::comp_plugins ? TaskType::comprehension : TaskType::generation;
            for (const AdaptedLinear& al : adapted_) {
                auto it = al.plugins.find(task);
                if (it == al.plugins.end()) continue;
                out.push_back(it->second.a_merged);
                out.push_back(it->second.b_merged);
                out.push_back(it->second.router.weight);
            }
            break;
        }
        case ParamGroup::embedding: out.push_back(embedding_); break;
        case ParamGroup::head: out.push_back(head_); break;
        case ParamGroup::shared_adapter:
            for (const AdaptedLinear& al : adapted_) {
                if (al.shared.a.defined()) {
                    out.push_back(al.shared.a);
                    out.push_back(al.shared.b);
                }
            }
            if (mode_ == AdapterMode::shared_lora) {
                auto ps = shared_adapter_.parameters();
                out.insert(out.end(), ps.begin(), ps.end());
            }
            break;
        case ParamGroup::vq_codes: out.push_back(codebook_.codes); break;
    }
    return out;
}

std::vector<ParamGroup> UnifiedModel::groups() const {
    std::vector<ParamGroup> gs{ParamGroup::backbone, ParamGroup::vision_encoder,
                               ParamGroup::embedding, ParamGroup::head, ParamGroup::vq_codes};
    if (mode_ == AdapterMode::task_gated) {
        gs.push_back(ParamGroup::comp_adapter);
        gs.push_back(ParamGroup::gen_adapter);
        gs.push_back(ParamGroup::comp_plugins);
        gs.push_back(ParamGroup::gen_plugins);
    } else {
        gs.push_back(ParamGroup::shared_adapter);
    }
    return gs;
}

}  // namespace hlora
