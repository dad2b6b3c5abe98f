#include "hlora/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace hlora {

const char* stage_name(StageId s) {
    switch (s) {
        case StageId::s1c: return "1c";
        case StageId::s1g: return "1g";
        case StageId::s2: return "2";
        case StageId::s3c: return "3c";
        case StageId::s3g: return "3g";
        case StageId::mixed: return "mixed";
        case StageId::joint: return "joint";
    }
    return "?";
}

StageId parse_stage(const std::string& s) {
    if (s == "1c") return StageId::s1c;
    if (s == "1g") return StageId::s1g;
    if (s == "2") return StageId::s2;
    if (s == "3c") return StageId::s3c;
    if (s == "3g") return StageId::s3g;
    if (s == "mixed") return StageId::mixed;
    if (s == "joint") return StageId::joint;
    throw ConfigError("unknown stage '" + s + "' (expected 1c|1g|2|3c|3g|mixed|joint)");
}

StageMask StageMask::for_stage(StageId stage, AdapterMode mode, const VocabularyMap& vocab) {
    StageMask m;
    auto on = [&](ParamGroup g) { m.trainable[g] = true; };
    switch (stage) {
        case StageId::s1c:
            on(ParamGroup::comp_adapter);
            break;
        case StageId::s1g:
            on(ParamGroup::gen_adapter);
            on(ParamGroup::gen_plugins);
            on(ParamGroup::embedding);
            on(ParamGroup::head);
            // Only the freshly added multimodal rows (VQ ids + the two
            // image-bracketing specials) may move in this stage.
            m.vocab_range = {vocab.vq_base(), vocab.total()};
            break;
        case StageId::s2:
            on(ParamGroup::embedding);
            on(ParamGroup::head);
            break;
        case StageId::s3c:
            on(ParamGroup::comp_plugins);
            on(ParamGroup::comp_adapter);
            break;
        case StageId::s3g:
            on(ParamGroup::gen_plugins);
            on(ParamGroup::gen_adapter);
            break;
        case StageId::mixed:
            if (mode != AdapterMode::shared_lora) {
                throw ConfigError("mixed training requires the shared-adapter model");
            }
            on(ParamGroup::shared_adapter);
            on(ParamGroup::embedding);
            on(ParamGroup::head);
            break;
        case StageId::joint:
            if (mode != AdapterMode::task_gated) {
                throw ConfigError("joint training requires the task-gated model");
            }
            on(ParamGroup::comp_plugins);
            on(ParamGroup::gen_plugins);
            on(ParamGroup::comp_adapter);
            on(ParamGroup::gen_adapter);
            on(ParamGroup::embedding);
            on(ParamGroup::head);
            break;
    }
    return m;
}

bool StageMask::is_trainable(ParamGroup g) const {
    auto it = trainable.find(g);
    return it != trainable.end() && it->second;
}

AdamOptimizer::AdamOptimizer(std::vector<Entry> entries, double beta1, double beta2, double eps)
    : entries_(std::move(entries)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Entry& e : entries_) {
        m_.emplace_back(e.param.size(), 0.0);
        v_.emplace_back(e.param.size(), 0.0);
        if (!e.mask.empty() && e.mask.size() != e.param.size()) {
            throw DimensionError("optimizer mask length does not match parameter");
        }
    }
}

bool AdamOptimizer::clip_gradients(double max_norm) {
    if (max_norm <= 0) return false;
    double sq = 0.0;
    for (const Entry& e : entries_) {
        if (!e.param.has_grad()) continue;
        const auto g = e.param.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!e.mask.empty() && !e.mask[i]) continue;
            sq += g[i] * g[i];
        }
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return false;
    const double scale = max_norm / norm;
    for (Entry& e : entries_) {
        if (!e.param.has_grad()) continue;
        for (double& g : e.param.grad_buffer()) g *= scale;
    }
    return true;
}

void AdamOptimizer::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t ei = 0; ei < entries_.size(); ++ei) {
        Entry& e = entries_[ei];
        if (!e.param.has_grad()) continue;
        const auto g = e.param.grad();
        auto data = e.param.data_mut();
        const double rate = lr * e.lr_scale;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (!e.mask.empty() && !e.mask[i]) continue;
            m_[ei][i] = beta1_ * m_[ei][i] + (1.0 - beta1_) * g[i];
            v_[ei][i] = beta2_ * v_[ei][i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = m_[ei][i] / bc1;
            const double vhat = v_[ei][i] / bc2;
            data[i] -= rate * mhat / (std::sqrt(vhat) + eps_);
        }
        e.param.drop_grad();
    }
}

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
    if (path_.empty()) return;
    const bool fresh = !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
    if (fresh) {
        std::ofstream out(path_);
        if (!out) throw IoError("cannot open metrics file '" + path_ + "'");
        out << "run_id,stage,step,task,loss,metric_name,metric_value\n";
    }
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

}  // namespace

void MetricsWriter::row(const std::string& run_id, const std::string& stage, long step,
                        const std::string& task, double loss, const std::string& metric_name,
                        double metric_value) {
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError("cannot append to metrics file '" + path_ + "'");
    out << run_id << ',' << stage << ',' << step << ',' << task << ',' << fmt(loss) << ','
        << metric_name << ',' << fmt(metric_value) << "\n";
}

void apply_stage_mask(UnifiedModel& model, const StageMask& mask) {
    for (ParamGroup g : model.groups()) {
        const bool on = mask.is_trainable(g);
        for (Tensor t : model.group_parameters(g)) {
            t.set_requires_grad(on);
            t.drop_grad();
        }
    }
}

void audit_grad_presence(const UnifiedModel& model, const StageMask& mask) {
    for (ParamGroup g : model.groups()) {
        if (mask.is_trainable(g)) continue;
        for (const Tensor& t : model.group_parameters(g)) {
            if (t.has_grad()) {
                throw ConfigError(std::string("stage mask violation: gradient on frozen group ") +
                                  group_name(g));
            }
        }
    }
}

JointSequence sequence_of(const UnifiedModel& model, const Sample& sample) {
    if (sample.task == TaskType::comprehension) {
        return model.build_sequence(sample.image, sample.prompt, sample.response_text,
                                    sample.task);
    }
    return model.build_sequence(sample.image, sample.prompt, sample.response_indices.indices,
                                sample.task);
}

namespace {

struct Snapshot {
    std::vector<std::pair<std::string, std::vector<double>>> params;
};

Snapshot take_snapshot(const UnifiedModel& model) {
    Snapshot snap;
    for (const NamedParam& np : model.named_parameters()) {
        snap.params.emplace_back(np.name,
                                 std::vector<double>(np.tensor.data().begin(),
                                                     np.tensor.data().end()));
    }
    return snap;
}

bool tensors_equal(const Tensor& t, const std::vector<double>& ref) {
    const auto d = t.data();
    if (d.size() != ref.size()) return false;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] != ref[i]) return false;
    }
    return true;
}

// Bitwise movement audit: frozen groups identical, gradient-exercised
// trainable groups moved somewhere, embedding rows / head columns outside
// vocab_range untouched.
void audit_parameter_movement(const UnifiedModel& model, const StageMask& mask,
                              const Snapshot& before,
                              const std::set<ParamGroup>& exercised) {
    std::map<std::string, const std::vector<double>*> ref;
    for (const auto& [name, data] : before.params) ref[name] = &data;

    auto find_ref = [&](const Tensor& t, const char* what) -> const std::vector<double>& {
        for (const NamedParam& np : model.named_parameters()) {
            if (np.tensor.same_storage(t)) {
                auto it = ref.find(np.name);
                if (it != ref.end()) return *it->second;
            }
        }
        throw ConfigError(std::string("no snapshot entry for ") + what);
    };

    for (ParamGroup g : model.groups()) {
        const bool on = mask.is_trainable(g);
        bool moved = false;
        for (const Tensor& t : model.group_parameters(g)) {
            const auto& old = find_ref(t, group_name(g));
            if (!on) {
                if (!tensors_equal(t, old)) {
                    throw ConfigError(std::string("stage mask violation: frozen group ") +
                                      group_name(g) + " changed");
                }
                continue;
            }
            // Partial-vocabulary stages must leave the other rows bit-identical.
            if (mask.vocab_range && (g == ParamGroup::embedding || g == ParamGroup::head)) {
                const auto [lo, hi] = *mask.vocab_range;
                const auto d = t.data();
                const int rows = t.shape()[0];
                const int cols = t.shape()[1];
                for (int r = 0; r < rows; ++r) {
                    for (int c = 0; c < cols; ++c) {
                        const int vocab_id = g == ParamGroup::embedding ? r : c;
                        if (vocab_id >= lo && vocab_id < hi) continue;
                        const std::size_t i = static_cast<std::size_t>(r) * cols + c;
                        if (d[i] != old[i]) {
                            throw ConfigError("stage mask violation: restricted vocab row moved");
                        }
                    }
                }
            }
            if (!tensors_equal(t, old)) moved = true;
        }
        if (on && !moved && exercised.count(g)) {
            throw ConfigError(std::string("trainable group ") + group_name(g) +
                              " did not move during the stage");
        }
    }
}

std::vector<AdamOptimizer::Entry> optimizer_entries(const UnifiedModel& model,
                                                    const StageMask& mask,
                                                    const TrainConfig& cfg) {
    std::vector<AdamOptimizer::Entry> entries;
    for (ParamGroup g : model.groups()) {
        if (!mask.is_trainable(g)) continue;
        double lr = cfg.lr;
        if (g == ParamGroup::comp_adapter || g == ParamGroup::gen_adapter) lr = cfg.adapter_lr;
        if (g == ParamGroup::embedding || g == ParamGroup::head) lr = cfg.embed_lr;
        for (Tensor t : model.group_parameters(g)) {
            AdamOptimizer::Entry e;
            e.param = t;
            e.lr_scale = lr;
            if (mask.vocab_range && (g == ParamGroup::embedding || g == ParamGroup::head)) {
                const auto [lo, hi] = *mask.vocab_range;
                const int rows = t.shape()[0];
                const int cols = t.shape()[1];
                e.mask.assign(t.size(), 0);
                for (int r = 0; r < rows; ++r) {
                    for (int c = 0; c < cols; ++c) {
                        const int vocab_id = g == ParamGroup::embedding ? r : c;
                        if (vocab_id >= lo && vocab_id < hi) {
                            e.mask[static_cast<std::size_t>(r) * cols + c] = 1;
                        }
                    }
                }
            }
            entries.push_back(std::move(e));
        }
    }
    return entries;
}

double lr_multiplier(const TrainConfig& cfg, int step) {
    if (cfg.schedule == LrSchedule::constant) return 1.0;
    const int warmup = std::max(1, static_cast<int>(cfg.steps * cfg.warmup_fraction));
    if (step < warmup) return static_cast<double>(step + 1) / warmup;
    const double progress =
        cfg.steps > warmup ? static_cast<double>(step - warmup) / (cfg.steps - warmup) : 1.0;
    return 0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace

TrainStats run_stage(UnifiedModel& model, StageId stage, const std::vector<Sample>& data,
                     const TrainConfig& cfg, MetricsWriter* metrics, const std::string& run_id) {
    if (data.empty()) throw ConfigError("run_stage requires a nonempty dataset");
    const StageMask mask = StageMask::for_stage(stage, model.mode(), model.vocab());
    apply_stage_mask(model, mask);
    const Snapshot before = take_snapshot(model);

    AdamOptimizer opt(optimizer_entries(model, mask, cfg));
    SeedSplitter split(cfg.seed);
    RngStream rng = split.stream(std::string("stage.") + stage_name(stage));

    TrainStats stats;
    std::set<ParamGroup> exercised;
    const int log_every = std::max(1, cfg.steps / 20);
    for (int step = 0; step < cfg.steps; ++step) {
        Graph g;
        Tensor total;
        long batch_tokens = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Sample& s = data[rng.below(data.size())];
            JointSequence seq = sequence_of(model, s);
            const long tokens = static_cast<long>(seq.response_tokens.size());
            // Token-weighted batch objective, as a language-model trainer
            // averages over supervised tokens rather than samples.
            Tensor l = g.scale(model.loss(g, seq, s.task), static_cast<double>(tokens));
            total = total.defined() ? g.add(total, l) : l;
            batch_tokens += tokens;
        }
        Tensor batch_loss = g.scale(total, 1.0 / static_cast<double>(batch_tokens));
        g.backward(batch_loss);
        audit_grad_presence(model, mask);
        for (ParamGroup pg : model.groups()) {
            if (!mask.is_trainable(pg) || exercised.count(pg)) continue;
            for (const Tensor& t : model.group_parameters(pg)) {
                if (t.has_grad()) {
                    exercised.insert(pg);
                    break;
                }
            }
        }
        if (opt.clip_gradients(cfg.clip_norm)) {
            ++stats.clip_events;
            if (metrics) {
                metrics->row(run_id, stage_name(stage), step, "-", batch_loss.item(),
                             "grad_clip", 1.0);
            }
        }
        opt.step(lr_multiplier(cfg, step));

        const double lv = batch_loss.item();
        if (step == 0) stats.first_loss = lv;
        stats.last_loss = lv;
        if (metrics && (step % log_every == 0 || step + 1 == cfg.steps)) {
            metrics->row(run_id, stage_name(stage), step, "-", lv, "train_loss", lv);
        }
    }

    audit_parameter_movement(model, mask, before, exercised);
    return stats;
}

double mean_loss(const UnifiedModel& model, const std::vector<Sample>& samples) {
    if (samples.empty()) throw ConfigError("mean_loss requires samples");
    double acc = 0.0;
    for (const Sample& s : samples) {
        Graph g;
        acc += model.loss(g, sequence_of(model, s), s.task).item();
    }
    return acc / static_cast<double>(samples.size());
}

double comp_exact_match(const UnifiedModel& model, const std::vector<Sample>& samples) {
    if (samples.empty()) throw ConfigError("comp_exact_match requires samples");
    int hits = 0;
    for (const Sample& s : samples) {
        JointSequence prompt = model.build_sequence(s.image, s.prompt, std::nullopt, s.task);
        GenerateResult res =
            model.generate(prompt, s.task, static_cast<int>(s.response_text.size()));
        if (res.tokens == s.response_text) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

double gen_index_accuracy(const UnifiedModel& model, const std::vector<Sample>& samples) {
    if (samples.empty()) throw ConfigError("gen_index_accuracy requires samples");
    long hits = 0, total = 0;
    for (const Sample& s : samples) {
        JointSequence seq = sequence_of(model, s);
        Graph g;
        Tensor logits = model.forward(g, seq, s.task);
        const int resp_start = seq.length() - static_cast<int>(seq.response_tokens.size());
        const auto& vm = model.vocab();
        for (std::size_t j = 0; j < s.response_indices.indices.size(); ++j) {
            // Position of VQ token j is resp_start + 1 + j (after START_IMG);
            // its logits come from the previous position.
            const int row = resp_start + static_cast<int>(j);
            int best = vm.vq_base();
            double best_v = logits.at(row, vm.vq_base());
            for (int id = vm.vq_base() + 1; id < vm.vq_base() + vm.codebook_size; ++id) {
                if (logits.at(row, id) > best_v) {
                    best_v = logits.at(row, id);
                    best = id;
                }
            }
            if (best - vm.vq_base() == s.response_indices.indices[j]) ++hits;
            ++total;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

double gen_image_mse(const UnifiedModel& model, const std::vector<Sample>& samples) {
    if (samples.empty()) throw ConfigError("gen_image_mse requires samples");
    double acc = 0.0;
    for (const Sample& s : samples) {
        JointSequence seq = sequence_of(model, s);
        Graph g;
        Tensor logits = model.forward(g, seq, s.task);
        const int resp_start = seq.length() - static_cast<int>(seq.response_tokens.size());
        const auto& vm = model.vocab();
        IndexSequence pred;
        pred.rows = s.response_indices.rows;
        pred.cols = s.response_indices.cols;
        for (std::size_t j = 0; j < s.response_indices.indices.size(); ++j) {
            const int row = resp_start + static_cast<int>(j);
            int best = vm.vq_base();
            double best_v = logits.at(row, vm.vq_base());
            for (int id = vm.vq_base() + 1; id < vm.vq_base() + vm.codebook_size; ++id) {
                if (logits.at(row, id) > best_v) {
                    best_v = logits.at(row, id);
                    best = id;
                }
            }
            pred.indices.push_back(best - vm.vq_base());
        }
        ToyImage predicted = decode_indices(pred, model.codebook(), model.codec());
        ToyImage target = decode_indices(s.response_indices, model.codebook(), model.codec());
        acc += image_mse(predicted, target);
    }
    return acc / static_cast<double>(samples.size());
}

std::vector<Sample> TaskSuite::gen_train() const {
    std::vector<Sample> out = gen_text.train;
    out.insert(out.end(), gen_transform.train.begin(), gen_transform.train.end());
    return out;
}

std::vector<Sample> TaskSuite::gen_val() const {
    std::vector<Sample> out = gen_text.val;
    out.insert(out.end(), gen_transform.val.begin(), gen_transform.val.end());
    return out;
}

std::vector<Sample> TaskSuite::mixture(double fraction, uint64_t seed) const {
    RngStream rng(seed ^ 0x3713ULL);
    const int total = static_cast<int>(comp.train.size() + gen_text.train.size() +
                                       gen_transform.train.size());
    const int per_task = std::max(1, static_cast<int>(std::lround(fraction * total / 3.0)));
    std::vector<Sample> out;
    auto draw = [&](const std::vector<Sample>& src) {
        for (int i = 0; i < per_task && !src.empty(); ++i) {
            out.push_back(src[rng.below(src.size())]);
        }
    };
    draw(comp.train);
    draw(gen_text.train);
    draw(gen_transform.train);
    return out;
}

std::vector<Sample> TaskSuite::joint_train() const {
    std::vector<Sample> out = comp.train;
    auto gen = gen_train();
    out.insert(out.end(), gen.begin(), gen.end());
    return out;
}

TaskSuite make_task_suite(const UnifiedModel& model, uint64_t seed, int comp_train,
                          int gen_text_train, int gen_transform_train, int val_count) {
    SeedSplitter split(seed);
    TaskSuite suite;
    SyntheticTask comp{TaskKind::comp_qa, split.derive("data.comp"), comp_train, val_count,
                       model.config().image_size};
    SyntheticTask gen_text{TaskKind::gen_from_text, split.derive("data.gen_text"),
                           gen_text_train, val_count, model.config().image_size};
    SyntheticTask gen_tr{TaskKind::gen_transform, split.derive("data.gen_transform"),
                         gen_transform_train, val_count, model.config().image_size};
    suite.comp = make_dataset(comp, model.codebook(), model.codec());
    suite.gen_text = make_dataset(gen_text, model.codebook(), model.codec());
    suite.gen_transform = make_dataset(gen_tr, model.codebook(), model.codec());
    return suite;
}

StageSchedule default_schedule(uint64_t seed) {
    SeedSplitter split(seed);
    StageSchedule s;
    s.s1c = TrainConfig{.steps = 150, .batch_size = 4, .lr = 3e-3, .adapter_lr = 1e-2,
                        .embed_lr = 3e-3, .schedule = LrSchedule::warmup_decay,
                        .warmup_fraction = 0.1, .clip_norm = 1.0,
                        .seed = split.derive("stage.1c")};
    s.s1g = TrainConfig{.steps = 250, .batch_size = 4, .lr = 3e-3, .adapter_lr = 3e-3,
                        .embed_lr = 3e-3, .schedule = LrSchedule::warmup_decay,
                        .warmup_fraction = 0.1, .clip_norm = 1.0,
                        .seed = split.derive("stage.1g")};
    s.s2 = TrainConfig{.steps = 60, .batch_size = 4, .lr = 3e-3, .adapter_lr = 3e-3,
                       .embed_lr = 1e-3, .schedule = LrSchedule::constant,
                       .warmup_fraction = 0.0, .clip_norm = 1.0,
                       .seed = split.derive("stage.2")};
    s.s3c = TrainConfig{.steps = 250, .batch_size = 4, .lr = 3e-3, .adapter_lr = 3e-3,
                        .embed_lr = 3e-3, .schedule = LrSchedule::warmup_decay,
                        .warmup_fraction = 0.1, .clip_norm = 1.0,
                        .seed = split.derive("stage.3c")};
    s.s3g = TrainConfig{.steps = 250, .batch_size = 4, .lr = 3e-3, .adapter_lr = 3e-3,
                        .embed_lr = 3e-3, .schedule = LrSchedule::warmup_decay,
                        .warmup_fraction = 0.1, .clip_norm = 1.0,
                        .seed = split.derive("stage.3g")};
    return s;
}

SuiteMetrics evaluate_suite(const UnifiedModel& model, const TaskSuite& suite) {
    SuiteMetrics m;
    m.comp_em = comp_exact_match(model, suite.comp.val);
    const auto gen_val = suite.gen_val();
    m.gen_index_acc = gen_index_accuracy(model, gen_val);
    m.gen_mse = gen_image_mse(model, gen_val);
    return m;
}

SuiteMetrics run_three_stage(UnifiedModel& model, const TaskSuite& suite,
                             const StageSchedule& sched, MetricsWriter* metrics,
                             const std::string& run_id) {
    if (model.mode() != AdapterMode::task_gated) {
        throw ConfigError("the three-stage pipeline requires the task-gated model");
    }
    run_stage(model, StageId::s1c, suite.comp.train, sched.s1c, metrics, run_id);
    run_stage(model, StageId::s1g, suite.gen_transform.train, sched.s1g, metrics, run_id);
    run_stage(model, StageId::s2, suite.mixture(0.05, sched.s2.seed), sched.s2, metrics, run_id);
    run_stage(model, StageId::s3c, suite.comp.train, sched.s3c, metrics, run_id);
    run_stage(model, StageId::s3g, suite.gen_train(), sched.s3g, metrics, run_id);

    SuiteMetrics m = evaluate_suite(model, suite);
    if (metrics) {
        metrics->row(run_id, "final", 0, "comp", 0.0, "exact_match", m.comp_em);
        metrics->row(run_id, "final", 0, "gen", 0.0, "index_accuracy", m.gen_index_acc);
        metrics->row(run_id, "final", 0, "gen", 0.0, "image_mse", m.gen_mse);
    }
    return m;
}

SuiteMetrics run_mixed_baseline(UnifiedModel& model, const TaskSuite& suite, TrainConfig cfg,
                                MetricsWriter* metrics, const std::string& run_id) {
    if (model.mode() != AdapterMode::shared_lora) {
        throw ConfigError("the mixed baseline requires the shared-adapter model");
    }
    run_stage(model, StageId::mixed, suite.joint_train(), cfg, metrics, run_id);
    SuiteMetrics m = evaluate_suite(model, suite);
    if (metrics) {
        metrics->row(run_id, "final", 0, "comp", 0.0, "exact_match", m.comp_em);
        metrics->row(run_id, "final", 0, "gen", 0.0, "index_accuracy", m.gen_index_acc);
        metrics->row(run_id, "final", 0, "gen", 0.0, "image_mse", m.gen_mse);
    }
    return m;
}

std::vector<SweepPoint> conflict_sweep(const std::vector<double>& ratios, AdapterMode arch,
                                       const SweepConfig& cfg) {
    std::vector<SweepPoint> curve;
    SeedSplitter split(cfg.seed);
    for (std::size_t ri = 0; ri < ratios.size(); ++ri) {
        const double ratio = ratios[ri];
        if (ratio < 0.0 || ratio > 1.0) throw ConfigError("sweep ratios must lie in [0, 1]");
        const std::string tag = std::string("sweep.") +
                                (arch == AdapterMode::task_gated ? "hlora" : "shared") + "." +
                                std::to_string(ri);
        UnifiedModel model(cfg.model, arch, split.derive(tag + ".model"));
        const int gen_total = static_cast<int>(std::lround(ratio * cfg.comp_train));
        const int gen_text_n = gen_total / 2;
        const int gen_tr_n = gen_total - gen_text_n;
        TaskSuite suite =
            make_task_suite(model, split.derive("sweep.data"), cfg.comp_train,
                            std::max(gen_text_n, 1), std::max(gen_tr_n, 1), cfg.val_count);
        // A zero ratio means no generation data at all.
        std::vector<Sample> train = suite.comp.train;
        if (gen_text_n > 0) {
            train.insert(train.end(), suite.gen_text.train.begin(),
                         suite.gen_text.train.begin() + gen_text_n);
        }
        if (gen_tr_n > 0) {
            train.insert(train.end(), suite.gen_transform.train.begin(),
                         suite.gen_transform.train.begin() + gen_tr_n);
        }
        TrainConfig tc;
        // Fixed compute budget across ratios: added data dilutes the primary
        // task's share of the stream instead of growing the run.
        tc.steps = std::max(1, cfg.epochs * cfg.comp_train / cfg.batch_size);
        tc.batch_size = cfg.batch_size;
        tc.lr = cfg.lr;
        tc.adapter_lr = cfg.lr;
        tc.embed_lr = cfg.lr;
        tc.schedule = LrSchedule::warmup_decay;
        tc.seed = split.derive(tag + ".train");
        run_stage(model, arch == AdapterMode::task_gated ? StageId::joint : StageId::mixed,
                  train, tc);

        SweepPoint p;
        p.ratio = ratio;
        p.comp_metric = comp_exact_match(model, suite.comp.val);
        p.gen_metric = gen_index_accuracy(model, suite.gen_val());
        curve.push_back(p);
    }
    return curve;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw ConfigError("spearman needs two equal-length series of at least 2 points");
    }
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return v[a] < v[b];
        });
        std::vector<double> r(n, 0.0);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(xs);
    const auto ry = ranks(ys);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= rx.size();
    my /= ry.size();
    double num = 0.0, dx = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0.0 || dy == 0.0) return 0.0;
    return num / std::sqrt(dx * dy);
}

}  // namespace hlora
