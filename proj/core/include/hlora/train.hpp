#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hlora/data.hpp"
#include "hlora/model.hpp"
#include "hlora/rng.hpp"

namespace hlora {

// The five file-format stages plus the two single-stream baselines.
enum class StageId { s1c, s1g, s2, s3c, s3g, mixed, joint };

const char* stage_name(StageId s);
StageId parse_stage(const std::string& s);

// Per-parameter-group trainability for one stage. The backbone and the vision
// encoder are frozen in every stage. vocab_range, when set, restricts the
// embedding rows / head columns the optimizer may touch.
struct StageMask {
    std::map<ParamGroup, bool> trainable;
    std::optional<std::pair<int, int>> vocab_range;

    static StageMask for_stage(StageId stage, AdapterMode mode, const VocabularyMap& vocab);
    bool is_trainable(ParamGroup g) const;
};

enum class LrSchedule { warmup_decay, constant };

struct TrainConfig {
    int steps = 200;
    int batch_size = 4;
    double lr = 3e-3;            // plugins / shared adapter
    double adapter_lr = 3e-3;    // alignment adapters
    double embed_lr = 3e-3;      // embedding and head
    LrSchedule schedule = LrSchedule::warmup_decay;
    double warmup_fraction = 0.1;
    double clip_norm = 1.0;      // <= 0 disables clipping
    uint64_t seed = 0;
};

// Adam with decoupled (here zero) weight decay, per-entry learning-rate
// scaling, and optional element masks for partially-trainable tensors.
class AdamOptimizer {
public:
    struct Entry {
        Tensor param;
        double lr_scale = 1.0;
        std::vector<uint8_t> mask;  // empty means every element trains
    };

    explicit AdamOptimizer(std::vector<Entry> entries, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8);
    // Applies one update from the accumulated grads, then drops them.
    void step(double lr);
    // Global grad-norm clip across all entries; returns true when it fired.
    bool clip_gradients(double max_norm);

private:
    std::vector<Entry> entries_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

// Appends rows `run_id,stage,step,task,loss,metric_name,metric_value`.
class MetricsWriter {
public:
    MetricsWriter() = default;  // disabled
    explicit MetricsWriter(const std::string& path);
    void row(const std::string& run_id, const std::string& stage, long step,
             const std::string& task, double loss, const std::string& metric_name,
             double metric_value);
    bool enabled() const { return !path_.empty(); }

private:
    std::string path_;
};

// Sets requires_grad across the whole model to match the mask.
void apply_stage_mask(UnifiedModel& model, const StageMask& mask);

// Verifies grads exist exactly on trainable groups; throws on violation.
void audit_grad_presence(const UnifiedModel& model, const StageMask& mask);

struct TrainStats {
    double first_loss = 0.0;
    double last_loss = 0.0;
    long clip_events = 0;
};

// Runs one stage: applies the mask, trains on `data` (sampled uniformly per
// step), audits grad presence after every backward and bitwise parameter
// movement against the mask at the end. `data` must be nonempty.
TrainStats run_stage(UnifiedModel& model, StageId stage, const std::vector<Sample>& data,
                     const TrainConfig& cfg, MetricsWriter* metrics = nullptr,
                     const std::string& run_id = "run");

// Task-level evaluation helpers.
double mean_loss(const UnifiedModel& model, const std::vector<Sample>& samples);
double comp_exact_match(const UnifiedModel& model, const std::vector<Sample>& samples);
double gen_index_accuracy(const UnifiedModel& model, const std::vector<Sample>& samples);
double gen_image_mse(const UnifiedModel& model, const std::vector<Sample>& samples);

JointSequence sequence_of(const UnifiedModel& model, const Sample& sample);

// Bundled synthetic suite shared by the pipeline entry points.
struct TaskSuite {
    Dataset comp;           // comp_qa
    Dataset gen_text;       // gen_from_text
    Dataset gen_transform;  // gen_transform

    std::vector<Sample> gen_train() const;
    std::vector<Sample> gen_val() const;
    std::vector<Sample> mixture(double fraction, uint64_t seed) const;  // stage-2 blend
    std::vector<Sample> joint_train() const;
};

TaskSuite make_task_suite(const UnifiedModel& model, uint64_t seed, int comp_train = 96,
                          int gen_text_train = 96, int gen_transform_train = 96,
                          int val_count = 24);

struct StageSchedule {
    TrainConfig s1c, s1g, s2, s3c, s3g;
    int total_steps() const {
        return s1c.steps + s1g.steps + s2.steps + s3c.steps + s3g.steps;
    }
};

StageSchedule default_schedule(uint64_t seed);

struct SuiteMetrics {
    double comp_em = 0.0;
    double gen_index_acc = 0.0;
    double gen_mse = 0.0;
};

SuiteMetrics evaluate_suite(const UnifiedModel& model, const TaskSuite& suite);

// Full three-stage pipeline (1c,1g,2,3c,3g) on a task-gated model.
SuiteMetrics run_three_stage(UnifiedModel& model, const TaskSuite& suite,
                             const StageSchedule& sched, MetricsWriter* metrics = nullptr,
                             const std::string& run_id = "3stage");

// Single-stream mixed baseline on a shared-adapter model with an equal step
// budget.
SuiteMetrics run_mixed_baseline(UnifiedModel& model, const TaskSuite& suite, TrainConfig cfg,
                                MetricsWriter* metrics = nullptr,
                                const std::string& run_id = "mixed");

struct SweepPoint {
    double ratio;
    double comp_metric;  // exact match on the fixed-amount task
    double gen_metric;   // index accuracy on the added task
};

struct SweepConfig {
    int comp_train = 96;        // fixed primary-task amount
    int val_count = 24;
    int epochs = 14;
    int batch_size = 4;
    double lr = 3e-3;
    uint64_t seed = 0;
    ModelConfig model;
};

// Fixed comprehension data; each ratio adds that fraction of generation data
// and retrains from scratch, single stream, architecture per `arch`.
std::vector<SweepPoint> conflict_sweep(const std::vector<double>& ratios, AdapterMode arch,
                                       const SweepConfig& cfg);

// Spearman rank correlation; ties get average ranks.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace hlora
