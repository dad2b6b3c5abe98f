#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hlora/model.hpp"
#include "hlora/train.hpp"

namespace hlora {

// Whole-run configuration: model dims, per-task adapter settings, dataset
// sizes, stage schedules, sweep grid, seed. Loaded from a plain-text
// `key = value` file with a leading format tag; unknown keys are rejected and
// every default is materialized when the effective config is echoed back out.
struct RunConfig {
    ModelConfig model;

    int comp_train = 96;
    int gen_text_train = 96;
    int gen_transform_train = 96;
    int val_count = 24;

    struct StageKnobs {
        int steps = 200;
        int batch = 4;
        double lr = 3e-3;
        double adapter_lr = 3e-3;
        double embed_lr = 3e-3;
        std::string schedule = "warmup";  // warmup | constant
    };
    StageKnobs s1c{150, 4, 3e-3, 1e-2, 3e-3, "warmup"};
    StageKnobs s1g{250, 4, 3e-3, 3e-3, 3e-3, "warmup"};
    StageKnobs s2{60, 4, 3e-3, 3e-3, 1e-3, "constant"};
    StageKnobs s3c{250, 4, 3e-3, 3e-3, 3e-3, "warmup"};
    StageKnobs s3g{250, 4, 3e-3, 3e-3, 3e-3, "warmup"};
    // steps < 0 means "match the 3-stage total", resolved at load time.
    StageKnobs mixed{-1, 4, 3e-3, 3e-3, 3e-3, "warmup"};

    double clip_norm = 1.0;
    uint64_t seed = 1;

    std::vector<double> sweep_ratios{0.0, 0.25, 0.5, 1.0};
    int sweep_epochs = 14;
    int sweep_comp_train = 96;

    int three_stage_total() const {
        return s1c.steps + s1g.steps + s2.steps + s3c.steps + s3g.steps;
    }
};

// Defaults when path is empty; ConfigError on unknown keys or bad values.
RunConfig load_run_config(const std::string& path);

// Canonical echo text: format tag plus every key, sorted. Parsing the echo
// reproduces the config exactly.
std::string render_config(const RunConfig& cfg);
void write_config_file(const RunConfig& cfg, const std::string& path);

// FNV-1a over the canonical echo; checkpoints pin this.
uint64_t hash_config(const RunConfig& cfg);

// Materialized per-stage train configs with seeds split off the run seed.
StageSchedule make_schedule(const RunConfig& cfg);
TrainConfig make_mixed_config(const RunConfig& cfg);
TrainConfig knobs_to_train_config(const RunConfig::StageKnobs& k, double clip_norm,
                                  uint64_t seed);

}  // namespace hlora
