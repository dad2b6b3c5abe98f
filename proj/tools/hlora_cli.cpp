// Command-line front end: staged training, generation, the adapter
// microbenchmark, and the task-mixing conflict sweep. Exit codes: 0 success,
// 1 gate failure (op-count law violation, truncated generation), 2 usage or
// configuration errors.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hlora/bench.hpp"
#include "hlora/checkpoint.hpp"
#include "hlora/config.hpp"
#include "hlora/image.hpp"
#include "hlora/model.hpp"
#include "hlora/tokenizer.hpp"
#include "hlora/train.hpp"

namespace {

using namespace hlora;

struct TrainArgs {
    std::string stage;
    std::string config_path;
    std::string resume;
    std::string out_dir = "runs";
    std::optional<uint64_t> seed;
    bool force = false;
};

struct GenerateArgs {
    std::string ckpt;
    std::string task;
    std::string prompt;
    std::string image_path;
    std::string out_path = "generated.pgm";
    std::string config_path;
    int max_new = -1;
    bool force = false;
};

struct BenchArgs {
    std::vector<int> experts{2, 4, 8, 32};
    int rank = 2;
    int tokens = 192;
    int dim = 128;
    int reps = 25;
    std::string csv;
    bool forward_only = false;
};

struct SweepArgs {
    std::vector<double> ratios;
    std::string arch = "shared";
    std::string csv;
    std::string config_path;
    std::optional<uint64_t> seed;
};

const std::vector<Sample>& stage_data(StageId stage, const TaskSuite& suite,
                                      std::vector<Sample>& scratch, uint64_t seed) {
    switch (stage) {
        case StageId::s1c:
        case StageId::s3c: return suite.comp.train;
        case StageId::s1g: return suite.gen_transform.train;
        case StageId::s2: scratch = suite.mixture(0.05, seed); return scratch;
        case StageId::s3g: scratch = suite.gen_train(); return scratch;
        case StageId::mixed:
        case StageId::joint: scratch = suite.joint_train(); return scratch;
    }
    throw ConfigError("unhandled stage");
}

TrainConfig stage_train_config(StageId stage, const RunConfig& cfg) {
    const StageSchedule sched = make_schedule(cfg);
    switch (stage) {
        case StageId::s1c: return sched.s1c;
        case StageId::s1g: return sched.s1g;
        case StageId::s2: return sched.s2;
        case StageId::s3c: return sched.s3c;
        case StageId::s3g: return sched.s3g;
        case StageId::mixed:
        case StageId::joint: return make_mixed_config(cfg);
    }
    throw ConfigError("unhandled stage");
}

// Which checkpoint stage each stage resumes from.
std::optional<std::string> required_predecessor(StageId stage) {
    switch (stage) {
        case StageId::s1c: return std::nullopt;
        case StageId::s1g: return "1c";
        case StageId::s2: return "1g";
        case StageId::s3c: return "2";
        case StageId::s3g: return "3c";
        case StageId::mixed: return std::nullopt;
        case StageId::joint: return std::nullopt;
    }
    return std::nullopt;
}

int cmd_train(const TrainArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    const StageId stage = parse_stage(args.stage);
    if (stage == StageId::joint) {
        throw ConfigError("stage 'joint' is internal; use mixed or the numbered stages");
    }
    const AdapterMode mode =
        stage == StageId::mixed ? AdapterMode::shared_lora : AdapterMode::task_gated;
    const uint64_t config_hash = hash_config(cfg);
    SeedSplitter split(cfg.seed);

    UnifiedModel model(cfg.model, mode, split.derive("model"));

    const auto pred = required_predecessor(stage);
    if (pred && args.resume.empty()) {
        throw ConfigError("stage " + args.stage + " requires --resume with a stage-" + *pred +
                          " checkpoint");
    }
    if (!args.resume.empty()) {
        CheckpointInfo info = load_checkpoint(args.resume, model, config_hash, args.force);
        if (pred && info.stage != *pred) {
            throw ConfigError("stage " + args.stage + " must resume from a stage-" + *pred +
                              " checkpoint, got stage-" + info.stage);
        }
    }

    TaskSuite suite = make_task_suite(model, split.derive("data"), cfg.comp_train,
                                      cfg.gen_text_train, cfg.gen_transform_train,
                                      cfg.val_count);

    std::filesystem::create_directories(args.out_dir);
    write_config_file(cfg, args.out_dir + "/config_effective.txt");
    MetricsWriter metrics(args.out_dir + "/metrics.csv");

    const TrainConfig tc = stage_train_config(stage, cfg);
    std::vector<Sample> scratch;
    const auto& data = stage_data(stage, suite, scratch, tc.seed);
    const std::string run_id = std::string("stage") + stage_name(stage);
    TrainStats stats = run_stage(model, stage, data, tc, &metrics, run_id);

    // Task metrics after the stage, on the validation splits.
    if (stage == StageId::s1c || stage == StageId::s3c || stage == StageId::s2 ||
        stage == StageId::mixed) {
        const double em = comp_exact_match(model, suite.comp.val);
        metrics.row(run_id, stage_name(stage), tc.steps, "comp", stats.last_loss, "exact_match",
                    em);
        std::cout << "comp exact-match: " << em << "\n";
    }
    if (stage == StageId::s1g || stage == StageId::s3g || stage == StageId::s2 ||
        stage == StageId::mixed) {
        const double acc = gen_index_accuracy(model, suite.gen_val());
        metrics.row(run_id, stage_name(stage), tc.steps, "gen", stats.last_loss,
                    "index_accuracy", acc);
        std::cout << "gen index-accuracy: " << acc << "\n";
    }

    const std::string ckpt_path = args.out_dir + "/ckpt_" + stage_name(stage) + ".hlckpt";
    save_checkpoint(ckpt_path, model, stage_name(stage), config_hash);
    std::cout << "stage " << stage_name(stage) << " done: loss " << stats.first_loss << " -> "
              << stats.last_loss << " (" << stats.clip_events << " clip events)\n";
    std::cout << "checkpoint: " << ckpt_path << "\n";
    return 0;
}

int cmd_generate(const GenerateArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    const TaskType task = parse_task(args.task);
    const CheckpointInfo info = peek_checkpoint(args.ckpt);
    SeedSplitter split(cfg.seed);
    UnifiedModel model(cfg.model, info.mode, split.derive("model"));
    load_checkpoint(args.ckpt, model, hash_config(cfg), args.force);

    std::optional<ToyImage> image;
    if (!args.image_path.empty()) {
        ToyImage img = read_pgm(args.image_path);
        if (img.height != cfg.model.image_size || img.width != cfg.model.image_size) {
            throw ConfigError("input image must be " + std::to_string(cfg.model.image_size) +
                              "x" + std::to_string(cfg.model.image_size));
        }
        image = std::move(img);
    }
    std::string prompt_text = args.prompt;
    if (prompt_text.empty()) {
        if (task == TaskType::generation && image) {
            prompt_text = "invert";
        } else {
            throw ConfigError("--prompt is required (or --image with the gen task)");
        }
    }
    const std::vector<int> prompt_ids = Tokenizer::encode(prompt_text);
    JointSequence prompt = model.build_sequence(image, prompt_ids, std::nullopt, task);

    if (task == TaskType::comprehension) {
        const int n = args.max_new > 0 ? args.max_new : 1;
        GenerateResult res = model.generate(prompt, task, n);
        std::cout << Tokenizer::decode(res.tokens) << "\n";
        return 0;
    }

    const int need = model.indices_per_image() + 2;
    const int budget = args.max_new > 0 ? args.max_new : need;
    GenerateResult res = model.generate(prompt, task, budget);
    std::cout << "tokens:";
    for (int t : res.tokens) std::cout << ' ' << t;
    std::cout << "\n";
    if (res.truncated) {
        std::cerr << "generation truncated after " << res.tokens.size() << " of " << need
                  << " tokens\n";
        return 1;
    }
    std::vector<int> vq(res.tokens.begin() + 1, res.tokens.end() - 1);
    IndexSequence idx =
        from_token_ids(vq, model.grid_rows(), model.grid_cols(), model.vocab());
    std::cout << "indices:";
    for (int i : idx.indices) std::cout << ' ' << i;
    std::cout << "\n";
    write_pgm(*res.image, args.out_path);
    std::cout << "image: " << args.out_path << "\n";
    return 0;
}

int cmd_bench(const BenchArgs& args) {
    BenchSpec spec;
    spec.k_values = args.experts;
    spec.rank = args.rank;
    spec.tokens = args.tokens;
    spec.d_in = spec.d_out = args.dim;
    spec.repetitions = args.reps;
    spec.include_backward = !args.forward_only;
    auto results = run_bench(spec);
    emit_report(results, args.csv, std::cout);
    return 0;
}

int cmd_sweep(const SweepArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    const AdapterMode arch =
        args.arch == "hlora" ? AdapterMode::task_gated : AdapterMode::shared_lora;
    if (args.arch != "hlora" && args.arch != "shared") {
        throw ConfigError("--arch must be shared or hlora");
    }
    SweepConfig sc;
    sc.comp_train = cfg.sweep_comp_train;
    sc.val_count = cfg.val_count;
    sc.epochs = cfg.sweep_epochs;
    sc.seed = cfg.seed;
    sc.model = cfg.model;
    const std::vector<double> ratios = args.ratios.empty() ? cfg.sweep_ratios : args.ratios;

    auto curve = conflict_sweep(ratios, arch, sc);

    std::vector<double> rs, comp_ms;
    std::cout << "arch,ratio,comp_metric,gen_metric\n";
    for (const SweepPoint& p : curve) {
        std::cout << args.arch << ',' << p.ratio << ',' << p.comp_metric << ',' << p.gen_metric
                  << "\n";
        rs.push_back(p.ratio);
        comp_ms.push_back(p.comp_metric);
    }
    if (curve.size() >= 2) {
        std::cout << "spearman(comp_metric, ratio) = " << spearman(rs, comp_ms) << "\n";
    }
    if (!args.csv.empty()) {
        const bool fresh =
            !std::filesystem::exists(args.csv) || std::filesystem::file_size(args.csv) == 0;
        std::ofstream out(args.csv, std::ios::app);
        if (!out) throw IoError("cannot open sweep csv '" + args.csv + "'");
        if (fresh) out << "arch,ratio,comp_metric,gen_metric\n";
        for (const SweepPoint& p : curve) {
            out << args.arch << ',' << p.ratio << ',' << p.comp_metric << ',' << p.gen_metric
                << "\n";
        }
        std::cout << "csv: " << args.csv << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Task-gated merged-expert low-rank adaptation lab"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Run one training stage");
    train->add_option("--stage", train_args.stage, "1c|1g|2|3c|3g|mixed")->required();
    train->add_option("--config", train_args.config_path, "Config file (defaults when absent)");
    train->add_option("--resume", train_args.resume, "Checkpoint to resume from");
    train->add_option("--out", train_args.out_dir, "Output directory");
    train->add_option("--seed", train_args.seed, "Override the config seed");
    train->add_flag("--force", train_args.force, "Skip the checkpoint config-hash check");

    GenerateArgs gen_args;
    auto* gen = app.add_subcommand("generate", "Decode from a trained checkpoint");
    gen->add_option("--ckpt", gen_args.ckpt, "Checkpoint path")->required();
    gen->add_option("--task", gen_args.task, "comp|gen")->required();
    gen->add_option("--prompt", gen_args.prompt, "Prompt text");
    gen->add_option("--image", gen_args.image_path, "Input graymap image");
    gen->add_option("--out", gen_args.out_path, "Output image path (gen task)");
    gen->add_option("--config", gen_args.config_path, "Config file");
    gen->add_option("--max-new", gen_args.max_new, "Token budget");
    gen->add_flag("--force", gen_args.force, "Skip the checkpoint config-hash check");

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "Adapter timing and op-count audit");
    bench->add_option("--experts", bench_args.experts, "Expert counts")->delimiter(',');
    bench->add_option("--rank", bench_args.rank, "Per-expert rank");
    bench->add_option("--tokens", bench_args.tokens, "Token count");
    bench->add_option("--dim", bench_args.dim, "Layer width");
    bench->add_option("--reps", bench_args.reps, "Timing repetitions");
    bench->add_option("--csv", bench_args.csv, "Append results to this CSV");
    bench->add_flag("--forward-only", bench_args.forward_only, "Skip the backward pass");

    SweepArgs sweep_args;
    auto* sweep = app.add_subcommand("sweep", "Task-mixing conflict curve");
    sweep->add_option("--ratios", sweep_args.ratios, "Mixing ratios in [0,1]")->delimiter(',');
    sweep->add_option("--arch", sweep_args.arch, "shared|hlora")->required();
    sweep->add_option("--csv", sweep_args.csv, "Append curve to this CSV");
    sweep->add_option("--config", sweep_args.config_path, "Config file");
    sweep->add_option("--seed", sweep_args.seed, "Override the config seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return cmd_train(train_args);
        if (gen->parsed()) return cmd_generate(gen_args);
        if (bench->parsed()) return cmd_bench(bench_args);
        if (sweep->parsed()) return cmd_sweep(sweep_args);
    } catch (const hlora::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        // Op-count law violations are gate failures, everything else is usage.
        return std::string(e.what()).find("op-count law") != std::string::npos ? 1 : 2;
    } catch (const hlora::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
