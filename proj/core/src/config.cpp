#include "hlora/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace hlora {

namespace {

constexpr const char* kFormatTag = "hlora-config v1";

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string fmt_ratios(const std::vector<double>& rs) {
    std::string out;
    for (std::size_t i = 0; i < rs.size(); ++i) {
        if (i) out += ",";
        out += fmt_double(rs[i]);
    }
    return out;
}

std::vector<double> parse_ratios(const std::string& s) {
    std::vector<double> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    if (out.empty()) throw ConfigError("empty ratio list");
    return out;
}

struct KeyDef {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
KeyDef int_key(T RunConfig::* field) {
    return {[field](const RunConfig& c) { return std::to_string(c.*field); },
            [field](RunConfig& c, const std::string& v) { c.*field = static_cast<T>(std::stoll(v)); }};
}

KeyDef model_int(int ModelConfig::* field) {
    return {[field](const RunConfig& c) { return std::to_string(c.model.*field); },
            [field](RunConfig& c, const std::string& v) { c.model.*field = std::stoi(v); }};
}

KeyDef task_int(HLoraTaskConfig ModelConfig::* task, int HLoraTaskConfig::* field) {
    return {[=](const RunConfig& c) { return std::to_string(c.model.*task.*field); },
            [=](RunConfig& c, const std::string& v) { c.model.*task.*field = std::stoi(v); }};
}

KeyDef task_double(HLoraTaskConfig ModelConfig::* task, double HLoraTaskConfig::* field) {
    return {[=](const RunConfig& c) { return fmt_double(c.model.*task.*field); },
            [=](RunConfig& c, const std::string& v) { c.model.*task.*field = std::stod(v); }};
}

KeyDef stage_int(RunConfig::StageKnobs RunConfig::* stage, int RunConfig::StageKnobs::* field) {
    return {[=](const RunConfig& c) { return std::to_string(c.*stage.*field); },
            [=](RunConfig& c, const std::string& v) { c.*stage.*field = std::stoi(v); }};
}

KeyDef stage_double(RunConfig::StageKnobs RunConfig::* stage,
                    double RunConfig::StageKnobs::* field) {
    return {[=](const RunConfig& c) { return fmt_double(c.*stage.*field); },
            [=](RunConfig& c, const std::string& v) { c.*stage.*field = std::stod(v); }};
}

KeyDef stage_sched(RunConfig::StageKnobs RunConfig::* stage) {
    return {[=](const RunConfig& c) { return (c.*stage).schedule; },
            [=](RunConfig& c, const std::string& v) {
                if (v != "warmup" && v != "constant") {
                    throw ConfigError("schedule must be warmup or constant, got '" + v + "'");
                }
                (c.*stage).schedule = v;
            }};
}

const std::map<std::string, KeyDef>& registry() {
    static const std::map<std::string, KeyDef> reg = [] {
        std::map<std::string, KeyDef> r;
        r["model.d_model"] = model_int(&ModelConfig::d_model);
        r["model.layers"] = model_int(&ModelConfig::layers);
        r["model.heads"] = model_int(&ModelConfig::heads);
        r["model.max_seq"] = model_int(&ModelConfig::max_seq);
        r["model.d_ff"] = model_int(&ModelConfig::d_ff);
        r["model.image_size"] = model_int(&ModelConfig::image_size);
        r["model.patch"] = model_int(&ModelConfig::patch);
        r["model.d_vis"] = model_int(&ModelConfig::d_vis);
        r["model.vis_blocks"] = model_int(&ModelConfig::vis_blocks);
        r["model.concrete_tap"] = model_int(&ModelConfig::concrete_tap);
        r["model.abstract_tap"] = model_int(&ModelConfig::abstract_tap);
        r["model.adapter_hidden"] = model_int(&ModelConfig::adapter_hidden);
        r["model.d_code"] = model_int(&ModelConfig::d_code);
        r["model.codebook_size"] = model_int(&ModelConfig::codebook_size);
        r["hlora.comp.rank"] = task_int(&ModelConfig::comp, &HLoraTaskConfig::rank);
        r["hlora.comp.experts"] = task_int(&ModelConfig::comp, &HLoraTaskConfig::experts);
        r["hlora.comp.alpha"] = task_double(&ModelConfig::comp, &HLoraTaskConfig::alpha);
        r["hlora.gen.rank"] = task_int(&ModelConfig::gen, &HLoraTaskConfig::rank);
        r["hlora.gen.experts"] = task_int(&ModelConfig::gen, &HLoraTaskConfig::experts);
        r["hlora.gen.alpha"] = task_double(&ModelConfig::gen, &HLoraTaskConfig::alpha);
        r["shared.rank"] = model_int(&ModelConfig::shared_rank);
        r["shared.tap"] = model_int(&ModelConfig::shared_tap);
        r["shared.alpha"] = {[](const RunConfig& c) { return fmt_double(c.model.shared_alpha); },
                             [](RunConfig& c, const std::string& v) {
                                 c.model.shared_alpha = std::stod(v);
                             }};
        r["data.comp_train"] = int_key(&RunConfig::comp_train);
        r["data.gen_text_train"] = int_key(&RunConfig::gen_text_train);
        r["data.gen_transform_train"] = int_key(&RunConfig::gen_transform_train);
        r["data.val_count"] = int_key(&RunConfig::val_count);
        const std::pair<const char*, RunConfig::StageKnobs RunConfig::*> stages[] = {
            {"stage.1c", &RunConfig::s1c}, {"stage.1g", &RunConfig::s1g},
            {"stage.2", &RunConfig::s2},   {"stage.3c", &RunConfig::s3c},
            {"stage.3g", &RunConfig::s3g}, {"stage.mixed", &RunConfig::mixed},
        };
        for (const auto& [prefix, ptr] : stages) {
            r[std::string(prefix) + ".steps"] = stage_int(ptr, &RunConfig::StageKnobs::steps);
            r[std::string(prefix) + ".batch"] = stage_int(ptr, &RunConfig::StageKnobs::batch);
            r[std::string(prefix) + ".lr"] = stage_double(ptr, &RunConfig::StageKnobs::lr);
            r[std::string(prefix) + ".adapter_lr"] =
                stage_double(ptr, &RunConfig::StageKnobs::adapter_lr);
            r[std::string(prefix) + ".embed_lr"] =
                stage_double(ptr, &RunConfig::StageKnobs::embed_lr);
            r[std::string(prefix) + ".schedule"] = stage_sched(ptr);
        }
        r["train.clip_norm"] = {[](const RunConfig& c) { return fmt_double(c.clip_norm); },
                                [](RunConfig& c, const std::string& v) {
                                    c.clip_norm = std::stod(v);
                                }};
        r["seed"] = {[](const RunConfig& c) { return std::to_string(c.seed); },
                     [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); }};
        r["sweep.ratios"] = {[](const RunConfig& c) { return fmt_ratios(c.sweep_ratios); },
                             [](RunConfig& c, const std::string& v) {
                                 c.sweep_ratios = parse_ratios(v);
                             }};
        r["sweep.epochs"] = int_key(&RunConfig::sweep_epochs);
        r["sweep.comp_train"] = int_key(&RunConfig::sweep_comp_train);
        return r;
    }();
    return reg;
}

void resolve_defaults(RunConfig& cfg) {
    if (cfg.mixed.steps < 0) cfg.mixed.steps = cfg.three_stage_total();
    cfg.model.validate();
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) {
        resolve_defaults(cfg);
        return cfg;
    }
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::string line;
    bool saw_tag = false;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // trim
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        if (!saw_tag) {
            if (line != kFormatTag) {
                throw ConfigError("config '" + path + "' must start with '" +
                                  std::string(kFormatTag) + "'");
            }
            saw_tag = true;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config '" + path + "' line " + std::to_string(line_no) +
                              ": expected key = value");
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            const auto b2 = s.find_first_not_of(" \t");
            const auto e2 = s.find_last_not_of(" \t");
            s = b2 == std::string::npos ? "" : s.substr(b2, e2 - b2 + 1);
        };
        trim(key);
        trim(value);
        const auto& reg = registry();
        auto it = reg.find(key);
        if (it == reg.end()) {
            throw ConfigError("config '" + path + "' line " + std::to_string(line_no) +
                              ": unknown key '" + key + "'");
        }
        try {
            it->second.set(cfg, value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("config '" + path + "' line " + std::to_string(line_no) +
                              ": bad value '" + value + "' for key '" + key + "'");
        }
    }
    if (!saw_tag) throw ConfigError("config '" + path + "' is empty (missing format tag)");
    resolve_defaults(cfg);
    return cfg;
}

std::string render_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << kFormatTag << "\n";
    for (const auto& [key, def] : registry()) {
        os << key << " = " << def.get(cfg) << "\n";
    }
    return os.str();
}

void write_config_file(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config '" + path + "'");
    out << render_config(cfg);
}

uint64_t hash_config(const RunConfig& cfg) {
    const std::string text = render_config(cfg);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

TrainConfig knobs_to_train_config(const RunConfig::StageKnobs& k, double clip_norm,
                                  uint64_t seed) {
    TrainConfig tc;
    tc.steps = k.steps;
    tc.batch_size = k.batch;
    tc.lr = k.lr;
    tc.adapter_lr = k.adapter_lr;
    tc.embed_lr = k.embed_lr;
    tc.schedule = k.schedule == "constant" ? LrSchedule::constant : LrSchedule::warmup_decay;
    tc.warmup_fraction = 0.1;
    tc.clip_norm = clip_norm;
    tc.seed = seed;
    return tc;
}

StageSchedule make_schedule(const RunConfig& cfg) {
    SeedSplitter split(cfg.seed);
    StageSchedule s;
    s.s1c = knobs_to_train_config(cfg.s1c, cfg.clip_norm, split.derive("stage.1c"));
    s.s1g = knobs_to_train_config(cfg.s1g, cfg.clip_norm, split.derive("stage.1g"));
    s.s2 = knobs_to_train_config(cfg.s2, cfg.clip_norm, split.derive("stage.2"));
    s.s3c = knobs_to_train_config(cfg.s3c, cfg.clip_norm, split.derive("stage.3c"));
    s.s3g = knobs_to_train_config(cfg.s3g, cfg.clip_norm, split.derive("stage.3g"));
    return s;
}

TrainConfig make_mixed_config(const RunConfig& cfg) {
    SeedSplitter split(cfg.seed);
    return knobs_to_train_config(cfg.mixed, cfg.clip_norm, split.derive("stage.mixed"));
}

}  // namespace hlora
