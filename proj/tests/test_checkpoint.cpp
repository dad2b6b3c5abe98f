#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hlora/checkpoint.hpp"
#include "hlora/config.hpp"

using namespace hlora;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.d_ff = 64;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.d_vis = 16;
    cfg.adapter_hidden = 24;
    cfg.codebook_size = 8;
    cfg.comp = {2, 2, 2.0};
    cfg.gen = {4, 2, 4.0};
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("checkpoint round-trip is byte-identical") {
    UnifiedModel model(tiny_config(), AdapterMode::task_gated, 60);
    const std::string p1 = "ckpt_tmp_1.hlckpt";
    const std::string p2 = "ckpt_tmp_2.hlckpt";
    save_checkpoint(p1, model, "1c", 0xabcdefULL);

    UnifiedModel other(tiny_config(), AdapterMode::task_gated, 61);
    CheckpointInfo info = load_checkpoint(p1, other, 0xabcdefULL);
    CHECK(info.stage == "1c");
    save_checkpoint(p2, other, "1c", 0xabcdefULL);
    CHECK(slurp(p1) == slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint load restores parameters within float32 precision") {
    UnifiedModel a(tiny_config(), AdapterMode::task_gated, 62);
    UnifiedModel b(tiny_config(), AdapterMode::task_gated, 63);
    const std::string path = "ckpt_tmp_3.hlckpt";
    save_checkpoint(path, a, "init", 1);
    load_checkpoint(path, b, 1);
    auto pa = a.named_parameters();
    auto pb = b.named_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        for (std::size_t j = 0; j < pa[i].tensor.size(); ++j) {
            CHECK(static_cast<float>(pa[i].tensor.data()[j]) ==
                  static_cast<float>(pb[i].tensor.data()[j]));
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint guards: hash, force, mode") {
    UnifiedModel model(tiny_config(), AdapterMode::task_gated, 64);
    const std::string path = "ckpt_tmp_4.hlckpt";
    save_checkpoint(path, model, "2", 100);

    UnifiedModel same(tiny_config(), AdapterMode::task_gated, 65);
    CHECK_THROWS_AS(load_checkpoint(path, same, 999), ConfigError);
    CHECK_NOTHROW(load_checkpoint(path, same, 999, true));

    UnifiedModel shared(tiny_config(), AdapterMode::shared_lora, 66);
    CHECK_THROWS_AS(load_checkpoint(path, shared, 100), ConfigError);

    CheckpointInfo info = peek_checkpoint(path);
    CHECK(info.stage == "2");
    CHECK(info.config_hash == 100);
    std::remove(path.c_str());

    CHECK_THROWS_AS(peek_checkpoint("does_not_exist.hlckpt"), IoError);
}

TEST_CASE("run config defaults, echo round-trip, and hashing") {
    RunConfig def = load_run_config("");
    CHECK(def.model.d_model == 64);
    CHECK(def.mixed.steps == def.three_stage_total());

    const std::string path = "config_tmp.txt";
    write_config_file(def, path);
    RunConfig back = load_run_config(path);
    CHECK(render_config(back) == render_config(def));
    CHECK(hash_config(back) == hash_config(def));
    std::remove(path.c_str());
}

TEST_CASE("run config parsing rejects unknown keys and bad values") {
    const std::string path = "config_tmp_bad.txt";
    {
        std::ofstream out(path);
        out << "hlora-config v1\nmodel.d_model = 32\nnot.a.key = 3\n";
    }
    CHECK_THROWS_AS(load_run_config(path), ConfigError);
    {
        std::ofstream out(path);
        out << "model.d_model = 32\n";  // missing format tag
    }
    CHECK_THROWS_AS(load_run_config(path), ConfigError);
    {
        std::ofstream out(path);
        out << "hlora-config v1\nmodel.d_model = banana\n";
    }
    CHECK_THROWS_AS(load_run_config(path), ConfigError);
    {
        std::ofstream out(path);
        out << "hlora-config v1\n# comment only\nmodel.d_model = 32  # trailing\n";
    }
    RunConfig cfg = load_run_config(path);
    CHECK(cfg.model.d_model == 32);
    std::remove(path.c_str());
}

TEST_CASE("config hash is sensitive to every key change") {
    RunConfig a = load_run_config("");
    RunConfig b = a;
    b.model.codebook_size = 32;
    CHECK(hash_config(a) != hash_config(b));
    RunConfig c = a;
    c.s3g.lr = 1e-4;
    CHECK(hash_config(a) != hash_config(c));
}
