#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "hlora/data.hpp"
#include "hlora/model.hpp"
#include "hlora/tokenizer.hpp"
#include "hlora/train.hpp"

using namespace hlora;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.d_ff = 64;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.d_vis = 16;
    cfg.adapter_hidden = 24;
    cfg.codebook_size = 16;
    cfg.comp = {2, 2, 2.0};
    cfg.gen = {4, 2, 4.0};
    cfg.shared_rank = 4;
    cfg.shared_alpha = 4.0;
    return cfg;
}

std::string sample_key(const Sample& s) {
    std::ostringstream os;
    os << task_name(s.task);
    for (int t : s.prompt) os << ' ' << t;
    os << '|';
    for (int t : s.response_text) os << ' ' << t;
    os << '|';
    for (int t : s.response_indices.indices) os << ' ' << t;
    os << '|';
    if (s.image) {
        for (double v : s.image->pixels) os << v << ',';
    }
    return os.str();
}

std::map<std::string, std::vector<double>> param_state(const UnifiedModel& m) {
    std::map<std::string, std::vector<double>> out;
    for (const NamedParam& np : m.named_parameters()) {
        out[np.name] = std::vector<double>(np.tensor.data().begin(), np.tensor.data().end());
    }
    return out;
}

bool group_unchanged(const UnifiedModel& m, ParamGroup g,
                     const std::map<std::string, std::vector<double>>& before) {
    for (const NamedParam& np : m.named_parameters()) {
        for (const Tensor& t : m.group_parameters(g)) {
            if (!np.tensor.same_storage(t)) continue;
            const auto& ref = before.at(np.name);
            for (std::size_t i = 0; i < ref.size(); ++i) {
                if (np.tensor.data()[i] != ref[i]) return false;
            }
        }
    }
    return true;
}

}  // namespace

TEST_CASE("datasets are deterministic and splits are disjoint") {
    UnifiedModel model(tiny_config(), AdapterMode::task_gated, 20);
    for (TaskKind kind :
         {TaskKind::comp_qa, TaskKind::gen_from_text, TaskKind::gen_transform}) {
        SyntheticTask task{kind, 777, 24, 8, 12};
        Dataset a = make_dataset(task, model.codebook(), model.codec());
        Dataset b = make_dataset(task, model.codebook(), model.codec());
        REQUIRE(a.train.size() == 24);
        REQUIRE(a.val.size() == 8);
        std::set<std::string> seen;
        for (std::size_t i = 0; i < a.train.size(); ++i) {
            CHECK(sample_key(a.train[i]) == sample_key(b.train[i]));
            CHECK(seen.insert(sample_key(a.train[i])).second);
        }
        for (std::size_t i = 0; i < a.val.size(); ++i) {
            CHECK(sample_key(a.val[i]) == sample_key(b.val[i]));
            CHECK(seen.insert(sample_key(a.val[i])).second);
        }
    }
}

namespace {

// Reverse-renders each 4x4 cell back to a shape id by exact pixel match
// against every possible stamp; -1 means the cell is empty. Independent of
// the generator's bookkeeping.
int cell_shape(const ToyImage& img, int cell_row, int cell_col) {
    const int csz = img.height / 3;
    double mx = 0.0;
    for (int r = 0; r < csz; ++r) {
        for (int c = 0; c < csz; ++c) {
            mx = std::max(mx, img.at(cell_row * csz + r, cell_col * csz + c));
        }
    }
    // Background noise stays below 0.3; blob pixels sit at the blob value.
    if (mx < 0.3) return -1;
    for (int shape = 0; shape < 4; ++shape) {
        ToyImage stamp = render_attribute_image(img.height, shape, 1, cell_row, cell_col, 2);
        bool match = true;
        for (int r = 0; r < csz && match; ++r) {
            for (int c = 0; c < csz; ++c) {
                const double want = stamp.at(cell_row * csz + r, cell_col * csz + c);
                const double got = img.at(cell_row * csz + r, cell_col * csz + c);
                const bool on = want != 0.0;
                if (on && std::abs(got - mx) > 1e-12) match = false;
                if (!on && got >= 0.3) match = false;
            }
        }
        if (match) return shape;
    }
    return -2;  // occupied but unrecognized
}

}  // namespace

TEST_CASE("comp_qa answers match a pixel-level reverse rendering") {
    UnifiedModel model(tiny_config(), AdapterMode::task_gated, 21);
    SyntheticTask task{TaskKind::comp_qa, 5, 48, 8, 12};
    Dataset ds = make_dataset(task, model.codebook(), model.codec());
    int max_count = 0;
    for (const Sample& s : ds.train) {
        REQUIRE(s.image.has_value());
        REQUIRE(s.response_text.size() == 1);
        CHECK(s.task == TaskType::comprehension);
        std::vector<int> cell_of_shape(9, -1);
        std::vector<int> occupied;
        for (int cell = 0; cell < 9; ++cell) {
            const int sh = cell_shape(*s.image, cell / 3, cell % 3);
            CHECK(sh != -2);
            cell_of_shape[cell] = sh;
            if (sh >= 0) occupied.push_back(cell);
        }
        const int expected = static_cast<int>(occupied.size());
        max_count = std::max(max_count, expected);
        CHECK(s.response_text[0] == Tokenizer::id_of(std::to_string(expected)));
    }
    CHECK(max_count == 8);
}

TEST_CASE("gen_from_text targets equal render-then-encode") {
    UnifiedModel model(tiny_config(), AdapterMode::task_gated, 22);
    SyntheticTask task{TaskKind::gen_from_text, 6, 32, 8, 12};
    Dataset ds = make_dataset(task, model.codebook(), model.codec());
    for (const Sample& s : ds.train) {
        CHECK_FALSE(s.image.has_value());
        REQUIRE(s.prompt.size() == 6);
        // prompt: render <shape> <size> r<i> c<j> lv<k>
        const std::string shape = Tokenizer::words()[s.prompt[1]];
        const std::string size = Tokenizer::words()[s.prompt[2]];
        const std::string row = Tokenizer::words()[s.prompt[3]];
        const std::string col = Tokenizer::words()[s.prompt[4]];
        const std::string lv = Tokenizer::words()[s.prompt[5]];
        int shape_id = 0;
        for (const char* nm : {"square", "disc", "cross", "tri"}) {
            if (shape == nm) break;
            ++shape_id;
        }
        ToyImage img = render_attribute_image(12, shape_id, size == "big" ? 1 : 0,
                                              row[1] - '0', col[1] - '0', lv[2] - '0');
        IndexSequence expected = encode_image(img, model.codebook(), model.codec());
        CHECK(expected.indices == s.response_indices.indices);
    }
}

TEST_CASE("gen_transform targets encode the inverted input") {
    UnifiedModel model(tiny_config(), AdapterMode::task_gated, 23);
    SyntheticTask task{TaskKind::gen_transform, 7, 16, 4, 12};
    Dataset ds = make_dataset(task, model.codebook(), model.codec());
    for (const Sample& s : ds.train) {
        REQUIRE(s.image.has_value());
        IndexSequence expected =
            encode_image(invert_image(*s.image), model.codebook(), model.codec());
        CHECK(expected.indices == s.response_indices.indices);
    }
}

TEST_CASE("stage masks freeze the backbone and vision tower everywhere") {
    const VocabularyMap vm{.text_vocab_size = 32, .codebook_size = 16};
    for (StageId sid : {StageId::s1c, StageId::s1g, StageId::s2, StageId::s3c, StageId::s3g,
                        StageId::joint}) {
        StageMask m = StageMask::for_stage(sid, AdapterMode::task_gated, vm);
        CHECK_FALSE(m.is_trainable(ParamGroup::backbone));
        CHECK_FALSE(m.is_trainable(ParamGroup::vision_encoder));
        CHECK_FALSE(m.is_trainable(ParamGroup::vq_codes));
    }
    StageMask mixed = StageMask::for_stage(StageId::mixed, AdapterMode::shared_lora, vm);
    CHECK_FALSE(mixed.is_trainable(ParamGroup::backbone));
    CHECK(mixed.is_trainable(ParamGroup::shared_adapter));
    CHECK_THROWS_AS(StageMask::for_stage(StageId::mixed, AdapterMode::task_gated, vm),
                    ConfigError);
    StageMask s1g = StageMask::for_stage(StageId::s1g, AdapterMode::task_gated, vm);
    REQUIRE(s1g.vocab_range.has_value());
    CHECK(s1g.vocab_range->first == vm.vq_base());
    CHECK(s1g.vocab_range->second == vm.total());
}

TEST_CASE("stage freeze contracts hold bitwise") {
    UnifiedModel model(tiny_config(), AdapterMode::task_gated, 24);
    TaskSuite suite = make_task_suite(model, 300, 16, 16, 16, 4);
    TrainConfig tc;
    tc.steps = 12;
    tc.batch_size = 2;
    tc.seed = 1;

    SUBCASE("stage 1c trains only the comprehension adapter") {
        auto before = param_state(model);
        run_stage(model, StageId::s1c, suite.comp.train, tc);
        CHECK_FALSE(group_unchanged(model, ParamGroup::comp_adapter, before));
        for (ParamGroup g : {ParamGroup::comp_plugins, ParamGroup::gen_plugins,
                             ParamGroup::gen_adapter, ParamGroup::embedding, ParamGroup::head,
                             ParamGroup::backbone, ParamGroup::vision_encoder}) {
            CHECK(group_unchanged(model, g, before));
        }
    }
    SUBCASE("stage 1g trains gen side plus the multimodal vocab rows") {
        auto before = param_state(model);
        run_stage(model, StageId::s1g, suite.gen_transform.train, tc);
        CHECK_FALSE(group_unchanged(model, ParamGroup::gen_adapter, before));
        CHECK_FALSE(group_unchanged(model, ParamGroup::gen_plugins, before));
        CHECK_FALSE(group_unchanged(model, ParamGroup::embedding, before));
        for (ParamGroup g : {ParamGroup::comp_plugins, ParamGroup::comp_adapter,
                             ParamGroup::backbone, ParamGroup::vision_encoder}) {
            CHECK(group_unchanged(model, g, before));
        }
        // Text-range embedding rows and head columns are bit-identical.
        const auto& vm = model.vocab();
        const auto& embed_before = before.at("embed.table");
        Tensor embed = model.group_parameters(ParamGroup::embedding)[0];
        for (int r = 0; r < vm.text_vocab_size; ++r) {
            for (int c = 0; c < model.config().d_model; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * model.config().d_model + c;
                CHECK(embed.data()[i] == embed_before[i]);
            }
        }
        const auto& head_before = before.at("head.weight");
        Tensor head = model.group_parameters(ParamGroup::head)[0];
        const int vocab_total = vm.total();
        for (int r = 0; r < model.config().d_model; ++r) {
            for (int c = 0; c < vm.text_vocab_size; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * vocab_total + c;
                CHECK(head.data()[i] == head_before[i]);
            }
        }
    }
    SUBCASE("stage 2 moves only embedding and head") {
        auto before = param_state(model);
        run_stage(model, StageId::s2, suite.mixture(0.2, 5), tc);
        CHECK_FALSE(group_unchanged(model, ParamGroup::embedding, before));
        CHECK_FALSE(group_unchanged(model, ParamGroup::head, before));
        for (ParamGroup g : {ParamGroup::comp_plugins, ParamGroup::gen_plugins,
                             ParamGroup::comp_adapter, ParamGroup::gen_adapter,
                             ParamGroup::backbone, ParamGroup::vision_encoder}) {
            CHECK(group_unchanged(model, g, before));
        }
    }
    SUBCASE("stage 3c leaves embedding, head and the gen side untouched") {
        auto before = param_state(model);
        run_stage(model, StageId::s3c, suite.comp.train, tc);
        CHECK_FALSE(group_unchanged(model, ParamGroup::comp_plugins, before));
        for (ParamGroup g : {ParamGroup::gen_plugins, ParamGroup::gen_adapter,
                             ParamGroup::embedding, ParamGroup::head, ParamGroup::backbone}) {
            CHECK(group_unchanged(model, g, before));
        }
    }
    SUBCASE("stage 3g leaves the comprehension side untouched") {
        auto before = param_state(model);
        run_stage(model, StageId::s3g, suite.gen_train(), tc);
        CHECK_FALSE(group_unchanged(model, ParamGroup::gen_plugins, before));
        for (ParamGroup g : {ParamGroup::comp_plugins, ParamGroup::comp_adapter,
                             ParamGroup::embedding, ParamGroup::head}) {
            CHECK(group_unchanged(model, g, before));
        }
    }
}

TEST_CASE("stage reruns from the same state are bit-identical") {
    auto run_once = [] {
        UnifiedModel model(tiny_config(), AdapterMode::task_gated, 25);
        TaskSuite suite = make_task_suite(model, 301, 12, 12, 12, 4);
        TrainConfig tc;
        tc.steps = 10;
        tc.batch_size = 2;
        tc.seed = 9;
        run_stage(model, StageId::s3c, suite.comp.train, tc);
        return param_state(model);
    };
    auto a = run_once();
    auto b = run_once();
    REQUIRE(a.size() == b.size());
    for (const auto& [name, data] : a) {
        const auto& other = b.at(name);
        REQUIRE(other.size() == data.size());
        for (std::size_t i = 0; i < data.size(); ++i) CHECK(data[i] == other[i]);
    }
}

TEST_CASE("gen stage 1 training lowers held-out reconstruction loss") {
    UnifiedModel model(tiny_config(), AdapterMode::task_gated, 26);
    TaskSuite suite = make_task_suite(model, 302, 12, 12, 48, 8);
    const double before = mean_loss(model, suite.gen_transform.val);
    TrainConfig tc;
    tc.steps = 120;
    tc.batch_size = 4;
    tc.seed = 11;
    run_stage(model, StageId::s1g, suite.gen_transform.train, tc);
    const double after = mean_loss(model, suite.gen_transform.val);
    CHECK(after < before);
}

TEST_CASE("one-sample overfit drives the loss to memorization") {
    UnifiedModel model(tiny_config(), AdapterMode::task_gated, 27);
    TaskSuite suite = make_task_suite(model, 303, 4, 4, 4, 2);
    std::vector<Sample> one{suite.comp.train[0]};
    TrainConfig tc;
    tc.steps = 250;
    tc.batch_size = 1;
    tc.seed = 12;
    tc.lr = 5e-3;
    tc.adapter_lr = 5e-3;
    tc.embed_lr = 5e-3;
    run_stage(model, StageId::joint, one, tc);
    CHECK(mean_loss(model, one) < 0.01);
}

TEST_CASE("spearman rank correlation") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {9, 7, 5, 3}) == doctest::Approx(-1.0));
    CHECK(spearman({0, 0.25, 0.5, 1.0}, {0.9, 0.8, 0.8, 0.2}) < -0.8);
    CHECK_THROWS_AS(spearman({1}, {2}), ConfigError);
}

TEST_CASE("metrics writer emits the documented schema") {
    const std::string path = "test_metrics_tmp.csv";
    std::remove(path.c_str());
    {
        MetricsWriter w(path);
        w.row("r1", "1c", 0, "-", 1.5, "train_loss", 1.5);
        w.row("r1", "final", 0, "comp", 0.0, "exact_match", 0.75);
    }
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "run_id,stage,step,task,loss,metric_name,metric_value");
    std::getline(in, line);
    CHECK(line == "r1,1c,0,-,1.5,train_loss,1.5");
    std::getline(in, line);
    CHECK(line == "r1,final,0,comp,0,exact_match,0.75");
    std::remove(path.c_str());
}
