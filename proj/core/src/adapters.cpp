#include "hlora/adapters.hpp"

#include <cmath>
#include <string>

namespace hlora {

FrozenLinear FrozenLinear::random(int d_in, int d_out, RngStream& rng, double stddev,
                                  bool with_bias) {
    FrozenLinear fl;
    fl.weight = Tensor::zeros({d_in, d_out});
    for (double& v : fl.weight.data_mut()) v = rng.gaussian(0.0, stddev);
    if (with_bias) {
        fl.bias = Tensor::zeros({d_out});
        for (double& v : fl.bias.data_mut()) v = rng.gaussian(0.0, stddev);
    }
    return fl;
}

LoraAdapter LoraAdapter::init(int d_in, int d_out, int rank, double alpha, RngStream& rng) {
    if (rank < 1) throw ConfigError("LoRA rank must be >= 1");
    LoraAdapter ad;
    ad.rank = rank;
    ad.alpha = alpha;
    ad.a = Tensor::zeros({d_in, rank}, true);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d_in));
    for (double& v : ad.a.data_mut()) v = rng.gaussian(0.0, stddev);
    ad.b = Tensor::zeros({rank, d_out}, true);
    return ad;
}

RouterLayer RouterLayer::zeros(int d_in, int experts) {
    if (experts < 1) throw ConfigError("router expert count must be >= 1");
    RouterLayer r;
    r.weight = Tensor::zeros({d_in, experts}, true);
    return r;
}

Tensor RouterLayer::forward(Graph& g, const Tensor& x, OpCounter* counter) const {
    if (counter) counter->router_multiplications += 1;
    return g.softmax_rows(g.matmul(x, weight));
}

HLoraSubmodule HLoraSubmodule::init(int d_in, int d_out, int rank, int experts, double alpha,
                                    TaskType task, RngStream& rng) {
    if (rank < 1) throw ConfigError("H-LoRA rank must be >= 1");
    if (experts < 1) throw ConfigError("H-LoRA expert count must be >= 1");
    HLoraSubmodule sub;
    sub.expert_count = experts;
    sub.rank = rank;
    sub.alpha = alpha;
    sub.task = task;
    sub.a_merged = Tensor::zeros({d_in, rank * experts}, true);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d_in));
    for (double& v : sub.a_merged.data_mut()) v = rng.gaussian(0.0, stddev);
    sub.b_merged = Tensor::zeros({rank * experts, d_out}, true);
    sub.router = RouterLayer::zeros(d_in, experts);
    return sub;
}

HLoraSubmodule HLoraSubmodule::from_experts(const std::vector<LoraAdapter>& experts,
                                            RouterLayer router, double alpha, TaskType task) {
    if (experts.empty()) throw ConfigError("from_experts requires at least one expert");
    const int d_in = experts[0].a.shape()[0];
    const int rank = experts[0].rank;
    const int d_out = experts[0].b.shape()[1];
    for (const LoraAdapter& e : experts) {
        if (e.rank != rank || e.a.shape()[0] != d_in || e.b.shape()[1] != d_out) {
            throw DimensionError("experts disagree on rank or dimensions");
        }
    }
    const int k = static_cast<int>(experts.size());
    if (router.expert_count() != k) {
        throw DimensionError("router expert count " + std::to_string(router.expert_count()) +
                             " does not match expert list size " + std::to_string(k));
    }

    HLoraSubmodule sub;
    sub.expert_count = k;
    sub.rank = rank;
    sub.alpha = alpha;
    sub.task = task;
    sub.router = std::move(router);
    sub.a_merged = Tensor::zeros({d_in, rank * k}, true);
    sub.b_merged = Tensor::zeros({rank * k, d_out}, true);

    double* am = sub.a_merged.data_mut().data();
    double* bm = sub.b_merged.data_mut().data();
    const int rk = rank * k;
    for (int e = 0; e < k; ++e) {
        const double* ea = experts[e].a.data().data();
        for (int i = 0; i < d_in; ++i)
            for (int r = 0; r < rank; ++r)
                am[static_cast<std::size_t>(i) * rk + e * rank + r] =
                    ea[static_cast<std::size_t>(i) * rank + r];
        const double* eb = experts[e].b.data().data();
        for (int r = 0; r < rank; ++r)
            for (int j = 0; j < d_out; ++j)
                bm[static_cast<std::size_t>(e * rank + r) * d_out + j] =
                    eb[static_cast<std::size_t>(r) * d_out + j];
    }
    return sub;
}

namespace {

Tensor base_output(Graph& g, const Tensor& x, const FrozenLinear& base) {
    Tensor out = g.matmul(x, base.weight);
    if (base.bias.defined()) out = g.add_bias(out, base.bias);
    return out;
}

}  // namespace

Tensor lora_forward(Graph& g, const Tensor& x, const FrozenLinear& base,
                    const LoraAdapter& adapter, OpCounter* counter) {
    Tensor frozen = base_output(g, x, base);
    if (counter) counter->expert_multiplications += 2;
    Tensor delta = g.matmul(g.matmul(x, adapter.a), adapter.b);
    delta = g.scale(delta, adapter.alpha / adapter.rank);
    if (counter) counter->additions += 1;
    return g.add(frozen, delta);
}

Tensor moelora_forward_reference(Graph& g, const Tensor& x, const FrozenLinear& base,
                                 const std::vector<LoraAdapter>& experts,
                                 const RouterLayer& router, OpCounter* counter,
                                 bool conventional_scale) {
    if (experts.empty()) throw ConfigError("moelora_forward_reference requires experts");
    const int k = static_cast<int>(experts.size());
    if (router.expert_count() != k) {
        throw DimensionError("router expert count " + std::to_string(router.expert_count()) +
                             " does not match expert list size " + std::to_string(k));
    }
    const int rank = experts[0].rank;
    const double alpha = experts[0].alpha;
    for (const LoraAdapter& e : experts) {
        if (e.rank != rank || e.a.shape() != experts[0].a.shape() ||
            e.b.shape() != experts[0].b.shape()) {
            throw DimensionError("experts disagree on rank or dimensions");
        }
    }
    const int d_out = experts[0].b.shape()[1];
    const double scale = conventional_scale ? alpha / rank : alpha * k / rank;

    Tensor weights = router.forward(g, x, counter);
    Tensor acc = base_output(g, x, base);
    for (int e = 0; e < k; ++e) {
        if (counter) counter->expert_multiplications += 2;
        Tensor mid = g.matmul(g.matmul(x, experts[e].a), experts[e].b);
        if (counter) counter->weight_expansions += 1;
        Tensor w_col = g.expand_cols(g.slice_cols(weights, e, e + 1), d_out, scale);
        if (counter) counter->dot_products += 1;
        Tensor weighted = g.mul(mid, w_col);
        if (counter) counter->additions += 1;
        acc = g.add(acc, weighted);
    }
    return acc;
}

Tensor hlora_forward(Graph& g, const Tensor& x, const FrozenLinear& base,
                     const HLoraSubmodule& sub, OpCounter* counter) {
    const int rk = sub.a_merged.shape()[1];
    if (rk != sub.rank * sub.expert_count ||
        sub.router.expert_count() != sub.expert_count) {
        throw DimensionError("merged matrices cover rank*k = " + std::to_string(rk) +
                             " but router expects " +
                             std::to_string(sub.rank * sub.expert_count));
    }
    const double scale = sub.alpha * sub.expert_count / sub.rank;

    Tensor weights = sub.router.forward(g, x, counter);
    if (counter) counter->weight_expansions += 1;
    Tensor expanded = g.expand_cols(weights, sub.rank, scale);
    if (counter) counter->expert_multiplications += 1;
    Tensor mid = g.matmul(x, sub.a_merged);
    if (counter) counter->dot_products += 1;
    Tensor weighted = g.mul(mid, expanded);
    if (counter) counter->expert_multiplications += 1;
    Tensor delta = g.matmul(weighted, sub.b_merged);
    if (counter) counter->additions += 1;
    return g.add(base_output(g, x, base), delta);
}

const HLoraSubmodule& select_submodule(TaskType task, const PluginBank& bank) {
    auto it = bank.find(task);
    if (it == bank.end()) {
        throw ConfigError(std::string("no plugin registered for task '") + task_name(task) + "'");
    }
    return it->second;
}

HLoraSubmodule& select_submodule(TaskType task, PluginBank& bank) {
    auto it = bank.find(task);
    if (it == bank.end()) {
        throw ConfigError(std::string("no plugin registered for task '") + task_name(task) + "'");
    }
    return it->second;
}

}  // namespace hlora
