#pragma once

#include <map>
#include <vector>

#include "hlora/rng.hpp"
#include "hlora/task.hpp"
#include "hlora/tensor.hpp"

namespace hlora {

// Tally of the semantic operations an adapted layer performs in one forward
// pass, in the accounting style where a reference mixture-of-experts LoRA
// costs 5k+1 per layer and the merged-matrix variant costs 6 regardless of k.
struct OpCounter {
    long expert_multiplications = 0;
    long router_multiplications = 0;
    long weight_expansions = 0;
    long dot_products = 0;
    long additions = 0;

    void reset() { *this = OpCounter{}; }
    long total() const {
        return expert_multiplications + router_multiplications + weight_expansions +
               dot_products + additions;
    }
};

// A pre-trained linear layer whose weights never change during training.
struct FrozenLinear {
    Tensor weight;  // [d_in x d_out]
    Tensor bias;    // optional [d_out]; undefined means no bias

    static FrozenLinear random(int d_in, int d_out, RngStream& rng, double stddev,
                               bool with_bias = false);
    int d_in() const { return weight.shape()[0]; }
    int d_out() const { return weight.shape()[1]; }
};

// Classic low-rank adapter: bypass weight A*B at scale alpha/r. B starts as an
// exact zero matrix so the adapted layer is transparent until trained.
struct LoraAdapter {
    Tensor a;  // [d_in x r], Gaussian at init
    Tensor b;  // [r x d_out], zero at init
    int rank = 0;
    double alpha = 1.0;

    static LoraAdapter init(int d_in, int d_out, int rank, double alpha, RngStream& rng);
};

// Linear map from the hidden state to k expert weights, row-softmax normalized.
struct RouterLayer {
    Tensor weight;  // [d_in x k]

    static RouterLayer zeros(int d_in, int experts);
    int expert_count() const { return weight.shape()[1]; }
    // [n x k] weights; every row sums to 1.
    Tensor forward(Graph& g, const Tensor& x, OpCounter* counter = nullptr) const;
};

// One task's plugin for one adapted layer: k experts merged column-block-wise
// into A_merged / row-block-wise into B_merged, plus the routing layer.
// Column block i of A_merged and row block i of B_merged belong to expert i.
struct HLoraSubmodule {
    Tensor a_merged;  // [d_in x r*k]
    Tensor b_merged;  // [r*k x d_out], zero at init
    RouterLayer router;
    int expert_count = 0;
    int rank = 0;
    double alpha = 1.0;
    TaskType task = TaskType::comprehension;

    static HLoraSubmodule init(int d_in, int d_out, int rank, int experts, double alpha,
                               TaskType task, RngStream& rng);
    // Builds the merged matrices from an explicit expert list (concatenation order
    // is the expert order). All experts must share rank and dimensions.
    static HLoraSubmodule from_experts(const std::vector<LoraAdapter>& experts,
                                       RouterLayer router, double alpha, TaskType task);
};

// x*W0 [+ bias] + (alpha/r) * x*A*B
Tensor lora_forward(Graph& g, const Tensor& x, const FrozenLinear& base,
                    const LoraAdapter& adapter, OpCounter* counter = nullptr);

// Expert-by-expert reference: x*W0 + sum_i w_i (.) (alpha*k/r) * x*A_i*B_i.
// Counter: 2k expert mults, 1 router mult, k expansions, k dots, k adds.
// conventional_scale switches the expert sum back to the plain alpha/r scale.
Tensor moelora_forward_reference(Graph& g, const Tensor& x, const FrozenLinear& base,
                                 const std::vector<LoraAdapter>& experts,
                                 const RouterLayer& router, OpCounter* counter = nullptr,
                                 bool conventional_scale = false);

// Merged path: x*W0 + (x*A_merged (.) (alpha*k/r)*(W (x) 1_r)) * B_merged.
// Counter: 2 expert mults, 1 router mult, 1 expansion, 1 dot, 1 add = 6, any k.
Tensor hlora_forward(Graph& g, const Tensor& x, const FrozenLinear& base,
                     const HLoraSubmodule& sub, OpCounter* counter = nullptr);

// Per-task plugin bank; tasks never share parameters.
using PluginBank = std::map<TaskType, HLoraSubmodule>;

const HLoraSubmodule& select_submodule(TaskType task, const PluginBank& bank);
HLoraSubmodule& select_submodule(TaskType task, PluginBank& bank);

}  // namespace hlora
