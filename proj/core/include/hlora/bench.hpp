#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hlora/adapters.hpp"

namespace hlora {

enum class AdapterKind { lora, moelora, hlora };

const char* adapter_kind_name(AdapterKind k);
AdapterKind parse_adapter_kind(const std::string& s);

// One timing sweep over expert counts. The LoRA baseline is always measured at
// the matched total rank r*k so parameter counts are comparable.
struct BenchSpec {
    std::vector<int> k_values{2, 4, 8, 32};
    int rank = 2;
    int d_in = 128;
    int d_out = 128;
    int tokens = 192;
    int repetitions = 25;
    int warmup = 3;
    bool include_backward = true;
    uint64_t seed = 1234;

    void validate() const;
};

struct BenchResult {
    AdapterKind kind;
    int k;
    int rank;
    int tokens;          // actual token count after any auto-scaling
    double median_ns;
    double iqr_ns;
    double ratio_vs_lora;
    long opcount;
    bool tokens_scaled = false;
};

// Runs one instrumented forward pass and returns the raw counter.
OpCounter audit_opcounts(AdapterKind kind, int k, int rank = 4, int d = 32);

// Exact per-pass totals in the shared accounting style.
long expected_opcount(AdapterKind kind, int k);

// Median/IQR wall times on one thread. Outputs of the merged and reference
// mixture paths are re-checked for equality inside the run so both time the
// same numerical work. Throws when an op-count audit fails.
std::vector<BenchResult> run_bench(const BenchSpec& spec);

// Appends CSV rows `kind,k,r,tokens,median_ns,iqr_ns,ratio_vs_lora,opcount,run_id`
// (a fresh run_id per invocation, never overwriting) and prints a table.
void emit_report(const std::vector<BenchResult>& results, const std::string& csv_path,
                 std::ostream& table);

}  // namespace hlora
