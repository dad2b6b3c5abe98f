#include "hlora/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#ifdef __linux__
#include <sched.h>
#endif
#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "hlora/rng.hpp"

namespace hlora {

const char* adapter_kind_name(AdapterKind k) {
    switch (k) {
        case AdapterKind::lora: return "lora";
        case AdapterKind::moelora: return "moelora";
        case AdapterKind::hlora: return "hlora";
    }
    return "?";
}

AdapterKind parse_adapter_kind(const std::string& s) {
    if (s == "lora") return AdapterKind::lora;
    if (s == "moelora") return AdapterKind::moelora;
    if (s == "hlora") return AdapterKind::hlora;
    throw ConfigError("unknown adapter kind '" + s + "'");
}

void BenchSpec::validate() const {
    if (repetitions < 5) throw ConfigError("bench repetitions must be >= 5");
    if (warmup < 2) throw ConfigError("bench warmup must be >= 2");
    if (rank < 1 || d_in < 1 || d_out < 1 || tokens < 1) {
        throw ConfigError("bench dimensions must be positive");
    }
    if (k_values.empty()) throw ConfigError("bench needs at least one expert count");
    for (int k : k_values) {
        if (k < 1) throw ConfigError("expert counts must be >= 1");
    }
}

long expected_opcount(AdapterKind kind, int k) {
    switch (kind) {
        case AdapterKind::lora: return 3;          // 2 multiplications + 1 addition
        case AdapterKind::moelora: return 5L * k + 1;
        case AdapterKind::hlora: return 6;
    }
    return 0;
}

namespace {

// Everything one timed configuration needs. The reference mixture and the
// merged path share router state and expert values so they compute the same
// function.
struct Fixture {
    FrozenLinear base;
    Tensor x;
    LoraAdapter lora;                 // matched total rank r*k
    std::vector<LoraAdapter> experts;
    RouterLayer router;
    HLoraSubmodule merged;
};

Fixture make_fixture(int d_in, int d_out, int rank, int k, int tokens, uint64_t seed) {
    RngStream rng(seed);
    Fixture f;
    f.base = FrozenLinear::random(d_in, d_out, rng, 1.0 / std::sqrt(d_in));
    f.x = Tensor::zeros({tokens, d_in}, true);
    for (double& v : f.x.data_mut()) v = rng.gaussian(0.0, 1.0);

    const double alpha = static_cast<double>(rank);
    for (int e = 0; e < k; ++e) {
        LoraAdapter ad = LoraAdapter::init(d_in, d_out, rank, alpha, rng);
        for (double& v : ad.b.data_mut()) v = rng.gaussian(0.0, 0.1);
        f.experts.push_back(std::move(ad));
    }
    f.router = RouterLayer::zeros(d_in, k);
    for (double& v : f.router.weight.data_mut()) v = rng.gaussian(0.0, 0.2);
    f.merged = HLoraSubmodule::from_experts(f.experts, f.router, alpha, TaskType::generation);

    f.lora = LoraAdapter::init(d_in, d_out, rank * k, alpha * k, rng);
    for (double& v : f.lora.b.data_mut()) v = rng.gaussian(0.0, 0.1);
    return f;
}

void drop_grads(Fixture& f) {
    f.x.drop_grad();
    f.lora.a.drop_grad();
    f.lora.b.drop_grad();
    for (LoraAdapter& e : f.experts) {
        e.a.drop_grad();
        e.b.drop_grad();
    }
    f.router.weight.drop_grad();
    f.merged.a_merged.drop_grad();
    f.merged.b_merged.drop_grad();
    f.merged.router.weight.drop_grad();
}

double time_pass(Fixture& f, AdapterKind kind, bool backward) {
    const auto t0 = std::chrono::steady_clock::now();
    {
        Graph g;
        Tensor out;
        switch (kind) {
            case AdapterKind::lora: out = lora_forward(g, f.x, f.base, f.lora); break;
            case AdapterKind::moelora:
                out = moelora_forward_reference(g, f.x, f.base, f.experts, f.router);
                break;
            case AdapterKind::hlora: out = hlora_forward(g, f.x, f.base, f.merged); break;
        }
        if (backward) g.backward(g.sum(out));
    }
    const auto t1 = std::chrono::steady_clock::now();
    drop_grads(f);
    return static_cast<double>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
}

struct MedianIqr {
    double median;
    double iqr;
};

MedianIqr summarize(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    auto quantile = [&](double q) {
        const double pos = q * (xs.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, xs.size() - 1);
        const double frac = pos - lo;
        return xs[lo] * (1.0 - frac) + xs[hi] * frac;
    };
    return {quantile(0.5), quantile(0.75) - quantile(0.25)};
}

void assert_equal_outputs(Fixture& f) {
    Graph g;
    Tensor ref = moelora_forward_reference(g, f.x, f.base, f.experts, f.router);
    Tensor merged = hlora_forward(g, f.x, f.base, f.merged);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double a = ref.data()[i];
        const double b = merged.data()[i];
        if (std::abs(a - b) > 1e-9 * std::max({1.0, std::abs(a), std::abs(b)})) {
            throw ConfigError("bench fixture mismatch: merged and reference paths diverged");
        }
    }
}

void pin_to_current_cpu() {
#ifdef __linux__
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(0, &set);
    sched_setaffinity(0, sizeof(set), &set);  // best effort
#endif
}

// Large short-lived buffers must come from the heap, not per-call mmap;
// otherwise the first configs in the sweep pay page-fault costs the later
// ones do not and ratios skew.
void stabilize_allocator(const BenchSpec& spec) {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 64 * 1024 * 1024);
#endif
    const int k_max = *std::max_element(spec.k_values.begin(), spec.k_values.end());
    Fixture f = make_fixture(spec.d_in, spec.d_out, spec.rank, k_max, spec.tokens, spec.seed);
    for (int i = 0; i < 3; ++i) {
        for (AdapterKind kind : {AdapterKind::lora, AdapterKind::moelora, AdapterKind::hlora}) {
            time_pass(f, kind, spec.include_backward);
        }
    }
}

}  // namespace

OpCounter audit_opcounts(AdapterKind kind, int k, int rank, int d) {
    Fixture f = make_fixture(d, d, rank, k, 4, 99);
    Graph g;
    OpCounter counter;
    switch (kind) {
        case AdapterKind::lora:
            lora_forward(g, f.x, f.base, f.lora, &counter);
            break;
        case AdapterKind::moelora:
            moelora_forward_reference(g, f.x, f.base, f.experts, f.router, &counter);
            break;
        case AdapterKind::hlora:
            hlora_forward(g, f.x, f.base, f.merged, &counter);
            break;
    }
    return counter;
}

std::vector<BenchResult> run_bench(const BenchSpec& spec) {
    spec.validate();
    pin_to_current_cpu();
    stabilize_allocator(spec);

    std::vector<BenchResult> results;
    for (int k : spec.k_values) {
        for (AdapterKind kind : {AdapterKind::lora, AdapterKind::moelora, AdapterKind::hlora}) {
            const OpCounter counter = audit_opcounts(kind, k, spec.rank);
            if (counter.total() != expected_opcount(kind, k)) {
                throw ConfigError(std::string("op-count law violated for ") +
                                  adapter_kind_name(kind) + " at k=" + std::to_string(k) +
                                  ": got " + std::to_string(counter.total()) + ", expected " +
                                  std::to_string(expected_opcount(kind, k)));
            }
        }

        int tokens = spec.tokens;
        bool scaled = false;
        for (;;) {
            Fixture f = make_fixture(spec.d_in, spec.d_out, spec.rank, k, tokens, spec.seed + k);
            assert_equal_outputs(f);
            drop_grads(f);

            std::vector<std::vector<double>> times(3);
            const AdapterKind kinds[] = {AdapterKind::lora, AdapterKind::moelora,
                                         AdapterKind::hlora};
            for (int rep = 0; rep < spec.warmup + spec.repetitions; ++rep) {
                // Interleave the kinds so drift hits all three alike.
                for (int ki = 0; ki < 3; ++ki) {
                    const double ns = time_pass(f, kinds[ki], spec.include_backward);
                    if (rep >= spec.warmup) times[ki].push_back(ns);
                }
            }

            const MedianIqr lora_t = summarize(times[0]);
            if (lora_t.median < 20000.0 && tokens < 4096) {
                tokens *= 2;  // too fast for stable timing, grow the workload
                scaled = true;
                continue;
            }

            for (int ki = 0; ki < 3; ++ki) {
                const MedianIqr t = summarize(times[ki]);
                BenchResult r;
                r.kind = kinds[ki];
                r.k = k;
                r.rank = spec.rank;
                r.tokens = tokens;
                r.median_ns = t.median;
                r.iqr_ns = t.iqr;
                r.ratio_vs_lora = t.median / lora_t.median;
                r.opcount = expected_opcount(kinds[ki], k);
                r.tokens_scaled = scaled;
                results.push_back(r);
            }
            break;
        }
    }
    return results;
}

void emit_report(const std::vector<BenchResult>& results, const std::string& csv_path,
                 std::ostream& table) {
    if (results.empty()) throw ConfigError("emit_report requires results");

    long run_id = 1;
    if (!csv_path.empty()) {
        const bool exists =
            std::filesystem::exists(csv_path) && std::filesystem::file_size(csv_path) > 0;
        if (exists) {
            std::ifstream in(csv_path);
            std::string line, last;
            std::getline(in, line);  // header
            while (std::getline(in, line)) {
                if (!line.empty()) last = line;
            }
            const auto pos = last.rfind(',');
            if (pos != std::string::npos) {
                try {
                    run_id = std::stol(last.substr(pos + 1)) + 1;
                } catch (...) {
                    throw IoError("cannot parse run_id from existing report '" + csv_path + "'");
                }
            }
        }
        std::ofstream out(csv_path, std::ios::app);
        if (!out) throw IoError("cannot open bench report '" + csv_path + "' for append");
        if (!exists) {
            out << "kind,k,r,tokens,median_ns,iqr_ns,ratio_vs_lora,opcount,run_id\n";
        }
        for (const BenchResult& r : results) {
            out << adapter_kind_name(r.kind) << ',' << r.k << ',' << r.rank << ',' << r.tokens
                << ',' << static_cast<long>(r.median_ns) << ',' << static_cast<long>(r.iqr_ns)
                << ',' << std::fixed << std::setprecision(4) << r.ratio_vs_lora
                << std::defaultfloat << ',' << r.opcount << ',' << run_id << "\n";
        }
    }

    table << "kind      k     tokens   median_us   iqr_us   vs_lora   opcount\n";
    for (const BenchResult& r : results) {
        std::ostringstream row;
        row << std::left << std::setw(9) << adapter_kind_name(r.kind) << std::right
            << std::setw(3) << r.k << std::setw(10) << r.tokens << std::setw(12) << std::fixed
            << std::setprecision(1) << r.median_ns / 1000.0 << std::setw(9)
            << r.iqr_ns / 1000.0 << std::setw(10) << std::setprecision(3) << r.ratio_vs_lora
            << std::setw(10) << r.opcount;
        table << row.str();
        if (r.tokens_scaled) table << "  (tokens auto-scaled)";
        table << "\n";
    }
}

}  // namespace hlora
