// Serial reference vs OpenMP batch kernels.

#include <benchmark/benchmark.h>

#include <random>

#include "mos/kernels.hpp"
#include "mos/synth.hpp"

namespace {

struct Fixture {
    mos::ModelParams params;
    mos::Dataset data;
    std::vector<std::size_t> rows;

    Fixture(std::size_t experts, std::size_t batch) {
        mos::GeneratorConfig g;
        g.seed = 1;
        data = mos::Generator(g).sample({"train", batch, {}, {}});
        mos::MosConfig c;
        c.experts = experts;
        c.input_dim = g.feature_dim();
        params = mos::init_params(c);
        rows = mos::all_rows(data);
    }
};

mos::Execution execution(const benchmark::State &state) {
    return state.range(2) == 0 ? mos::Execution::Serial : mos::Execution::Parallel;
}

void BM_Forward(benchmark::State &state) {
    const Fixture f(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(mos::forward_batch(f.params, f.data, f.rows, false, execution(state)));
    state.SetItemsProcessed(state.iterations() * state.range(1));
}

void BM_JointLossWithGradient(benchmark::State &state) {
    const Fixture f(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    const mos::JointLossOptions opts{1.0, 0.5, 8};
    mos::ModelParams grads;
    for (auto _ : state) benchmark::DoNotOptimize(mos::joint_loss(f.params, f.data, f.rows, opts, &grads, execution(state)));
    state.SetItemsProcessed(state.iterations() * state.range(1));
}

// Args: experts, batch size, 0 = serial / 1 = parallel.
void arguments(benchmark::internal::Benchmark *b) {
    for (long k : {5, 15})
        for (long m : {32, 512})
            for (long e : {0, 1}) b->Args({k, m, e});
}

} // namespace

BENCHMARK(BM_Forward)->Apply(arguments);
BENCHMARK(BM_JointLossWithGradient)->Apply(arguments);

BENCHMARK_MAIN();
