// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

// Serial reference kernels against their OpenMP counterparts.

#include "nbf/channel.hpp"
#include "nbf/rng.hpp"
#include "nbf/tensor.hpp"
#include "nbf/whitebox.hpp"

#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

namespace
{

using namespace nbf;

std::vector<Mcpp> random_mcpps(std::size_t n, int paths)
{
    Rng rng(42);
    std::vector<Mcpp> out(n);
    for (auto &m : out)
        for (int l = 0; l < paths; ++l)
        {
            ScpEntry s;
            s.u_tx = normalized(Vec3{rng.normal(), rng.normal(), rng.normal()});
            s.u_rx = normalized(Vec3{rng.normal(), rng.normal(), rng.normal()});
            s.tau = rng.uniform(1e-7, 2e-6);
            s.p = std::pow(10.0, rng.uniform(-12.0, -6.0));
            m.paths.push_back(s);
        }
    return out;
}

void BM_rsrp_table(benchmark::State &state, bool parallel)
{
    const auto mcpps = random_mcpps(static_cast<std::size_t>(state.range(0)), 10);
    const ArrayConfig cfg;
    const auto beams = dft_codebook(cfg, 1, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(parallel ? rsrp_mean_table(mcpps, cfg, beams)
                                          : rsrp_mean_table_serial(mcpps, cfg, beams));
    state.SetItemsProcessed(state.iterations() * state.range(0) * static_cast<std::int64_t>(beams.size()));
}

void BM_mc_stats(benchmark::State &state, bool parallel)
{
    const auto mcpp = random_mcpps(1, 10)[0];
    const ArrayConfig cfg;
    const BeamSpec beam{0.4, -0.3};
    const int n = static_cast<int>(state.range(0));
    for (auto _ : state)
        benchmark::DoNotOptimize(parallel ? mc_stats(mcpp, cfg, beam, n, 7) : mc_stats_serial(mcpp, cfg, beam, n, 7));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_gemm(benchmark::State &state, bool parallel)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    std::vector<double> a(n * n), b(n * n), c(n * n);
    for (auto &v : a)
        v = rng.normal();
    for (auto &v : b)
        v = rng.normal();
    for (auto _ : state)
    {
        if (parallel)
            kernels::gemm(n, n, n, a.data(), b.data(), c.data());
        else
            kernels::gemm_serial(n, n, n, a.data(), b.data(), c.data());
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

} // namespace

BENCHMARK_CAPTURE(BM_rsrp_table, serial, false)->Arg(256)->Arg(4096);
BENCHMARK_CAPTURE(BM_rsrp_table, omp, true)->Arg(256)->Arg(4096);
BENCHMARK_CAPTURE(BM_mc_stats, serial, false)->Arg(2000)->Arg(20000);
BENCHMARK_CAPTURE(BM_mc_stats, omp, true)->Arg(2000)->Arg(20000);
BENCHMARK_CAPTURE(BM_gemm, serial, false)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_gemm, omp, true)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
