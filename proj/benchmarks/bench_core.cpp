// Copyright 2026 The fairfed authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include "fairfed/data.hpp"
#include "fairfed/expansion.hpp"
#include "fairfed/model.hpp"
#include "fairfed/privacy.hpp"

namespace {

using namespace fairfed;

struct BenchGraph {
  ModelConfig config;
  ModelState state;
  LocalSubgraph subgraph;
  IdIndex users;
  IdIndex items;
  ClientGraph graph;
};

BenchGraph make_graph(std::size_t m, std::size_t r) {
  BenchGraph bg;
  bg.config.dropout = 0.0;
  Rng rng(1);
  bg.subgraph.user = 1;
  std::vector<ItemId> ids;
  for (std::size_t j = 0; j < m; ++j) {
    ids.push_back(static_cast<ItemId>(j + 1));
    bg.subgraph.items.push_back(ids.back());
    bg.subgraph.ratings.push_back(1.0 + static_cast<double>(rng.below(5)));
  }
  bg.subgraph.neighbor_embeddings.resize(bg.config.hidden_dim, static_cast<Eigen::Index>(r));
  for (Eigen::Index c = 0; c < bg.subgraph.neighbor_embeddings.cols(); ++c) {
    for (int row = 0; row < bg.config.hidden_dim; ++row) {
      bg.subgraph.neighbor_embeddings(row, c) = rng.uniform(-0.3, 0.3);
    }
  }
  bg.users = IdIndex({1});
  bg.items = IdIndex(ids);
  bg.state = ModelState::init(bg.config, 1, m, rng);
  bg.graph = ClientGraph::build(bg.subgraph, bg.users, bg.items);
  return bg;
}

void BM_GatForward(benchmark::State& state) {
  BenchGraph bg = make_graph(static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(bg.graph, bg.state, bg.config, nullptr));
  }
}
BENCHMARK(BM_GatForward)->Arg(32)->Arg(128)->Arg(512);

void BM_GatBackward(benchmark::State& state) {
  BenchGraph bg = make_graph(static_cast<std::size_t>(state.range(0)), 32);
  const ForwardTrace trace = forward(bg.graph, bg.state, bg.config, nullptr);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        backward(trace, bg.subgraph.ratings, bg.graph, bg.state, bg.config));
  }
}
BENCHMARK(BM_GatBackward)->Arg(32)->Arg(128)->Arg(512);

void BM_NcoreFilter(benchmark::State& state) {
  Rng rng(7);
  std::vector<RatingRecord> records;
  for (UserId u = 1; u <= 500; ++u) {
    for (ItemId i = 1; i <= 300; ++i) {
      if (rng.uniform() < 0.05) {
        records.push_back({u, i, 3.0, static_cast<std::int64_t>(rng.below(1000000))});
      }
    }
  }
  const RatingTable table = RatingTable::from_records(std::move(records));
  for (auto _ : state) {
    benchmark::DoNotOptimize(ncore_filter(table, 10));
  }
}
BENCHMARK(BM_NcoreFilter);

void BM_ClipAndNoise(benchmark::State& state) {
  Rng fill(3);
  for (auto _ : state) {
    state.PauseTiming();
    GradientSet g;
    g.user_grad.resize(state.range(0));
    for (Eigen::Index i = 0; i < g.user_grad.size(); ++i) g.user_grad(i) = fill.uniform(-1, 1);
    Rng rng(4);
    state.ResumeTiming();
    clip_and_noise(g, LdpConfig{0.4, 0.15, true}, rng);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_ClipAndNoise)->Arg(1 << 12)->Arg(1 << 16);

void BM_ExpansionSlice(benchmark::State& state) {
  const ItemCipher cipher = ItemCipher::from_seed(5);
  ExpansionServer server;
  Rng rng(6);
  std::vector<ExpansionUpload> uploads;
  for (std::uint64_t tag = 0; tag < 500; ++tag) {
    ExpansionUpload up;
    up.client_tag = tag;
    up.user_embedding = Eigen::VectorXd::Zero(64);
    for (int k = 0; k < 40; ++k) {
      up.new_digests.push_back(cipher.encrypt(static_cast<ItemId>(rng.below(300))));
    }
    uploads.push_back(std::move(up));
  }
  server.update(uploads);
  for (auto _ : state) {
    Rng slice_rng(8);
    benchmark::DoNotOptimize(server.build_slice(7, 32, slice_rng));
  }
}
BENCHMARK(BM_ExpansionSlice);

}  // namespace

BENCHMARK_MAIN();
