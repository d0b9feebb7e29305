#include <benchmark/benchmark.h>

#include "dupnet/bitpack.hpp"
#include "dupnet/conv.hpp"
#include "dupnet/rng.hpp"

using namespace dupnet;

namespace {

IntTensor codes(const Shape& s, int bits, std::uint64_t seed) {
  Rng rng(seed);
  IntTensor t(s);
  for (auto& v : t.data()) v = static_cast<std::int32_t>(rng.integer(0, (1 << bits) - 1));
  return t;
}

IntTensor signs(const Shape& s, std::uint64_t seed) {
  Rng rng(seed);
  IntTensor t(s);
  for (auto& v : t.data()) v = rng.bernoulli(0.5) ? 1 : -1;
  return t;
}

// args: channels, a_bits
void BM_ConvIntRef(benchmark::State& st) {
  const auto c = static_cast<std::size_t>(st.range(0));
  const int bits = static_cast<int>(st.range(1));
  const IntTensor x = codes(Shape{1, c, 16, 16}, bits, 1);
  const IntTensor w = signs(Shape{c, c, 3, 3}, 2);
  for (auto _ : st) benchmark::DoNotOptimize(conv2d_int_ref(x, w, {1, 1}));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(c * c * 9 * 256));
}

void BM_ConvPacked(benchmark::State& st) {
  const auto c = static_cast<std::size_t>(st.range(0));
  const int bits = static_cast<int>(st.range(1));
  const IntTensor x = codes(Shape{1, c, 16, 16}, bits, 1);
  const PackedWeights pw = pack_weights(signs(Shape{c, c, 3, 3}, 2));
  for (auto _ : st) benchmark::DoNotOptimize(packed_conv2d(pack_act(x, bits), pw, {1, 1}));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(c * c * 9 * 256));
}

// args: d_w; 128 input channels
void BM_DupWeight(benchmark::State& st) {
  const auto d = static_cast<std::size_t>(st.range(0));
  const auto mode = st.range(1) == 0 ? DupWeightMode::tile : DupWeightMode::fast;
  Rng rng(3);
  Tensor x(Shape{1, 128, 16, 16}), wt(Shape{64, 128 / d, 3, 3});
  for (double& v : x.data()) v = rng.normal(0.0, 1.0);
  for (double& v : wt.data()) v = rng.normal(0.0, 1.0);
  for (auto _ : st) benchmark::DoNotOptimize(dupweight_conv_forward(x, wt, d, mode, {1, 1}));
}

void BM_DupFeature(benchmark::State& st) {
  const auto d = static_cast<std::size_t>(st.range(0));
  const auto mode = st.range(1) == 0 ? DupFeatureMode::dup : DupFeatureMode::fast;
  Rng rng(4);
  Tensor x(Shape{1, 32, 16, 16}), w(Shape{64, 32 * d, 3, 3});
  for (double& v : x.data()) v = rng.normal(0.0, 1.0);
  for (double& v : w.data()) v = rng.normal(0.0, 1.0);
  for (auto _ : st) benchmark::DoNotOptimize(dupfeature_conv_forward(x, w, d, mode, {1, 1}));
}

}  // namespace

BENCHMARK(BM_ConvIntRef)->ArgsProduct({{64, 256}, {1, 2, 8}});
BENCHMARK(BM_ConvPacked)->ArgsProduct({{64, 256}, {1, 2, 8}});
BENCHMARK(BM_DupWeight)->ArgsProduct({{2, 4, 8}, {0, 1}});
BENCHMARK(BM_DupFeature)->ArgsProduct({{2, 4, 8}, {0, 1}});
BENCHMARK_MAIN();
