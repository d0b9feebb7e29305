// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; exit status is nonzero if any selected one fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dupnet/bitpack.hpp"
#include "dupnet/cost.hpp"
#include "dupnet/dataset.hpp"
#include "dupnet/gradcheck.hpp"
#include "dupnet/netcfg.hpp"
#include "dupnet/presets.hpp"
#include "dupnet/train.hpp"
#include "dupnet/weights_io.hpp"
#include "helpers.hpp"

using namespace dupnet;

namespace {

const std::filesystem::path kPresets = DUPNET_TEST_PRESET_DIR;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// ---------------------------------------------------------------- costs

void base_network_costs(Outcome& o) {
  const CostReport r = analyze(preset_tinier_yolo());
  const double expect[] = {10.0, 3.3, 3.3, 3.3, 3.3, 13.3, 53.2, 11.8, 6.2};
  o.require(r.rows.size() == 9, "nine conv rows");
  for (std::size_t i = 0; i < 9 && i < r.rows.size(); ++i)
    o.require(near(r.rows[i].mflops, expect[i], 0.05), r.rows[i].layer + fmt(" %.3f MFLOPs", r.rows[i].mflops));
  o.require(near(r.total_weight_kb, 240.9, 0.5), fmt("total %.3f KB", r.total_weight_kb));
  o.require(r.rows.size() == 9 && r.rows[8].weight_kb == 16.875, "conv9 weight size");
  o.detail << fmt("total %.2f MFLOPs, %.2f KB", r.total_mflops, r.total_weight_kb);
}

void layerwise_quant_costs(Outcome& o) {
  const double expect[5][2] = {{1338.9, 2637.3}, {422.2, 366.6}, {215.9, 344.8}, {146.0, 344.0}, {49.3, 82.4}};
  for (int row = 1; row <= 5; ++row) {
    const CostReport c = analyze(quantization_row(row));
    o.require(near(c.total_mflops, expect[row - 1][0], 0.2) && near(c.total_weight_kb, expect[row - 1][1], 0.2),
              "row " + std::to_string(row) + fmt(" (%.2f, %.2f)", c.total_mflops, c.total_weight_kb));
    o.detail << fmt("(%.1f, %.1f) ", c.total_mflops, c.total_weight_kb);
  }
}

void dup_costs(Outcome& o) {
  const double expect[3][2] = {{62.6, 83.4}, {92.6, 83.5}, {95.7, 91.9}};
  for (int row = 2; row <= 4; ++row) {
    const CostReport c = analyze(feature_dup_variant(row));
    o.require(near(c.total_mflops, expect[row - 2][0], 0.2) && near(c.total_weight_kb, expect[row - 2][1], 0.2),
              "feature-dup row " + std::to_string(row) + fmt(" (%.2f, %.2f)", c.total_mflops, c.total_weight_kb));
  }
  const CostReport d = analyze(preset_dupnet());
  o.require(near(d.total_mflops, 62.6, 0.2) && near(d.total_weight_kb, 36.9, 0.2), "dupnet");
  const CostReport dl = analyze(preset_dupnet_l());
  o.require(near(dl.total_mflops, 95.7, 0.2) && near(dl.total_weight_kb, 45.4, 0.2), "dupnet-l");
  const double base = analyze(weight_dup_variant(1)).total_weight_kb;
  const double dup4 = analyze(weight_dup_variant(4)).total_weight_kb;
  o.require(near(base, 82.4, 0.2), fmt("1x baseline %.2f KB", base));
  o.require(near(dup4, 35.9, 0.2), fmt("4x weights %.2f KB", dup4));
  o.detail << fmt("dupnet (%.1f, %.1f) ", d.total_mflops, d.total_weight_kb)
           << fmt("dupnet-l (%.1f, %.1f) ", dl.total_mflops, dl.total_weight_kb)
           << fmt("weight-dup 1x %.1f KB, 4x %.1f KB", base, dup4);
}

// ---------------------------------------------------------------- kernels

void packed_kernels(Outcome& o) {
  Rng rng(2024);
  const int bit_choices[] = {1, 2, 8};
  std::size_t cases = 0, mismatches = 0;
  for (int i = 0; i < 1200; ++i) {
    const int bits = bit_choices[i % 3];
    const std::size_t k = (i / 3) % 2 == 0 ? 1 : 3;
    const std::size_t stride = (i / 6) % 2 == 0 ? 1 : 2;
    const auto c = static_cast<std::size_t>(rng.integer(1, 64));
    const auto co = static_cast<std::size_t>(rng.integer(1, 8));
    const auto h = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(k), 9));
    const auto w = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(k), 9));
    const auto n = static_cast<std::size_t>(rng.integer(1, 2));
    const ConvGeometry g{stride, static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(k / 2)))};
    const IntTensor x = testutil::random_codes(Shape{n, c, h, w}, rng, 0, (1 << bits) - 1);
    const IntTensor wt = testutil::random_signs(Shape{co, c, k, k}, rng);
    const IntTensor want = conv2d_int_ref(x, wt, g);
    const IntTensor got = packed_conv2d(pack_act(x, bits), pack_weights(wt), g);
    ++cases;
    if (!(got == want)) ++mismatches;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " mismatching cases");
  o.detail << cases << " cases, " << mismatches << " mismatches";
}

void rewrite_identities(Outcome& o) {
  Rng rng(77);
  const std::size_t ds[] = {2, 4, 8};
  std::size_t wcases = 0, xcases = 0, bad = 0;
  for (int i = 0; i < 1200; ++i) {
    const std::size_t d = ds[i % 3];
    const std::size_t k = i % 2 == 0 ? 1 : 3;
    const auto cp = static_cast<std::size_t>(rng.integer(1, 8));
    const auto co = static_cast<std::size_t>(rng.integer(1, 6));
    const auto h = static_cast<std::size_t>(rng.integer(3, 7));
    const ConvGeometry g{static_cast<std::size_t>(rng.integer(1, 2)), k / 2};

    const IntTensor xw = testutil::random_codes(Shape{2, cp * d, h, h}, rng, 0, 3);
    const IntTensor wt = testutil::random_signs(Shape{co, cp, k, k}, rng);
    if (!(dupweight_conv_forward(xw, wt, d, DupWeightMode::tile, g) ==
          dupweight_conv_forward(xw, wt, d, DupWeightMode::fast, g)))
      ++bad;
    ++wcases;

    const IntTensor xf = testutil::random_codes(Shape{2, cp, h, h}, rng, 0, 3);
    const IntTensor wf = testutil::random_signs(Shape{co, cp * d, k, k}, rng);
    if (!(dupfeature_conv_forward(xf, wf, d, DupFeatureMode::dup, g) ==
          dupfeature_conv_forward(xf, wf, d, DupFeatureMode::fast, g)))
      ++bad;
    ++xcases;
  }
  o.require(bad == 0, std::to_string(bad) + " unequal cases");

  std::set<std::int32_t> values;
  const IntTensor w = testutil::random_signs(Shape{64, 128, 3, 3}, rng);
  const IntTensor sums = weight_group_sum(w, 4);
  for (std::int32_t v : sums.data()) values.insert(v);
  o.require(values == std::set<std::int32_t>{-4, -2, 0, 2, 4}, "summed weight values");
  o.detail << wcases << " dup-weight and " << xcases << " dup-feature cases, " << bad
           << " unequal; summed weights take " << values.size() << " values";
}

// ---------------------------------------------------------------- gradients

Tensor rnd(const Shape& s, std::uint64_t seed) {
  Rng rng(seed);
  return testutil::random_real(s, rng);
}

void gradients(Outcome& o) {
  constexpr double kTol = 1e-4;
  double worst = 0.0;
  std::size_t checked = 0;
  const auto op = [&](const std::string& name, const GraphFn& f, const std::vector<Tensor>& in) {
    const auto r = finite_diff_gradcheck(f, in);
    std::size_t c = 0;
    for (const auto& x : r) c += x.checked;
    const double e = max_rel_error(r);
    o.require(c > 0 && e < kTol, name + fmt(" error %.3e", e));
    worst = std::max(worst, e);
    checked += c;
  };
  const Shape xs{2, 3, 5, 5};
  op("conv", [](Tape& t, std::span<const VarId> v) {
       return ops::project(t, ops::conv2d(t, v[0], v[1], {2, 1}), rnd({2, 4, 3, 3}, 1));
     }, {rnd(xs, 2), rnd({4, 3, 3, 3}, 3)});
  op("bias", [](Tape& t, std::span<const VarId> v) {
       return ops::project(t, ops::add_bias(t, v[0], v[1]), rnd({2, 3, 5, 5}, 4));
     }, {rnd(xs, 5), rnd({1, 3, 1, 1}, 6)});
  op("channel tile", [](Tape& t, std::span<const VarId> v) {
       return ops::project(t, ops::channel_tile(t, v[0], 4, GradReduce::sum), rnd({2, 12, 5, 5}, 7));
     }, {rnd(xs, 8)});
  op("channel group sum", [](Tape& t, std::span<const VarId> v) {
       return ops::project(t, ops::channel_group_sum(t, v[0], 3), rnd({2, 1, 5, 5}, 9));
     }, {rnd(xs, 10)});
  op("batchnorm (batch stats)", [](Tape& t, std::span<const VarId> v) {
       return ops::project(t, ops::batchnorm_train(t, v[0], v[1], v[2], 1e-5), rnd({2, 3, 5, 5}, 11));
     }, {rnd(xs, 12), rnd({1, 3, 1, 1}, 13), rnd({1, 3, 1, 1}, 14)});
  const std::vector<double> mean = {0.2, -0.1, 0.4}, var = {0.8, 1.3, 2.1};
  op("batchnorm (running stats)", [&](Tape& t, std::span<const VarId> v) {
       return ops::project(t, ops::batchnorm_infer(t, v[0], v[1], v[2], mean, var, 1e-5), rnd({2, 3, 5, 5}, 15));
     }, {rnd(xs, 16), rnd({1, 3, 1, 1}, 17), rnd({1, 3, 1, 1}, 18)});
  op("leaky", [](Tape& t, std::span<const VarId> v) {
       return ops::project(t, ops::leaky(t, v[0], 0.1), rnd({2, 3, 5, 5}, 19));
     }, {rnd(xs, 20)});
  op("maxpool", [](Tape& t, std::span<const VarId> v) {
       return ops::project(t, ops::maxpool(t, v[0], 2, 2), rnd({2, 3, 2, 2}, 21));
     }, {rnd(xs, 22)});
  const Anchor anchors[] = {{1.0, 1.3}, {2.4, 3.1}};
  const std::vector<std::vector<GroundTruth>> truths = {{GroundTruth{0, {0.3, 0.6, 0.2, 0.3}}},
                                                        {GroundTruth{0, {0.7, 0.25, 0.45, 0.4}}}};
  op("detection loss", [&](Tape& t, std::span<const VarId> v) {
       return ops::detection_loss(t, v[0], anchors, 1, truths, DetectionLossConfig{}, 0.5);
     }, {0.5 * rnd({2, 12, 3, 3}, 23)});

  // Whole layers, including both modes of every duplicated layer.
  for (const char* name : {"desk-a2w1-dupw.cfg", "desk-a2w1-dupx.cfg", "dupnet.cfg"}) {
    for (const auto& row : gradcheck_network(load_netcfg(kPresets / name))) {
      o.require(row.result.checked > 0 && row.result.max_rel_error < kTol,
                std::string(name) + " " + row.layer + fmt(" error %.3e", row.result.max_rel_error));
      worst = std::max(worst, row.result.max_rel_error);
      checked += row.result.checked;
    }
  }

  // Average reduction divides the exact adjoint by d, bit for bit.
  bool exact = true;
  for (std::size_t d : {2u, 4u, 8u}) {
    const Tensor x = rnd({2, 2 * d, 4, 4}, 30 + d), wt = rnd({3, 2, 3, 3}, 40 + d), r = rnd({2, 3, 4, 4}, 50 + d);
    Tensor g[2];
    for (int m = 0; m < 2; ++m) {
      Tape t;
      const VarId xv = t.leaf(x), wv = t.leaf(wt);
      const VarId y =
          ops::conv2d(t, xv, ops::channel_tile(t, wv, d, m == 0 ? GradReduce::sum : GradReduce::average), {1, 1});
      t.backward(ops::project(t, y, r));
      g[m] = t.grad(wv);
    }
    for (std::size_t i = 0; i < g[0].size(); ++i) exact = exact && g[1][i] == g[0][i] / static_cast<double>(d);
    const Tensor dx = rnd({2, 2 * d, 4, 4}, 60 + d);
    for (std::size_t i = 0; i < dx.size() / d; ++i) {
      exact = exact && dupfeature_grad_input(dx, d, GradReduce::average)[i] ==
                           dupfeature_grad_input(dx, d, GradReduce::sum)[i] / static_cast<double>(d);
    }
  }
  o.require(exact, "average-mode gradient is not sum / d");
  o.detail << checked << fmt(" coordinates, max rel error %.2e; average == sum / d: ", worst)
           << (exact ? "exact" : "no");
}

// ---------------------------------------------------------------- serialization

ExportedModel exact_export(const NetworkSpec& spec, std::uint64_t seed) {
  Model m = init_model(spec, seed);
  Rng rng(seed + 7);
  for (auto& c : m.convs) {
    for (double& v : c.weight.data()) v = static_cast<float>(v);
    for (double& v : c.gamma.data()) v = static_cast<float>(rng.uniform(0.5, 1.5));
    for (double& v : c.beta.data()) v = static_cast<float>(rng.normal(0.0, 0.3));
    for (double& v : c.bias.data()) v = static_cast<float>(rng.normal(0.0, 0.3));
    for (double& v : c.running_mean) v = static_cast<float>(rng.normal(0.0, 0.3));
    for (double& v : c.running_var) v = static_cast<float>(rng.uniform(0.5, 2.0));
    if (c.alpha_trainable) c.alpha = static_cast<float>(rng.uniform(1.0, 4.0));
  }
  return export_model(m);
}

void serialization(Outcome& o) {
  std::size_t cfgs = 0;
  for (const auto& e : std::filesystem::directory_iterator(kPresets)) {
    if (e.path().extension() != ".cfg") continue;
    const NetworkSpec spec = load_netcfg(e.path());
    const std::string text = serialize_netcfg(spec);
    const NetworkSpec back = parse_netcfg(text);
    o.require(back == spec && serialize_netcfg(back) == text, "cfg round trip of " + e.path().filename().string());
    const ExportedModel m = exact_export(spec, 11);
    const auto bytes = save_weights(m);
    const ExportedModel loaded = load_weights(bytes, back);
    o.require(loaded == m && save_weights(loaded) == bytes, "weights round trip of " + e.path().filename().string());
    ++cfgs;
  }
  o.require(cfgs >= 7, "fewer presets than expected");

  // Payload of each weight-duplicated layer against the same layer without duplication.
  std::size_t layers = 0;
  for (const NetworkSpec& dup : {preset_dupnet(), preset_dupnet_l(), load_netcfg(kPresets / "desk-a2w1-dupw.cfg")}) {
    const NetworkSpec spec = resolved(dup);
    NetworkSpec plain = spec;
    for (auto& l : plain.layers) l.d_w = 1;
    resolve(plain);
    const ContainerSize a = container_size(exact_export(spec, 3));
    const ContainerSize b = container_size(exact_export(plain, 3));
    std::uint64_t dup_bytes = 0, plain_bytes = 0;
    for (const LayerSpec& l : spec.layers) {
      if (l.kind != LayerKind::conv || l.d_w == 1) continue;
      const std::size_t full = l.c_out * l.c_in * l.k * l.k;
      const std::size_t bytes_dup = weight_payload_bytes(full / l.d_w), bytes_plain = weight_payload_bytes(full);
      o.require(bytes_plain == l.d_w * bytes_dup, l.name + " payload is not 1/d_w");
      dup_bytes += bytes_dup;
      plain_bytes += bytes_plain;
      ++layers;
    }
    o.require(b.weight_bytes - a.weight_bytes == plain_bytes - dup_bytes, "container payload difference");
  }
  o.detail << cfgs << " presets round-tripped; " << layers << " weight-dup layers at exactly 1/d_w";
}

// ---------------------------------------------------------------- training trend

struct TrendSetup {
  std::size_t iters = 2000;
  double lr = 0.0025;
  std::vector<double> milestones = {0.7, 0.9};
  std::size_t seeds = 3;
  std::size_t bn_recalib = 125;  // one pass over the 2000 training images
};

double train_and_eval(const NetworkSpec& spec, const Dataset& train_set, const Dataset& eval_set,
                      const TrendSetup& s, std::uint64_t seed) {
  TrainConfig c;
  c.total_iters = s.iters;
  c.base_lr = s.lr;
  c.lr_milestones = s.milestones;
  c.seed = seed;
  c.wmode = DupWeightMode::fast;
  c.xmode = DupFeatureMode::fast;
  c.bn_recalib_batches = s.bn_recalib;
  const Model m = train(init_model(spec, seed), train_set, c);
  return evaluate(export_model(m), eval_set).rate;
}

void training_trend(Outcome& o) {
  const TrendSetup s;
  SynthSpec ts;  // 2000 images, 64x64
  const Dataset train_set = generate_dataset(ts);
  SynthSpec es;
  es.num_images = 500;
  es.seed = 2;
  const Dataset eval_set = generate_dataset(es);

  const NetworkSpec base = load_netcfg(kPresets / "desk-a2w1.cfg");
  const NetworkSpec dupx = load_netcfg(kPresets / "desk-a2w1-dupx.cfg");
  const NetworkSpec dupw = load_netcfg(kPresets / "desk-a2w1-dupw.cfg");
  double r_base = 0.0, r_dupx = 0.0, r_dupw = 0.0;
  for (std::uint64_t seed = 1; seed <= s.seeds; ++seed) {
    const double b = train_and_eval(base, train_set, eval_set, s, seed);
    const double x = train_and_eval(dupx, train_set, eval_set, s, seed);
    const double w = train_and_eval(dupw, train_set, eval_set, s, seed);
    std::printf("  seed %llu: baseline %.4f  dup-feature %.4f  dup-weight %.4f\n",
                static_cast<unsigned long long>(seed), b, x, w);
    std::fflush(stdout);
    r_base += b / static_cast<double>(s.seeds);
    r_dupx += x / static_cast<double>(s.seeds);
    r_dupw += w / static_cast<double>(s.seeds);
  }
  o.require(r_dupx >= r_base, "feature duplication below baseline");
  o.require(std::abs(r_dupw - r_base) <= 0.05, "weight duplication more than 0.05 from baseline");
  o.detail << fmt("mean rate baseline %.4f, dup-feature %.4f, dup-weight %.4f", r_base, r_dupx, r_dupw);
}

// ---------------------------------------------------------------- determinism

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + DUPNET_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

void determinism(Outcome& o) {
  testutil::TempDir dir("acceptance-determinism");
  const std::string data = (dir / "data").string();
  o.require(run("synthdata \"" + data + "\" --num 64 --seed 9") == 0, "synthdata failed");
  std::vector<std::vector<std::uint8_t>> files;
  for (const char* cfg : {"desk-a2w1-dupx.cfg", "desk-a2w1-dupw.cfg"}) {
    for (int k = 0; k < 2; ++k) {
      const std::string out = (dir / ("w" + std::to_string(files.size()) + ".dupw")).string();
      const std::string args = "train \"" + (kPresets / cfg).string() + "\" \"" + data +
                               "\" --iters 25 --batch 8 --seed 4 --out \"" + out + "\"";
      o.require(run(args) == 0, std::string("train failed for ") + cfg);
      files.push_back(std::filesystem::exists(out) ? read_file_bytes(out) : std::vector<std::uint8_t>{});
    }
  }
  o.require(!files[0].empty() && files[0] == files[1], "dup-feature runs differ");
  o.require(!files[2].empty() && files[2] == files[3], "dup-weight runs differ");
  o.detail << "two CLI trainings per net, " << files[0].size() << " and " << files[2].size()
           << " byte files identical";
}

struct Criterion {
  int id;
  const char* title;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  const std::vector<Criterion> all = {
      {1, "cost goldens: base network per layer", base_network_costs},
      {2, "cost goldens: layer-wise quantization sweep", layerwise_quant_costs},
      {3, "cost goldens: duplication variants and compact presets", dup_costs},
      {4, "packed kernels match the integer reference", packed_kernels},
      {5, "duplication rewrite identities", rewrite_identities},
      {6, "gradient checks", gradients},
      {7, "serialization round trips", serialization},
      {8, "desk-scale training trend", training_trend},
      {9, "CLI training determinism", determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %d %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.title, secs, o.detail.str().c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
