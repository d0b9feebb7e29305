#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "dupnet/cost.hpp"
#include "dupnet/dataset.hpp"
#include "dupnet/gradcheck.hpp"
#include "dupnet/image_io.hpp"
#include "dupnet/model.hpp"
#include "dupnet/netcfg.hpp"
#include "dupnet/presets.hpp"
#include "dupnet/train.hpp"
#include "dupnet/weights_io.hpp"

using namespace dupnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInvariant = 2;

const std::map<std::string, CostMode> kCostModes = {{"dup_full", CostMode::dup_full},
                                                    {"dup_optimized", CostMode::dup_optimized}};
const std::map<std::string, GradReduce> kReduceModes = {{"average", GradReduce::average},
                                                        {"sum", GradReduce::sum}};

struct AnalyzeArgs {
  std::string cfg;
  CostMode mode = CostMode::dup_full;
  bool csv = false;
};

int run_analyze(const AnalyzeArgs& a) {
  const CostReport r = analyze(load_netcfg(a.cfg), a.mode);
  std::cout << (a.csv ? format_csv(r) : format_table(r));
  return kExitOk;
}

struct TrainArgs {
  std::string cfg;
  std::string data;
  std::string out = "weights.dupw";
  std::string log;
  TrainConfig tc;
  std::optional<std::size_t> bn_recalib;
  std::size_t log_every = 1;
  bool fast = false;
};

void apply_fast(TrainConfig& tc, bool fast) {
  tc.wmode = fast ? DupWeightMode::fast : DupWeightMode::tile;
  tc.xmode = fast ? DupFeatureMode::fast : DupFeatureMode::dup;
}

// Defaults to one pass over the training set.
void apply_recalib(TrainConfig& tc, std::optional<std::size_t> batches, std::size_t images) {
  tc.bn_recalib_batches = batches ? *batches : (images + tc.batch - 1) / std::max<std::size_t>(1, tc.batch);
}

int run_train(TrainArgs a) {
  const NetworkSpec spec = load_netcfg(a.cfg);
  const Dataset data = load_dataset(a.data);
  apply_fast(a.tc, a.fast);
  apply_recalib(a.tc, a.bn_recalib, data.size());
  std::ofstream file;
  if (!a.log.empty()) {
    file.open(a.log);
    if (!file) throw Error("cannot open " + a.log);
  }
  std::ostream& out = a.log.empty() ? std::cout : file;
  out << "iter,lr,loss\n";
  const std::size_t every = std::max<std::size_t>(1, a.log_every);
  const auto log = [&](std::size_t iter, double lr, double loss) {
    if (iter % every != 0 && iter + 1 != a.tc.total_iters) return;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6f\n", iter, lr, loss);
    out << buf << std::flush;
  };
  const Model m = train(init_model(spec, a.tc.seed), data, a.tc, log);
  const ExportedModel em = export_model(m);
  write_weights_file(a.out, em);
  const ContainerSize cs = container_size(em);
  std::cerr << "wrote " << a.out << ": " << cs.weight_bytes << " bytes of weights, " << cs.overhead_bytes
            << " bytes of overhead\n";
  return kExitOk;
}

struct SizeArgs {
  std::string cfg, weights;
  bool csv = false;
};

int run_size(const SizeArgs& a) {
  const ContainerSize cs = container_size(read_weights_file(a.weights, load_netcfg(a.cfg)));
  char buf[160];
  if (a.csv)
    std::snprintf(buf, sizeof buf, "weight_bytes,overhead_bytes,total_bytes\n%llu,%llu,%llu\n",
                  static_cast<unsigned long long>(cs.weight_bytes), static_cast<unsigned long long>(cs.overhead_bytes),
                  static_cast<unsigned long long>(cs.total_bytes()));
  else
    std::snprintf(buf, sizeof buf, "weights   %10llu bytes (%.2f KB)\noverhead  %10llu bytes\ntotal     %10llu bytes\n",
                  static_cast<unsigned long long>(cs.weight_bytes), static_cast<double>(cs.weight_bytes) / 1024.0,
                  static_cast<unsigned long long>(cs.overhead_bytes), static_cast<unsigned long long>(cs.total_bytes()));
  std::cout << buf;
  return kExitOk;
}

struct DetectArgs {
  std::string cfg, weights, image;
  double thresh = 0.5;
  bool packed = false;
  bool ref = false;
  bool csv = false;
};

int run_detect(const DetectArgs& a) {
  const NetworkSpec spec = load_netcfg(a.cfg);
  const ExportedModel m = read_weights_file(a.weights, spec);
  const IntTensor codes = load_image(a.image);
  const Shape s = codes.shape();
  if (s.c != spec.in_c || s.h != spec.in_h || s.w != spec.in_w)
    throw ShapeError(a.image + ": image is " + std::to_string(s.w) + "x" + std::to_string(s.h) + "x" +
                     std::to_string(s.c) + ", network expects " + std::to_string(spec.in_w) + "x" +
                     std::to_string(spec.in_h) + "x" + std::to_string(spec.in_c));
  const Tensor head = infer(m, image_input(codes), a.packed ? KernelPath::packed : KernelPath::ref);
  if (a.csv) std::cout << "score,cx,cy,w,h\n";
  const char* fmt = a.csv ? "%.6f,%.6f,%.6f,%.6f,%.6f\n" : "%.6f %.6f %.6f %.6f %.6f\n";
  for (const DetectionBox& b : detect_boxes(m, head, 0, a.thresh)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, fmt, b.score, b.box.cx, b.box.cy, b.box.w, b.box.h);
    std::cout << buf;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string cfg, weights, data;
  std::optional<std::size_t> fp_budget;
  bool packed = false;
  bool csv = false;
};

int run_eval(const EvalArgs& a) {
  const NetworkSpec spec = load_netcfg(a.cfg);
  const ExportedModel m = read_weights_file(a.weights, spec);
  const Dataset d = load_dataset(a.data);
  const DetectionRate r = evaluate(m, d, a.fp_budget, a.packed ? KernelPath::packed : KernelPath::ref);
  char buf[160];
  if (a.csv) {
    std::snprintf(buf, sizeof buf, "rate,true_positives,false_positives,ground_truths\n%.6f,%zu,%zu,%zu\n", r.rate,
                  r.true_positives, r.false_positives, r.ground_truths);
  } else {
    std::snprintf(buf, sizeof buf, "detection rate %.4f (%zu / %zu faces, %zu false positives)\n", r.rate,
                  r.true_positives, r.ground_truths, r.false_positives);
  }
  std::cout << buf;
  return kExitOk;
}

struct GradcheckArgs {
  std::string cfg;
  GradcheckOptions opt;
  std::size_t spatial = 4;
  bool csv = false;
};

constexpr double kGradTolerance = 1e-4;

int run_gradcheck(const GradcheckArgs& a) {
  const auto rows = gradcheck_network(load_netcfg(a.cfg), a.opt, a.spatial);
  bool ok = true;
  if (a.csv) std::cout << "layer,params,checked,skipped,max_rel_error\n";
  for (const auto& r : rows) {
    const bool pass = r.result.max_rel_error < kGradTolerance && r.result.checked > 0;
    ok = ok && pass;
    char buf[256];
    if (a.csv)
      std::snprintf(buf, sizeof buf, "%s,\"%s\",%zu,%zu,%.3e\n", r.layer.c_str(), r.params.c_str(), r.result.checked,
                    r.result.skipped, r.result.max_rel_error);
    else
      std::snprintf(buf, sizeof buf, "%-18s %-22s checked %4zu  skipped %3zu  max rel err %.3e  %s\n",
                    r.layer.c_str(), r.params.c_str(), r.result.checked, r.result.skipped, r.result.max_rel_error,
                    pass ? "ok" : "FAIL");
    std::cout << buf;
  }
  return ok ? kExitOk : kExitInvariant;
}

struct SensitivityArgs {
  std::string cfg;
  std::string data;
  TrainConfig tc;
  std::optional<std::size_t> bn_recalib;
  double holdout = 0.2;
  bool csv = false;
};

int run_sensitivity(SensitivityArgs a) {
  const NetworkSpec base = load_netcfg(a.cfg);
  const std::size_t convs = base.conv_indices().size();
  Dataset train_set, eval_set;
  const bool training = a.tc.total_iters > 0;
  if (training) {
    if (a.data.empty()) throw Error("sensitivity: a data directory is required when --iters > 0");
    if (!(a.holdout > 0.0 && a.holdout < 1.0)) throw Error("sensitivity: --holdout must be in (0, 1)");
    Dataset all = load_dataset(a.data);
    const auto n_eval = static_cast<std::size_t>(static_cast<double>(all.size()) * a.holdout);
    if (n_eval == 0 || n_eval == all.size()) throw Error("sensitivity: dataset too small for the holdout split");
    const auto split = all.samples.begin() + static_cast<std::ptrdiff_t>(all.size() - n_eval);
    train_set.samples.assign(all.samples.begin(), split);
    eval_set.samples.assign(split, all.samples.end());
    apply_recalib(a.tc, a.bn_recalib, train_set.size());
  }
  if (a.csv)
    std::cout << (training ? "row,quantized,mflops,weight_kb,rate\n" : "row,quantized,mflops,weight_kb\n");
  for (int row = 1; row <= 5; ++row) {
    const NetworkSpec spec = sensitivity_variant(base, row);
    const CostReport cost = analyze(spec);
    const std::string label = sensitivity_label(row, convs);
    std::optional<double> rate;
    if (training) {
      const Model m = train(init_model(spec, a.tc.seed), train_set, a.tc);
      rate = evaluate(export_model(m), eval_set).rate;
    }
    char buf[160];
    if (a.csv)
      std::snprintf(buf, sizeof buf, rate ? "%d,%s,%.4f,%.4f,%.4f\n" : "%d,%s,%.4f,%.4f\n", row, label.c_str(),
                    cost.total_mflops, cost.total_weight_kb, rate.value_or(0.0));
    else
      std::snprintf(buf, sizeof buf, rate ? "%d  %-12s %10.1f MFLOPs %10.1f KB  rate %.4f\n"
                                          : "%d  %-12s %10.1f MFLOPs %10.1f KB\n",
                    row, label.c_str(), cost.total_mflops, cost.total_weight_kb, rate.value_or(0.0));
    std::cout << buf << std::flush;
  }
  return kExitOk;
}

struct SynthArgs {
  std::string out;
  SynthSpec spec;
};

int run_synthdata(const SynthArgs& a) {
  a.spec.validate();
  write_dataset(generate_dataset(a.spec), a.out);
  return kExitOk;
}

void add_train_options(CLI::App* c, TrainConfig& tc, std::optional<std::size_t>& recalib) {
  c->add_option("--iters", tc.total_iters, "Training iterations")->capture_default_str();
  c->add_option("--seed", tc.seed, "Initialization and sampling seed")->capture_default_str();
  c->add_option("--batch", tc.batch, "Minibatch size")->capture_default_str();
  c->add_option("--lr", tc.base_lr, "Base learning rate")->capture_default_str();
  c->add_option("--milestones", tc.lr_milestones, "Fractions of --iters where the lr drops by 10x")
      ->delimiter(',')
      ->capture_default_str();
  c->add_option("--momentum", tc.momentum, "SGD momentum")->capture_default_str();
  c->add_option("--weight-decay", tc.weight_decay, "L2 penalty on conv weights")->capture_default_str();
  c->add_option("--reduce", tc.reduce, "Gradient reduction over duplicate groups")
      ->transform(CLI::CheckedTransformer(kReduceModes, CLI::ignore_case))
      ->default_str("average");
  c->add_flag("!--no-flip", tc.hflip, "Disable random horizontal flips");
  c->add_option("--bn-recalib", recalib,
                "Batches used to re-estimate BN statistics after training (0 keeps moving averages)")
      ->default_str("one epoch")
      ->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees the same large tensors every step; keep them on the heap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Low-bit detector toolkit with channel duplication"};
  app.require_subcommand(1);
  std::function<int()> action;

  AnalyzeArgs analyze_args;
  auto* analyze_cmd = app.add_subcommand("analyze", "Per-layer MFLOPs and weight size");
  analyze_cmd->add_option("cfg", analyze_args.cfg, "Network cfg")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--mode", analyze_args.mode, "dup_full or dup_optimized")
      ->transform(CLI::CheckedTransformer(kCostModes, CLI::ignore_case))
      ->default_str("dup_full");
  analyze_cmd->add_flag("--csv", analyze_args.csv, "CSV output");
  analyze_cmd->callback([&] { action = [&] { return run_analyze(analyze_args); }; });

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train on a labelled image directory and save weights");
  train_cmd->add_option("cfg", train_args.cfg, "Network cfg")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("data", train_args.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out,-o", train_args.out, "Weights file")->capture_default_str();
  train_cmd->add_option("--log", train_args.log, "Write the iter,lr,loss log here instead of stdout");
  train_cmd->add_option("--log-every", train_args.log_every, "Log every N iterations")->capture_default_str();
  train_cmd->add_flag("--fast", train_args.fast, "Train dup layers through the compact rewrites");
  add_train_options(train_cmd, train_args.tc, train_args.bn_recalib);
  train_cmd->callback([&] { action = [&] { return run_train(train_args); }; });

  DetectArgs detect_args;
  auto* detect_cmd = app.add_subcommand("detect", "Run inference on one PGM/PPM image");
  detect_cmd->add_option("cfg", detect_args.cfg, "Network cfg")->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("weights", detect_args.weights, "Weights file")->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("image", detect_args.image, "Input image")->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("--thresh", detect_args.thresh, "Score threshold")->capture_default_str();
  auto* packed = detect_cmd->add_flag("--packed", detect_args.packed, "Bit-packed popcount kernels");
  auto* ref = detect_cmd->add_flag("--ref", detect_args.ref, "Reference integer kernels (default)");
  packed->excludes(ref);
  detect_cmd->add_flag("--csv", detect_args.csv, "CSV output with a header");
  detect_cmd->callback([&] { action = [&] { return run_detect(detect_args); }; });

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Detection rate of trained weights on a dataset");
  eval_cmd->add_option("cfg", eval_args.cfg, "Network cfg")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("weights", eval_args.weights, "Weights file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("data", eval_args.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--fp-budget", eval_args.fp_budget, "False positives allowed (default: 1 per 10 images)");
  eval_cmd->add_flag("--packed", eval_args.packed, "Bit-packed popcount kernels");
  eval_cmd->add_flag("--csv", eval_args.csv, "CSV output");
  eval_cmd->callback([&] { action = [&] { return run_eval(eval_args); }; });

  GradcheckArgs gc_args;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every layer's gradient");
  gc_cmd->add_option("cfg", gc_args.cfg, "Network cfg")->required()->check(CLI::ExistingFile);
  gc_cmd->add_option("--eps", gc_args.opt.eps, "Central-difference step")->capture_default_str();
  gc_cmd->add_option("--coords", gc_args.opt.max_coords, "Coordinates sampled per tensor (0 = 16)");
  gc_cmd->add_option("--seed", gc_args.opt.seed, "Sampling seed")->capture_default_str();
  gc_cmd->add_option("--spatial", gc_args.spatial, "Side of the random test inputs")->capture_default_str();
  gc_cmd->add_flag("--csv", gc_args.csv, "CSV output");
  gc_cmd->callback([&] { action = [&] { return run_gradcheck(gc_args); }; });

  SensitivityArgs sens_args;
  sens_args.tc.total_iters = 0;
  auto* sens_cmd = app.add_subcommand("sensitivity", "Progressive layer-wise quantization sweep");
  sens_cmd->add_option("cfg", sens_args.cfg, "Base network cfg")->required()->check(CLI::ExistingFile);
  sens_cmd->add_option("data", sens_args.data, "Dataset directory (needed when --iters > 0)")
      ->check(CLI::ExistingDirectory);
  sens_cmd->add_option("--holdout", sens_args.holdout, "Fraction of the data held out for evaluation")
      ->capture_default_str();
  sens_cmd->add_flag("--csv", sens_args.csv, "CSV output");
  add_train_options(sens_cmd, sens_args.tc, sens_args.bn_recalib);
  sens_cmd->callback([&] { action = [&] { return run_sensitivity(sens_args); }; });

  SizeArgs size_args;
  auto* size_cmd = app.add_subcommand("size", "Weight payload and container overhead of a weights file");
  size_cmd->add_option("cfg", size_args.cfg, "Network cfg")->required()->check(CLI::ExistingFile);
  size_cmd->add_option("weights", size_args.weights, "Weights file")->required()->check(CLI::ExistingFile);
  size_cmd->add_flag("--csv", size_args.csv, "CSV output");
  size_cmd->callback([&] { action = [&] { return run_size(size_args); }; });

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synthdata", "Write a seeded synthetic face-detection set");
  SynthSpec& ss = synth_args.spec;
  synth_cmd->add_option("out", synth_args.out, "Output directory")->required();
  synth_cmd->add_option("--num", ss.num_images, "Number of images")->capture_default_str();
  synth_cmd->add_option("--width", ss.width, "Image width")->capture_default_str();
  synth_cmd->add_option("--height", ss.height, "Image height")->capture_default_str();
  synth_cmd->add_option("--channels", ss.channels, "1 (PGM) or 3 (PPM)")->capture_default_str();
  synth_cmd->add_option("--min-objects", ss.min_objects, "Faces per image, lower bound")->capture_default_str();
  synth_cmd->add_option("--max-objects", ss.max_objects, "Faces per image, upper bound")->capture_default_str();
  synth_cmd->add_option("--min-size", ss.min_size, "Face width in pixels, lower bound")->capture_default_str();
  synth_cmd->add_option("--max-size", ss.max_size, "Face width in pixels, upper bound")->capture_default_str();
  synth_cmd->add_option("--distractors", ss.max_distractors, "Max distractor shapes per image")
      ->capture_default_str();
  synth_cmd->add_option("--seed", ss.seed, "Generator seed")->capture_default_str();
  synth_cmd->callback([&] { action = [&] { return run_synthdata(synth_args); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    return action();
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
