#include "dupnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dupnet/layers.hpp"
#include "dupnet/model.hpp"
#include "dupnet/rng.hpp"

namespace dupnet {

namespace {

struct Eval {
  double value;
  std::vector<std::uint8_t> branches;
};

Eval evaluate(const GraphFn& f, const std::vector<Tensor>& inputs, bool with_grad, std::vector<Tensor>* grads) {
  Tape t;
  t.track_branches(true);
  std::vector<VarId> ids;
  for (const Tensor& x : inputs) ids.push_back(t.leaf(x, with_grad));
  const VarId root = f(t, ids);
  if (t.value(root).size() != 1) throw ShapeError("gradcheck: graph must produce a scalar");
  Eval e{t.value(root)[0], t.branches()};
  if (with_grad) {
    t.backward(root);
    for (VarId id : ids) grads->push_back(t.grad(id));
  }
  return e;
}

// Visit order for one input: every index, or a seeded shuffle when sampling.
std::vector<std::size_t> coordinate_order(std::size_t n, std::size_t want, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (want == 0 || want >= n) return order;
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i)));
    std::swap(order[i], order[j]);
  }
  return order;
}

}  // namespace

std::vector<GradcheckResult> finite_diff_gradcheck(const GraphFn& f, const std::vector<Tensor>& inputs,
                                                   const GradcheckOptions& opt) {
  if (!(opt.eps > 0.0)) throw Error("gradcheck: eps must be positive");
  std::vector<Tensor> analytic;
  const Eval base = evaluate(f, inputs, true, &analytic);
  Rng rng(opt.seed);
  std::vector<Tensor> work = inputs;
  std::vector<GradcheckResult> out(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto order = coordinate_order(inputs[i].size(), opt.max_coords, rng);
    const std::size_t want = opt.max_coords == 0 ? order.size() : std::min(opt.max_coords, order.size());
    GradcheckResult& r = out[i];
    for (std::size_t c : order) {
      if (r.checked >= want) break;
      // Give up on kinked coordinates after a bounded number of retries.
      if (opt.max_coords != 0 && r.skipped >= 20 * want) break;
      const double orig = work[i][c];
      work[i][c] = orig + opt.eps;
      const Eval plus = evaluate(f, work, false, nullptr);
      work[i][c] = orig - opt.eps;
      const Eval minus = evaluate(f, work, false, nullptr);
      work[i][c] = orig;
      if (plus.branches != base.branches || minus.branches != base.branches) {
        ++r.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * opt.eps);
      const double a = analytic[i][c];
      r.max_rel_error = std::max(r.max_rel_error, std::abs(numeric - a) / std::max(1.0, std::abs(a)));
      ++r.checked;
    }
  }
  return out;
}

double max_rel_error(std::span<const GradcheckResult> r) {
  double m = 0.0;
  for (const auto& x : r) m = std::max(m, x.max_rel_error);
  return m;
}

namespace {

Tensor random_tensor(const Shape& s, Rng& rng, double sd = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

GradcheckResult merge(const std::vector<GradcheckResult>& rs) {
  GradcheckResult m;
  for (const auto& r : rs) {
    m.max_rel_error = std::max(m.max_rel_error, r.max_rel_error);
    m.checked += r.checked;
    m.skipped += r.skipped;
  }
  return m;
}

std::vector<LayerGradcheck> check_conv(const LayerSpec& layer, const GradcheckOptions& opt, std::size_t spatial,
                                       std::size_t batch, Rng& rng) {
  NetworkSpec net;
  net.in_c = layer.c_in;
  const std::size_t s = std::max(spatial, layer.k > 2 * layer.pad ? layer.k - 2 * layer.pad : std::size_t{1});
  net.in_h = s;
  net.in_w = s;
  LayerSpec l = layer;
  l.quant.a_bits = kFullPrecision;
  l.quant.w_bits = kFullPrecision;
  net.layers = {l};
  resolve(net);
  Model m = init_model(net, rng.next());
  ConvParams& cp = m.convs[0];
  for (double& v : cp.gamma.data()) v = rng.uniform(0.5, 1.5);
  for (double& v : cp.beta.data()) v = rng.normal(0.0, 0.2);
  for (double& v : cp.bias.data()) v = rng.normal(0.0, 0.2);

  std::vector<Tensor> inputs = {random_tensor(Shape{batch, net.in_c, s, s}, rng), cp.weight};
  std::string params = "x, w";
  if (l.has_bn) {
    inputs.push_back(cp.gamma);
    inputs.push_back(cp.beta);
    params += ", gamma, beta";
  } else {
    inputs.push_back(cp.bias);
    params += ", bias";
  }
  const LayerSpec& rl = m.spec.layers[0];
  const Tensor r = random_tensor(Shape{batch, rl.c_out, rl.out_h, rl.out_w}, rng);

  struct Mode {
    const char* tag;
    DupWeightMode w;
    DupFeatureMode x;
  };
  std::vector<Mode> modes;
  if (l.d_w > 1)
    modes = {{"tile", DupWeightMode::tile, DupFeatureMode::dup}, {"fast", DupWeightMode::fast, DupFeatureMode::dup}};
  else if (l.d_x > 1)
    modes = {{"dup", DupWeightMode::tile, DupFeatureMode::dup}, {"fast", DupWeightMode::tile, DupFeatureMode::fast}};
  else
    modes = {{"", DupWeightMode::tile, DupFeatureMode::dup}};

  std::vector<LayerGradcheck> out;
  for (const Mode& mode : modes) {
    ForwardOptions fo;
    fo.wmode = mode.w;
    fo.xmode = mode.x;
    fo.reduce = GradReduce::sum;
    fo.quantize = false;
    fo.training = true;
    const bool bn = l.has_bn;
    const GraphFn f = [&m, fo, bn, &r](Tape& t, std::span<const VarId> ids) {
      ParamVars pv;
      pv.weight = {ids[1]};
      pv.gamma = {bn ? ids[2] : 0};
      pv.beta = {bn ? ids[3] : 0};
      pv.bias = {bn ? 0 : ids[2]};
      pv.alpha = {t.leaf(Tensor(Shape{1, 1, 1, 1}, 1.0), false)};
      const ForwardResult fr = forward(t, m, pv, ids[0], fo);
      return ops::project(t, fr.head, r);
    };
    const std::string name = mode.tag[0] ? l.name + " (" + mode.tag + ")" : l.name;
    out.push_back(LayerGradcheck{name, params, merge(finite_diff_gradcheck(f, inputs, opt))});
  }
  return out;
}

LayerGradcheck check_pool(const LayerSpec& l, const GradcheckOptions& opt, std::size_t spatial, std::size_t batch,
                          Rng& rng) {
  const std::size_t s = std::max(spatial, l.k);
  const std::size_t c = std::min<std::size_t>(l.c_in, 8);
  const Tensor x = random_tensor(Shape{batch, c, s, s}, rng);
  const Tensor y = maxpool(x, l.k, l.stride);
  const Tensor r = random_tensor(y.shape(), rng);
  const std::size_t k = l.k, stride = l.stride;
  const GraphFn f = [k, stride, &r](Tape& t, std::span<const VarId> ids) {
    return ops::project(t, ops::maxpool(t, ids[0], k, stride), r);
  };
  return LayerGradcheck{l.name, "x", merge(finite_diff_gradcheck(f, {x}, opt))};
}

LayerGradcheck check_detect(const NetworkSpec& spec, const GradcheckOptions& opt, std::size_t spatial,
                            std::size_t batch, Rng& rng) {
  const std::size_t ch = head_channels(spec.anchors.size(), spec.classes);
  const Tensor head = random_tensor(Shape{batch, ch, spatial, spatial}, rng, 0.5);
  std::vector<std::vector<GroundTruth>> truths(batch);
  for (auto& t : truths) {
    const auto n = rng.integer(0, 2);
    for (std::int64_t i = 0; i < n; ++i) {
      GroundTruth g;
      g.cls = static_cast<int>(rng.integer(0, spec.classes - 1));
      g.box = Box{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5)};
      t.push_back(g);
    }
  }
  const auto anchors = spec.anchors;
  const int classes = spec.classes;
  const GraphFn f = [&anchors, classes, &truths](Tape& t, std::span<const VarId> ids) {
    return ops::detection_loss(t, ids[0], anchors, classes, truths, DetectionLossConfig{});
  };
  return LayerGradcheck{"detect (loss)", "head", merge(finite_diff_gradcheck(f, {head}, opt))};
}

}  // namespace

std::vector<LayerGradcheck> gradcheck_network(const NetworkSpec& spec_in, const GradcheckOptions& opt_in,
                                              std::size_t spatial, std::size_t batch) {
  const NetworkSpec spec = resolved(spec_in);
  GradcheckOptions opt = opt_in;
  // Networks have large tensors; sample unless asked otherwise.
  if (opt.max_coords == 0) opt.max_coords = 16;
  Rng rng(opt.seed);
  std::vector<LayerGradcheck> out;
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv:
        for (auto& row : check_conv(l, opt, spatial, batch, rng)) out.push_back(std::move(row));
        break;
      case LayerKind::maxpool:
        out.push_back(check_pool(l, opt, spatial, batch, rng));
        break;
      case LayerKind::detect:
        out.push_back(check_detect(spec, opt, spatial, batch, rng));
        break;
    }
  }
  return out;
}

}  // namespace dupnet
