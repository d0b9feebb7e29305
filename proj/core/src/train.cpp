#include "dupnet/train.hpp"

#include <algorithm>
#include <cmath>

#include "dupnet/rng.hpp"

namespace dupnet {

namespace {
constexpr double kMinAlpha = 1e-3;
}

void TrainConfig::validate() const {
  if (total_iters == 0) throw Error("train: total_iters must be >= 1");
  if (!(base_lr > 0.0)) throw Error("train: base_lr must be positive");
  if (batch == 0) throw Error("train: batch must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw Error("train: momentum must be in [0, 1)");
  double prev = 0.0;
  for (double m : lr_milestones) {
    if (!(m > prev && m < 1.0)) throw Error("train: milestones must be strictly increasing in (0, 1)");
    prev = m;
  }
}

double lr_at(std::size_t iter, const TrainConfig& cfg) {
  double lr = cfg.base_lr;
  for (double m : cfg.lr_milestones) {
    const auto at = static_cast<std::size_t>(std::llround(m * static_cast<double>(cfg.total_iters)));
    if (iter >= at) lr *= cfg.lr_factor;
  }
  return lr;
}

void sgd_step(Tensor& p, const Tensor& g, Tensor& v, double lr, double momentum) {
  if (p.shape() != g.shape()) throw ShapeError("sgd_step: gradient shape mismatch");
  if (v.shape() != p.shape()) v = Tensor(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

Batch make_batch(const Dataset& d, std::span<const std::size_t> indices, const std::vector<bool>& flip) {
  if (indices.empty()) throw Error("make_batch: empty batch");
  const Shape s0 = d.samples.at(indices[0]).image.shape();
  Batch b;
  b.images = Tensor(Shape{indices.size(), s0.c, s0.h, s0.w});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& s = d.samples.at(indices[k]);
    const Shape si = s.image.shape();
    if (si.c != s0.c || si.h != s0.h || si.w != s0.w) throw ShapeError("make_batch: images differ in size");
    const bool f = !flip.empty() && flip[k];
    for (std::size_t c = 0; c < si.c; ++c)
      for (std::size_t y = 0; y < si.h; ++y)
        for (std::size_t x = 0; x < si.w; ++x)
          b.images.at(k, c, y, x) = s.image.at(0, c, y, f ? si.w - 1 - x : x) / 255.0;
    auto truths = s.truths;
    if (f)
      for (auto& t : truths) t.box.cx = 1.0 - t.box.cx;
    b.truths.push_back(std::move(truths));
  }
  return b;
}

StepResult forward_backward(const Model& m, const Batch& b, const TrainConfig& cfg) {
  Tape t;
  const ParamVars pv = bind_params(t, m, true);
  const VarId x = t.leaf(b.images, false);
  ForwardOptions fo;
  fo.wmode = cfg.wmode;
  fo.xmode = cfg.xmode;
  fo.reduce = cfg.reduce;
  fo.training = true;
  const ForwardResult fr = forward(t, m, pv, x, fo);
  const VarId loss = ops::detection_loss(t, fr.head, m.spec.anchors, m.spec.classes, b.truths, cfg.loss,
                                         1.0 / static_cast<double>(b.images.shape().n));
  StepResult r;
  r.loss = t.value(loss)[0];
  if (!std::isfinite(r.loss)) throw NumericError("loss is not finite", "detect");
  t.backward(loss);
  const auto idx = m.spec.conv_indices();
  for (std::size_t ci = 0; ci < m.convs.size(); ++ci) {
    const std::string& name = m.spec.layers[idx[ci]].name;
    const auto grad = [&](VarId v) {
      Tensor g = t.grad(v);
      if (!all_finite(g)) throw NumericError(name + ": non-finite gradient", name);
      return g;
    };
    const bool bn = !m.convs[ci].gamma.empty();
    r.grads.weight.push_back(grad(pv.weight[ci]));
    r.grads.gamma.push_back(bn ? grad(pv.gamma[ci]) : Tensor());
    r.grads.beta.push_back(bn ? grad(pv.beta[ci]) : Tensor());
    r.grads.bias.push_back(bn ? Tensor() : grad(pv.bias[ci]));
    r.grads.alpha.push_back(m.convs[ci].alpha_trainable ? grad(pv.alpha[ci])[0] : 0.0);
  }
  r.stats = fr.stats;
  return r;
}

Trainer::Trainer(Model m, const TrainConfig& cfg) : model_(std::move(m)), cfg_(cfg) {
  cfg_.validate();
  const std::size_t n = model_.convs.size();
  velocity_.weight.resize(n);
  velocity_.gamma.resize(n);
  velocity_.beta.resize(n);
  velocity_.bias.resize(n);
  velocity_.alpha.assign(n, 0.0);
}

double Trainer::step(const Batch& b, std::size_t iter) {
  StepResult r = forward_backward(model_, b, cfg_);
  const double lr = lr_at(iter, cfg_);
  for (std::size_t ci = 0; ci < model_.convs.size(); ++ci) {
    ConvParams& p = model_.convs[ci];
    Tensor& gw = r.grads.weight[ci];
    if (cfg_.weight_decay != 0.0)
      for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += cfg_.weight_decay * p.weight[i];
    sgd_step(p.weight, gw, velocity_.weight[ci], lr, cfg_.momentum);
    if (!p.gamma.empty()) {
      sgd_step(p.gamma, r.grads.gamma[ci], velocity_.gamma[ci], lr, cfg_.momentum);
      sgd_step(p.beta, r.grads.beta[ci], velocity_.beta[ci], lr, cfg_.momentum);
      const ops::BatchStats& st = r.stats[ci];
      for (std::size_t c = 0; c < p.running_mean.size(); ++c) {
        p.running_mean[c] = kBatchNormMomentum * p.running_mean[c] + (1.0 - kBatchNormMomentum) * st.mean[c];
        p.running_var[c] = kBatchNormMomentum * p.running_var[c] + (1.0 - kBatchNormMomentum) * st.var[c];
      }
    } else {
      sgd_step(p.bias, r.grads.bias[ci], velocity_.bias[ci], lr, cfg_.momentum);
    }
    if (p.alpha_trainable) {
      double& v = velocity_.alpha[ci];
      v = cfg_.momentum * v + r.grads.alpha[ci];
      p.alpha = std::max(kMinAlpha, p.alpha - lr * v);
    }
  }
  return r.loss;
}

void recalibrate_batchnorm(Model& m, const Dataset& data, const TrainConfig& cfg, std::size_t batches) {
  if (data.size() == 0) throw Error("recalibrate_batchnorm: empty dataset");
  if (batches == 0) return;
  const std::size_t n = m.convs.size();
  std::vector<std::vector<double>> sum(n), sq(n);
  for (std::size_t ci = 0; ci < n; ++ci) {
    sum[ci].assign(m.convs[ci].running_mean.size(), 0.0);
    sq[ci].assign(m.convs[ci].running_mean.size(), 0.0);
  }
  ForwardOptions fo;
  fo.wmode = cfg.wmode;
  fo.xmode = cfg.xmode;
  fo.reduce = cfg.reduce;
  fo.training = true;
  std::vector<std::size_t> idx(cfg.batch);
  std::size_t cursor = 0;
  for (std::size_t bi = 0; bi < batches; ++bi) {
    for (auto& i : idx) {
      i = cursor;
      cursor = (cursor + 1) % data.size();
    }
    const Batch b = make_batch(data, idx);
    Tape t;
    const ParamVars pv = bind_params(t, m, false);
    const ForwardResult fr = forward(t, m, pv, t.leaf(b.images, false), fo);
    for (std::size_t ci = 0; ci < n; ++ci) {
      if (m.convs[ci].gamma.empty()) continue;
      const ops::BatchStats& st = fr.stats[ci];
      for (std::size_t c = 0; c < sum[ci].size(); ++c) {
        sum[ci][c] += st.mean[c];
        sq[ci][c] += st.var[c] + st.mean[c] * st.mean[c];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batches);
  for (std::size_t ci = 0; ci < n; ++ci) {
    ConvParams& p = m.convs[ci];
    for (std::size_t c = 0; c < sum[ci].size(); ++c) {
      const double mean = sum[ci][c] * inv;
      p.running_mean[c] = mean;
      p.running_var[c] = std::max(0.0, sq[ci][c] * inv - mean * mean);
    }
  }
}

Model train(Model m, const Dataset& data, const TrainConfig& cfg, const TrainLog& log) {
  if (data.size() == 0) throw Error("train: empty dataset");
  Trainer tr(std::move(m), cfg);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  std::vector<std::size_t> idx(cfg.batch);
  std::vector<bool> flips(cfg.batch);
  for (std::size_t iter = 0; iter < cfg.total_iters; ++iter) {
    for (std::size_t k = 0; k < cfg.batch; ++k) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size() - 1; i > 0; --i)
          std::swap(order[i], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i)))]);
        cursor = 0;
      }
      idx[k] = order[cursor++];
      flips[k] = cfg.hflip && rng.bernoulli(0.5);
    }
    const Batch b = make_batch(data, idx, flips);
    const double loss = tr.step(b, iter);
    if (log) log(iter, lr_at(iter, cfg), loss);
  }
  recalibrate_batchnorm(tr.model(), data, cfg, cfg.bn_recalib_batches);
  return std::move(tr.model());
}

std::vector<std::vector<DetectionBox>> predict(const ExportedModel& m, const Dataset& d, double thresh,
                                               KernelPath path, std::size_t chunk) {
  std::vector<std::vector<DetectionBox>> out;
  out.reserve(d.size());
  if (chunk == 0) chunk = 1;
  for (std::size_t start = 0; start < d.size(); start += chunk) {
    const std::size_t n = std::min(chunk, d.size() - start);
    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = start + k;
    const Batch b = make_batch(d, idx);
    const Tensor head = infer(m, b.images, path);
    for (std::size_t k = 0; k < n; ++k) out.push_back(detect_boxes(m, head, k, thresh));
  }
  return out;
}

DetectionRate evaluate(const ExportedModel& m, const Dataset& d, std::optional<std::size_t> fp_budget,
                       KernelPath path) {
  const auto preds = predict(m, d, 0.01, path);
  std::vector<std::vector<GroundTruth>> truths;
  truths.reserve(d.size());
  for (const Sample& s : d.samples) truths.push_back(s.truths);
  return eval_detection(preds, truths, fp_budget);
}

}  // namespace dupnet
