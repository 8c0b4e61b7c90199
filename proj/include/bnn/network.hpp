#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bnn/common.hpp"
#include "bnn/rng.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

// ---------------------------------------------------------------------------
// Layer vocabulary
// ---------------------------------------------------------------------------

struct Conv2d {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int padding = 0;
};

struct MaxPool2d {
  int window = 2;
};

struct Relu {};

struct Flatten {};

struct Linear {
  int in_features = 1;
  int out_features = 1;
};

struct Dropout {
  double rate = 0.5;
};

using Layer = std::variant<Conv2d, MaxPool2d, Relu, Flatten, Linear, Dropout>;

/// Layered CNN description. Input is a single-channel (by default) H x W image.
struct NetworkSpec {
  std::vector<Layer> layers;
  std::size_t input_h = 0;
  std::size_t input_w = 0;
  std::size_t input_channels = 1;
};

// ---------------------------------------------------------------------------
// Compiled plan: shapes, parameter layout
// ---------------------------------------------------------------------------

/// Activation dims at a point in the stack: spatial (c,h,w) or flat features.
struct ActDims {
  std::size_t c = 0, h = 0, w = 0;
  bool flat = false;
  std::size_t features = 0;  // valid when flat

  std::size_t numel() const { return flat ? features : c * h * w; }
};

/// Contiguous slice of the flat parameter vector owned by one layer.
struct ParamBlock {
  std::size_t layer_index = 0;
  std::size_t offset = 0;
  std::size_t count = 0;
  bool is_bias = false;
};

struct LayerPlan {
  Layer layer;
  ActDims in;
  ActDims out;
  std::size_t weight_offset = 0, weight_count = 0;
  std::size_t bias_offset = 0, bias_count = 0;
};

/// Shape-checked network: per-layer dims plus the flat parameter layout.
struct Plan {
  NetworkSpec spec;
  std::vector<LayerPlan> layers;
  std::vector<ParamBlock> blocks;
  std::size_t param_count = 0;
  std::size_t num_classes = 0;

  /// Index into `layers` of the terminal Linear (the classifier head).
  std::size_t last_linear = 0;
};

namespace detail {

inline std::string dims_str(const ActDims& d) {
  if (d.flat) return "flat(" + std::to_string(d.features) + ")";
  return "(" + std::to_string(d.c) + "," + std::to_string(d.h) + "," +
         std::to_string(d.w) + ")";
}

}  // namespace detail

/// Validate layer composition and lay out the flat parameter vector.
/// Throws ShapeError describing the first layer that does not compose.
inline Plan make_plan(const NetworkSpec& spec) {
  require(spec.input_h > 0 && spec.input_w > 0, "network input shape must be positive");
  Plan plan;
  plan.spec = spec;
  ActDims cur{spec.input_channels, spec.input_h, spec.input_w, false, 0};
  std::size_t offset = 0;
  bool saw_linear = false;

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& layer = spec.layers[i];
    LayerPlan lp;
    lp.layer = layer;
    lp.in = cur;
    const std::string where = "layer " + std::to_string(i) + " with input " +
                              detail::dims_str(cur);

    if (const auto* conv = std::get_if<Conv2d>(&layer)) {
      if (cur.flat) throw ShapeError("Conv2d after Flatten at " + where);
      if (static_cast<std::size_t>(conv->in_channels) != cur.c)
        throw ShapeError("Conv2d expects " + std::to_string(conv->in_channels) +
                         " input channels at " + where);
      if (conv->kernel < 1 || conv->padding < 0 || conv->out_channels < 1)
        throw ShapeError("Conv2d has invalid geometry at " + where);
      const std::size_t k = static_cast<std::size_t>(conv->kernel);
      const std::size_t p = static_cast<std::size_t>(conv->padding);
      if (cur.h + 2 * p < k || cur.w + 2 * p < k)
        throw ShapeError("Conv2d kernel larger than padded input at " + where);
      cur.c = static_cast<std::size_t>(conv->out_channels);
      cur.h = cur.h + 2 * p - k + 1;
      cur.w = cur.w + 2 * p - k + 1;
      lp.weight_offset = offset;
      lp.weight_count = static_cast<std::size_t>(conv->out_channels) *
                        static_cast<std::size_t>(conv->in_channels) * k * k;
      offset += lp.weight_count;
      lp.bias_offset = offset;
      lp.bias_count = static_cast<std::size_t>(conv->out_channels);
      offset += lp.bias_count;
    } else if (const auto* pool = std::get_if<MaxPool2d>(&layer)) {
      if (cur.flat) throw ShapeError("MaxPool2d after Flatten at " + where);
      if (pool->window < 1) throw ShapeError("MaxPool2d window must be >= 1 at " + where);
      const std::size_t w = static_cast<std::size_t>(pool->window);
      if (cur.h < w || cur.w < w)
        throw ShapeError("MaxPool2d window larger than input at " + where);
      cur.h = (cur.h - w) / w + 1;
      cur.w = (cur.w - w) / w + 1;
    } else if (std::holds_alternative<Relu>(layer)) {
      // dims unchanged
    } else if (std::holds_alternative<Flatten>(layer)) {
      if (cur.flat) throw ShapeError("Flatten applied twice at " + where);
      cur.flat = true;
      cur.features = cur.c * cur.h * cur.w;
      cur.c = cur.h = cur.w = 0;
    } else if (const auto* lin = std::get_if<Linear>(&layer)) {
      if (!cur.flat) throw ShapeError("Linear before Flatten at " + where);
      if (static_cast<std::size_t>(lin->in_features) != cur.features)
        throw ShapeError("Linear expects " + std::to_string(lin->in_features) +
                         " features at " + where);
      if (lin->out_features < 1) throw ShapeError("Linear needs out_features >= 1 at " + where);
      cur.features = static_cast<std::size_t>(lin->out_features);
      lp.weight_offset = offset;
      lp.weight_count = static_cast<std::size_t>(lin->in_features) *
                        static_cast<std::size_t>(lin->out_features);
      offset += lp.weight_count;
      lp.bias_offset = offset;
      lp.bias_count = static_cast<std::size_t>(lin->out_features);
      offset += lp.bias_count;
      plan.last_linear = i;
      saw_linear = true;
    } else if (const auto* drop = std::get_if<Dropout>(&layer)) {
      if (!(drop->rate >= 0.0 && drop->rate < 1.0))
        throw ShapeError("Dropout rate must lie in [0,1) at " + where);
    }

    lp.out = cur;
    if (lp.weight_count > 0) {
      plan.blocks.push_back({i, lp.weight_offset, lp.weight_count, false});
      plan.blocks.push_back({i, lp.bias_offset, lp.bias_count, true});
    }
    plan.layers.push_back(lp);
  }

  if (!saw_linear || !cur.flat)
    throw ShapeError("network must end in a Linear classifier head");
  plan.param_count = offset;
  plan.num_classes = cur.features;
  return plan;
}

/// Total scalar parameter count, biases included.
inline std::size_t param_count(const NetworkSpec& spec) { return make_plan(spec).param_count; }

/// Stable textual form of a spec; hashed into checkpoints.
inline std::string describe(const NetworkSpec& spec) {
  std::string s = "in:" + std::to_string(spec.input_channels) + "x" +
                  std::to_string(spec.input_h) + "x" + std::to_string(spec.input_w) + ";";
  for (const Layer& layer : spec.layers) {
    if (const auto* c = std::get_if<Conv2d>(&layer)) {
      s += "conv(" + std::to_string(c->in_channels) + "," + std::to_string(c->out_channels) +
           ",k" + std::to_string(c->kernel) + ",p" + std::to_string(c->padding) + ");";
    } else if (const auto* p = std::get_if<MaxPool2d>(&layer)) {
      s += "pool(" + std::to_string(p->window) + ");";
    } else if (std::holds_alternative<Relu>(layer)) {
      s += "relu;";
    } else if (std::holds_alternative<Flatten>(layer)) {
      s += "flatten;";
    } else if (const auto* l = std::get_if<Linear>(&layer)) {
      s += "linear(" + std::to_string(l->in_features) + "," + std::to_string(l->out_features) + ");";
    } else if (const auto* d = std::get_if<Dropout>(&layer)) {
      s += "dropout(" + fmt6(d->rate) + ");";
    }
  }
  return s;
}

inline std::uint64_t spec_hash(const NetworkSpec& spec) { return fnv1a(describe(spec)); }

// ---------------------------------------------------------------------------
// Parameter vector
// ---------------------------------------------------------------------------

/// Flat 64-bit-float parameter state plus the layout it was built against.
struct ParamVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
  std::span<const double> view() const { return {values.data(), values.size()}; }
};

inline ParamVector zeros_like(const Plan& plan) {
  return ParamVector{std::vector<double>(plan.param_count, 0.0)};
}

/// He-style fan-in initialization: weights ~ N(0, 2/fan_in), biases zero.
inline ParamVector init_params(const Plan& plan, Rng& rng) {
  ParamVector p = zeros_like(plan);
  for (const LayerPlan& lp : plan.layers) {
    if (lp.weight_count == 0) continue;
    std::size_t fan_in = 1;
    if (const auto* conv = std::get_if<Conv2d>(&lp.layer)) {
      fan_in = static_cast<std::size_t>(conv->in_channels) *
               static_cast<std::size_t>(conv->kernel) * static_cast<std::size_t>(conv->kernel);
    } else if (const auto* lin = std::get_if<Linear>(&lp.layer)) {
      fan_in = static_cast<std::size_t>(lin->in_features);
    }
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t j = 0; j < lp.weight_count; ++j)
      p.values[lp.weight_offset + j] = rng.normal(0.0, stddev);
  }
  return p;
}

/// Coordinates of the classifier head (weights + bias), used by the
/// last-layer posterior and the convergence diagnostics.
inline std::vector<std::size_t> last_layer_coords(const Plan& plan) {
  const LayerPlan& lp = plan.layers.at(plan.last_linear);
  std::vector<std::size_t> idx;
  idx.reserve(lp.weight_count + lp.bias_count);
  for (std::size_t j = 0; j < lp.weight_count; ++j) idx.push_back(lp.weight_offset + j);
  for (std::size_t j = 0; j < lp.bias_count; ++j) idx.push_back(lp.bias_offset + j);
  return idx;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

enum class Reduction { Sum, Mean };

namespace detail {

/// Captured intermediates for the reverse pass.
struct ForwardTrace {
  std::vector<Tensor> acts;                        // acts[0] = input, acts[i+1] = layer i output
  std::vector<std::vector<double>> dropout_scale;  // per layer index (empty if unused)
  std::vector<std::vector<std::size_t>> pool_argmax;
};

inline void conv_forward(const Conv2d& conv, const ActDims& in, const ActDims& out,
                         const double* weights, const double* bias,
                         const Tensor& x, Tensor& y) {
  const std::size_t batch = x.dim(0);
  const std::size_t ic_n = in.c, ih = in.h, iw = in.w;
  const std::size_t oc_n = out.c, oh = out.h, ow = out.w;
  const std::size_t k = static_cast<std::size_t>(conv.kernel);
  const long p = conv.padding;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      double* yrow = y.ptr() + ((b * oc_n + oc) * oh) * ow;
      const double bval = bias[oc];
      for (std::size_t i = 0; i < oh * ow; ++i) yrow[i] = bval;
      for (std::size_t ic = 0; ic < ic_n; ++ic) {
        const double* xch = x.ptr() + ((b * ic_n + ic) * ih) * iw;
        const double* wker = weights + ((oc * ic_n + ic) * k) * k;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long iy = static_cast<long>(oy + ky) - p;
            if (iy < 0 || iy >= static_cast<long>(ih)) continue;
            const double* xline = xch + static_cast<std::size_t>(iy) * iw;
            const double* wline = wker + ky * k;
            double* yline = yrow + oy * ow;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const double wv = wline[kx];
              const long x0 = -p + static_cast<long>(kx);
              // valid ox range so that ix = ox + kx - p stays inside [0, iw)
              std::size_t ox_lo = x0 < 0 ? static_cast<std::size_t>(-x0) : 0;
              long ox_hi_l = static_cast<long>(iw) - 1 - x0;
              if (ox_hi_l < 0) continue;
              std::size_t ox_hi = std::min<std::size_t>(ow - 1, static_cast<std::size_t>(ox_hi_l));
              const double* xp = xline + static_cast<std::size_t>(static_cast<long>(ox_lo) + x0);
              for (std::size_t ox = ox_lo; ox <= ox_hi; ++ox, ++xp) {
                yline[ox] += wv * *xp;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Forward evaluation. Dropout layers are active only when `dropout_rng` is
/// non-null (inverted scaling: survivors scaled by 1/(1-p)); with a null rng
/// they are the identity, so posterior-predictive forwards reuse this path.
inline Tensor forward(const Plan& plan, const ParamVector& params, const Tensor& batch,
                      Rng* dropout_rng = nullptr, detail::ForwardTrace* trace = nullptr) {
  require(params.size() == plan.param_count, "parameter vector length does not match plan");
  if (batch.shape.size() != 4 || batch.dim(1) != plan.spec.input_channels ||
      batch.dim(2) != plan.spec.input_h || batch.dim(3) != plan.spec.input_w) {
    throw ShapeError("batch shape " + batch.shape_str() + " does not match network input");
  }
  const std::size_t bsz = batch.dim(0);
  const double* pv = params.data();

  if (trace) {
    trace->acts.clear();
    trace->dropout_scale.assign(plan.layers.size(), {});
    trace->pool_argmax.assign(plan.layers.size(), {});
    trace->acts.reserve(plan.layers.size() + 1);
    trace->acts.push_back(batch);
  }

  Tensor cur = batch;
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    const LayerPlan& lp = plan.layers[i];
    Tensor next;

    if (const auto* conv = std::get_if<Conv2d>(&lp.layer)) {
      next = Tensor({bsz, lp.out.c, lp.out.h, lp.out.w});
      detail::conv_forward(*conv, lp.in, lp.out, pv + lp.weight_offset, pv + lp.bias_offset,
                           cur, next);
    } else if (const auto* pool = std::get_if<MaxPool2d>(&lp.layer)) {
      next = Tensor({bsz, lp.out.c, lp.out.h, lp.out.w});
      const std::size_t w = static_cast<std::size_t>(pool->window);
      std::vector<std::size_t>* argmax = trace ? &trace->pool_argmax[i] : nullptr;
      if (argmax) argmax->assign(next.numel(), 0);
      for (std::size_t b = 0; b < bsz; ++b)
        for (std::size_t c = 0; c < lp.in.c; ++c) {
          const double* xch = cur.ptr() + ((b * lp.in.c + c) * lp.in.h) * lp.in.w;
          double* ych = next.ptr() + ((b * lp.out.c + c) * lp.out.h) * lp.out.w;
          for (std::size_t oy = 0; oy < lp.out.h; ++oy)
            for (std::size_t ox = 0; ox < lp.out.w; ++ox) {
              std::size_t best = (oy * w) * lp.in.w + ox * w;
              double bv = xch[best];
              for (std::size_t dy = 0; dy < w; ++dy)
                for (std::size_t dx = 0; dx < w; ++dx) {
                  const std::size_t idx = (oy * w + dy) * lp.in.w + ox * w + dx;
                  if (xch[idx] > bv) {
                    bv = xch[idx];
                    best = idx;
                  }
                }
              ych[oy * lp.out.w + ox] = bv;
              if (argmax)
                (*argmax)[((b * lp.out.c + c) * lp.out.h + oy) * lp.out.w + ox] =
                    ((b * lp.in.c + c) * lp.in.h) * lp.in.w + best;
            }
        }
    } else if (std::holds_alternative<Relu>(lp.layer)) {
      next = cur;
      for (double& v : next.data) v = v > 0.0 ? v : 0.0;
    } else if (std::holds_alternative<Flatten>(lp.layer)) {
      next = Tensor({bsz, lp.out.features}, std::move(cur.data));
    } else if (const auto* lin = std::get_if<Linear>(&lp.layer)) {
      const std::size_t in_f = lp.in.features, out_f = lp.out.features;
      next = Tensor({bsz, out_f});
      const double* wmat = pv + lp.weight_offset;
      const double* bvec = pv + lp.bias_offset;
      for (std::size_t b = 0; b < bsz; ++b) {
        const double* xrow = cur.ptr() + b * in_f;
        double* yrow = next.ptr() + b * out_f;
        for (std::size_t o = 0; o < out_f; ++o) {
          const double* wrow = wmat + o * in_f;
          double acc = bvec[o];
          for (std::size_t j = 0; j < in_f; ++j) acc += wrow[j] * xrow[j];
          yrow[o] = acc;
        }
      }
    } else if (const auto* drop = std::get_if<Dropout>(&lp.layer)) {
      next = cur;
      if (dropout_rng && drop->rate > 0.0) {
        const double keep = 1.0 - drop->rate;
        const double scale = 1.0 / keep;
        std::vector<double>* scales = trace ? &trace->dropout_scale[i] : nullptr;
        if (scales) scales->assign(next.numel(), 0.0);
        for (std::size_t j = 0; j < next.numel(); ++j) {
          const double s = dropout_rng->uniform() < keep ? scale : 0.0;
          next.data[j] *= s;
          if (scales) (*scales)[j] = s;
        }
      } else if (trace) {
        trace->dropout_scale[i].assign(next.numel(), 1.0);
      }
    }

    if (!all_finite(next.view()))
      throw NumericError("non-finite activation after layer " + std::to_string(i));
    cur = std::move(next);
    if (trace) trace->acts.push_back(cur);
  }
  return cur;
}

/// Max-subtracted softmax of one logit row.
inline std::vector<double> softmax_row(std::span<const double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

struct LossGradResult {
  double loss = 0.0;
  ParamVector grad;
};

/// Softmax cross-entropy of `logits` against integer labels, with the fused
/// log-sum-exp form. Returns per-batch loss (summed or averaged) and fills
/// dlogits with the matching gradient.
inline double softmax_xent(const Tensor& logits, std::span<const int> labels,
                           Reduction reduction, Tensor* dlogits = nullptr) {
  const std::size_t bsz = logits.dim(0);
  const std::size_t k = logits.dim(1);
  require(labels.size() == bsz, "labels length must equal batch size");
  if (dlogits) *dlogits = Tensor({bsz, k});
  const double scale = reduction == Reduction::Mean ? 1.0 / static_cast<double>(bsz) : 1.0;
  double total = 0.0;
  for (std::size_t b = 0; b < bsz; ++b) {
    const int y = labels[b];
    require(y >= 0 && static_cast<std::size_t>(y) < k, "label out of range");
    const double* row = logits.ptr() + b * k;
    double mx = row[0];
    for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += std::exp(row[i] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[y];
    if (dlogits) {
      double* grow = dlogits->ptr() + b * k;
      for (std::size_t i = 0; i < k; ++i) {
        grow[i] = (std::exp(row[i] - mx) / z - (static_cast<std::size_t>(y) == i ? 1.0 : 0.0)) *
                  scale;
      }
    }
  }
  total *= scale;
  if (!std::isfinite(total)) throw NumericError("non-finite cross-entropy loss");
  return total;
}

/// Scalar softmax cross-entropy loss and its gradient with respect to every
/// parameter, by reverse accumulation through the layer stack.
inline LossGradResult loss_grad(const Plan& plan, const ParamVector& params, const Tensor& batch,
                                std::span<const int> labels, Reduction reduction = Reduction::Sum,
                                Rng* dropout_rng = nullptr) {
  detail::ForwardTrace trace;
  const Tensor logits = forward(plan, params, batch, dropout_rng, &trace);

  LossGradResult result;
  result.grad = zeros_like(plan);
  Tensor delta;  // gradient w.r.t. current layer output
  result.loss = softmax_xent(logits, labels, reduction, &delta);

  const double* pv = params.data();
  double* gv = result.grad.values.data();
  const std::size_t bsz = batch.dim(0);

  for (std::size_t ii = plan.layers.size(); ii-- > 0;) {
    const LayerPlan& lp = plan.layers[ii];
    const Tensor& x = trace.acts[ii];
    Tensor dx;

    if (const auto* conv = std::get_if<Conv2d>(&lp.layer)) {
      dx = Tensor(x.shape);
      const std::size_t k = static_cast<std::size_t>(conv->kernel);
      const long p = conv->padding;
      const std::size_t ic_n = lp.in.c, ih = lp.in.h, iw = lp.in.w;
      const std::size_t oc_n = lp.out.c, oh = lp.out.h, ow = lp.out.w;
      for (std::size_t b = 0; b < bsz; ++b)
        for (std::size_t oc = 0; oc < oc_n; ++oc) {
          const double* drow = delta.ptr() + ((b * oc_n + oc) * oh) * ow;
          double gb = 0.0;
          for (std::size_t i = 0; i < oh * ow; ++i) gb += drow[i];
          gv[lp.bias_offset + oc] += gb;
          for (std::size_t ic = 0; ic < ic_n; ++ic) {
            const double* xch = x.ptr() + ((b * ic_n + ic) * ih) * iw;
            double* dxch = dx.ptr() + ((b * ic_n + ic) * ih) * iw;
            const double* wker = pv + lp.weight_offset + ((oc * ic_n + ic) * k) * k;
            double* gker = gv + lp.weight_offset + ((oc * ic_n + ic) * k) * k;
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ky = 0; ky < k; ++ky) {
                const long iy = static_cast<long>(oy + ky) - p;
                if (iy < 0 || iy >= static_cast<long>(ih)) continue;
                const double* xline = xch + static_cast<std::size_t>(iy) * iw;
                double* dxline = dxch + static_cast<std::size_t>(iy) * iw;
                const double* dline = drow + oy * ow;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const long x0 = -p + static_cast<long>(kx);
                  std::size_t ox_lo = x0 < 0 ? static_cast<std::size_t>(-x0) : 0;
                  long ox_hi_l = static_cast<long>(iw) - 1 - x0;
                  if (ox_hi_l < 0) continue;
                  std::size_t ox_hi =
                      std::min<std::size_t>(ow - 1, static_cast<std::size_t>(ox_hi_l));
                  const double wv = wker[ky * k + kx];
                  double gw = 0.0;
                  const double* xp = xline + static_cast<std::size_t>(static_cast<long>(ox_lo) + x0);
                  double* dxp = dxline + static_cast<std::size_t>(static_cast<long>(ox_lo) + x0);
                  for (std::size_t ox = ox_lo; ox <= ox_hi; ++ox, ++xp, ++dxp) {
                    const double g = dline[ox];
                    gw += g * *xp;
                    *dxp += g * wv;
                  }
                  gker[ky * k + kx] += gw;
                }
              }
          }
        }
    } else if (std::holds_alternative<MaxPool2d>(lp.layer)) {
      dx = Tensor(x.shape);
      const std::vector<std::size_t>& argmax = trace.pool_argmax[ii];
      for (std::size_t j = 0; j < delta.numel(); ++j) dx.data[argmax[j]] += delta.data[j];
    } else if (std::holds_alternative<Relu>(lp.layer)) {
      dx = std::move(delta);
      for (std::size_t j = 0; j < dx.numel(); ++j) {
        if (x.data[j] <= 0.0) dx.data[j] = 0.0;
      }
    } else if (std::holds_alternative<Flatten>(lp.layer)) {
      dx = Tensor(x.shape, std::move(delta.data));
    } else if (std::holds_alternative<Linear>(lp.layer)) {
      const std::size_t in_f = lp.in.features, out_f = lp.out.features;
      dx = Tensor({bsz, in_f});
      const double* wmat = pv + lp.weight_offset;
      for (std::size_t b = 0; b < bsz; ++b) {
        const double* xrow = x.ptr() + b * in_f;
        const double* drow = delta.ptr() + b * out_f;
        double* dxrow = dx.ptr() + b * in_f;
        for (std::size_t o = 0; o < out_f; ++o) {
          const double g = drow[o];
          gv[lp.bias_offset + o] += g;
          double* gw = gv + lp.weight_offset + o * in_f;
          const double* wrow = wmat + o * in_f;
          for (std::size_t j = 0; j < in_f; ++j) {
            gw[j] += g * xrow[j];
            dxrow[j] += g * wrow[j];
          }
        }
      }
    } else if (std::holds_alternative<Dropout>(lp.layer)) {
      dx = std::move(delta);
      const std::vector<double>& scales = trace.dropout_scale[ii];
      if (!scales.empty()) {
        for (std::size_t j = 0; j < dx.numel(); ++j) dx.data[j] *= scales[j];
      }
    }

    delta = std::move(dx);
  }

  return result;
}

// ---------------------------------------------------------------------------
// Canonical architectures
// ---------------------------------------------------------------------------

/// Expanded LeNet-5 classifier for 150x150 single-channel images.
///
/// Four 5x5 convolutions (padding 1) with channel progression 6, 16, 26, 32,
/// each followed by ReLU and 2x2 max pooling, then 1568-120-84-2 fully
/// connected layers with dropout ahead of the last two. 232,444 parameters.
inline NetworkSpec build_lenet_expanded(double dropout_rate = 0.5) {
  NetworkSpec spec;
  spec.input_h = 150;
  spec.input_w = 150;
  spec.input_channels = 1;
  spec.layers = {
      Conv2d{1, 6, 5, 1},   Relu{}, MaxPool2d{2},
      Conv2d{6, 16, 5, 1},  Relu{}, MaxPool2d{2},
      Conv2d{16, 26, 5, 1}, Relu{}, MaxPool2d{2},
      Conv2d{26, 32, 5, 1}, Relu{}, MaxPool2d{2},
      Flatten{},
      Linear{32 * 7 * 7, 120}, Relu{},
      Dropout{dropout_rate},
      Linear{120, 84}, Relu{},
      Dropout{dropout_rate},
      Linear{84, 2},
  };
  return spec;
}

/// Small two-conv classifier used by the desk-scale presets. The input side
/// must be divisible by 4 so the two pooling stages compose.
inline NetworkSpec build_compact_cnn(std::size_t image_size = 24, double dropout_rate = 0.5,
                                     std::size_t hidden = 24) {
  require(image_size >= 8 && image_size % 4 == 0,
          "compact cnn wants an input size divisible by 4");
  NetworkSpec spec;
  spec.input_h = image_size;
  spec.input_w = image_size;
  spec.input_channels = 1;
  const std::size_t side = image_size / 4;
  spec.layers = {
      Conv2d{1, 4, 3, 1}, Relu{}, MaxPool2d{2},
      Conv2d{4, 8, 3, 1}, Relu{}, MaxPool2d{2},
      Flatten{},
      Linear{static_cast<int>(8 * side * side), static_cast<int>(hidden)}, Relu{},
      Dropout{dropout_rate},
      Linear{static_cast<int>(hidden), 2},
  };
  return spec;
}

}  // namespace bnn
