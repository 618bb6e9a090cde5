#include "appsign/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "appsign/errors.hpp"
#include "appsign/rng.hpp"

namespace appsign {

namespace {

constexpr double kMinProb = 1e-300;

struct ForwardCache {
  std::vector<Tensor> acts;                        // acts[i] = input of layer i
  std::vector<std::vector<int>> pool_argmax;       // winner flat index per output
  std::vector<std::vector<std::uint8_t>> relu_gate;  // 1 where input > 0
};

Tensor forward_cached(const NetworkSpec& net, const Tensor& input,
                      ForwardCache* cache) {
  Tensor cur = input;
  if (cache) {
    cache->pool_argmax.resize(net.layers.size());
    cache->relu_gate.resize(net.layers.size());
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (cache) cache->acts.push_back(cur);
    switch (l.kind) {
      case LayerKind::Conv2d: {
        int oh = cur.height() - l.kernel_h + 1;
        int ow = cur.width() - l.kernel_w + 1;
        if (!cur.is_3d() || cur.channels() != l.in_channels || oh <= 0 ||
            ow <= 0) {
          throw ShapeError("backward: conv2d input mismatch");
        }
        Tensor out = Tensor::chw(l.out_channels, oh, ow);
        for (int oc = 0; oc < l.out_channels; ++oc) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              double acc = l.biases[static_cast<std::size_t>(oc)];
              for (int ic = 0; ic < l.in_channels; ++ic) {
                for (int ky = 0; ky < l.kernel_h; ++ky) {
                  for (int kx = 0; kx < l.kernel_w; ++kx) {
                    acc += l.weights[l.conv_w_index(oc, ic, ky, kx)] *
                           cur.at(ic, oy + ky, ox + kx);
                  }
                }
              }
              out.at(oc, oy, ox) = acc;
            }
          }
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::Dense: {
        if (cur.size() != static_cast<std::size_t>(l.in_features)) {
          throw ShapeError("backward: dense input mismatch");
        }
        Tensor out = Tensor::flat(l.out_features);
        for (int o = 0; o < l.out_features; ++o) {
          double acc = l.biases[static_cast<std::size_t>(o)];
          for (int in = 0; in < l.in_features; ++in) {
            acc += l.weights[l.dense_w_index(o, in)] *
                   cur[static_cast<std::size_t>(in)];
          }
          out[static_cast<std::size_t>(o)] = acc;
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::MaxPool2d: {
        int oh = cur.height() / l.window_h;
        int ow = cur.width() / l.window_w;
        if (oh < 1 || ow < 1) throw ShapeError("backward: pool window too big");
        Tensor out = Tensor::chw(cur.channels(), oh, ow);
        std::vector<int>* winners = cache ? &cache->pool_argmax[i] : nullptr;
        for (int c = 0; c < cur.channels(); ++c) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              int by = oy * l.window_h, bx = ox * l.window_w;
              double best = cur.at(c, by, bx);
              int best_idx = (c * cur.height() + by) * cur.width() + bx;
              for (int ky = 0; ky < l.window_h; ++ky) {
                for (int kx = 0; kx < l.window_w; ++kx) {
                  double v = cur.at(c, by + ky, bx + kx);
                  if (v > best) {  // first maximum wins ties
                    best = v;
                    best_idx =
                        (c * cur.height() + by + ky) * cur.width() + bx + kx;
                  }
                }
              }
              out.at(c, oy, ox) = best;
              if (winners) winners->push_back(best_idx);
            }
          }
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::Relu: {
        std::vector<std::uint8_t>* gate = cache ? &cache->relu_gate[i] : nullptr;
        Tensor out = cur;
        for (double& v : out.data()) {
          if (gate) gate->push_back(v > 0.0 ? 1 : 0);
          v = std::max(0.0, v);
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::Flatten:
        cur = cur.flattened();
        break;
      case LayerKind::Softmax:
        cur = softmax(cur);
        break;
    }
  }
  return cur;
}

void check_label(const NetworkSpec& net, int label) {
  if (net.classes <= 0 || label < 0 || label >= net.classes) {
    throw ShapeError("label out of range");
  }
}

}  // namespace

void TrainConfig::validate() const {
  // zero is allowed as the degenerate no-op schedule
  if (learning_rate < 0.0) throw InvalidParam("train: learning rate must be >= 0");
  if (epochs < 1) throw InvalidParam("train: epochs must be >= 1");
  if (batch_size < 1) throw InvalidParam("train: batch size must be >= 1");
  if (!(lr_decay > 0.0)) throw InvalidParam("train: lr decay must be > 0");
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw InvalidParam("train: holdout fraction must be in [0,1)");
  }
}

void init_weights(NetworkSpec& net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& l : net.layers) {
    if (!l.has_params()) continue;
    int fan_in = 0, fan_out = 0;
    if (l.kind == LayerKind::Conv2d) {
      fan_in = l.in_channels * l.kernel_h * l.kernel_w;
      fan_out = l.out_channels * l.kernel_h * l.kernel_w;
    } else {
      fan_in = l.in_features;
      fan_out = l.out_features;
    }
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& w : l.weights.data()) w = rng.uniform(-bound, bound);
    std::fill(l.biases.begin(), l.biases.end(), 0.0);
  }
}

Gradients zero_gradients(const NetworkSpec& net) {
  Gradients g(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (!l.has_params()) continue;
    g[i].weights.assign(l.weights.size(), 0.0);
    g[i].biases.assign(l.biases.size(), 0.0);
  }
  return g;
}

void accumulate_gradients(Gradients& into, const Gradients& g) {
  for (std::size_t i = 0; i < into.size(); ++i) {
    for (std::size_t j = 0; j < g[i].weights.size(); ++j) {
      into[i].weights[j] += g[i].weights[j];
    }
    for (std::size_t j = 0; j < g[i].biases.size(); ++j) {
      into[i].biases[j] += g[i].biases[j];
    }
  }
}

std::pair<double, Gradients> network_backward(const NetworkSpec& net,
                                              const Tensor& input, int label) {
  check_label(net, label);
  if (net.layers.empty() || net.layers.back().kind != LayerKind::Softmax) {
    throw ShapeError("backward: network must end in softmax");
  }

  ForwardCache cache;
  Tensor probs = forward_cached(net, input, &cache);
  double loss =
      -std::log(std::max(probs[static_cast<std::size_t>(label)], kMinProb));

  Gradients grads = zero_gradients(net);

  // Cross-entropy through the softmax head collapses to probs - onehot on
  // the softmax input.
  Tensor d = probs;
  d[static_cast<std::size_t>(label)] -= 1.0;

  for (std::size_t ri = net.layers.size() - 1; ri-- > 0;) {
    // handled the softmax layer above; walk the rest in reverse
    const LayerSpec& l = net.layers[ri];
    const Tensor& in = cache.acts[ri];
    switch (l.kind) {
      case LayerKind::Dense: {
        auto& lw = grads[ri].weights;
        auto& lb = grads[ri].biases;
        Tensor din = Tensor::flat(l.in_features);
        for (int o = 0; o < l.out_features; ++o) {
          double dv = d[static_cast<std::size_t>(o)];
          lb[static_cast<std::size_t>(o)] += dv;
          for (int i2 = 0; i2 < l.in_features; ++i2) {
            lw[l.dense_w_index(o, i2)] += dv * in[static_cast<std::size_t>(i2)];
            din[static_cast<std::size_t>(i2)] +=
                dv * l.weights[l.dense_w_index(o, i2)];
          }
        }
        d = std::move(din);
        break;
      }
      case LayerKind::Conv2d: {
        auto& lw = grads[ri].weights;
        auto& lb = grads[ri].biases;
        int oh = d.height(), ow = d.width();
        Tensor din = Tensor::chw(in.channels(), in.height(), in.width());
        for (int oc = 0; oc < l.out_channels; ++oc) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              double dv = d.at(oc, oy, ox);
              lb[static_cast<std::size_t>(oc)] += dv;
              for (int ic = 0; ic < l.in_channels; ++ic) {
                for (int ky = 0; ky < l.kernel_h; ++ky) {
                  for (int kx = 0; kx < l.kernel_w; ++kx) {
                    lw[l.conv_w_index(oc, ic, ky, kx)] +=
                        dv * in.at(ic, oy + ky, ox + kx);
                    din.at(ic, oy + ky, ox + kx) +=
                        dv * l.weights[l.conv_w_index(oc, ic, ky, kx)];
                  }
                }
              }
            }
          }
        }
        d = std::move(din);
        break;
      }
      case LayerKind::MaxPool2d: {
        Tensor din = Tensor::chw(in.channels(), in.height(), in.width());
        const auto& winners = cache.pool_argmax[ri];
        for (std::size_t k = 0; k < d.size(); ++k) {
          din[static_cast<std::size_t>(winners[k])] += d[k];
        }
        d = std::move(din);
        break;
      }
      case LayerKind::Relu: {
        const auto& gate = cache.relu_gate[ri];
        for (std::size_t k = 0; k < d.size(); ++k) {
          if (!gate[k]) d[k] = 0.0;
        }
        break;
      }
      case LayerKind::Flatten: {
        Tensor din = Tensor::zeros(in.shape());
        din.data() = d.data();
        d = std::move(din);
        break;
      }
      case LayerKind::Softmax:
        throw ShapeError("backward: softmax only supported as the head");
    }
  }
  return {loss, std::move(grads)};
}

double sample_loss(const NetworkSpec& net, const Tensor& input, int label) {
  check_label(net, label);
  Tensor probs = forward_cached(net, input, nullptr);
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kMinProb));
}

void sgd_step(NetworkSpec& net, const Gradients& grads, double lr) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    if (!l.has_params()) continue;
    if (grads[i].weights.size() != l.weights.size() ||
        grads[i].biases.size() != l.biases.size()) {
      throw ShapeError("sgd: gradient shape mismatch");
    }
    for (std::size_t j = 0; j < l.weights.size(); ++j) {
      l.weights[j] -= lr * grads[i].weights[j];
    }
    for (std::size_t j = 0; j < l.biases.size(); ++j) {
      l.biases[j] -= lr * grads[i].biases[j];
    }
  }
}

double exact_accuracy_percent(const NetworkSpec& net, const Dataset& ds) {
  if (ds.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& item : ds.items) {
    Tensor out = forward_cached(net, item.image, nullptr);
    if (predicted_class(out) == item.label) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

TrainResult train(NetworkSpec net, const Dataset& dataset,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw EmptyDataset("train: dataset is empty");
  for (const auto& item : dataset.items) check_label(net, item.label);

  auto [train_set, holdout] =
      split_dataset(dataset, cfg.holdout_fraction, cfg.seed);
  if (train_set.empty()) throw EmptyDataset("train: empty training split");

  init_weights(net, cfg.seed);
  Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainResult result;
  const std::size_t n = train_set.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch);
    auto order = order_rng.permutation(n);

    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < n) {
      std::size_t batch_end =
          std::min(n, pos + static_cast<std::size_t>(cfg.batch_size));
      Gradients batch = zero_gradients(net);
      for (std::size_t k = pos; k < batch_end; ++k) {
        const auto& item = train_set.items[order[k]];
        auto [loss, g] = network_backward(net, item.image, item.label);
        loss_sum += loss;
        accumulate_gradients(batch, g);
      }
      sgd_step(net, batch, lr / static_cast<double>(batch_end - pos));
      pos = batch_end;
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.holdout_accuracy_percent = exact_accuracy_percent(net, holdout);
    result.history.push_back(stats);
  }
  result.net = std::move(net);
  return result;
}

namespace {

struct MaskedLoss {
  double loss = 0.0;
  std::vector<std::uint8_t> relu_gates;
  std::vector<int> pool_choices;

  bool same_region(const MaskedLoss& o) const {
    return relu_gates == o.relu_gates && pool_choices == o.pool_choices;
  }
};

MaskedLoss masked_loss(const NetworkSpec& net, const Tensor& input, int label) {
  ForwardCache cache;
  Tensor probs = forward_cached(net, input, &cache);
  MaskedLoss m;
  m.loss = -std::log(std::max(probs[static_cast<std::size_t>(label)], kMinProb));
  for (const auto& g : cache.relu_gate) {
    m.relu_gates.insert(m.relu_gates.end(), g.begin(), g.end());
  }
  for (const auto& p : cache.pool_argmax) {
    m.pool_choices.insert(m.pool_choices.end(), p.begin(), p.end());
  }
  return m;
}

}  // namespace

GradCheckResult grad_check(const NetworkSpec& net, const Tensor& input,
                           int label, double eps) {
  if (!(eps > 0.0) || eps > 1e-2) {
    throw InvalidParam("grad_check: eps must be in (0, 1e-2]");
  }
  check_label(net, label);

  auto [loss, analytic] = network_backward(net, input, label);
  (void)loss;

  NetworkSpec probe = net;
  GradCheckResult result;

  auto check_param = [&](double& slot, double analytic_g) {
    double saved = slot;
    slot = saved + eps;
    MaskedLoss plus = masked_loss(probe, input, label);
    slot = saved - eps;
    MaskedLoss minus = masked_loss(probe, input, label);
    slot = saved;
    if (!plus.same_region(minus)) {
      ++result.skipped;
      return;
    }
    double numeric = (plus.loss - minus.loss) / (2.0 * eps);
    double denom =
        std::max({1.0, std::fabs(analytic_g), std::fabs(numeric)});
    result.max_rel_error =
        std::max(result.max_rel_error, std::fabs(analytic_g - numeric) / denom);
    ++result.checked;
  };

  for (std::size_t i = 0; i < probe.layers.size(); ++i) {
    auto& l = probe.layers[i];
    if (!l.has_params()) continue;
    for (std::size_t j = 0; j < l.weights.size(); ++j) {
      check_param(l.weights[j], analytic[i].weights[j]);
    }
    for (std::size_t j = 0; j < l.biases.size(); ++j) {
      check_param(l.biases[j], analytic[i].biases[j]);
    }
  }
  return result;
}

}  // namespace appsign
