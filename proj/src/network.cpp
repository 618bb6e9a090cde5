#include "appsign/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace appsign {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d:
      return "conv2d";
    case LayerKind::MaxPool2d:
      return "maxpool2d";
    case LayerKind::Relu:
      return "relu";
    case LayerKind::Flatten:
      return "flatten";
    case LayerKind::Dense:
      return "dense";
    case LayerKind::Softmax:
      return "softmax";
  }
  return "relu";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv2d") return LayerKind::Conv2d;
  if (s == "maxpool2d") return LayerKind::MaxPool2d;
  if (s == "relu") return LayerKind::Relu;
  if (s == "flatten") return LayerKind::Flatten;
  if (s == "dense") return LayerKind::Dense;
  if (s == "softmax") return LayerKind::Softmax;
  throw FormatError("unknown layer kind: " + s);
}

LayerSpec LayerSpec::conv2d(int out_channels, int kernel_h, int kernel_w) {
  LayerSpec l;
  l.kind = LayerKind::Conv2d;
  l.out_channels = out_channels;
  l.kernel_h = kernel_h;
  l.kernel_w = kernel_w;
  return l;
}

LayerSpec LayerSpec::maxpool2d(int window_h, int window_w) {
  LayerSpec l;
  l.kind = LayerKind::MaxPool2d;
  l.window_h = window_h;
  l.window_w = window_w;
  return l;
}

LayerSpec LayerSpec::relu() {
  LayerSpec l;
  l.kind = LayerKind::Relu;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::Flatten;
  return l;
}

LayerSpec LayerSpec::dense(int out_features) {
  LayerSpec l;
  l.kind = LayerKind::Dense;
  l.out_features = out_features;
  return l;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec l;
  l.kind = LayerKind::Softmax;
  return l;
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

void finalize_network(NetworkSpec& net) {
  bool flat = false;
  int c = net.input_shape[0], h = net.input_shape[1], w = net.input_shape[2];
  int flat_n = 0;
  if (c <= 0 || h <= 0 || w <= 0) {
    throw ShapeError("network: input shape must be positive");
  }
  net.conv_layer_indices.clear();
  net.classes = 0;

  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LayerSpec& l = net.layers[i];
    switch (l.kind) {
      case LayerKind::Conv2d: {
        if (flat) throw ShapeError("conv2d after flatten");
        l.in_channels = c;
        int oh = h - l.kernel_h + 1;
        int ow = w - l.kernel_w + 1;
        if (l.out_channels <= 0 || l.kernel_h <= 0 || l.kernel_w <= 0 ||
            oh <= 0 || ow <= 0) {
          throw ShapeError("conv2d: kernel does not fit input");
        }
        std::vector<int> wshape = {l.out_channels, l.in_channels, l.kernel_h,
                                   l.kernel_w};
        if (l.weights.size() == 0) {
          l.weights = Tensor::zeros(wshape);
        } else if (l.weights.shape() != wshape) {
          throw ShapeError("conv2d: weight shape mismatch");
        }
        if (l.biases.empty()) {
          l.biases.assign(static_cast<std::size_t>(l.out_channels), 0.0);
        } else if (l.biases.size() != static_cast<std::size_t>(l.out_channels)) {
          throw ShapeError("conv2d: bias length mismatch");
        }
        c = l.out_channels;
        h = oh;
        w = ow;
        net.conv_layer_indices.push_back(static_cast<int>(i));
        break;
      }
      case LayerKind::MaxPool2d: {
        if (flat) throw ShapeError("maxpool2d after flatten");
        if (l.window_h <= 0 || l.window_w <= 0 || l.window_h > h ||
            l.window_w > w) {
          throw ShapeError("maxpool2d: window larger than input");
        }
        h /= l.window_h;
        w /= l.window_w;
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::Flatten:
        if (!flat) {
          flat_n = c * h * w;
          flat = true;
        }
        break;
      case LayerKind::Dense: {
        if (!flat) throw ShapeError("dense requires flattened input");
        l.in_features = flat_n;
        if (l.out_features <= 0) throw ShapeError("dense: bad out_features");
        std::vector<int> wshape = {l.out_features, l.in_features};
        if (l.weights.size() == 0) {
          l.weights = Tensor::zeros(wshape);
        } else if (l.weights.shape() != wshape) {
          throw ShapeError("dense: weight shape mismatch");
        }
        if (l.biases.empty()) {
          l.biases.assign(static_cast<std::size_t>(l.out_features), 0.0);
        } else if (l.biases.size() != static_cast<std::size_t>(l.out_features)) {
          throw ShapeError("dense: bias length mismatch");
        }
        flat_n = l.out_features;
        net.classes = l.out_features;
        break;
      }
      case LayerKind::Softmax:
        if (!flat) throw ShapeError("softmax requires flattened input");
        break;
    }
  }
}

NetworkSpec make_appsign30(int classes) {
  NetworkSpec net;
  net.arch_name = "appsign-30";
  net.input_shape = {3, 30, 30};
  net.layers = {
      LayerSpec::conv2d(32, 5, 5), LayerSpec::relu(),
      LayerSpec::conv2d(32, 5, 5), LayerSpec::relu(),
      LayerSpec::maxpool2d(2, 2),
      LayerSpec::conv2d(64, 3, 3), LayerSpec::relu(),
      LayerSpec::conv2d(64, 3, 3), LayerSpec::relu(),
      LayerSpec::maxpool2d(2, 2),
      LayerSpec::flatten(),
      LayerSpec::dense(256),       LayerSpec::relu(),
      LayerSpec::dense(classes),   LayerSpec::softmax(),
  };
  finalize_network(net);
  return net;
}

NetworkSpec make_appsign_tiny(int classes) {
  NetworkSpec net;
  net.arch_name = "appsign-tiny";
  net.input_shape = {3, 16, 16};
  net.layers = {
      LayerSpec::conv2d(8, 3, 3),  LayerSpec::relu(),
      LayerSpec::conv2d(8, 3, 3),  LayerSpec::relu(),
      LayerSpec::maxpool2d(2, 2),
      LayerSpec::conv2d(16, 3, 3), LayerSpec::relu(),
      LayerSpec::conv2d(16, 3, 3), LayerSpec::relu(),
      LayerSpec::maxpool2d(2, 2),
      LayerSpec::flatten(),
      LayerSpec::dense(32),        LayerSpec::relu(),
      LayerSpec::dense(classes),   LayerSpec::softmax(),
  };
  finalize_network(net);
  return net;
}

NetworkSpec make_network(const std::string& arch, int classes) {
  if (arch == "appsign-30") return make_appsign30(classes);
  if (arch == "appsign-tiny") return make_appsign_tiny(classes);
  throw InvalidParam("unknown architecture: " + arch);
}

LayerAssignment LayerAssignment::parse(const std::string& spec,
                                       int conv_layers) {
  LayerAssignment a(conv_layers);
  if (spec.empty()) return a;

  if (spec.find('=') == std::string::npos) {
    // Compact combination label, one letter per conv layer from layer 1.
    if (static_cast<int>(spec.size()) > conv_layers) {
      throw InvalidParam("assignment label longer than conv layer count");
    }
    for (std::size_t i = 0; i < spec.size(); ++i) {
      std::string id;
      switch (spec[i]) {
        case 'R': id = "rounded"; break;
        case 'L': id = "lns"; break;
        case 'F': id = "famm"; break;
        case 'Q': id = "quantize"; break;
        case 'T': id = "tirud"; break;
        case 'E': id = "exact"; break;
        default:
          throw InvalidParam(std::string("unknown combination letter: ") +
                             spec[i]);
      }
      a.set_conv_kernel(static_cast<int>(i) + 1, MulKernel::parse(id));
    }
    return a;
  }

  std::stringstream ss(spec);
  std::string entry;
  while (std::getline(ss, entry, ',')) {
    auto eq = entry.find('=');
    if (eq == std::string::npos) {
      throw InvalidParam("assignment entry missing '=': " + entry);
    }
    int layer = 0;
    try {
      std::size_t used = 0;
      layer = std::stoi(entry.substr(0, eq), &used);
      if (used != eq) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InvalidParam("assignment entry has bad layer index: " + entry);
    }
    if (layer < 1 || layer > conv_layers) {
      throw InvalidParam("assignment layer index out of range: " + entry);
    }
    a.set_conv_kernel(layer, MulKernel::parse(entry.substr(eq + 1)));
  }
  return a;
}

std::string LayerAssignment::id() const {
  std::string out;
  for (int i = 1; i <= conv_layers(); ++i) {
    if (i > 1) out += ',';
    out += std::to_string(i) + "=" + conv_kernel(i).name();
  }
  return out;
}

namespace {

// Quantize kernels take per-tensor scales: weights on the a side,
// activations on the b side, scale = max|value| / (2^(bits-1)-1).
MulKernel bind_layer_kernel(const MulKernel& kernel, const Tensor& weights,
                            const Tensor& input) {
  if (kernel.id() != KernelId::Quantize) return kernel;
  auto max_abs = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
  };
  double qmax = static_cast<double>((1 << (kernel.bits() - 1)) - 1);
  double wa = max_abs(weights.data());
  double wb = max_abs(input.data());
  return kernel.with_scales(wa > 0.0 ? wa / qmax : 1.0,
                            wb > 0.0 ? wb / qmax : 1.0);
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const LayerSpec& layer,
                      const MulKernel& kernel, OpCount& counter) {
  if (layer.kind != LayerKind::Conv2d) throw ShapeError("not a conv2d layer");
  if (!input.is_3d() || input.channels() != layer.in_channels) {
    throw ShapeError("conv2d: input channel mismatch");
  }
  int oh = input.height() - layer.kernel_h + 1;
  int ow = input.width() - layer.kernel_w + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: kernel does not fit input");

  MulKernel bound = bind_layer_kernel(kernel, layer.weights, input);
  Tensor out = Tensor::chw(layer.out_channels, oh, ow);
  const std::size_t macs_per_out = static_cast<std::size_t>(layer.in_channels) *
                                   layer.kernel_h * layer.kernel_w;
  const bool exact = bound.id() == KernelId::Exact;

  for (int oc = 0; oc < layer.out_channels; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        if (exact) {
          for (int ic = 0; ic < layer.in_channels; ++ic) {
            for (int ky = 0; ky < layer.kernel_h; ++ky) {
              for (int kx = 0; kx < layer.kernel_w; ++kx) {
                acc += layer.weights[layer.conv_w_index(oc, ic, ky, kx)] *
                       input.at(ic, oy + ky, ox + kx);
              }
            }
          }
          counter.mul += macs_per_out;
        } else {
          for (int ic = 0; ic < layer.in_channels; ++ic) {
            for (int ky = 0; ky < layer.kernel_h; ++ky) {
              for (int kx = 0; kx < layer.kernel_w; ++kx) {
                acc += bound.multiply(
                    layer.weights[layer.conv_w_index(oc, ic, ky, kx)],
                    input.at(ic, oy + ky, ox + kx), counter);
              }
            }
          }
        }
        counter.add += macs_per_out + 1;  // accumulations plus the bias add
        out.at(oc, oy, ox) = acc + layer.biases[static_cast<std::size_t>(oc)];
      }
    }
  }
  return out;
}

Tensor dense_forward(const Tensor& input, const LayerSpec& layer,
                     const MulKernel& kernel, OpCount& counter) {
  if (layer.kind != LayerKind::Dense) throw ShapeError("not a dense layer");
  if (input.size() != static_cast<std::size_t>(layer.in_features)) {
    throw ShapeError("dense: input length mismatch");
  }
  MulKernel bound = bind_layer_kernel(kernel, layer.weights, input);
  Tensor out = Tensor::flat(layer.out_features);
  const bool exact = bound.id() == KernelId::Exact;

  for (int o = 0; o < layer.out_features; ++o) {
    double acc = 0.0;
    if (exact) {
      for (int i = 0; i < layer.in_features; ++i) {
        acc += layer.weights[layer.dense_w_index(o, i)] *
               input[static_cast<std::size_t>(i)];
      }
      counter.mul += static_cast<std::size_t>(layer.in_features);
    } else {
      for (int i = 0; i < layer.in_features; ++i) {
        acc += bound.multiply(layer.weights[layer.dense_w_index(o, i)],
                              input[static_cast<std::size_t>(i)], counter);
      }
    }
    counter.add += static_cast<std::size_t>(layer.in_features) + 1;
    out[static_cast<std::size_t>(o)] = acc + layer.biases[static_cast<std::size_t>(o)];
  }
  return out;
}

Tensor maxpool2d(const Tensor& input, int window_h, int window_w) {
  if (!input.is_3d()) throw ShapeError("maxpool2d: input must be 3-d");
  if (window_h <= 0 || window_w <= 0 || window_h > input.height() ||
      window_w > input.width()) {
    throw ShapeError("maxpool2d: window larger than input");
  }
  int oh = input.height() / window_h;  // trailing remainder dropped
  int ow = input.width() / window_w;
  Tensor out = Tensor::chw(input.channels(), oh, ow);
  for (int c = 0; c < input.channels(); ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double m = input.at(c, oy * window_h, ox * window_w);
        for (int ky = 0; ky < window_h; ++ky) {
          for (int kx = 0; kx < window_w; ++kx) {
            m = std::max(m, input.at(c, oy * window_h + ky, ox * window_w + kx));
          }
        }
        out.at(c, oy, ox) = m;
      }
    }
  }
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = std::max(0.0, v);
  return out;
}

Tensor flatten(const Tensor& input) { return input.flattened(); }

Tensor softmax(const Tensor& input) {
  if (input.is_3d()) throw ShapeError("softmax: input must be flat");
  Tensor out = input;
  double mx = out[0];
  for (double v : out.data()) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : out.data()) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : out.data()) v /= sum;
  return out;
}

ForwardResult network_forward(const NetworkSpec& net,
                              const LayerAssignment& assign,
                              const Tensor& input) {
  if (!input.is_3d() || input.channels() != net.input_shape[0] ||
      input.height() != net.input_shape[1] ||
      input.width() != net.input_shape[2]) {
    throw ShapeError("network: input shape mismatch");
  }
  if (assign.conv_layers() < net.conv_count()) {
    throw ShapeError("network: assignment covers fewer conv layers than net");
  }

  ForwardResult r;
  r.layer_ops.resize(net.layers.size());
  Tensor cur = input;
  int conv_seen = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    OpCount& ops = r.layer_ops[i];
    switch (l.kind) {
      case LayerKind::Conv2d:
        cur = conv2d_forward(cur, l, assign.conv_kernel(++conv_seen), ops);
        break;
      case LayerKind::Dense:
        cur = dense_forward(cur, l, assign.dense_kernel(), ops);
        break;
      case LayerKind::MaxPool2d:
        cur = maxpool2d(cur, l.window_h, l.window_w);
        break;
      case LayerKind::Relu:
        cur = relu(cur);
        break;
      case LayerKind::Flatten:
        cur = flatten(cur);
        break;
      case LayerKind::Softmax:
        cur = softmax(cur);
        break;
    }
    r.ops.merge(ops);
  }
  r.output = std::move(cur);
  return r;
}

int predicted_class(const Tensor& scores) {
  int best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[static_cast<std::size_t>(best)]) {
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace appsign
