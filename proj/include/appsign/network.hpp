#pragma once

#include <array>
#include <string>
#include <vector>

#include "appsign/kernels.hpp"
#include "appsign/opcount.hpp"
#include "appsign/tensor.hpp"

namespace appsign {

enum class LayerKind { Conv2d, MaxPool2d, Relu, Flatten, Dense, Softmax };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

// One layer of the network. Convolutions are valid-padding, stride 1;
// pooling strides by its window and drops trailing remainder rows/cols.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;

  // conv2d
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int in_channels = 0;

  // dense
  int out_features = 0;
  int in_features = 0;

  // maxpool2d
  int window_h = 0;
  int window_w = 0;

  // conv2d weights are {out_channels, in_channels*kernel_h*kernel_w} laid
  // out filter-major; dense weights are {out_features, in_features}.
  Tensor weights;
  std::vector<double> biases;

  std::size_t parameter_count() const {
    return weights.size() + biases.size();
  }
  bool has_params() const {
    return kind == LayerKind::Conv2d || kind == LayerKind::Dense;
  }

  std::size_t conv_w_index(int oc, int ic, int ky, int kx) const {
    return ((static_cast<std::size_t>(oc) * in_channels + ic) * kernel_h + ky) *
               kernel_w +
           kx;
  }
  std::size_t dense_w_index(int o, int i) const {
    return static_cast<std::size_t>(o) * in_features + i;
  }

  static LayerSpec conv2d(int out_channels, int kernel_h, int kernel_w);
  static LayerSpec maxpool2d(int window_h, int window_w);
  static LayerSpec relu();
  static LayerSpec flatten();
  static LayerSpec dense(int out_features);
  static LayerSpec softmax();
};

struct NetworkSpec {
  std::string arch_name;
  std::array<int, 3> input_shape = {0, 0, 0};  // channels, height, width
  std::vector<LayerSpec> layers;
  std::vector<int> conv_layer_indices;  // positions of conv2d layers, in order
  int classes = 0;

  int conv_count() const { return static_cast<int>(conv_layer_indices.size()); }
  std::size_t parameter_count() const;
};

// Chains shapes through all layers, resolving conv in_channels and dense
// in_features, allocating zero weights where absent, and validating that
// declared dims are consistent. Throws ShapeError otherwise.
void finalize_network(NetworkSpec& net);

// The two stock architectures. Weights are zero until trained or loaded.
NetworkSpec make_appsign30(int classes = 43);
NetworkSpec make_appsign_tiny(int classes = 8);
NetworkSpec make_network(const std::string& arch, int classes);

// Which multiply kernel each conv layer (1-based index) uses. Dense layers
// share one kernel, exact unless overridden. Conv layer 4 stays exact by
// default; an explicit spec can override it.
class LayerAssignment {
 public:
  LayerAssignment() = default;
  explicit LayerAssignment(int conv_layers)
      : conv_(static_cast<std::size_t>(conv_layers), MulKernel(KernelId::Exact)) {}

  static LayerAssignment all_exact(int conv_layers) {
    return LayerAssignment(conv_layers);
  }

  // "1=tirud,2=exact" style, or a compact combination label such as "RTF"
  // (R rounded, L lns, F famm, Q quantize, T tirud, E exact) applied to
  // conv layers 1..len. Unspecified conv layers stay exact.
  static LayerAssignment parse(const std::string& spec, int conv_layers);

  int conv_layers() const { return static_cast<int>(conv_.size()); }
  const MulKernel& conv_kernel(int index1) const { return conv_.at(index1 - 1); }
  void set_conv_kernel(int index1, MulKernel k) { conv_.at(index1 - 1) = std::move(k); }
  const MulKernel& dense_kernel() const { return dense_; }
  void set_dense_kernel(MulKernel k) { dense_ = std::move(k); }

  // Canonical "1=a,2=b,..." form; doubles as the lexicographic tie-break id.
  std::string id() const;

  bool operator==(const LayerAssignment& o) const {
    return conv_ == o.conv_ && dense_ == o.dense_;
  }

 private:
  std::vector<MulKernel> conv_;
  MulKernel dense_ = MulKernel(KernelId::Exact);
};

// Layer primitives. Counters accumulate in place: one cost report per
// scalar multiply, one counted add per accumulation, one per bias.
Tensor conv2d_forward(const Tensor& input, const LayerSpec& layer,
                      const MulKernel& kernel, OpCount& counter);
Tensor dense_forward(const Tensor& input, const LayerSpec& layer,
                     const MulKernel& kernel, OpCount& counter);
Tensor maxpool2d(const Tensor& input, int window_h, int window_w);
Tensor relu(const Tensor& input);
Tensor flatten(const Tensor& input);
Tensor softmax(const Tensor& input);

struct ForwardResult {
  Tensor output;
  OpCount ops;
  std::vector<OpCount> layer_ops;  // one entry per layer, in order
};

ForwardResult network_forward(const NetworkSpec& net,
                              const LayerAssignment& assign,
                              const Tensor& input);

// Argmax with ties broken to the lowest index.
int predicted_class(const Tensor& scores);

}  // namespace appsign
