#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "appsign/dataset.hpp"
#include "appsign/network.hpp"

namespace appsign {

// Exact-arithmetic reference trainer. Approximate kernels never appear
// here; approximation is an inference-time concern.
struct TrainConfig {
  double learning_rate = 0.08;
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 1;
  double lr_decay = 1.0;          // multiplicative, per epoch
  double holdout_fraction = 0.2;  // seeded split carved from the dataset

  void validate() const;
};

struct LayerGrads {
  std::vector<double> weights;
  std::vector<double> biases;
};
using Gradients = std::vector<LayerGrads>;  // aligned with net.layers

// Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases, seeded.
void init_weights(NetworkSpec& net, std::uint64_t seed);

// Analytic gradients of cross-entropy-after-softmax for one sample, via
// reverse accumulation. The network's last layer must be softmax.
// Returns (loss, gradients).
std::pair<double, Gradients> network_backward(const NetworkSpec& net,
                                              const Tensor& input, int label);

double sample_loss(const NetworkSpec& net, const Tensor& input, int label);

void sgd_step(NetworkSpec& net, const Gradients& grads, double lr);

Gradients zero_gradients(const NetworkSpec& net);
void accumulate_gradients(Gradients& into, const Gradients& g);

struct EpochStats {
  double train_loss = 0.0;
  double holdout_accuracy_percent = 0.0;
};

struct TrainResult {
  NetworkSpec net;
  std::vector<EpochStats> history;
};

TrainResult train(NetworkSpec net, const Dataset& dataset,
                  const TrainConfig& cfg);

// Central-difference gradient verification for one sample.
//
// Per-parameter error is |analytic - numeric| / max(1, |analytic|,
// |numeric|). Parameters whose +-eps perturbation flips a relu gate or a
// maxpool argmax are skipped: the loss is not differentiable across those
// boundaries, so a central difference says nothing there.
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

GradCheckResult grad_check(const NetworkSpec& net, const Tensor& input,
                           int label, double eps);

// Plain exact-accuracy helper used for history rows.
double exact_accuracy_percent(const NetworkSpec& net, const Dataset& ds);

}  // namespace appsign
