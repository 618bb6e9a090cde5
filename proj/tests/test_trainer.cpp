#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "appsign/model_io.hpp"
#include "appsign/rng.hpp"
#include "appsign/trainer.hpp"

using namespace appsign;

namespace {

NetworkSpec tiny_random_net(std::uint64_t seed, int in_c = 2, int img = 6,
                            int classes = 3) {
  NetworkSpec net;
  net.arch_name = "tiny-test";
  net.input_shape = {in_c, img, img};
  net.layers = {
      LayerSpec::conv2d(3, 3, 3), LayerSpec::relu(),
      LayerSpec::maxpool2d(2, 2),
      LayerSpec::flatten(),
      LayerSpec::dense(4),        LayerSpec::relu(),
      LayerSpec::dense(classes),  LayerSpec::softmax(),
  };
  finalize_network(net);
  init_weights(net, seed);
  return net;
}

Tensor random_input(const NetworkSpec& net, Rng& rng) {
  Tensor t = Tensor::chw(net.input_shape[0], net.input_shape[1],
                         net.input_shape[2]);
  for (double& v : t.data()) v = rng.uniform(0.0, 1.0);
  return t;
}

std::vector<double> all_weights(const NetworkSpec& net) {
  std::vector<double> out;
  for (const auto& l : net.layers) {
    if (!l.has_params()) continue;
    out.insert(out.end(), l.weights.data().begin(), l.weights.data().end());
    out.insert(out.end(), l.biases.begin(), l.biases.end());
  }
  return out;
}

double mean_loss(const NetworkSpec& net, const Dataset& ds) {
  double sum = 0.0;
  for (const auto& item : ds.items) {
    sum += sample_loss(net, item.image, item.label);
  }
  return sum / static_cast<double>(ds.size());
}

}  // namespace

TEST_SUITE("finite differences") {
  TEST_CASE("central difference of a linear map is exact to rounding") {
    auto f = [](double w) { return 3.0 * w + 1.0; };
    double eps = 1e-4;
    double numeric = (f(0.7 + eps) - f(0.7 - eps)) / (2.0 * eps);
    CHECK(std::fabs(numeric - 3.0) <= 1e-10);
  }

  TEST_CASE("near-linear single-weight network") {
    // one active weight, tiny input: the loss is linear to ~1e-12 over
    // the probe window
    NetworkSpec net;
    net.input_shape = {1, 1, 1};
    net.layers = {LayerSpec::flatten(), LayerSpec::dense(2),
                  LayerSpec::softmax()};
    finalize_network(net);
    net.layers[1].weights = Tensor::from({2, 1}, {0.05, 0.0});
    Tensor in = Tensor::from({1, 1, 1}, {0.01});
    GradCheckResult r = grad_check(net, in, 0, 1e-4);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error <= 1e-9);
  }
}

TEST_SUITE("network_backward") {
  TEST_CASE("single dense layer matches the closed form") {
    // gradient of CE-after-softmax w.r.t. W is (probs - onehot) x input
    NetworkSpec net;
    net.input_shape = {1, 1, 3};
    net.layers = {LayerSpec::flatten(), LayerSpec::dense(3),
                  LayerSpec::softmax()};
    finalize_network(net);
    net.layers[1].weights =
        Tensor::from({3, 3}, {0.2, -0.1, 0.4, 0.0, 0.3, -0.2, 0.1, 0.1, 0.0});
    net.layers[1].biases = {0.05, -0.05, 0.0};
    Tensor in = Tensor::from({1, 1, 3}, {0.5, -0.25, 1.5});

    auto [loss, grads] = network_backward(net, in, 1);
    CHECK(loss > 0.0);

    OpCount scratch;
    Tensor logits = dense_forward(flatten(in), net.layers[1],
                                  MulKernel(KernelId::Exact), scratch);
    Tensor probs = softmax(logits);
    for (int o = 0; o < 3; ++o) {
      double d = probs[static_cast<std::size_t>(o)] - (o == 1 ? 1.0 : 0.0);
      CHECK(grads[1].biases[static_cast<std::size_t>(o)] ==
            doctest::Approx(d).epsilon(1e-12));
      for (int i = 0; i < 3; ++i) {
        CHECK(grads[1].weights[net.layers[1].dense_w_index(o, i)] ==
              doctest::Approx(d * in[static_cast<std::size_t>(i)])
                  .epsilon(1e-12));
      }
    }
  }

  TEST_CASE("gradient check on 10 random tiny nets") {
    Rng rng(301);
    for (int t = 0; t < 10; ++t) {
      NetworkSpec net = tiny_random_net(400 + static_cast<std::uint64_t>(t));
      Tensor in = random_input(net, rng);
      int label = static_cast<int>(rng.index(3));
      GradCheckResult r = grad_check(net, in, label, 1e-4);
      CHECK(r.checked > 0);
      CHECK_MESSAGE(r.max_rel_error <= 1e-4, "net ", t, " rel ",
                    r.max_rel_error, " skipped ", r.skipped);
    }
  }

  TEST_CASE("saturated prediction has a vanishing gradient") {
    NetworkSpec net;
    net.input_shape = {1, 1, 1};
    net.layers = {LayerSpec::flatten(), LayerSpec::dense(2),
                  LayerSpec::softmax()};
    finalize_network(net);
    net.layers[1].weights = Tensor::from({2, 1}, {25.0, -25.0});
    Tensor in = Tensor::from({1, 1, 1}, {1.0});
    auto [loss, grads] = network_backward(net, in, 0);
    CHECK(loss <= 1e-6);
    double norm = 0.0;
    for (double g : grads[1].weights) norm += g * g;
    for (double g : grads[1].biases) norm += g * g;
    CHECK(std::sqrt(norm) <= 1e-6);
  }

  TEST_CASE("label and head validation") {
    NetworkSpec net = tiny_random_net(5);
    Tensor in = Tensor::chw(2, 6, 6);
    CHECK_THROWS_AS(network_backward(net, in, -1), ShapeError);
    CHECK_THROWS_AS(network_backward(net, in, 3), ShapeError);
    NetworkSpec headless;
    headless.input_shape = {1, 1, 2};
    headless.layers = {LayerSpec::flatten(), LayerSpec::dense(2)};
    finalize_network(headless);
    CHECK_THROWS_AS(network_backward(headless, Tensor::chw(1, 1, 2), 0),
                    ShapeError);
  }

  TEST_CASE("grad_check rejects bad eps") {
    NetworkSpec net = tiny_random_net(6);
    Tensor in = Tensor::chw(2, 6, 6);
    CHECK_THROWS_AS(grad_check(net, in, 0, 0.0), InvalidParam);
    CHECK_THROWS_AS(grad_check(net, in, 0, 0.5), InvalidParam);
  }
}

TEST_SUITE("sgd") {
  TEST_CASE("zero learning rate leaves the net unchanged") {
    NetworkSpec net = tiny_random_net(7);
    auto before = all_weights(net);
    Rng rng(8);
    auto [loss, grads] = network_backward(net, random_input(net, rng), 1);
    (void)loss;
    sgd_step(net, grads, 0.0);
    CHECK(all_weights(net) == before);
  }

  TEST_CASE("single-parameter arithmetic") {
    NetworkSpec net;
    net.input_shape = {1, 1, 1};
    net.layers = {LayerSpec::flatten(), LayerSpec::dense(1)};
    finalize_network(net);
    net.layers[1].weights = Tensor::from({1, 1}, {1.0});
    Gradients g = zero_gradients(net);
    g[1].weights = {2.0};
    g[1].biases = {0.0};
    sgd_step(net, g, 0.5);
    CHECK(net.layers[1].weights[0] == 0.0);
  }

  TEST_CASE("two steps equal one step with summed gradients") {
    NetworkSpec a = tiny_random_net(9);
    NetworkSpec b = a;
    Rng rng(10);
    Tensor in = random_input(a, rng);
    auto [l1, g1] = network_backward(a, in, 0);
    auto [l2, g2] = network_backward(a, in, 2);  // both from the same net
    (void)l1;
    (void)l2;

    sgd_step(a, g1, 0.1);
    sgd_step(a, g2, 0.1);

    Gradients sum = g1;
    accumulate_gradients(sum, g2);
    sgd_step(b, sum, 0.1);

    auto wa = all_weights(a);
    auto wb = all_weights(b);
    REQUIRE(wa.size() == wb.size());
    for (std::size_t i = 0; i < wa.size(); ++i) {
      CHECK(wa[i] == doctest::Approx(wb[i]).epsilon(1e-12));
    }
  }
}

TEST_SUITE("train") {
  TEST_CASE("same seed gives bit-identical weights") {
    Dataset ds = gen_synthetic_dataset(3, 6, 12, 42);
    NetworkSpec net;
    net.input_shape = {3, 12, 12};
    net.layers = {
        LayerSpec::conv2d(4, 3, 3), LayerSpec::relu(),
        LayerSpec::maxpool2d(2, 2), LayerSpec::flatten(),
        LayerSpec::dense(3),        LayerSpec::softmax(),
    };
    finalize_network(net);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 77;
    TrainResult a = train(net, ds, cfg);
    TrainResult b = train(net, ds, cfg);
    CHECK(all_weights(a.net) == all_weights(b.net));
    REQUIRE(a.history.size() == 2);
    CHECK(a.history[0].train_loss == b.history[0].train_loss);
    CHECK(a.history[1].holdout_accuracy_percent ==
          b.history[1].holdout_accuracy_percent);
  }

  TEST_CASE("zero learning rate keeps the initial weights") {
    Dataset ds = gen_synthetic_dataset(2, 4, 12, 43);
    NetworkSpec net;
    net.input_shape = {3, 12, 12};
    net.layers = {LayerSpec::flatten(), LayerSpec::dense(2),
                  LayerSpec::softmax()};
    finalize_network(net);

    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 1;
    cfg.seed = 5;
    TrainResult r = train(net, ds, cfg);

    NetworkSpec expect = net;
    init_weights(expect, cfg.seed);
    CHECK(all_weights(r.net) == all_weights(expect));
  }

  TEST_CASE("empty dataset raises") {
    NetworkSpec net = tiny_random_net(11);
    CHECK_THROWS_AS(train(net, Dataset{}, TrainConfig{}), EmptyDataset);
  }

  TEST_CASE("invalid config raises") {
    TrainConfig cfg;
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidParam);
    cfg = TrainConfig{};
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidParam);
    cfg = TrainConfig{};
    cfg.holdout_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidParam);
  }

  TEST_CASE("first epoch does not increase the training loss (8 of 10 seeds)") {
    int non_increasing = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      Dataset ds = gen_synthetic_dataset(2, 8, 12, 1000 + seed);
      NetworkSpec net;
      net.input_shape = {3, 12, 12};
      net.layers = {
          LayerSpec::conv2d(4, 3, 3), LayerSpec::relu(),
          LayerSpec::maxpool2d(2, 2), LayerSpec::flatten(),
          LayerSpec::dense(2),        LayerSpec::softmax(),
      };
      finalize_network(net);

      TrainConfig cfg;
      cfg.learning_rate = 1e-3;
      cfg.epochs = 1;
      cfg.batch_size = 4;
      cfg.seed = seed;
      cfg.holdout_fraction = 0.25;

      auto [train_set, holdout] = split_dataset(ds, 0.25, seed);
      (void)holdout;
      NetworkSpec initial = net;
      init_weights(initial, seed);
      double before = mean_loss(initial, train_set);

      TrainResult r = train(net, ds, cfg);
      double after = mean_loss(r.net, train_set);
      if (after <= before + 1e-12) ++non_increasing;
    }
    CHECK(non_increasing >= 8);
  }
}

TEST_SUITE("init") {
  TEST_CASE("bounds follow fan-in and fan-out") {
    NetworkSpec net = tiny_random_net(12);
    const auto& conv = net.layers[0];
    double bound = std::sqrt(6.0 / (2 * 9 + 3 * 9));
    for (double w : conv.weights.data()) {
      CHECK(std::fabs(w) <= bound);
    }
    for (double b : conv.biases) CHECK(b == 0.0);
  }

  TEST_CASE("same seed reproduces, different seed differs") {
    NetworkSpec a = tiny_random_net(13);
    NetworkSpec b = tiny_random_net(13);
    NetworkSpec c = tiny_random_net(14);
    CHECK(all_weights(a) == all_weights(b));
    CHECK(all_weights(a) != all_weights(c));
  }
}
