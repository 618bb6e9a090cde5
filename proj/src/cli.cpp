#include "appsign/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "appsign/errors.hpp"
#include "appsign/eval.hpp"
#include "appsign/model_io.hpp"
#include "appsign/rng.hpp"
#include "appsign/trainer.hpp"

namespace fs = std::filesystem;

namespace appsign {

namespace {

// Flag-level misuse distinct from data errors; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SynthParams {
  int classes = 0;
  int per_class = 0;
  int size = 0;
};

SynthParams parse_synth(const std::string& spec) {
  SynthParams p;
  if (std::sscanf(spec.c_str(), "%d,%d,%d", &p.classes, &p.per_class,
                  &p.size) != 3) {
    throw UsageError("--synth expects classes,perClass,size");
  }
  return p;
}

OpWeights parse_op_weights(const std::string& spec) {
  OpWeights w;
  if (spec.empty()) return w;
  std::stringstream ss(spec);
  std::string entry;
  while (std::getline(ss, entry, ',')) {
    auto eq = entry.find('=');
    if (eq == std::string::npos) {
      throw UsageError("--op-weights entry missing '=': " + entry);
    }
    std::string key = entry.substr(0, eq);
    double value = 0.0;
    try {
      value = std::stod(entry.substr(eq + 1));
    } catch (const std::exception&) {
      throw UsageError("--op-weights bad value in: " + entry);
    }
    if (key == "mul") {
      w.mul = value;
    } else if (key == "add") {
      w.add = value;
    } else if (key == "shift") {
      w.shift = value;
    } else if (key == "xor") {
      w.xr = value;
    } else if (key == "log2") {
      w.log2 = value;
    } else {
      throw UsageError("--op-weights unknown primitive: " + key);
    }
  }
  return w;
}

// "L=rounded,shift_xor;H=lns,famm,tirud"
PrecisionClass parse_pools(const std::string& spec) {
  if (spec.empty()) return stock_precision_class();
  PrecisionClass pc;
  std::stringstream ss(spec);
  std::string group;
  while (std::getline(ss, group, ';')) {
    if (group.empty()) continue;
    auto eq = group.find('=');
    if (eq == std::string::npos || eq != 1 ||
        (group[0] != 'L' && group[0] != 'H')) {
      throw UsageError("--pools group must start with L= or H=: " + group);
    }
    bool high = group[0] == 'H';
    std::stringstream ks(group.substr(eq + 1));
    std::string id;
    while (std::getline(ks, id, ',')) {
      MulKernel::parse(id);  // validate before any work starts
      pc.is_high[id] = high;
    }
  }
  if (pc.is_high.empty()) throw UsageError("--pools defines no kernels");
  return pc;
}

std::vector<std::string> parse_patterns(const std::string& spec) {
  std::vector<std::string> out;
  std::stringstream ss(spec);
  std::string p;
  while (std::getline(ss, p, ',')) {
    if (p.empty()) continue;
    for (char c : p) {
      if (c != 'L' && c != 'H' && c != 'E') {
        throw UsageError("--patterns letters must be L, H, or E: " + p);
      }
    }
    out.push_back(p);
  }
  if (out.empty()) throw UsageError("--patterns is empty");
  return out;
}

Dataset resolve_dataset(const std::string& manifest, const std::string& synth,
                        std::uint64_t seed, int target_h, int target_w) {
  if (!manifest.empty() && !synth.empty()) {
    throw UsageError("give either --manifest or --synth, not both");
  }
  if (manifest.empty() && synth.empty()) {
    throw UsageError("a dataset is required: --manifest or --synth");
  }
  if (!manifest.empty()) return load_dataset(manifest, target_h, target_w);

  SynthParams p = parse_synth(synth);
  Dataset ds = gen_synthetic_dataset(p.classes, p.per_class, p.size, seed);
  if (p.size != target_h || p.size != target_w) {
    for (auto& item : ds.items) {
      item.image = resize_bilinear(item.image, target_h, target_w);
    }
  }
  return ds;
}

void emit_output(const SweepReport& report, const std::string& out,
                 const std::string& format) {
  std::string bytes;
  if (format == "csv") {
    bytes = emit_report_csv(report);
  } else if (format == "json") {
    bytes = emit_report_json(report);
  } else {
    throw UsageError("--format must be csv or json");
  }
  if (out.empty()) {
    std::cout << bytes;
  } else {
    write_file_atomic(out, bytes);
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

int cmd_bench_kernels(int samples, const std::string& range,
                      std::uint64_t seed, const std::string& out) {
  if (samples < 1000) throw UsageError("--samples must be >= 1000");
  double lo = 0.0, hi = 0.0;
  if (std::sscanf(range.c_str(), "%lf,%lf", &lo, &hi) != 2 || !(lo < hi)) {
    throw UsageError("--range expects lo,hi with lo < hi");
  }

  std::string csv =
      "kernel,samples,overflows,mean_rel_err,max_rel_err,"
      "underestimate_fraction,avg_mul,avg_add,avg_shift,avg_xor,avg_log2\n";

  double max_abs = std::max(std::fabs(lo), std::fabs(hi));
  for (const auto& id : MulKernel::canonical_ids()) {
    MulKernel kernel = MulKernel::parse(id);
    if (kernel.id() == KernelId::Quantize) {
      double scale = max_abs > 0.0 ? max_abs / 127.0 : 1.0;
      kernel = kernel.with_scales(scale, scale);
    }

    Rng rng(seed);  // every kernel sees the same operand stream
    OpCount ops;
    std::uint64_t overflows = 0, measured = 0, under = 0;
    double err_sum = 0.0, err_max = 0.0;
    for (int s = 0; s < samples; ++s) {
      double a = rng.uniform(lo, hi);
      double b = rng.uniform(lo, hi);
      double exact = a * b;
      double approx = 0.0;
      try {
        approx = kernel.multiply(a, b, ops);
      } catch (const OverflowError&) {
        ++overflows;
        continue;
      }
      ++measured;
      if (std::fabs(approx) <= std::fabs(exact) * (1.0 + 1e-12)) ++under;
      if (exact != 0.0) {
        double rel = std::fabs(approx - exact) / std::fabs(exact);
        err_sum += rel;
        err_max = std::max(err_max, rel);
      }
    }

    double m = measured > 0 ? static_cast<double>(measured) : 1.0;
    csv += id;
    csv += ',' + std::to_string(samples);
    csv += ',' + std::to_string(overflows);
    csv += ',' + fmt("%.8f", measured ? err_sum / m : 0.0);
    csv += ',' + fmt("%.8f", err_max);
    csv += ',' + fmt("%.6f", measured ? static_cast<double>(under) / m : 0.0);
    csv += ',' + fmt("%.4f", static_cast<double>(ops.mul) / m);
    csv += ',' + fmt("%.4f", static_cast<double>(ops.add) / m);
    csv += ',' + fmt("%.4f", static_cast<double>(ops.shift) / m);
    csv += ',' + fmt("%.4f", static_cast<double>(ops.xr) / m);
    csv += ',' + fmt("%.4f", static_cast<double>(ops.log2) / m);
    csv += '\n';
  }

  if (out.empty()) {
    std::cout << csv;
  } else {
    write_file_atomic(out, csv);
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"approximate-multiplier CNN workbench"};
  app.require_subcommand(1);

  // shared options
  std::string model, manifest, synth, assign_spec, patterns_spec, pools_spec;
  std::string op_weights_spec, out_path, format = "csv", range = "-8,8";
  std::string arch = "appsign-tiny";
  std::uint64_t seed = 1;
  int workers = 1, classes = 8, samples = 100000, epochs = 20, batch = 16;
  double lr = 0.08, lr_decay = 0.95, holdout = 0.2;

  auto* bench = app.add_subcommand("bench-kernels",
                                   "per-kernel error and cost statistics");
  bench->add_option("--samples", samples, "operand pairs per kernel");
  bench->add_option("--range", range, "operand range lo,hi");
  bench->add_option("--seed", seed, "rng seed");
  bench->add_option("--out", out_path, "output csv path (default stdout)");

  auto* train_cmd = app.add_subcommand("train", "train a model exactly");
  train_cmd->add_option("--arch", arch, "appsign-tiny | appsign-30");
  train_cmd->add_option("--classes", classes, "class count");
  train_cmd->add_option("--manifest", manifest, "dataset manifest csv");
  train_cmd->add_option("--synth", synth, "synthetic dataset classes,perClass,size");
  train_cmd->add_option("--seed", seed, "rng seed");
  train_cmd->add_option("--epochs", epochs, "training epochs");
  train_cmd->add_option("--lr", lr, "learning rate");
  train_cmd->add_option("--lr-decay", lr_decay, "per-epoch lr factor");
  train_cmd->add_option("--batch", batch, "batch size");
  train_cmd->add_option("--holdout", holdout, "holdout fraction");
  train_cmd->add_option("--model", model, "output model manifest path")
      ->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate one assignment");
  eval_cmd->add_option("--model", model, "model manifest path")->required();
  eval_cmd->add_option("--manifest", manifest, "dataset manifest csv");
  eval_cmd->add_option("--synth", synth, "synthetic dataset classes,perClass,size");
  eval_cmd->add_option("--assign", assign_spec,
                       "per-layer kernels, e.g. 1=tirud,2=exact or RTF");
  eval_cmd->add_option("--op-weights", op_weights_spec,
                       "per-primitive weights, e.g. mul=1,add=1");
  eval_cmd->add_option("--seed", seed, "rng seed (synthetic datasets)");
  eval_cmd->add_option("--workers", workers, "evaluation worker threads");
  eval_cmd->add_option("--out", out_path, "report path (default stdout)");
  eval_cmd->add_option("--format", format, "csv | json");

  auto* sweep_cmd = app.add_subcommand("sweep",
                                       "evaluate pattern combinations");
  sweep_cmd->add_option("--model", model, "model manifest path")->required();
  sweep_cmd->add_option("--manifest", manifest, "dataset manifest csv");
  sweep_cmd->add_option("--synth", synth, "synthetic dataset classes,perClass,size");
  sweep_cmd->add_option("--patterns", patterns_spec, "e.g. LHH,HLH")
      ->required();
  sweep_cmd->add_option("--pools", pools_spec,
                        "e.g. L=rounded,shift_xor;H=lns,famm,tirud");
  sweep_cmd->add_option("--op-weights", op_weights_spec, "per-primitive weights");
  sweep_cmd->add_option("--seed", seed, "rng seed (synthetic datasets)");
  sweep_cmd->add_option("--workers", workers, "evaluation worker threads");
  sweep_cmd->add_option("--out", out_path, "report path (default stdout)");
  sweep_cmd->add_option("--format", format, "csv | json");

  auto* synth_cmd = app.add_subcommand("dataset-synth",
                                       "materialize a synthetic dataset");
  synth_cmd->add_option("--synth", synth, "classes,perClass,size")->required();
  synth_cmd->add_option("--seed", seed, "rng seed");
  synth_cmd->add_option("--out", out_path, "output directory")->required();

  auto* inspect = app.add_subcommand("inspect-model", "print model summary");
  inspect->add_option("--model", model, "model manifest path")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*bench) {
      return cmd_bench_kernels(samples, range, seed, out_path);
    }

    if (*train_cmd) {
      NetworkSpec net = make_network(arch, classes);
      TrainConfig cfg;
      cfg.learning_rate = lr;
      cfg.epochs = epochs;
      cfg.batch_size = batch;
      cfg.seed = seed;
      cfg.lr_decay = lr_decay;
      cfg.holdout_fraction = holdout;
      try {
        cfg.validate();
      } catch (const InvalidParam& e) {
        throw UsageError(e.what());
      }
      Dataset ds = resolve_dataset(manifest, synth, seed, net.input_shape[1],
                                   net.input_shape[2]);
      if (ds.class_count > net.classes) {
        throw Error("dataset has more classes than the network head");
      }
      TrainResult result = train(std::move(net), ds, cfg);
      save_model(result.net, model);
      std::printf("epoch,train_loss,holdout_accuracy\n");
      for (std::size_t e = 0; e < result.history.size(); ++e) {
        std::printf("%zu,%.6f,%.4f\n", e + 1, result.history[e].train_loss,
                    result.history[e].holdout_accuracy_percent);
      }
      return 0;
    }

    if (*eval_cmd) {
      OpWeights weights = parse_op_weights(op_weights_spec);
      if (workers < 1) throw UsageError("--workers must be >= 1");
      NetworkSpec net = load_model(model);
      LayerAssignment assignment;
      try {
        assignment = LayerAssignment::parse(assign_spec, net.conv_count());
      } catch (const InvalidParam& e) {
        throw UsageError(e.what());  // reject unknown kernels up front
      }
      Dataset ds = resolve_dataset(manifest, synth, seed, net.input_shape[1],
                                   net.input_shape[2]);
      EvalReport report = evaluate(net, assignment, ds, workers, weights);
      SweepReport single;
      single.rows.push_back(std::move(report));
      single.pattern_stats = compute_pattern_stats(single.rows);
      emit_output(single, out_path, format);
      return 0;
    }

    if (*sweep_cmd) {
      OpWeights weights = parse_op_weights(op_weights_spec);
      if (workers < 1) throw UsageError("--workers must be >= 1");
      auto patterns = parse_patterns(patterns_spec);
      PrecisionClass pools;
      try {
        pools = parse_pools(pools_spec);
        for (const auto& p : patterns) {
          for (char letter : p) (void)pools.pool(letter);
        }
      } catch (const InvalidParam& e) {
        throw UsageError(e.what());
      }
      NetworkSpec net = load_model(model);
      Dataset ds = resolve_dataset(manifest, synth, seed, net.input_shape[1],
                                   net.input_shape[2]);
      SweepReport report = sweep(net, ds, patterns, pools, workers, weights);
      emit_output(report, out_path, format);
      return 0;
    }

    if (*synth_cmd) {
      SynthParams p = parse_synth(synth);
      Dataset ds = gen_synthetic_dataset(p.classes, p.per_class, p.size, seed);
      fs::create_directories(fs::path(out_path) / "imgs");
      std::string manifest_text;
      for (std::size_t i = 0; i < ds.items.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "imgs/%05zu.ppm", i);
        auto ppm = encode_ppm(ds.items[i].image);
        write_file_atomic((fs::path(out_path) / name).string(),
                          std::string(ppm.begin(), ppm.end()));
        manifest_text +=
            std::string(name) + "," + std::to_string(ds.items[i].label) + "\n";
      }
      write_file_atomic((fs::path(out_path) / "manifest.csv").string(),
                        manifest_text);
      std::printf("wrote %zu images to %s\n", ds.items.size(),
                  out_path.c_str());
      return 0;
    }

    if (*inspect) {
      NetworkSpec net = load_model(model);
      std::printf("arch: %s\n", net.arch_name.c_str());
      std::printf("input: %dx%dx%d\n", net.input_shape[0], net.input_shape[1],
                  net.input_shape[2]);
      std::printf("classes: %d\n", net.classes);
      std::printf("parameters: %zu\n", net.parameter_count());
      std::printf("conv layers: %d\n", net.conv_count());
      for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        std::printf("  [%zu] %s", i, to_string(l.kind).c_str());
        if (l.kind == LayerKind::Conv2d) {
          std::printf(" %d@%dx%d (in %d)", l.out_channels, l.kernel_h,
                      l.kernel_w, l.in_channels);
        } else if (l.kind == LayerKind::Dense) {
          std::printf(" %d->%d", l.in_features, l.out_features);
        } else if (l.kind == LayerKind::MaxPool2d) {
          std::printf(" %dx%d", l.window_h, l.window_w);
        }
        std::printf("\n");
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace appsign
