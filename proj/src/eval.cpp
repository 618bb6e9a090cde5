#include "appsign/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "appsign/errors.hpp"

using json = nlohmann::json;

namespace appsign {

std::vector<std::string> PrecisionClass::pool(char letter) const {
  if (letter == 'E') return {"exact"};
  if (letter != 'H' && letter != 'L') {
    throw InvalidParam(std::string("unknown pattern letter: ") + letter);
  }
  std::vector<std::string> out;
  for (const auto& [id, high] : is_high) {
    if (high == (letter == 'H')) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

PrecisionClass classify_precision(const std::map<std::string, double>& results,
                                  double threshold) {
  if (results.empty()) throw InvalidParam("classify: no results");
  PrecisionClass pc;
  pc.threshold = threshold;
  for (const auto& [id, acc] : results) {
    pc.is_high[id] = acc >= threshold;
  }
  return pc;
}

PrecisionClass stock_precision_class() {
  // The stock High/Low split of the baseline kernels around the 80 line.
  return classify_precision({
      {"famm", 85.98},
      {"quantize", 86.50},
      {"lns", 93.84},
      {"shift_add", 82.05},
      {"tirud", 84.19},
      {"rounded", 70.70},
      {"shift_xor", 73.79},
  });
}

double compute_aoc(double accuracy_percent, const OpCount& total_ops,
                   const OpWeights& weights, double alpha, double beta) {
  double total = total_ops.total(weights);
  if (total <= 0.0) throw DivisionByZero("aoc: weighted op total is zero");
  double kilo = total / 1000.0;
  if (alpha == 1.0 && beta == 1.0) return accuracy_percent / kilo;
  return std::pow(accuracy_percent, alpha) / std::pow(kilo, beta);
}

EvalReport evaluate(const NetworkSpec& net, const LayerAssignment& assign,
                    const Dataset& dataset, int workers,
                    const OpWeights& weights) {
  if (dataset.empty()) throw EmptyDataset("evaluate: dataset is empty");
  if (workers < 1) throw InvalidParam("evaluate: workers must be >= 1");
  for (const auto& item : dataset.items) {
    // shape problems must surface here, not inside a worker thread
    if (!item.image.is_3d() || item.image.channels() != net.input_shape[0] ||
        item.image.height() != net.input_shape[1] ||
        item.image.width() != net.input_shape[2]) {
      throw ShapeError("evaluate: image shape does not match network input");
    }
    if (item.label < 0 || item.label >= net.classes) {
      throw ShapeError("evaluate: label out of range");
    }
  }

  const std::size_t n = dataset.size();
  std::vector<std::uint8_t> correct(n, 0);
  std::vector<std::uint8_t> saturated(n, 0);
  std::vector<OpCount> ops(n);

  auto run_image = [&](std::size_t i) {
    const auto& item = dataset.items[i];
    try {
      ForwardResult r = network_forward(net, assign, item.image);
      ops[i] = r.ops;
      correct[i] = predicted_class(r.output) == item.label ? 1 : 0;
    } catch (const OverflowError&) {
      saturated[i] = 1;  // recorded as misclassified-by-saturation
    }
  };

  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run_image(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
          run_image(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  EvalReport report;
  report.assignment = assign;
  report.images = static_cast<int>(n);
  std::size_t n_correct = 0;
  for (std::size_t i = 0; i < n; ++i) {  // merge in index order
    n_correct += correct[i];
    report.saturation_count += saturated[i];
    report.total_ops.merge(ops[i]);
  }
  report.accuracy_percent =
      100.0 * static_cast<double>(n_correct) / static_cast<double>(n);
  report.kilo_ops = report.total_ops.total(weights) / 1000.0;
  // every image saturating leaves nothing to price; report zero rather
  // than a division error
  report.aoc = report.kilo_ops > 0.0
                   ? compute_aoc(report.accuracy_percent, report.total_ops,
                                 weights)
                   : 0.0;
  return report;
}

std::vector<LayerAssignment> enumerate_assignments(const std::string& pattern,
                                                   const PrecisionClass& pools,
                                                   int conv_layers) {
  if (pattern.size() < 2 || pattern.size() > 3) {
    throw InvalidParam("pattern length must be 2 or 3: " + pattern);
  }
  if (static_cast<int>(pattern.size()) > conv_layers) {
    throw InvalidParam("pattern longer than conv layer count: " + pattern);
  }
  std::vector<std::vector<std::string>> position_pools;
  for (char letter : pattern) {
    auto p = pools.pool(letter);
    if (p.empty()) {
      throw InvalidParam(std::string("empty pool for pattern letter: ") +
                         letter);
    }
    position_pools.push_back(std::move(p));
  }

  std::vector<LayerAssignment> out;
  std::vector<std::size_t> odo(pattern.size(), 0);
  for (;;) {
    LayerAssignment a = LayerAssignment::all_exact(conv_layers);
    for (std::size_t i = 0; i < odo.size(); ++i) {
      a.set_conv_kernel(static_cast<int>(i) + 1,
                        MulKernel::parse(position_pools[i][odo[i]]));
    }
    out.push_back(std::move(a));

    // lexicographic order: rightmost position advances fastest
    std::size_t i = odo.size();
    while (i-- > 0) {
      if (++odo[i] < position_pools[i].size()) break;
      odo[i] = 0;
      if (i == 0) return out;
    }
  }
}

std::vector<PatternStats> compute_pattern_stats(
    const std::vector<EvalReport>& rows) {
  std::vector<PatternStats> stats;
  std::vector<std::string> seen;
  for (const auto& row : rows) {
    if (std::find(seen.begin(), seen.end(), row.pattern) == seen.end()) {
      seen.push_back(row.pattern);
    }
  }
  for (const auto& pattern : seen) {
    PatternStats s;
    s.pattern = pattern;
    s.min_accuracy = 1e300;
    s.max_accuracy = -1e300;
    double acc_sum = 0.0, aoc_sum = 0.0;
    for (const auto& row : rows) {
      if (row.pattern != pattern) continue;
      ++s.rows;
      acc_sum += row.accuracy_percent;
      aoc_sum += row.aoc;
      s.min_accuracy = std::min(s.min_accuracy, row.accuracy_percent);
      s.max_accuracy = std::max(s.max_accuracy, row.accuracy_percent);
    }
    s.avg_accuracy = acc_sum / s.rows;
    s.avg_aoc = aoc_sum / s.rows;
    stats.push_back(std::move(s));
  }
  return stats;
}

SweepReport sweep(const NetworkSpec& net, const Dataset& dataset,
                  const std::vector<std::string>& patterns,
                  const PrecisionClass& pools, int workers,
                  const OpWeights& weights) {
  SweepReport report;
  for (const auto& pattern : patterns) {
    for (const auto& assign :
         enumerate_assignments(pattern, pools, net.conv_count())) {
      EvalReport row = evaluate(net, assign, dataset, workers, weights);
      row.pattern = pattern;
      report.rows.push_back(std::move(row));
    }
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const EvalReport& a, const EvalReport& b) {
                     if (a.aoc != b.aoc) return a.aoc > b.aoc;
                     return a.assignment.id() < b.assignment.id();
                   });
  report.pattern_stats = compute_pattern_stats(report.rows);
  return report;
}

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string layer_name(const LayerAssignment& a, int index1) {
  if (index1 <= a.conv_layers()) return a.conv_kernel(index1).name();
  return "exact";
}

constexpr const char* kCsvHeader =
    "rank,pattern,layer1,layer2,layer3,layer4,accuracy_percent,kilo_ops,aoc,"
    "saturations";

}  // namespace

std::string emit_report_csv(const SweepReport& report) {
  std::string out = kCsvHeader;
  out += '\n';
  int rank = 0;
  for (const auto& row : report.rows) {
    out += std::to_string(++rank);
    out += ',' + row.pattern;
    for (int i = 1; i <= 4; ++i) out += ',' + layer_name(row.assignment, i);
    out += ',' + fmt6(row.accuracy_percent);
    out += ',' + fmt6(row.kilo_ops);
    out += ',' + fmt6(row.aoc);
    out += ',' + std::to_string(row.saturation_count);
    out += '\n';
  }
  return out;
}

SweepReport parse_report_csv(const std::string& text) {
  SweepReport report;
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line != kCsvHeader) {
    throw FormatError("report csv: bad header");
  }
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 10) throw FormatError("report csv: bad row");

    EvalReport row;
    row.pattern = fields[1];
    std::string assign_spec;
    for (int i = 0; i < 4; ++i) {
      if (i) assign_spec += ',';
      assign_spec += std::to_string(i + 1) + "=" + fields[static_cast<std::size_t>(2 + i)];
    }
    row.assignment = LayerAssignment::parse(assign_spec, 4);
    row.accuracy_percent = std::stod(fields[6]);
    row.kilo_ops = std::stod(fields[7]);
    row.aoc = std::stod(fields[8]);
    row.saturation_count = std::stoi(fields[9]);
    report.rows.push_back(std::move(row));
  }
  report.pattern_stats = compute_pattern_stats(report.rows);
  return report;
}

namespace {

json row_to_json(const EvalReport& row, int rank) {
  json j;
  j["rank"] = rank;
  j["pattern"] = row.pattern;
  for (int i = 1; i <= 4; ++i) {
    j["layer" + std::to_string(i)] = layer_name(row.assignment, i);
  }
  j["accuracy_percent"] = row.accuracy_percent;
  j["kilo_ops"] = row.kilo_ops;
  j["aoc"] = row.aoc;
  j["saturations"] = row.saturation_count;
  j["images"] = row.images;
  j["ops"] = {{"mul", row.total_ops.mul},
              {"add", row.total_ops.add},
              {"shift", row.total_ops.shift},
              {"xor", row.total_ops.xr},
              {"log2", row.total_ops.log2}};
  return j;
}

}  // namespace

std::string emit_report_json(const SweepReport& report) {
  json j;
  j["format"] = "appsign-report";
  json rows = json::array();
  int rank = 0;
  for (const auto& row : report.rows) rows.push_back(row_to_json(row, ++rank));
  j["rows"] = rows;
  json stats = json::array();
  for (const auto& s : report.pattern_stats) {
    stats.push_back({{"pattern", s.pattern},
                     {"avg_accuracy", s.avg_accuracy},
                     {"max_accuracy", s.max_accuracy},
                     {"min_accuracy", s.min_accuracy},
                     {"avg_aoc", s.avg_aoc},
                     {"rows", s.rows}});
  }
  j["pattern_stats"] = stats;
  return j.dump(2) + "\n";
}

SweepReport parse_report_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("report json: ") + e.what());
  }
  try {
    if (j.at("format") != "appsign-report") {
      throw FormatError("report json: wrong format tag");
    }
    SweepReport report;
    for (const auto& jr : j.at("rows")) {
      EvalReport row;
      row.pattern = jr.at("pattern").get<std::string>();
      std::string assign_spec;
      for (int i = 1; i <= 4; ++i) {
        if (i > 1) assign_spec += ',';
        assign_spec += std::to_string(i) + "=" +
                       jr.at("layer" + std::to_string(i)).get<std::string>();
      }
      row.assignment = LayerAssignment::parse(assign_spec, 4);
      row.accuracy_percent = jr.at("accuracy_percent").get<double>();
      row.kilo_ops = jr.at("kilo_ops").get<double>();
      row.aoc = jr.at("aoc").get<double>();
      row.saturation_count = jr.at("saturations").get<int>();
      row.images = jr.at("images").get<int>();
      const auto& ops = jr.at("ops");
      row.total_ops.mul = ops.at("mul").get<std::uint64_t>();
      row.total_ops.add = ops.at("add").get<std::uint64_t>();
      row.total_ops.shift = ops.at("shift").get<std::uint64_t>();
      row.total_ops.xr = ops.at("xor").get<std::uint64_t>();
      row.total_ops.log2 = ops.at("log2").get<std::uint64_t>();
      report.rows.push_back(std::move(row));
    }
    report.pattern_stats = compute_pattern_stats(report.rows);
    return report;
  } catch (const json::exception& e) {
    throw FormatError(std::string("report json: ") + e.what());
  }
}

}  // namespace appsign
