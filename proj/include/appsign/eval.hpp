#pragma once

#include <map>
#include <string>
#include <vector>

#include "appsign/dataset.hpp"
#include "appsign/network.hpp"
#include "appsign/opcount.hpp"

namespace appsign {

struct EvalReport {
  LayerAssignment assignment;
  std::string pattern;  // sweep pattern label, empty for direct evaluations
  double accuracy_percent = 0.0;
  OpCount total_ops;
  double kilo_ops = 0.0;
  double aoc = 0.0;
  int saturation_count = 0;
  int images = 0;
};

struct PatternStats {
  std::string pattern;
  double avg_accuracy = 0.0;
  double max_accuracy = 0.0;
  double min_accuracy = 0.0;
  double avg_aoc = 0.0;
  int rows = 0;
};

// Rows are ranked by AoC descending, ties broken by lexicographic
// assignment id; pattern stats are recomputable from the rows.
struct SweepReport {
  std::vector<EvalReport> rows;
  std::vector<PatternStats> pattern_stats;
};

// High/Low labeling of kernels by measured average accuracy against a
// dividing line (inclusive: >= threshold is High).
struct PrecisionClass {
  double threshold = 80.0;
  std::map<std::string, bool> is_high;  // kernel id -> High?

  // Sorted kernel ids for a pattern letter: 'H', 'L', or 'E' (exact).
  std::vector<std::string> pool(char letter) const;
};

PrecisionClass classify_precision(const std::map<std::string, double>& results,
                                  double threshold = 80.0);

// The stock classification used when no measured results are supplied.
PrecisionClass stock_precision_class();

// Accuracy percent over kilo-operations; alpha/beta allow reweighting the
// two factors. Throws DivisionByZero when the weighted total is zero.
double compute_aoc(double accuracy_percent, const OpCount& total_ops,
                   const OpWeights& weights = {}, double alpha = 1.0,
                   double beta = 1.0);

// Accuracy of argmax predictions plus op totals over the dataset.
// Deterministic regardless of worker count: per-image outcomes are stored
// by index and merged in order. A kernel OverflowError marks the image
// incorrect and counts a saturation instead of aborting.
EvalReport evaluate(const NetworkSpec& net, const LayerAssignment& assign,
                    const Dataset& dataset, int workers = 1,
                    const OpWeights& weights = {});

// Cartesian product of pool members over conv layers 1..len(pattern), in
// lexicographic order. Remaining conv layers, always including layer 4,
// stay exact. Pattern letters: L, H, E; length must be 2 or 3.
std::vector<LayerAssignment> enumerate_assignments(const std::string& pattern,
                                                   const PrecisionClass& pools,
                                                   int conv_layers);

SweepReport sweep(const NetworkSpec& net, const Dataset& dataset,
                  const std::vector<std::string>& patterns,
                  const PrecisionClass& pools, int workers = 1,
                  const OpWeights& weights = {});

// CSV columns: rank,pattern,layer1,layer2,layer3,layer4,accuracy_percent,
// kilo_ops,aoc,saturations. JSON mirrors the field names and adds the op
// breakdown and pattern stats. Emit -> parse -> emit is byte-identical.
std::string emit_report_csv(const SweepReport& report);
std::string emit_report_json(const SweepReport& report);
SweepReport parse_report_csv(const std::string& text);
SweepReport parse_report_json(const std::string& text);

// Stats recomputation used by sweep and by parsers.
std::vector<PatternStats> compute_pattern_stats(
    const std::vector<EvalReport>& rows);

}  // namespace appsign
