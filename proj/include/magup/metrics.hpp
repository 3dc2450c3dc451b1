#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "magup/tensor.hpp"

namespace magup {

// All measures take P: H x W in [0,1] and M: H x W binary.

struct DiceIou {
  double dice = 0.0;
  double iou = 0.0;
};

// Binarises P at `threshold` (P >= threshold). Empty vs empty scores 1.
DiceIou mdice_miou(const Tensor& P, const Tensor& M, double threshold = 0.5);
double mae(const Tensor& P, const Tensor& M);
double s_measure(const Tensor& P, const Tensor& M, double alpha = 0.5);
// Maximum enhanced-alignment score over the thresholds i/255, i = 0..255 (P > t).
double e_measure_max(const Tensor& P, const Tensor& M);
// Enhanced-alignment score of one binary foreground map.
double e_measure_binary(const std::vector<bool>& fg, const Tensor& M);
double weighted_fmeasure(const Tensor& P, const Tensor& M, double beta2 = 1.0);

struct MetricReport {
  double mdice = 0.0;
  double miou = 0.0;
  double wfm = 0.0;
  double s_alpha = 0.0;
  double e_max = 0.0;
  double mae = 0.0;  // in [0,1]; tables print it x100
  std::size_t count = 0;
};

MetricReport evaluate_pair(const Tensor& P, const Tensor& M);
// Per-image metrics averaged in input order. Throws ContractError on an empty set.
MetricReport evaluate_dataset(const std::vector<std::pair<Tensor, Tensor>>& pairs);
MetricReport average(const std::vector<MetricReport>& reports);

void write_report_csv(std::ostream& os, const std::vector<std::pair<std::string, MetricReport>>& rows);
void write_report_table(std::ostream& os, const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace magup
