#pragma once

#include <span>
#include <string>

namespace mitodpm::classifier {

struct Metrics {
    double accuracy = 0.0;
    double f1 = 0.0;
    double threshold = 0.5;
    std::size_t n = 0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t true_negatives = 0;
    std::size_t false_negatives = 0;
};

// Predicted positive iff probability >= threshold. F1 is 1 when there are
// no positives at all and none were predicted.
Metrics compute_metrics(std::span<const double> probabilities, std::span<const int> labels, double threshold = 0.5);

// "run_id,accuracy,f1,threshold,n"
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& run_id, const Metrics& m);

}  // namespace mitodpm::classifier
