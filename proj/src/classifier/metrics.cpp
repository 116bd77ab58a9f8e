#include "mitodpm/classifier/metrics.hpp"

#include <cstdio>

#include "mitodpm/csv.hpp"
#include "mitodpm/errors.hpp"

namespace mitodpm::classifier {

Metrics compute_metrics(std::span<const double> probabilities, std::span<const int> labels, double threshold) {
    if (probabilities.empty()) throw ValidationError("cannot evaluate an empty test set");
    if (probabilities.size() != labels.size()) throw ValidationError("predictions and labels differ in length");
    Metrics m;
    m.threshold = threshold;
    m.n = probabilities.size();
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        const bool predicted = probabilities[i] >= threshold;
        const bool actual = labels[i] != 0;
        if (predicted && actual) ++m.true_positives;
        else if (predicted) ++m.false_positives;
        else if (actual) ++m.false_negatives;
        else ++m.true_negatives;
    }
    m.accuracy = static_cast<double>(m.true_positives + m.true_negatives) / static_cast<double>(m.n);
    const auto denom = 2 * m.true_positives + m.false_positives + m.false_negatives;
    m.f1 = denom == 0 ? 1.0 : 2.0 * static_cast<double>(m.true_positives) / static_cast<double>(denom);
    return m;
}

std::string metrics_csv_header() { return "run_id,accuracy,f1,threshold,n"; }

std::string metrics_csv_row(const std::string& run_id, const Metrics& m) {
    char buf[128];
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.4f,%zu", m.accuracy, m.f1, m.threshold, m.n);
    return csv::escape(run_id) + buf;
}

}  // namespace mitodpm::classifier
