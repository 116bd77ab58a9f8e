#pragma once

#include <span>
#include <vector>

namespace mitodpm::stats {

double mean(std::span<const double> values);
double median(std::span<const double> values);
// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_stddev(std::span<const double> values);
double pearson(std::span<const double> a, std::span<const double> b);
// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> ranks(std::span<const double> values);
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace mitodpm::stats
