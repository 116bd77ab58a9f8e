#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "mitodpm/data/records.hpp"

namespace mitodpm::classifier {

struct BalancedBatch {
    std::vector<std::size_t> positives;  // indices into the positive pool
    std::vector<std::size_t> negatives;  // indices into the negative pool
};

// Endless stream of class-balanced minibatches. Each pool is walked in a
// shuffled order and reshuffled when exhausted, so the smaller pool repeats
// (sampling with replacement across passes).
class BalancedBatchStream {
public:
    // Throws ValidationError on an empty pool or odd/non-positive batch size.
    BalancedBatchStream(std::size_t positive_pool, std::size_t negative_pool, int batch_size, std::uint64_t seed);

    BalancedBatch next();
    int batch_size() const { return batch_size_; }

private:
    struct Pool {
        std::vector<std::size_t> order;
        std::size_t cursor = 0;
    };
    std::size_t draw(Pool& pool);

    Pool positives_;
    Pool negatives_;
    int batch_size_;
    std::mt19937_64 rng_;
};

inline BalancedBatchStream balanced_batches(std::size_t positive_pool, std::size_t negative_pool, int batch_size,
                                            std::uint64_t seed) {
    return BalancedBatchStream(positive_pool, negative_pool, batch_size, seed);
}

// Per slide, annotations with y < fraction * slide_height train, the rest
// validate. fraction must lie strictly inside (0, 1).
std::pair<std::vector<data::PatchRecord>, std::vector<data::PatchRecord>> split_by_vertical_axis(
    std::span<const data::PatchRecord> records, double fraction = 0.75);

}  // namespace mitodpm::classifier
