#include "mitodpm/classifier/sampling.hpp"

#include <algorithm>
#include <numeric>

#include "mitodpm/errors.hpp"

namespace mitodpm::classifier {

BalancedBatchStream::BalancedBatchStream(std::size_t positive_pool, std::size_t negative_pool, int batch_size,
                                         std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
    if (positive_pool == 0 || negative_pool == 0) throw ValidationError("balanced batches need non-empty pools of both classes");
    if (batch_size < 2 || batch_size % 2) throw ValidationError("balanced batch size must be positive and even");
    positives_.order.resize(positive_pool);
    negatives_.order.resize(negative_pool);
    for (Pool* pool : {&positives_, &negatives_}) {
        std::iota(pool->order.begin(), pool->order.end(), std::size_t{0});
        std::shuffle(pool->order.begin(), pool->order.end(), rng_);
    }
}

std::size_t BalancedBatchStream::draw(Pool& pool) {
    if (pool.cursor == pool.order.size()) {
        std::shuffle(pool.order.begin(), pool.order.end(), rng_);
        pool.cursor = 0;
    }
    return pool.order[pool.cursor++];
}

BalancedBatch BalancedBatchStream::next() {
    BalancedBatch batch;
    const auto half = static_cast<std::size_t>(batch_size_ / 2);
    batch.positives.reserve(half);
    batch.negatives.reserve(half);
    for (std::size_t i = 0; i < half; ++i) batch.positives.push_back(draw(positives_));
    for (std::size_t i = 0; i < half; ++i) batch.negatives.push_back(draw(negatives_));
    return batch;
}

std::pair<std::vector<data::PatchRecord>, std::vector<data::PatchRecord>> split_by_vertical_axis(
    std::span<const data::PatchRecord> records, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("split fraction must lie strictly inside (0, 1)");
    std::pair<std::vector<data::PatchRecord>, std::vector<data::PatchRecord>> out;
    for (const auto& rec : records) {
        if (!rec.slide_height) throw ValidationError("patch '" + rec.patch_id + "' has no slide height for the vertical split");
        if (rec.center.y < 0 || rec.center.y >= *rec.slide_height) {
            throw ValidationError("patch '" + rec.patch_id + "' lies outside its slide vertically");
        }
        const bool train = static_cast<double>(rec.center.y) < fraction * *rec.slide_height;
        (train ? out.first : out.second).push_back(rec);
    }
    return out;
}

}  // namespace mitodpm::classifier
