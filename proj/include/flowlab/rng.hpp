#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace flowlab {

// A reproducible random stream. Work items derive child streams by index, so
// results do not depend on how items are scheduled across threads.
struct RngSpec {
    std::uint64_t master_seed = 0;
    std::uint64_t stream_id = 0;

    RngSpec child(std::uint64_t index) const;
};

std::uint64_t splitmix64(std::uint64_t x);

std::mt19937_64 make_engine(const RngSpec& spec);

// d i.i.d. N(0, scale²) entries from the stream.
std::vector<double> gaussian_vector(std::size_t d, double scale, const RngSpec& spec);

}  // namespace flowlab
