#include "flowlab/rng.hpp"

namespace flowlab {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

RngSpec RngSpec::child(std::uint64_t index) const {
    return {master_seed, splitmix64(stream_id ^ splitmix64(index + 0x632be59bd9b4e019ULL))};
}

std::mt19937_64 make_engine(const RngSpec& spec) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.master_seed), static_cast<std::uint32_t>(spec.master_seed >> 32),
                      static_cast<std::uint32_t>(spec.stream_id), static_cast<std::uint32_t>(spec.stream_id >> 32)};
    return std::mt19937_64(seq);
}

std::vector<double> gaussian_vector(std::size_t d, double scale, const RngSpec& spec) {
    auto eng = make_engine(spec);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(d);
    for (auto& x : v) x = scale * normal(eng);
    return v;
}

}  // namespace flowlab
