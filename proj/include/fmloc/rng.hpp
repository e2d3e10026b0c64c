#ifndef FMLOC_RNG_HPP
#define FMLOC_RNG_HPP

#include <array>
#include <cstdint>

namespace fmloc {

// Philox4x32-10 counter-based generator. Outputs are a pure function of
// (key, counter), so draws keyed by (seed, sample index, site) are identical
// no matter which thread or call order produces them.
struct Philox4x32 {
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;

    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                              std::array<std::uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
            std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
            std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kW0;
            key[1] += kW1;
        }
        return ctr;
    }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// One uniform in [0,1) keyed by (seed, stream, index, site hash, draw).
// `site_hash` should come from hash_site below (or any stable 64-bit id).
inline double keyed_uniform01(std::uint64_t master_seed, std::uint32_t stream,
                              std::uint64_t index, std::uint64_t site_hash,
                              std::uint32_t draw = 0) {
    std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(master_seed),
                                        static_cast<std::uint32_t>(master_seed >> 32)};
    std::uint64_t mixed = splitmix64(site_hash ^ (static_cast<std::uint64_t>(stream) << 32 ^ draw));
    std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
        static_cast<std::uint32_t>(mixed), static_cast<std::uint32_t>(mixed >> 32)};
    auto out = Philox4x32::block(ctr, key);
    std::uint64_t bits = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Stream ids partition independent uses of the same master seed.
enum : std::uint32_t {
    kStreamPotential = 1,
    kStreamSearch = 2,
    kStreamGeneric = 3,
};

}  // namespace fmloc

#endif
