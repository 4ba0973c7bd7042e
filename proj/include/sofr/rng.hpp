#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sofr {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// Derives the seed of a named sub-stream from one master seed. Streams are
// addressed by (name, index); distinct addresses give independent engines
// regardless of the order streams are created in.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                                 std::uint64_t index = 0) {
    std::uint64_t h = detail::splitmix64(master ^ detail::fnv1a(stream));
    return detail::splitmix64(h ^ detail::splitmix64(index));
}

inline std::mt19937_64 substream(std::uint64_t master, std::string_view stream,
                                 std::uint64_t index = 0) {
    return std::mt19937_64(derive_seed(master, stream, index));
}

// Fisher-Yates permutation of {0,...,n-1}.
inline std::vector<int> random_permutation(int n, std::mt19937_64& rng) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(idx[i], idx[pick(rng)]);
    }
    return idx;
}

}  // namespace sofr
