#include "bobw/rng.hpp"

namespace bobw::env {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(product >> 32);
    lo = static_cast<std::uint32_t>(product);
}

}  // namespace

std::array<std::uint32_t, 4> RngStream::philox(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, ctr[0], hi0, lo0);
        mulhilo(kMul1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

std::uint64_t RngStream::next_u64() {
    if (buffered_ == 0) {
        buffer_ = philox({block_, episode_, static_cast<std::uint32_t>(stream_),
                          static_cast<std::uint32_t>(stream_ >> 32)},
                         {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
        ++block_;
        buffered_ = 2;
    }
    const int i = 2 - buffered_;
    --buffered_;
    return (static_cast<std::uint64_t>(buffer_[2 * i + 1]) << 32) | buffer_[2 * i];
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int RngStream::categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    int last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] > 0.0) last_positive = static_cast<int>(i);
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    // Rounding left u above the total mass.
    return last_positive;
}

}  // namespace bobw::env
