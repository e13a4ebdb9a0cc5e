#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace bobw::env {

/**
 * Counter-based random stream built on Philox-4x32-10.
 *
 * The 128-bit Philox counter is laid out as (block, episode, stream_lo,
 * stream_hi) and the 64-bit seed is the key, so a draw is a pure function of
 * (seed, stream, episode, position). Doubles use the top 53 bits of a 64-bit
 * word; no std:: distribution is involved, so sequences are identical on every
 * platform.
 */
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream, std::uint32_t episode = 0)
        : seed_(seed), stream_(stream), episode_(episode) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint32_t episode() const { return episode_; }

    /// Fresh stream positioned at the start of the given episode's block range.
    RngStream for_episode(std::uint32_t episode) const { return {seed_, stream_, episode}; }
    RngStream with_stream(std::uint64_t stream) const { return {seed_, stream, episode_}; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    bool bernoulli(double p) { return uniform() < p; }
    /// Index drawn from a probability vector by inverse CDF.
    int categorical(std::span<const double> probs);

    /// Raw Philox-4x32-10 block function.
    static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> counter,
                                               std::array<std::uint32_t, 2> key);

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint32_t episode_;
    std::uint32_t block_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int buffered_ = 0;  // number of unused 64-bit words in buffer_ (0..2)
};

}  // namespace bobw::env
