#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace gpdmd {

// Philox4x32-10 counter-based generator. Every random draw in the project is
// addressed by (seed, stream, counter), so parallel producers get identical
// results regardless of scheduling or thread count.
//
// Stream id layout used across the project (documented, not enforced):
//   trajectory simulation   stream = (1 << 56) | (trajectory << 24) | sample_step
//   snapshot target noise   stream = (2 << 56) | pair_index
//   Latin hypercube draws   stream = (3 << 56) | candidate_index
//   Monte-Carlo rollouts    stream = (4 << 56) | member_index
struct Philox4x32 {
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                              std::array<std::uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }
};

class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          ctr_{static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0, 0} {}

    std::uint32_t next_u32() {
        if (have_ == 0) {
            buf_ = Philox4x32::block(ctr_, key_);
            // words 2,3 of the counter index successive blocks within the stream
            if (++ctr_[2] == 0) ++ctr_[3];
            have_ = 4;
        }
        return buf_[4 - have_--];
    }

    // 53-bit uniform in [0, 1)
    double uniform() {
        const std::uint64_t hi = next_u32();
        const std::uint64_t lo = next_u32();
        return static_cast<double>(((hi << 32) | lo) >> 11) * 0x1.0p-53;
    }

    // standard normal via Box-Muller; draws come in cached pairs
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1], keeps log finite
        const double u2 = uniform();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 6.283185307179586476925286766559 * u2;
        spare_ = rad * std::sin(ang);
        has_spare_ = true;
        return rad * std::cos(ang);
    }

private:
    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> ctr_;
    std::array<std::uint32_t, 4> buf_{};
    int have_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

namespace rng_streams {
inline constexpr std::uint64_t trajectory(std::uint64_t traj, std::uint64_t step) {
    return (std::uint64_t{1} << 56) | (traj << 24) | step;
}
inline constexpr std::uint64_t snapshot_noise(std::uint64_t pair_index) {
    return (std::uint64_t{2} << 56) | pair_index;
}
inline constexpr std::uint64_t lhs_candidate(std::uint64_t candidate) {
    return (std::uint64_t{3} << 56) | candidate;
}
inline constexpr std::uint64_t mc_member(std::uint64_t member) {
    return (std::uint64_t{4} << 56) | member;
}
} // namespace rng_streams

} // namespace gpdmd
