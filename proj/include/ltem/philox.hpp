#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace ltem {

/// Philox4x64-10 counter-based generator (Salmon et al. 2011 constants).
/// Output is a pure function of (counter, key), which lets every sample row
/// derive its own stream from (seed, row).
struct Philox4x64 {
    using Counter = std::array<std::uint64_t, 4>;
    using Key = std::array<std::uint64_t, 2>;

    static constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
    static constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
    static constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

    static Counter block(Counter c, Key k) noexcept {
        for (int round = 0; round < 10; ++round) {
            const auto p0 = static_cast<unsigned __int128>(kMul0) * c[0];
            const auto p1 = static_cast<unsigned __int128>(kMul1) * c[2];
            const auto hi0 = static_cast<std::uint64_t>(p0 >> 64);
            const auto lo0 = static_cast<std::uint64_t>(p0);
            const auto hi1 = static_cast<std::uint64_t>(p1 >> 64);
            const auto lo1 = static_cast<std::uint64_t>(p1);
            c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
            k[0] += kWeyl0;
            k[1] += kWeyl1;
        }
        return c;
    }
};

/// Maps 64 random bits to a double in the open interval (0, 1).
inline double open_unit(std::uint64_t bits) noexcept {
    return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// Standard normals for one sample row: block b of row `row` under `seed`
/// yields four normals via two Box-Muller pairs.
class RowNormals {
public:
    RowNormals(std::uint64_t seed, std::uint64_t row) noexcept : seed_(seed), row_(row) {}

    double next() noexcept {
        if (pos_ == 4) refill();
        return buf_[pos_++];
    }

private:
    void refill() noexcept {
        const auto bits = Philox4x64::block({row_, block_++, 0, 0}, {seed_, 0});
        for (int pair = 0; pair < 2; ++pair) {
            const double u1 = open_unit(bits[2 * pair]);
            const double u2 = open_unit(bits[2 * pair + 1]);
            const double r = std::sqrt(-2.0 * std::log(u1));
            const double t = 2.0 * std::numbers::pi * u2;
            buf_[2 * pair] = r * std::cos(t);
            buf_[2 * pair + 1] = r * std::sin(t);
        }
        pos_ = 0;
    }

    std::uint64_t seed_;
    std::uint64_t row_;
    std::uint64_t block_ = 0;
    std::array<double, 4> buf_{};
    int pos_ = 4;
};

}  // namespace ltem
