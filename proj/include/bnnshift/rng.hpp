#pragma once

#include <cstdint>

#include "bnnshift/matrix.hpp"

namespace bnnshift {

// Counter-based random stream. Each (seed, stream-id) pair indexes an
// independent sequence; parallel chains get substreams instead of sharing
// state. Output is SplitMix64 over a per-stream base offset, uniform and
// gaussian draws are derived purely from the u64 sequence so replay is
// bit-identical.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
        : seed_(seed), stream_(stream_id) {
        base_ = fmix64(fmix64(seed + 0x9e3779b97f4a7c15ULL) ^
                       (stream_id * 0xff51afd7ed558ccdULL + 0x2545f4914f6cdd1dULL));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }

    std::uint64_t next_u64() {
        ++counter_;
        return fmix64(base_ + counter_ * 0x9e3779b97f4a7c15ULL);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via the Marsaglia polar method (no trig, reproducible).
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * next_unit() - 1.0;
            v = 2.0 * next_unit() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    Vector gaussian_vector(std::size_t n) {
        Vector z(n);
        for (double& x : z) x = next_gaussian();
        return z;
    }

    // Derived stream, independent of the parent and of other ids.
    RngStream substream(std::uint64_t id) const {
        return RngStream(seed_, fmix64(stream_ ^ fmix64(id + 0x632be59bd9b4e019ULL)));
    }

private:
    static std::uint64_t fmix64(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ULL;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t seed_, stream_;
    std::uint64_t base_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace bnnshift
