#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dbk {

/// Deterministic random source. Wraps std::mt19937_64 but implements the
/// distributions by hand so that sampled sequences are identical across
/// platforms and serializable as part of a training state.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t randint(std::int64_t lo, std::int64_t hi);

    /// Standard normal via Box-Muller (no cached spare, keeps state minimal).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(randint(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string serialize() const;
    static Rng deserialize(const std::string& text);

    /// Derives an independent stream (e.g. one per scene or per worker).
    Rng fork(std::uint64_t stream_id);

private:
    std::mt19937_64 engine_;
};

} // namespace dbk
