#include "deblurkit/rng.hpp"

#include "deblurkit/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace dbk {

std::int64_t Rng::randint(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw ContractError("randint: hi < lo");
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64()); // full range
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t r;
    do {
        r = next_u64();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

Rng Rng::deserialize(const std::string& text) {
    Rng rng;
    std::istringstream is(text);
    is >> rng.engine_;
    if (is.fail()) throw IoError("Rng::deserialize: malformed engine state");
    return rng;
}

Rng Rng::fork(std::uint64_t stream_id) {
    // splitmix-style mix of a fresh draw with the stream id.
    std::uint64_t z = next_u64() ^ (stream_id + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
}

} // namespace dbk
