#include "tokshift/common.hpp"

#include <cmath>

namespace tokshift {

std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {
uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    uint64_t h = splitmix64(a);
    h = splitmix64(h ^ (b + 0x9e3779b97f4a7c15ULL));
    h = splitmix64(h ^ (c + 0x7f4a7c159e3779b9ULL));
    return h;
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    TS_CHECK(lo <= hi, "uniform_int: empty range [", lo, ", ", hi, "]");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // rejection sampling keeps the draw unbiased
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % span);
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 in (0,1] so the log stays finite
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
}

}  // namespace tokshift
