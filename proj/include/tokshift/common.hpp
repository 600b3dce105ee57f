#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tokshift {

// std::allocator that default-initializes on resize, so buffers that are
// fully overwritten right after allocation skip the zero pass.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = DefaultInitAllocator<U>;
    };
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0)
            ::new (static_cast<void*>(p)) U;
        else
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

using DVec = std::vector<double, DefaultInitAllocator<double>>;

inline bool operator==(const DVec& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}
inline bool operator==(const std::vector<double>& a, const DVec& b) { return b == a; }

// Base error for rejected inputs.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad run configuration, CLI usage, or checkpoint metadata. The CLI maps
// this to exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Numerical failure at runtime (diverged loss, failed gradient check).
// The CLI maps this to exit code 2.
class NumericError : public Error {
public:
    using Error::Error;
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    msg_append(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string cat(const Args&... args) {
    std::ostringstream os;
    os.precision(17);
    detail::msg_append(os, args...);
    return os.str();
}

std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace tokshift

// Message arguments are only evaluated on failure.
#define TS_CHECK(cond, ...) \
    do { \
        if (!(cond)) throw ::tokshift::Error(::tokshift::cat(__VA_ARGS__)); \
    } while (0)

#define TS_CONFIG_CHECK(cond, ...) \
    do { \
        if (!(cond)) throw ::tokshift::ConfigError(::tokshift::cat(__VA_ARGS__)); \
    } while (0)

namespace tokshift {

// --- deterministic random numbers ---
// mt19937_64 is bit-stable across standard libraries; the double and normal
// draws are hand-rolled because the <random> distributions are not.

uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0);

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int64_t uniform_int(int64_t lo, int64_t hi);

    // standard normal via Box-Muller; each draw yields a pair, the second
    // value is served on the next call
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace tokshift
