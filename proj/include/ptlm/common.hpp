#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ptlm {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// catch one type; the subclasses exist so tests can assert the failure class.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    using Error::Error;
};
struct IndexError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct CapacityError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct InputError : Error {
    using Error::Error;
};
struct ValidationError : Error {
    using Error::Error;
};
struct CompatError : Error {
    using Error::Error;
};

// Deterministic random source: std::mt19937_64 stream, uniform doubles built
// from the top 53 bits, gaussians via Box-Muller with a cached spare, bounded
// integers by rejection. Identical seed gives an identical draw sequence.
class RngState {
  public:
    explicit RngState(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, bound). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t bound) {
        if (bound == 0) throw ContractError("RngState::below: bound must be positive");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % bound;
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + spare_ * stddev;
        }
        // Box-Muller; 1-u keeps the log argument in (0, 1].
        const double angle = 2.0 * 3.141592653589793238462643 * unit();
        const double radius = std::sqrt(-2.0 * std::log(1.0 - unit()));
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return mean + radius * std::cos(angle) * stddev;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    // Stable derivation of purpose-specific substreams from one experiment seed.
    static std::uint64_t derive(std::uint64_t seed, const std::string& purpose) {
        std::uint64_t h = 14695981039346656037ull;
        for (unsigned char c : purpose) {
            h ^= c;
            h *= 1099511628211ull;
        }
        // splitmix64 finalizer over seed xor purpose-hash
        std::uint64_t z = seed ^ h;
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

  private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Reals in CSV and reports are printed with 6 significant digits, '.' decimal point.
inline std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
}

}  // namespace ptlm
