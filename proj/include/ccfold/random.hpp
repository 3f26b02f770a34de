#pragma once

#include <cstdint>
#include <random>

namespace ccfold {

/// Seeded uniform stream, bit-identical across standard libraries
/// (std::uniform_real_distribution is not).
class Uniform {
public:
    explicit Uniform(std::uint64_t seed) : engine_(seed) {}

    double operator()() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double operator()(double lo, double hi) { return lo + (hi - lo) * (*this)(); }

private:
    std::mt19937_64 engine_;
};

} // namespace ccfold
