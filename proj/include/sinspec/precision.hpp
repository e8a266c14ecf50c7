#pragma once

// Rounding of binary64 values onto narrower IEEE 754 binary formats
// (round-to-nearest-even, gradual underflow, overflow to infinity).

#include <cmath>
#include <limits>
#include <string>

#include "sinspec/errors.hpp"

namespace sinspec {

enum class FloatFormat { Binary16, Binary32, Binary64 };

enum class Emulation {
    InputOnly,     // quantize m/z, then compute the embedding in binary64
    FullEmulation  // quantize after every primitive step of the embedding
};

struct PrecisionMode {
    FloatFormat format = FloatFormat::Binary64;
    Emulation emulation = Emulation::InputOnly;

    friend bool operator==(const PrecisionMode&, const PrecisionMode&) = default;
};

inline int format_bits(FloatFormat f) {
    switch (f) {
        case FloatFormat::Binary16: return 16;
        case FloatFormat::Binary32: return 32;
        case FloatFormat::Binary64: return 64;
    }
    return 64;
}

inline FloatFormat format_from_bits(int bits) {
    switch (bits) {
        case 16: return FloatFormat::Binary16;
        case 32: return FloatFormat::Binary32;
        case 64: return FloatFormat::Binary64;
        default: throw ConfigError("precision must be 16, 32 or 64, got " + std::to_string(bits));
    }
}

inline std::string precision_label(PrecisionMode m) {
    std::string s = "binary" + std::to_string(format_bits(m.format));
    if (m.emulation == Emulation::FullEmulation) s += "-full";
    return s;
}

/// Rounds `x` to the nearest value of a binary format with `mantissa_bits`
/// explicit fraction bits and exponent range [min_exp, max_exp] (unbiased).
/// Ties go to even. Results beyond the largest finite value become infinity.
inline double round_to_binary(double x, int mantissa_bits, int min_exp, int max_exp) {
    if (!std::isfinite(x) || x == 0.0) return x;
    int e = std::ilogb(x);
    if (e < min_exp) e = min_exp;  // subnormal range keeps a fixed quantum
    const double quantum = std::ldexp(1.0, e - mantissa_bits);
    const double r = std::nearbyint(x / quantum) * quantum;
    const double max_finite = std::ldexp(2.0 - std::ldexp(1.0, -mantissa_bits), max_exp);
    if (std::fabs(r) > max_finite) return std::copysign(std::numeric_limits<double>::infinity(), x);
    return r;
}

/// Quantizes `x` through `format`, returned as binary64. Infinite results are
/// returned as-is; see cast_mz for the checked variant.
inline double quantize(double x, FloatFormat format) {
    switch (format) {
        case FloatFormat::Binary16: return round_to_binary(x, 10, -14, 15);
        case FloatFormat::Binary32: return round_to_binary(x, 23, -126, 127);
        case FloatFormat::Binary64: return x;
    }
    return x;
}

/// m/z as seen by the embedding under `mode`. In both emulation modes the
/// input itself is quantized; FullEmulation additionally rounds the
/// embedding arithmetic (see sinusoidal_embed).
inline double cast_mz(double mz, PrecisionMode mode) {
    if (!std::isfinite(mz)) throw CastError("m/z must be finite");
    const double q = quantize(mz, mode.format);
    if (!std::isfinite(q)) throw CastError("m/z " + std::to_string(mz) + " overflows " + precision_label(mode));
    return q;
}

}  // namespace sinspec
