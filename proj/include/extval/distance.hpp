#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "extval/error.hpp"

namespace extval {

/// Nonnegative extended real: a finite distance or the explicit +infinity
/// sentinel used when the target region of a rule is empty.
///
/// Arithmetic never goes through IEEE infinity: callers branch on
/// is_infinite() and only touch value() for finite distances.
class Distance {
public:
    constexpr Distance() = default;

    explicit Distance(double v) : value_(v) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw InvalidArgument("Distance must be finite and nonnegative, got " + std::to_string(v));
    }

    static constexpr Distance infinite() {
        Distance d;
        d.infinite_ = true;
        return d;
    }

    static constexpr Distance zero() { return Distance{}; }

    constexpr bool is_infinite() const { return infinite_; }
    constexpr bool is_finite() const { return !infinite_; }
    constexpr bool is_zero() const { return !infinite_ && value_ == 0.0; }

    double value() const {
        if (infinite_) throw InvalidArgument("value() called on an infinite Distance");
        return value_;
    }

    /// IEEE view, for reporting only.
    double as_double() const { return infinite_ ? std::numeric_limits<double>::infinity() : value_; }

    friend Distance min(Distance a, Distance b) {
        if (a.infinite_) return b;
        if (b.infinite_) return a;
        return a.value_ <= b.value_ ? a : b;
    }

    friend bool operator==(const Distance& a, const Distance& b) {
        return a.infinite_ == b.infinite_ && (a.infinite_ || a.value_ == b.value_);
    }

private:
    double value_ = 0.0;
    bool infinite_ = false;
};

} // namespace extval
