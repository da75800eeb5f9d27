#pragma once

// Finite weighted atom distributions: CDFs, ranks, generalized inverses and
// the expected minimum of two independent atom distributions.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "extval/error.hpp"

namespace extval {

class WeightedAtoms {
public:
    WeightedAtoms() = default;

    /// Sorts, merges equal values and normalizes to unit mass. Zero weights are dropped.
    WeightedAtoms(std::vector<double> values, std::vector<double> weights) {
        if (values.size() != weights.size()) throw DimensionMismatch("atom weights", values.size(), weights.size());
        std::vector<std::size_t> order(values.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        double total = 0.0;
        for (std::size_t k : order) {
            const double v = values[k], w = weights[k];
            if (!std::isfinite(v)) throw InvalidArgument("atom values must be finite");
            if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("atom weights must be finite and >= 0");
            if (w == 0.0) continue;
            if (!values_.empty() && values_.back() == v)
                probs_.back() += w;
            else {
                values_.push_back(v);
                probs_.push_back(w);
            }
            total += w;
        }
        if (values_.empty()) throw InvalidArgument("atom list has no positive mass");
        for (double& p : probs_) p /= total;
        cum_.resize(probs_.size());
        double acc = 0.0;
        for (std::size_t k = 0; k < probs_.size(); ++k) {
            acc += probs_[k];
            cum_[k] = acc;
        }
        cum_.back() = 1.0;
    }

    static WeightedAtoms point(double v) { return WeightedAtoms({v}, {1.0}); }
    static WeightedAtoms uniform(std::vector<double> values) {
        std::vector<double> w(values.size(), 1.0);
        return WeightedAtoms(std::move(values), std::move(w));
    }

    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }
    const std::vector<double>& values() const { return values_; }
    const std::vector<double>& probs() const { return probs_; }
    bool degenerate() const { return values_.size() == 1; }

    /// P(Y <= y).
    double cdf(double y) const {
        auto it = std::upper_bound(values_.begin(), values_.end(), y);
        if (it == values_.begin()) return 0.0;
        return cum_[static_cast<std::size_t>(it - values_.begin()) - 1];
    }

    /// P(Y < y).
    double cdf_below(double y) const {
        auto it = std::lower_bound(values_.begin(), values_.end(), y);
        if (it == values_.begin()) return 0.0;
        return cum_[static_cast<std::size_t>(it - values_.begin()) - 1];
    }

    /// P(Y < y) + P(Y = y) / 2. Equals the CDF away from atoms.
    double midrank(double y) const { return 0.5 * (cdf(y) + cdf_below(y)); }

    /// inf{y : F(y) >= u}; u is clamped into [0, 1].
    double quantile(double u) const {
        if (u <= 0.0) return values_.front();
        auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
        if (it == cum_.end()) return values_.back();
        return values_[static_cast<std::size_t>(it - cum_.begin())];
    }

    double mean() const {
        double m = 0.0;
        for (std::size_t k = 0; k < values_.size(); ++k) m += probs_[k] * values_[k];
        return m;
    }

private:
    std::vector<double> values_;
    std::vector<double> probs_;
    std::vector<double> cum_;
};

/// Comonotone map: the point of `to` at the same (mid-)rank as y has in `from`.
inline double rank_map(const WeightedAtoms& from, const WeightedAtoms& to, double y) {
    return to.quantile(from.midrank(y));
}

/// Antitone map: the point of `to` at the reflected rank of y in `from`.
inline double antitone_map(const WeightedAtoms& from, const WeightedAtoms& to, double y) {
    return to.quantile(1.0 - from.midrank(y));
}

/// E[min{A + shift_a, B + shift_b}] for independent A, B.
///
/// Uses P(min >= z) = P(A + shift_a >= z) P(B + shift_b >= z) over the merged
/// support, walked from the top so each survival product is built from suffix sums.
inline double expected_min(const WeightedAtoms& a, double shift_a, const WeightedAtoms& b, double shift_b) {
    if (a.empty() || b.empty()) throw InvalidArgument("expected_min needs nonempty atom lists");
    const auto& va = a.values();
    const auto& pa = a.probs();
    const auto& vb = b.values();
    const auto& pb = b.probs();
    std::size_t i = va.size(), j = vb.size();
    double sa = 0.0, sb = 0.0;   // P(A' >= z), P(B' >= z) for the current z
    double prev_surv = 0.0;      // survival at the next higher support point
    double acc = 0.0;
    while (i > 0 || j > 0) {
        const double za = i > 0 ? va[i - 1] + shift_a : -std::numeric_limits<double>::infinity();
        const double zb = j > 0 ? vb[j - 1] + shift_b : -std::numeric_limits<double>::infinity();
        const double z = std::max(za, zb);
        if (i > 0 && za == z) sa += pa[--i];
        if (j > 0 && zb == z) sb += pb[--j];
        const double surv = std::min(sa, 1.0) * std::min(sb, 1.0);
        acc += z * (surv - prev_surv);
        prev_surv = surv;
    }
    return acc;
}

} // namespace extval
