#pragma once

// Domain types shared by every module and plain (non-robust) welfare.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "extval/error.hpp"

namespace extval {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

namespace detail {

/// Shortest round-trip text for a double.
inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline void require_dim(std::span<const double> x, std::size_t dim, const char* what) {
    if (x.size() != dim) throw DimensionMismatch(what, dim, x.size());
}

} // namespace detail

struct Observation {
    std::vector<double> x;
    double y = 0.0;
    int d = 0;
    std::optional<double> z;
    std::optional<std::int64_t> c;
    double w = 1.0;
};

/// Range of conceivable potential-outcome values. Infinite ends are allowed.
struct SupportBounds {
    double y_lower = -kInf;
    double y_upper = kInf;
    /// Declared spacing of an outcome support unbounded below (documentation only).
    std::optional<double> equispaced_gap;

    static SupportBounds unbounded() { return {}; }
    static SupportBounds binary() { return {0.0, 1.0, std::nullopt}; }
    static SupportBounds interval(double lo, double hi) { return {lo, hi, std::nullopt}; }

    bool lower_finite() const { return std::isfinite(y_lower); }
    bool upper_finite() const { return std::isfinite(y_upper); }
    bool any_unbounded() const { return !lower_finite() || !upper_finite(); }
    bool contains(double y) const { return y >= y_lower && y <= y_upper; }

    void validate() const {
        if (std::isnan(y_lower) || std::isnan(y_upper) || !(y_lower < y_upper))
            throw InvalidArgument("SupportBounds requires y_lower < y_upper");
        if (y_lower == kInf || y_upper == -kInf)
            throw InvalidArgument("SupportBounds ends point the wrong way");
        if (equispaced_gap && !(*equispaced_gap > 0.0))
            throw InvalidArgument("equispaced_gap must be positive");
    }
};

class Dataset {
public:
    Dataset(std::vector<Observation> observations, SupportBounds bounds)
        : observations_(std::move(observations)), bounds_(bounds) {
        bounds_.validate();
        if (observations_.empty()) throw InvalidArgument("Dataset must be nonempty");
        dim_ = observations_.front().x.size();
        for (std::size_t i = 0; i < observations_.size(); ++i) {
            const auto& o = observations_[i];
            const std::string row = "observation " + std::to_string(i);
            if (o.x.size() != dim_) throw DimensionMismatch(row + " covariates", dim_, o.x.size());
            if (o.d != 0 && o.d != 1) throw InvalidArgument(row + ": treatment must be 0 or 1");
            if (!(o.w > 0.0) || !std::isfinite(o.w)) throw InvalidArgument(row + ": weight must be positive");
            if (!std::isfinite(o.y)) throw InvalidArgument(row + ": outcome must be finite");
            if (!bounds_.contains(o.y)) throw InvalidArgument(row + ": outcome outside support bounds");
            for (double v : o.x)
                if (!std::isfinite(v)) throw InvalidArgument(row + ": covariates must be finite");
            total_weight_ += o.w;
        }
    }

    std::size_t size() const { return observations_.size(); }
    std::size_t dim() const { return dim_; }
    const Observation& operator[](std::size_t i) const { return observations_[i]; }
    const std::vector<Observation>& observations() const { return observations_; }
    const SupportBounds& bounds() const { return bounds_; }
    double total_weight() const { return total_weight_; }

    auto begin() const { return observations_.begin(); }
    auto end() const { return observations_.end(); }

    bool has_instrument() const {
        return std::all_of(begin(), end(), [](const Observation& o) { return o.z.has_value(); });
    }
    bool has_groups() const {
        return std::all_of(begin(), end(), [](const Observation& o) { return o.c.has_value(); });
    }
    std::size_t count_arm(int d) const {
        return static_cast<std::size_t>(
            std::count_if(begin(), end(), [d](const Observation& o) { return o.d == d; }));
    }

private:
    std::vector<Observation> observations_;
    SupportBounds bounds_;
    std::size_t dim_ = 0;
    double total_weight_ = 0.0;
};

// ---------------------------------------------------------------------------
// Policy rules

/// Treat iff intercept + x'coef >= 0.
struct LinearEligibility {
    double intercept = 0.0;
    std::vector<double> coef;
};

/// One conjunct of a threshold rule: sign * (x[dim] - cut) >= 0.
struct ThresholdCut {
    std::size_t dim = 0;
    int sign = 1;
    double cut = 0.0;
};

/// Treat iff every cut is satisfied. No cuts means treat everyone.
struct Threshold {
    std::vector<ThresholdCut> cuts;
};

/// Axis-aligned hyperrectangle with per-face closedness.
struct Box {
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<bool> lower_closed;
    std::vector<bool> upper_closed;

    /// Closed box [lower, upper] (infinite ends are open by construction).
    static Box closed(std::vector<double> lo, std::vector<double> hi) {
        Box b;
        b.lower_closed.assign(lo.size(), true);
        b.upper_closed.assign(hi.size(), true);
        b.lower = std::move(lo);
        b.upper = std::move(hi);
        return b;
    }

    std::size_t dim() const { return lower.size(); }

    void validate() const {
        const std::size_t k = lower.size();
        if (upper.size() != k || lower_closed.size() != k || upper_closed.size() != k)
            throw InvalidArgument("Box fields must share one dimension");
        for (std::size_t i = 0; i < k; ++i) {
            if (std::isnan(lower[i]) || std::isnan(upper[i])) throw InvalidArgument("Box bound is NaN");
            if (lower[i] == kInf || upper[i] == -kInf) throw InvalidArgument("Box bound points the wrong way");
            if (lower[i] > upper[i]) throw InvalidArgument("Box requires lower <= upper");
        }
    }

    bool contains(std::span<const double> x) const {
        detail::require_dim(x, dim(), "Box::contains");
        for (std::size_t i = 0; i < dim(); ++i) {
            const bool above = x[i] > lower[i] || (lower_closed[i] && x[i] == lower[i]);
            const bool below = x[i] < upper[i] || (upper_closed[i] && x[i] == upper[i]);
            if (!above || !below) return false;
        }
        return true;
    }
};

/// Union of treatment boxes; complement_boxes cover the rest of covariate space.
struct TreeBoxes {
    std::vector<Box> treat_boxes;
    std::vector<Box> complement_boxes;
};

struct ConstantRule {
    int value = 0;
};

class PolicyRule {
public:
    using Variant = std::variant<LinearEligibility, Threshold, TreeBoxes, ConstantRule>;

    explicit PolicyRule(Variant v) : rule_(std::move(v)) { validate(); }

    static PolicyRule linear(double intercept, std::vector<double> coef) {
        return PolicyRule(LinearEligibility{intercept, std::move(coef)});
    }
    static PolicyRule threshold(std::vector<ThresholdCut> cuts) { return PolicyRule(Threshold{std::move(cuts)}); }
    static PolicyRule tree(std::vector<Box> treat, std::vector<Box> complement) {
        return PolicyRule(TreeBoxes{std::move(treat), std::move(complement)});
    }
    static PolicyRule constant(int value) { return PolicyRule(ConstantRule{value}); }

    const Variant& variant() const { return rule_; }

    template <class T>
    const T* get_if() const {
        return std::get_if<T>(&rule_);
    }

    /// Canonical text form; used for reports and deterministic tie-breaking.
    std::string encode() const;

    /// Covariate dimension the rule requires, or nullopt if any dimension works.
    std::optional<std::size_t> required_dim() const;

    /// Lowest covariate dimension the rule can be applied to.
    std::size_t min_dim() const;

private:
    void validate() const;
    Variant rule_;
};

inline void PolicyRule::validate() const {
    std::visit(
        [](const auto& r) {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, LinearEligibility>) {
                if (!std::isfinite(r.intercept)) throw InvalidArgument("linear rule intercept must be finite");
                double norm2 = 0.0;
                for (double b : r.coef) {
                    if (!std::isfinite(b)) throw InvalidArgument("linear rule coefficients must be finite");
                    norm2 += b * b;
                }
                if (!(norm2 > 0.0)) throw InvalidArgument("linear rule needs a nonzero coefficient");
            } else if constexpr (std::is_same_v<T, Threshold>) {
                for (const auto& c : r.cuts) {
                    if (c.sign != 1 && c.sign != -1) throw InvalidArgument("threshold sign must be +1 or -1");
                    if (!std::isfinite(c.cut)) throw InvalidArgument("threshold cut must be finite");
                }
            } else if constexpr (std::is_same_v<T, TreeBoxes>) {
                std::optional<std::size_t> k;
                for (const auto* set : {&r.treat_boxes, &r.complement_boxes})
                    for (const auto& b : *set) {
                        b.validate();
                        if (k && *k != b.dim()) throw InvalidArgument("tree boxes disagree on dimension");
                        k = b.dim();
                    }
                if (r.treat_boxes.empty() && r.complement_boxes.empty())
                    throw InvalidArgument("tree rule needs at least one box");
            } else {
                if (r.value != 0 && r.value != 1) throw InvalidArgument("constant rule value must be 0 or 1");
            }
        },
        rule_);
}

inline std::optional<std::size_t> PolicyRule::required_dim() const {
    if (const auto* l = get_if<LinearEligibility>()) return l->coef.size();
    if (const auto* t = get_if<TreeBoxes>()) {
        if (!t->treat_boxes.empty()) return t->treat_boxes.front().dim();
        return t->complement_boxes.front().dim();
    }
    return std::nullopt;
}

inline std::size_t PolicyRule::min_dim() const {
    if (auto k = required_dim()) return *k;
    if (const auto* t = get_if<Threshold>()) {
        std::size_t k = 0;
        for (const auto& c : t->cuts) k = std::max(k, c.dim + 1);
        return k;
    }
    return 0;
}

namespace detail {

inline std::string encode_box(const Box& b) {
    std::string s;
    for (std::size_t i = 0; i < b.dim(); ++i) {
        if (i) s += "x";
        s += b.lower_closed[i] && std::isfinite(b.lower[i]) ? "[" : "(";
        s += format_double(b.lower[i]) + ":" + format_double(b.upper[i]);
        s += b.upper_closed[i] && std::isfinite(b.upper[i]) ? "]" : ")";
    }
    return s;
}

} // namespace detail

inline std::string PolicyRule::encode() const {
    return std::visit(
        [](const auto& r) -> std::string {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, LinearEligibility>) {
                std::string s = "linear(" + detail::format_double(r.intercept) + ";";
                for (std::size_t j = 0; j < r.coef.size(); ++j)
                    s += (j ? " " : "") + detail::format_double(r.coef[j]);
                return s + ")";
            } else if constexpr (std::is_same_v<T, Threshold>) {
                std::string s = "threshold(";
                for (std::size_t j = 0; j < r.cuts.size(); ++j) {
                    const auto& c = r.cuts[j];
                    s += (j ? " & " : "") + std::string("x") + std::to_string(c.dim) +
                         (c.sign > 0 ? ">=" : "<=") + detail::format_double(c.cut);
                }
                return s + ")";
            } else if constexpr (std::is_same_v<T, TreeBoxes>) {
                std::string s = "tree(T{";
                for (std::size_t j = 0; j < r.treat_boxes.size(); ++j)
                    s += (j ? " " : "") + detail::encode_box(r.treat_boxes[j]);
                s += "} C{";
                for (std::size_t j = 0; j < r.complement_boxes.size(); ++j)
                    s += (j ? " " : "") + detail::encode_box(r.complement_boxes[j]);
                return s + "})";
            } else {
                return "const(" + std::to_string(r.value) + ")";
            }
        },
        rule_);
}

/// tau(x). Weak inequalities for linear and threshold rules; tree boxes use
/// their stored face closedness.
inline int evaluate_rule(const PolicyRule& rule, std::span<const double> x) {
    if (auto k = rule.required_dim()) detail::require_dim(x, *k, "evaluate_rule");
    return std::visit(
        [&](const auto& r) -> int {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, LinearEligibility>) {
                double score = r.intercept;
                for (std::size_t j = 0; j < x.size(); ++j) score += x[j] * r.coef[j];
                return score >= 0.0 ? 1 : 0;
            } else if constexpr (std::is_same_v<T, Threshold>) {
                for (const auto& c : r.cuts) {
                    if (c.dim >= x.size()) throw DimensionMismatch("threshold cut dimension", c.dim + 1, x.size());
                    if (c.sign * (x[c.dim] - c.cut) < 0.0) return 0;
                }
                return 1;
            } else if constexpr (std::is_same_v<T, TreeBoxes>) {
                for (const auto& b : r.treat_boxes)
                    if (b.contains(x)) return 1;
                return 0;
            } else {
                return r.value;
            }
        },
        rule.variant());
}

// ---------------------------------------------------------------------------
// Neighborhoods and criterion results

enum class ShiftKind { PotentialOutcomesOnly, PotentialOutcomesAndCovariates };

struct NeighborhoodSpec {
    double epsilon = 0.0;
    ShiftKind shift_kind = ShiftKind::PotentialOutcomesOnly;
    int order = 1;
    /// Per-dimension rescaling applied before the covariate norm. Empty means all ones.
    std::vector<double> covariate_scale;

    void validate() const {
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("epsilon must be finite and >= 0");
        if (order != 1 && order != 2) throw InvalidArgument("Wasserstein order must be 1 or 2");
        if (order == 2 && shift_kind != ShiftKind::PotentialOutcomesOnly)
            throw InvalidArgument("order 2 is only available for potential-outcome shifts");
        for (double s : covariate_scale)
            if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("covariate scales must be positive");
    }

    /// Scale vector expanded to dimension k.
    std::vector<double> scale_for(std::size_t k) const {
        if (covariate_scale.empty()) return std::vector<double>(k, 1.0);
        if (covariate_scale.size() != k) throw DimensionMismatch("covariate_scale", k, covariate_scale.size());
        return covariate_scale;
    }

    NeighborhoodSpec with_epsilon(double eps) const {
        NeighborhoodSpec s = *this;
        s.epsilon = eps;
        return s;
    }
};

struct CriterionResult {
    double value = 0.0;
    /// Attaining multiplier (>= 1) of the inner problem, when one was solved.
    std::optional<double> eta_star;
    /// The outcome-floor branch of the outer max was active.
    bool floor_binding = false;
    /// Inner supremum is +infinity (only possible for non-geometric inputs at zero radius).
    bool unbounded = false;
};

// ---------------------------------------------------------------------------
// Plain welfare

/// Weighted sample welfare y0_mean + mean_w(effect_i * tau(X_i)).
inline double sample_welfare(const Dataset& data, const PolicyRule& rule, std::span<const double> effects,
                             double y0_mean) {
    if (effects.size() != data.size()) throw DimensionMismatch("sample_welfare effects", data.size(), effects.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (evaluate_rule(rule, data[i].x) == 1) acc += data[i].w * effects[i];
    return y0_mean + acc / data.total_weight();
}

} // namespace extval
