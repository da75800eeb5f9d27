#pragma once

// Robust welfare criteria. Closed forms for outcome-only shifts, and the
// empirical joint-shift criteria that reduce to a one-dimensional problem in
// the multiplier eta.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "extval/distribution.hpp"
#include "extval/estimators.hpp"
#include "extval/eta_solver.hpp"
#include "extval/geometry.hpp"
#include "extval/model.hpp"

namespace extval {

namespace detail {

inline void require_outcome_shift(const NeighborhoodSpec& spec, const char* what) {
    spec.validate();
    if (spec.shift_kind != ShiftKind::PotentialOutcomesOnly)
        throw InvalidArgument(std::string(what) + " applies to potential-outcome shifts only");
}

inline void require_joint_shift(const NeighborhoodSpec& spec, const char* what) {
    spec.validate();
    if (spec.shift_kind != ShiftKind::PotentialOutcomesAndCovariates)
        throw InvalidArgument(std::string(what) + " applies to joint outcome and covariate shifts");
}

inline CriterionResult with_floor(double value, double floor, std::optional<double> eta = std::nullopt) {
    CriterionResult r;
    r.eta_star = eta;
    if (value < floor) {
        r.value = floor;
        r.floor_binding = true;
    } else {
        r.value = value;
    }
    return r;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Closed forms

struct AteBounds {
    double lower;
    double upper;
};

/// Sharp range of the average effect over the neighborhood.
inline AteBounds ate_bounds(double ate_p, const NeighborhoodSpec& spec, const SupportBounds& bounds) {
    spec.validate();
    bounds.validate();
    if (bounds.any_unbounded()) return {ate_p - spec.epsilon, ate_p + spec.epsilon};
    const double range = bounds.y_upper - bounds.y_lower;
    return {std::max(ate_p - spec.epsilon, -range), std::min(ate_p + spec.epsilon, range)};
}

/// max{W - eps, lower outcome bound}.
inline CriterionResult rw_po(double welfare_p, const NeighborhoodSpec& spec, const SupportBounds& bounds) {
    detail::require_outcome_shift(spec, "rw_po");
    if (spec.order != 1) throw InvalidArgument("rw_po handles order 1; use rw_po_order2 for order 2");
    bounds.validate();
    return detail::with_floor(welfare_p - spec.epsilon, bounds.y_lower);
}

/// W - eps under the order-2 metric; outcomes must range over the whole line.
inline CriterionResult rw_po_order2(double welfare_p, const NeighborhoodSpec& spec,
                                    const SupportBounds& bounds = SupportBounds::unbounded()) {
    detail::require_outcome_shift(spec, "rw_po_order2");
    if (spec.order != 2) throw InvalidArgument("rw_po_order2 needs order 2");
    if (bounds.lower_finite() || bounds.upper_finite())
        throw InvalidArgument("the order-2 criterion assumes outcomes unbounded in both directions");
    CriterionResult r;
    r.value = welfare_p - spec.epsilon;
    return r;
}

/// Density ratio q/p of the target covariate law, as a function or per row.
struct ReweightSpec {
    std::function<double(std::span<const double>)> rho;
    std::optional<std::vector<double>> values;

    std::vector<double> resolve(const Dataset& data) const {
        std::vector<double> out;
        if (values) {
            if (values->size() != data.size()) throw DimensionMismatch("reweighting values", data.size(), values->size());
            out = *values;
        } else if (rho) {
            out.reserve(data.size());
            for (const auto& o : data) out.push_back(rho(o.x));
        } else {
            throw InvalidArgument("ReweightSpec needs a density ratio");
        }
        for (double r : out)
            if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("density ratio must be positive and finite");
        return out;
    }
};

/// Reweighted welfare mean_w[(y0_i + effect_i tau(X_i)) rho(X_i)] - eps, floored.
inline CriterionResult rw_po_reweighted(const Dataset& data, const PolicyRule& rule, std::span<const double> effects,
                                        std::span<const double> y0_vals, const ReweightSpec& rw,
                                        const NeighborhoodSpec& spec, const SupportBounds& bounds) {
    detail::require_outcome_shift(spec, "rw_po_reweighted");
    if (spec.order != 1) throw InvalidArgument("rw_po_reweighted handles order 1");
    bounds.validate();
    if (effects.size() != data.size()) throw DimensionMismatch("effects", data.size(), effects.size());
    if (y0_vals.size() != data.size()) throw DimensionMismatch("baseline values", data.size(), y0_vals.size());
    const auto rho = rw.resolve(data);
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double contrib = y0_vals[i] + (evaluate_rule(rule, data[i].x) == 1 ? effects[i] : 0.0);
        acc += data[i].w * rho[i] * contrib;
    }
    return detail::with_floor(acc / data.total_weight() - spec.epsilon, bounds.y_lower);
}

/// Robust version of E[Y1 tau(X) - Y0]:
/// max{E[Y1 tau] - E[Y0] - eps, lower * E[tau] - upper}.
inline CriterionResult rw_alternative(double e_y1_tau, double e_y0, double e_tau, const NeighborhoodSpec& spec,
                                      const SupportBounds& bounds) {
    detail::require_outcome_shift(spec, "rw_alternative");
    if (spec.order != 1) throw InvalidArgument("rw_alternative handles order 1");
    bounds.validate();
    if (!(e_tau >= -1e-12 && e_tau <= 1.0 + 1e-12)) throw InvalidArgument("treated share must lie in [0, 1]");
    e_tau = std::clamp(e_tau, 0.0, 1.0);
    const double low_part = e_tau == 0.0 ? 0.0 : bounds.y_lower * e_tau;
    return detail::with_floor(e_y1_tau - e_y0 - spec.epsilon, low_part - bounds.y_upper);
}

// ---------------------------------------------------------------------------
// Joint shifts with per-observation effects

/// Profiles and effects of one rule, prepared once and evaluated at many radii.
class JointCriterion {
public:
    /// covariates/weights/effects describe atoms of the (empirical or population) law.
    JointCriterion(const PolicyRule& rule, const std::vector<std::vector<double>>& covariates,
                   std::span<const double> weights, std::span<const double> effects, double y0_mean,
                   std::span<const double> scale)
        : JointCriterion(make_terms(rule, covariates, weights, effects, scale), y0_mean) {}

    JointCriterion(const Dataset& data, const PolicyRule& rule, std::span<const double> effects, double y0_mean,
                   std::span<const double> scale)
        : JointCriterion(rule, covariates_of(data), weights_of(data), effects, y0_mean, scale) {}

    /// Welfare at zero radius: baseline plus the mean effect among treated atoms.
    double welfare() const { return welfare_; }

    CriterionResult evaluate(double epsilon, const SupportBounds& bounds) const {
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("epsilon must be finite and >= 0");
        if (epsilon == 0.0) return detail::with_floor(welfare_, bounds.y_lower);
        const auto s = breakpoints_.solve(epsilon);
        if (s.unbounded) {
            CriterionResult r;
            r.value = kInf;
            r.unbounded = true;
            return r;
        }
        return detail::with_floor(y0_mean_ + s.value, bounds.y_lower, s.eta_star);
    }

    const std::vector<EtaTerm>& terms() const { return breakpoints_.terms(); }

private:
    struct Prepared {
        std::vector<EtaTerm> terms;
        double treated_mean = 0.0;
    };

    JointCriterion(Prepared p, double y0_mean)
        : breakpoints_(std::move(p.terms)), welfare_(y0_mean + p.treated_mean), y0_mean_(y0_mean) {
        if (!std::isfinite(y0_mean)) throw MissingEstimate("baseline mean must be finite");
    }

    static std::vector<std::vector<double>> covariates_of(const Dataset& data) {
        std::vector<std::vector<double>> xs;
        xs.reserve(data.size());
        for (const auto& o : data) xs.push_back(o.x);
        return xs;
    }
    static std::vector<double> weights_of(const Dataset& data) {
        std::vector<double> w;
        w.reserve(data.size());
        for (const auto& o : data) w.push_back(o.w);
        return w;
    }

    static Prepared make_terms(const PolicyRule& rule, const std::vector<std::vector<double>>& xs,
                               std::span<const double> weights, std::span<const double> effects,
                               std::span<const double> scale) {
        if (xs.empty()) throw InvalidArgument("joint criterion needs at least one atom");
        if (weights.size() != xs.size()) throw DimensionMismatch("atom weights", xs.size(), weights.size());
        if (effects.size() != xs.size()) throw DimensionMismatch("effects", xs.size(), effects.size());
        std::vector<EtaTerm> terms;
        terms.reserve(xs.size());
        double acc = 0.0, total = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (!std::isfinite(effects[i])) throw MissingEstimate("effects must be finite");
            const auto p = distance_profile(rule, xs[i], scale);
            terms.push_back({p.h0, p.h1, effects[i], weights[i]});
            if (evaluate_rule(rule, xs[i]) == 1) acc += weights[i] * effects[i];
            total += weights[i];
        }
        return {std::move(terms), acc / total};
    }

    EtaBreakpoints breakpoints_;
    double welfare_ = 0.0;
    double y0_mean_ = 0.0;
};

/// Empirical joint-shift criterion with the effects the coupling calls for
/// (constant effects, comonotone or antitone rank maps).
inline CriterionResult rw_joint_empirical(const Dataset& data, const PolicyRule& rule, CouplingAssumption coupling,
                                          const EstimatorBundle& fitted, const NeighborhoodSpec& spec,
                                          const SupportBounds& bounds) {
    detail::require_joint_shift(spec, "rw_joint_empirical");
    if (coupling == CouplingAssumption::ConditionalIndependence)
        throw InvalidArgument("use rw_conditional_independence for the conditional-independence coupling");
    fitted.validate();
    const auto effects = fitted.effects_for(coupling, data);
    const auto scale = spec.scale_for(data.dim());
    return JointCriterion(data, rule, effects, fitted.y0_mean, scale).evaluate(spec.epsilon, bounds);
}

/// Criterion under the least-favorable (antitone) coupling of the arm conditionals.
inline CriterionResult rw_star_empirical(const Dataset& data, const PolicyRule& rule, const EstimatorBundle& fitted,
                                         const NeighborhoodSpec& spec, const SupportBounds& bounds) {
    return rw_joint_empirical(data, rule, CouplingAssumption::LeastFavorable, fitted, spec, bounds);
}

// ---------------------------------------------------------------------------
// Conditional independence of the potential outcomes

struct CiOptions {
    double eta_tol = 1e-8;
    /// Upper end of the eta search; derived from the data when unset.
    std::optional<double> eta_upper;
};

/// Prepared conditional-independence criterion for one rule.
class CiCriterion {
public:
    CiCriterion(const Dataset& data, const PolicyRule& rule, const ConditionalCdfs& cdfs,
                std::span<const double> scale) {
        if (cdfs.size() != data.size()) throw DimensionMismatch("conditional CDFs", data.size(), cdfs.size());
        items_.reserve(data.size());
        double total = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            Item it;
            it.profile = distance_profile(rule, data[i].x, scale);
            if (it.profile.h0.is_finite() && it.profile.h1.is_finite() && !it.profile.h0.is_zero() &&
                !it.profile.h1.is_zero())
                throw InternalError("distance profile has both sides positive");
            it.f0 = cdfs.distribution(i, 0);
            it.f1 = cdfs.distribution(i, 1);
            it.w = data[i].w;
            it.treated = evaluate_rule(rule, data[i].x) == 1;
            total += it.w;
            items_.push_back(std::move(it));
        }
        for (auto& it : items_) it.w /= total;
    }

    /// mean_i E[min{Y0 + eta h0_i, Y1 + eta h1_i}] under independent arms.
    double expectation(double eta) const {
        double acc = 0.0;
        for (const auto& it : items_) acc += it.w * item_value(it, eta);
        return acc;
    }

    double welfare() const {
        double acc = 0.0;
        for (const auto& it : items_) acc += it.w * (it.treated ? it.f1.mean() : it.f0.mean());
        return acc;
    }

    CriterionResult evaluate(double epsilon, const SupportBounds& bounds, const CiOptions& opt = {}) const {
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("epsilon must be finite and >= 0");
        if (epsilon == 0.0) return detail::with_floor(welfare(), bounds.y_lower);
        auto f = [&](double eta) { return expectation(eta) - eta * epsilon; };
        // Each term rises by at most its limit gain, so past 1 + gain/eps the objective falls below f(1).
        double gain = 0.0;
        for (const auto& it : items_) gain += it.w * (limit_value(it) - item_value(it, 1.0));
        const double upper = opt.eta_upper.value_or(2.0 + std::max(gain, 0.0) / epsilon);

        double a = 1.0, b = upper;
        const double g = (std::sqrt(5.0) - 1.0) / 2.0;
        double c = b - g * (b - a), d = a + g * (b - a);
        double fc = f(c), fd = f(d);
        while (b - a > opt.eta_tol * (1.0 + a)) {
            if (fc >= fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        // The objective is piecewise linear; its maximizer is eta = 1 or a kink in [a, b].
        std::vector<double> cand{1.0, a, b};
        collect_kinks(a, b, cand);
        std::sort(cand.begin(), cand.end());
        double best_eta = cand.front(), best = f(best_eta);
        for (double e : cand) {
            const double v = f(e);
            if (v > best) {
                best = v;
                best_eta = e;
            }
        }
        return detail::with_floor(best, bounds.y_lower, best_eta);
    }

private:
    struct Item {
        DistanceProfile profile;
        WeightedAtoms f0, f1;
        double w = 0.0;
        bool treated = false;
    };

    static double item_value(const Item& it, double eta) {
        const auto& p = it.profile;
        if (p.h0.is_infinite()) return it.f1.mean() + eta * p.h1.value();
        if (p.h1.is_infinite()) return it.f0.mean() + eta * p.h0.value();
        return expected_min(it.f0, eta * p.h0.value(), it.f1, eta * p.h1.value());
    }

    static double limit_value(const Item& it) {
        const auto& p = it.profile;
        if (p.h0.is_infinite()) return it.f1.mean();
        if (p.h1.is_infinite()) return it.f0.mean();
        if (p.h0.is_zero() && p.h1.is_zero()) return expected_min(it.f0, 0.0, it.f1, 0.0);
        return p.h0.is_zero() ? it.f0.mean() : it.f1.mean();
    }

    // Kinks where an atom of Y0 + eta h0 meets an atom of Y1 + eta h1.
    void collect_kinks(double lo, double hi, std::vector<double>& out) const {
        for (const auto& it : items_) {
            const auto& p = it.profile;
            if (p.h0.is_infinite() || p.h1.is_infinite()) continue;
            const double slope = p.h0.value() - p.h1.value();
            if (slope == 0.0) continue;
            const auto& v0 = it.f0.values();
            const auto& v1 = it.f1.values();
            for (double a0 : v0) {
                // eta = (a1 - a0) / slope inside [lo, hi]  <=>  a1 in a0 + slope * [lo, hi].
                double l = a0 + slope * lo, h = a0 + slope * hi;
                if (l > h) std::swap(l, h);
                auto first = std::lower_bound(v1.begin(), v1.end(), l);
                auto last = std::upper_bound(v1.begin(), v1.end(), h);
                for (auto q = first; q != last; ++q) {
                    const double e = (*q - a0) / slope;
                    if (e >= 1.0) out.push_back(e);
                }
            }
        }
    }

    std::vector<Item> items_;
};

inline CriterionResult rw_conditional_independence(const Dataset& data, const PolicyRule& rule,
                                                   const ConditionalCdfs& cdfs, const NeighborhoodSpec& spec,
                                                   const SupportBounds& bounds, const CiOptions& opt = {}) {
    detail::require_joint_shift(spec, "rw_conditional_independence");
    return CiCriterion(data, rule, cdfs, spec.scale_for(data.dim())).evaluate(spec.epsilon, bounds, opt);
}

// ---------------------------------------------------------------------------
// Dispatch

/// Empirical criterion for any coupling; outcome-only shifts use the sample
/// welfare with the closed form.
inline CriterionResult rw_empirical(const Dataset& data, const PolicyRule& rule, CouplingAssumption coupling,
                                    const EstimatorBundle& fitted, const NeighborhoodSpec& spec,
                                    const SupportBounds& bounds) {
    spec.validate();
    if (spec.shift_kind == ShiftKind::PotentialOutcomesOnly) {
        double w;
        if (coupling == CouplingAssumption::ConditionalIndependence) {
            if (!fitted.cond_cdfs) throw MissingEstimate("estimator bundle lacks conditional CDFs");
            w = CiCriterion(data, rule, *fitted.cond_cdfs, {}).welfare();
        } else {
            w = sample_welfare(data, rule, fitted.effects_for(coupling, data), fitted.y0_mean);
        }
        return spec.order == 2 ? rw_po_order2(w, spec, bounds) : rw_po(w, spec, bounds);
    }
    if (coupling == CouplingAssumption::ConditionalIndependence) {
        if (!fitted.cond_cdfs) throw MissingEstimate("estimator bundle lacks conditional CDFs");
        return rw_conditional_independence(data, rule, *fitted.cond_cdfs, spec, bounds);
    }
    return rw_joint_empirical(data, rule, coupling, fitted, spec, bounds);
}

} // namespace extval
