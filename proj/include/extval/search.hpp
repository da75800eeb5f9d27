#pragma once

// Exhaustive maximization of robust criteria over finite policy classes, and
// criterion curves over radius grids.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "extval/estimators.hpp"
#include "extval/model.hpp"
#include "extval/robust.hpp"

namespace extval {

// ---------------------------------------------------------------------------
// Policy classes

/// Conjunctions of one cut per listed dimension, for every sign pattern and
/// every combination of cuts.
struct ThresholdGrid {
    std::vector<std::size_t> dims;
    /// Each pattern holds one sign per entry of dims. Empty means all patterns.
    std::vector<std::vector<int>> sign_patterns;
    /// cuts[i] are the candidate cut points for dims[i].
    std::vector<std::vector<double>> cuts;
};

/// Linear rules cos(a) x[d0] + sin(a) x[d1] - offset >= 0 on two covariates
/// (one covariate: sign(cos a) x[d0] - offset >= 0).
struct LinearGrid {
    std::vector<std::size_t> dims;
    std::vector<double> angles;
    std::vector<double> offsets;
};

struct ExplicitList {
    std::vector<PolicyRule> rules;
};

struct PolicyClassSpec {
    std::variant<ThresholdGrid, LinearGrid, ExplicitList> family;
    bool include_constant = false;
};

namespace detail {

inline std::vector<std::vector<int>> all_sign_patterns(std::size_t k) {
    std::vector<std::vector<int>> out;
    for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
        std::vector<int> p(k);
        for (std::size_t i = 0; i < k; ++i) p[i] = (mask >> i) & 1U ? -1 : 1;
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace detail

/// Every rule of the class, in a fixed order.
inline std::vector<PolicyRule> enumerate_rules(const PolicyClassSpec& spec, std::size_t dim) {
    std::vector<PolicyRule> out;
    if (const auto* t = std::get_if<ThresholdGrid>(&spec.family)) {
        const std::size_t k = t->dims.size();
        if (k == 0 || t->cuts.size() != k) throw InvalidArgument("threshold grid needs one cut list per dimension");
        for (std::size_t d : t->dims)
            if (d >= dim) throw DimensionMismatch("threshold grid dimension", dim, d + 1);
        for (const auto& c : t->cuts)
            if (c.empty()) throw InvalidArgument("threshold grid has an empty cut list");
        const auto patterns = t->sign_patterns.empty() ? detail::all_sign_patterns(k) : t->sign_patterns;
        for (const auto& signs : patterns) {
            if (signs.size() != k) throw InvalidArgument("sign pattern length must match the grid dimensions");
            for (int s : signs)
                if (s != 1 && s != -1) throw InvalidArgument("signs must be +1 or -1");
            std::vector<std::size_t> idx(k, 0);
            while (true) {
                std::vector<ThresholdCut> cuts;
                for (std::size_t i = 0; i < k; ++i) cuts.push_back({t->dims[i], signs[i], t->cuts[i][idx[i]]});
                out.push_back(PolicyRule::threshold(std::move(cuts)));
                std::size_t i = k;
                while (i > 0) {
                    --i;
                    if (++idx[i] < t->cuts[i].size()) break;
                    idx[i] = 0;
                    if (i == 0) goto next_pattern;
                }
            }
        next_pattern:;
        }
    } else if (const auto* l = std::get_if<LinearGrid>(&spec.family)) {
        if (l->dims.empty() || l->dims.size() > 2) throw InvalidArgument("linear grid uses one or two covariates");
        for (std::size_t d : l->dims)
            if (d >= dim) throw DimensionMismatch("linear grid dimension", dim, d + 1);
        if (l->angles.empty() || l->offsets.empty()) throw InvalidArgument("linear grid needs angles and offsets");
        for (double a : l->angles)
            for (double o : l->offsets) {
                std::vector<double> coef(dim, 0.0);
                if (l->dims.size() == 1) {
                    coef[l->dims[0]] = std::cos(a) >= 0.0 ? 1.0 : -1.0;
                } else {
                    coef[l->dims[0]] = std::cos(a);
                    coef[l->dims[1]] = std::sin(a);
                }
                out.push_back(PolicyRule::linear(-o, std::move(coef)));
            }
    } else {
        out = std::get<ExplicitList>(spec.family).rules;
    }
    if (spec.include_constant) {
        out.push_back(PolicyRule::constant(0));
        out.push_back(PolicyRule::constant(1));
    }
    if (out.empty()) throw InvalidArgument("policy class is empty");
    return out;
}

/// Sorted distinct observed values of one covariate. With max_cuts > 0, keeps
/// that many evenly spaced order statistics.
inline std::vector<double> unique_cuts(const Dataset& data, std::size_t dim, std::size_t max_cuts = 0) {
    if (dim >= data.dim()) throw DimensionMismatch("cut dimension", data.dim(), dim + 1);
    std::vector<double> v;
    v.reserve(data.size());
    for (const auto& o : data) v.push_back(o.x[dim]);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    if (max_cuts == 0 || v.size() <= max_cuts) return v;
    std::vector<double> out;
    for (std::size_t i = 0; i < max_cuts; ++i) {
        const std::size_t j = max_cuts == 1 ? v.size() / 2 : i * (v.size() - 1) / (max_cuts - 1);
        out.push_back(v[j]);
    }
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// `count` distinct rules drawn uniformly from the class with a seeded
/// Fisher-Yates pass, returned in class order.
inline std::vector<PolicyRule> sample_rules(const std::vector<PolicyRule>& rules, std::size_t count,
                                            std::uint64_t seed) {
    if (count >= rules.size()) return rules;
    std::vector<std::size_t> idx(rules.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    std::vector<PolicyRule> out;
    for (std::size_t i : idx) out.push_back(rules[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Prepared criteria

/// Criterion of one rule with everything that does not depend on the radius
/// computed up front.
class PreparedCriterion {
public:
    /// effects: the coupling's per-observation effects (ignored for conditional independence).
    PreparedCriterion(const Dataset& data, const PolicyRule& rule, CouplingAssumption coupling,
                      std::span<const double> effects, const EstimatorBundle& fitted, const NeighborhoodSpec& spec)
        : spec_(spec) {
        spec.validate();
        const auto scale = spec.scale_for(data.dim());
        const bool ci = coupling == CouplingAssumption::ConditionalIndependence;
        if (ci && !fitted.cond_cdfs) throw MissingEstimate("estimator bundle lacks conditional CDFs");
        if (spec.shift_kind == ShiftKind::PotentialOutcomesOnly) {
            welfare_ = ci ? CiCriterion(data, rule, *fitted.cond_cdfs, scale).welfare()
                          : sample_welfare(data, rule, effects, fitted.y0_mean);
        } else if (ci) {
            impl_.emplace<CiCriterion>(data, rule, *fitted.cond_cdfs, scale);
        } else {
            impl_.emplace<JointCriterion>(data, rule, effects, fitted.y0_mean, scale);
        }
    }

    CriterionResult evaluate(double epsilon, const SupportBounds& bounds) const {
        if (const auto* j = std::get_if<JointCriterion>(&impl_)) return j->evaluate(epsilon, bounds);
        if (const auto* c = std::get_if<CiCriterion>(&impl_)) return c->evaluate(epsilon, bounds);
        const auto s = spec_.with_epsilon(epsilon);
        return s.order == 2 ? rw_po_order2(welfare_, s, bounds) : rw_po(welfare_, s, bounds);
    }

private:
    NeighborhoodSpec spec_;
    double welfare_ = 0.0;
    std::variant<std::monostate, JointCriterion, CiCriterion> impl_;
};

namespace detail {

inline std::vector<double> coupling_effects(const Dataset& data, CouplingAssumption coupling,
                                            const EstimatorBundle& fitted) {
    fitted.validate();
    if (coupling == CouplingAssumption::ConditionalIndependence) return {};
    return fitted.effects_for(coupling, data);
}

inline unsigned resolve_threads(unsigned threads, std::size_t jobs) {
    if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(jobs, 1)));
}

/// Runs job(i) for i in [0, n) on `threads` workers with a static interleaved split.
template <class Job>
void parallel_for(std::size_t n, unsigned threads, Job&& job) {
    threads = resolve_threads(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) job(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Search

struct SearchReport {
    PolicyRule best_rule = PolicyRule::constant(0);
    double best_value = 0.0;
    CriterionResult best_result;
    /// Exhaustive search over a finite class leaves no optimization error.
    double optimization_gap = 0.0;
    std::vector<PolicyRule> rules;
    std::vector<CriterionResult> values;
};

/// (value, encoding) order: larger value wins, ties go to the smaller encoding.
inline bool better_candidate(double va, const std::string& ea, double vb, const std::string& eb) {
    if (va != vb) return va > vb;
    return ea < eb;
}

inline SearchReport maximize(const Dataset& data, const std::vector<PolicyRule>& rules, CouplingAssumption coupling,
                             const EstimatorBundle& fitted, const NeighborhoodSpec& spec, const SupportBounds& bounds,
                             unsigned threads = 1) {
    if (rules.empty()) throw InvalidArgument("policy class is empty");
    spec.validate();
    const auto effects = detail::coupling_effects(data, coupling, fitted);
    SearchReport rep;
    rep.rules = rules;
    rep.values.resize(rules.size());
    detail::parallel_for(rules.size(), threads, [&](std::size_t i) {
        rep.values[i] = PreparedCriterion(data, rules[i], coupling, effects, fitted, spec).evaluate(spec.epsilon, bounds);
    });
    std::size_t best = 0;
    std::string best_enc = rules[0].encode();
    for (std::size_t i = 1; i < rules.size(); ++i) {
        std::string enc = rules[i].encode();
        if (better_candidate(rep.values[i].value, enc, rep.values[best].value, best_enc)) {
            best = i;
            best_enc = std::move(enc);
        }
    }
    rep.best_rule = rules[best];
    rep.best_result = rep.values[best];
    rep.best_value = rep.values[best].value;
    return rep;
}

inline SearchReport maximize(const Dataset& data, const PolicyClassSpec& cls, CouplingAssumption coupling,
                             const EstimatorBundle& fitted, const NeighborhoodSpec& spec, const SupportBounds& bounds,
                             unsigned threads = 1) {
    return maximize(data, enumerate_rules(cls, data.dim()), coupling, fitted, spec, bounds, threads);
}

// ---------------------------------------------------------------------------
// Curves

struct CurveRow {
    std::size_t rule_id = 0;
    std::string rule;
    double epsilon = 0.0;
    double value = 0.0;
};

/// Criterion of each rule at each radius, sorted by (rule_id, epsilon). The
/// radius in `spec` is ignored.
inline std::vector<CurveRow> epsilon_curve(const Dataset& data, const std::vector<PolicyRule>& rules,
                                           CouplingAssumption coupling, const EstimatorBundle& fitted,
                                           const NeighborhoodSpec& spec, const std::vector<double>& eps_grid,
                                           const SupportBounds& bounds, unsigned threads = 1) {
    if (rules.empty()) throw InvalidArgument("curve needs at least one rule");
    if (eps_grid.empty()) throw InvalidArgument("epsilon grid is empty");
    if (!std::is_sorted(eps_grid.begin(), eps_grid.end())) throw InvalidArgument("epsilon grid must be sorted ascending");
    for (double e : eps_grid)
        if (!(e >= 0.0) || !std::isfinite(e)) throw InvalidArgument("epsilon grid values must be finite and >= 0");
    spec.with_epsilon(0.0).validate();
    const auto effects = detail::coupling_effects(data, coupling, fitted);
    std::vector<CurveRow> rows(rules.size() * eps_grid.size());
    detail::parallel_for(rules.size(), threads, [&](std::size_t r) {
        const PreparedCriterion crit(data, rules[r], coupling, effects, fitted, spec);
        const std::string enc = rules[r].encode();
        for (std::size_t k = 0; k < eps_grid.size(); ++k)
            rows[r * eps_grid.size() + k] = {r, enc, eps_grid[k], crit.evaluate(eps_grid[k], bounds).value};
    });
    return rows;
}

} // namespace extval
