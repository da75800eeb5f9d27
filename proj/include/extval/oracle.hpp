#pragma once

// Brute-force Wasserstein adversary on finite supports. Solves the primal
// transport problem directly as a linear program over a finite set of
// candidate destinations, independently of the dual formulas in robust.hpp.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "extval/error.hpp"
#include "extval/geometry.hpp"
#include "extval/lp.hpp"
#include "extval/model.hpp"

namespace extval::oracle {

/// Point (x, y0, y1) with probability mass. Target candidates ignore mass.
struct JointAtom {
    std::vector<double> x;
    double y0 = 0.0;
    double y1 = 0.0;
    double mass = 0.0;
};

enum class GroundMetric {
    /// |dy0| + |dy1|, covariates frozen (moving x costs +inf).
    OutcomesOnly,
    /// |dy0| + |dy1| + ||dx|| on rescaled covariates.
    OutcomesAndCovariates,
};

using CostFn = std::function<double(const JointAtom&, const JointAtom&)>;
using ObjectiveFn = std::function<double(const JointAtom&)>;

/// Ground metric d(z, z~). For order 2 this is the root of the summed squares,
/// so d^2 is the quadratic cost.
inline CostFn make_cost(GroundMetric metric, int order = 1, std::vector<double> scale = {}) {
    if (order != 1 && order != 2) throw InvalidArgument("order must be 1 or 2");
    return [metric, order, scale](const JointAtom& a, const JointAtom& b) {
        if (a.x.size() != b.x.size()) throw DimensionMismatch("atom covariates", a.x.size(), b.x.size());
        double dx2 = 0.0;
        bool moved = false;
        for (std::size_t i = 0; i < a.x.size(); ++i) {
            const double s = scale.empty() ? 1.0 : scale[i];
            const double r = s * (a.x[i] - b.x[i]);
            dx2 += r * r;
            moved = moved || a.x[i] != b.x[i];
        }
        if (metric == GroundMetric::OutcomesOnly && moved) return lp::kInf;
        const double d0 = std::abs(a.y0 - b.y0), d1 = std::abs(a.y1 - b.y1);
        if (order == 2) return std::sqrt(d0 * d0 + d1 * d1 + dx2);
        return d0 + d1 + std::sqrt(dx2);
    };
}

/// Welfare integrand y1 tau(x) + y0 (1 - tau(x)).
inline ObjectiveFn welfare_objective(PolicyRule rule) {
    return [rule = std::move(rule)](const JointAtom& z) { return evaluate_rule(rule, z.x) == 1 ? z.y1 : z.y0; };
}

inline ObjectiveFn effect_objective() {
    return [](const JointAtom& z) { return z.y1 - z.y0; };
}

/// y1 tau(x) - y0.
inline ObjectiveFn gain_objective(PolicyRule rule) {
    return [rule = std::move(rule)](const JointAtom& z) {
        return (evaluate_rule(rule, z.x) == 1 ? z.y1 : 0.0) - z.y0;
    };
}

struct TransportInstance {
    std::vector<JointAtom> source;
    std::vector<JointAtom> targets;
    CostFn cost;
    /// Radius eps; the constraint is E[d^order] <= eps^order.
    double budget = 0.0;
    int order = 1;
    ObjectiveFn objective;
    /// Find the best case instead of the worst case.
    bool maximize = false;
};

struct WorstCaseResult {
    double value = 0.0;
    /// plan[i][j]: mass moved from source i to target j.
    std::vector<std::vector<double>> plan;
    /// Expected transport cost of the plan (in d^order units).
    double cost_used = 0.0;
    /// The plan puts mass on the most extreme objective value in the grid. With
    /// unbounded outcomes this means the optimum is approached, not attained,
    /// and a wider grid would move the value further.
    bool grid_extreme_used = false;
};

inline void validate_masses(const std::vector<JointAtom>& atoms, const char* what) {
    if (atoms.empty()) throw InvalidArgument(std::string(what) + " must be nonempty");
    double total = 0.0;
    for (const auto& a : atoms) {
        if (!(a.mass >= 0.0) || !std::isfinite(a.mass)) throw InvalidArgument(std::string(what) + " masses must be >= 0");
        total += a.mass;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument(std::string(what) + " masses must sum to 1");
}

/// Optimal value of the objective over couplings restricted to the targets.
inline WorstCaseResult worst_case(const TransportInstance& inst) {
    validate_masses(inst.source, "source atoms");
    if (inst.targets.empty()) throw InvalidArgument("target grid must be nonempty");
    if (!(inst.budget >= 0.0) || !std::isfinite(inst.budget)) throw InvalidArgument("budget must be finite and >= 0");
    if (!inst.cost || !inst.objective) throw InvalidArgument("transport instance needs cost and objective");
    const std::size_t m = inst.source.size(), t = inst.targets.size();

    std::vector<double> obj(t);
    for (std::size_t j = 0; j < t; ++j) obj[j] = inst.objective(inst.targets[j]);

    struct Var {
        std::size_t i, j;
        double cost;
    };
    std::vector<Var> vars;
    for (std::size_t i = 0; i < m; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < t; ++j) {
            const double d = inst.cost(inst.source[i], inst.targets[j]);
            if (!std::isfinite(d)) continue;
            vars.push_back({i, j, std::pow(d, inst.order)});
            any = true;
        }
        if (!any) throw InvalidArgument("source atom " + std::to_string(i) + " has no finite-cost target");
    }

    lp::LinearProgram prog;
    prog.sense = inst.maximize ? lp::Sense::Maximize : lp::Sense::Minimize;
    for (const auto& v : vars) prog.add_variable(obj[v.j]);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> row(vars.size(), 0.0);
        for (std::size_t k = 0; k < vars.size(); ++k)
            if (vars[k].i == i) row[k] = 1.0;
        prog.add_row(std::move(row), lp::RowSense::Equal, inst.source[i].mass);
    }
    std::vector<double> cost_row(vars.size());
    for (std::size_t k = 0; k < vars.size(); ++k) cost_row[k] = vars[k].cost;
    prog.add_row(cost_row, lp::RowSense::LessEqual, std::pow(inst.budget, inst.order));

    const auto sol = lp::solve(prog);
    if (sol.status != lp::Status::Optimal) throw InternalError(std::string("transport LP ended ") + lp::to_string(sol.status));
    WorstCaseResult out;
    out.value = sol.value;
    out.plan.assign(m, std::vector<double>(t, 0.0));
    double extreme = inst.maximize ? -lp::kInf : lp::kInf;
    for (const auto& v : vars) extreme = inst.maximize ? std::max(extreme, obj[v.j]) : std::min(extreme, obj[v.j]);
    for (std::size_t k = 0; k < vars.size(); ++k) {
        out.plan[vars[k].i][vars[k].j] += sol.x[k];
        out.cost_used += sol.x[k] * vars[k].cost;
        if (sol.x[k] > 1e-12 && std::abs(obj[vars[k].j] - extreme) <= 1e-12 * (1.0 + std::abs(extreme)))
            out.grid_extreme_used = true;
    }
    return out;
}

/// Order-p Wasserstein distance between two finite distributions.
inline double wasserstein_distance(const std::vector<JointAtom>& p, const std::vector<JointAtom>& q, const CostFn& cost,
                                   int order = 1) {
    validate_masses(p, "first distribution");
    validate_masses(q, "second distribution");
    struct Var {
        std::size_t i, j;
        double cost;
    };
    std::vector<Var> vars;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < q.size(); ++j) {
            const double d = cost(p[i], q[j]);
            if (std::isfinite(d)) vars.push_back({i, j, std::pow(d, order)});
        }
    lp::LinearProgram prog;
    for (const auto& v : vars) prog.add_variable(v.cost);
    for (std::size_t i = 0; i < p.size(); ++i) {
        std::vector<double> row(vars.size(), 0.0);
        for (std::size_t k = 0; k < vars.size(); ++k)
            if (vars[k].i == i) row[k] = 1.0;
        prog.add_row(std::move(row), lp::RowSense::Equal, p[i].mass);
    }
    for (std::size_t j = 0; j < q.size(); ++j) {
        std::vector<double> row(vars.size(), 0.0);
        for (std::size_t k = 0; k < vars.size(); ++k)
            if (vars[k].j == j) row[k] = 1.0;
        prog.add_row(std::move(row), lp::RowSense::Equal, q[j].mass);
    }
    const auto sol = lp::solve(prog);
    if (sol.status == lp::Status::Infeasible) return lp::kInf;
    if (sol.status != lp::Status::Optimal) throw InternalError("transport LP unbounded");
    return std::pow(std::max(sol.value, 0.0), 1.0 / order);
}

// ---------------------------------------------------------------------------
// Explicit worst-case constructions

/// Point with the opposite decision nearest to x under the rescaled norm.
/// Targets in an open region are pushed past the boundary by `nudge`.
inline std::optional<std::vector<double>> nearest_opposite_point(const PolicyRule& rule, std::span<const double> x,
                                                                 std::span<const double> scale = {},
                                                                 double nudge = 1e-9) {
    const int tau = evaluate_rule(rule, x);
    auto sc = [&](std::size_t i) { return scale.empty() ? 1.0 : scale[i]; };
    std::optional<std::vector<double>> out;
    if (const auto* l = rule.get_if<LinearEligibility>()) {
        double score = l->intercept, norm2 = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            score += l->coef[j] * x[j];
            norm2 += std::pow(l->coef[j] / sc(j), 2);
        }
        // Move along the rescaled normal until the score reaches the target.
        const double target = (tau == 1 ? -nudge : nudge) * std::sqrt(norm2);
        const double step = (score - target) / norm2;
        std::vector<double> y(x.begin(), x.end());
        for (std::size_t j = 0; j < x.size(); ++j) y[j] -= step * l->coef[j] / (sc(j) * sc(j));
        out = std::move(y);
    } else if (const auto* t = rule.get_if<Threshold>()) {
        if (t->cuts.empty()) return std::nullopt;
        std::vector<double> y(x.begin(), x.end());
        if (tau == 1) {
            std::size_t best = 0;
            double margin = kInf;
            for (std::size_t c = 0; c < t->cuts.size(); ++c) {
                const auto& cut = t->cuts[c];
                const double mgn = sc(cut.dim) * cut.sign * (x[cut.dim] - cut.cut);
                if (mgn < margin) {
                    margin = mgn;
                    best = c;
                }
            }
            const auto& cut = t->cuts[best];
            y[cut.dim] = cut.cut - cut.sign * nudge / sc(cut.dim);
        } else {
            std::vector<double> lo(x.size(), -kInf), hi(x.size(), kInf);
            for (const auto& cut : t->cuts) {
                if (cut.sign > 0)
                    lo[cut.dim] = std::max(lo[cut.dim], cut.cut);
                else
                    hi[cut.dim] = std::min(hi[cut.dim], cut.cut);
            }
            for (std::size_t j = 0; j < x.size(); ++j) {
                if (lo[j] > hi[j]) return std::nullopt;
                y[j] = std::clamp(y[j], lo[j], hi[j]);
            }
        }
        out = std::move(y);
    } else if (const auto* tb = rule.get_if<TreeBoxes>()) {
        const auto& boxes = tau == 1 ? tb->complement_boxes : tb->treat_boxes;
        double best = kInf;
        for (const auto& b : boxes) {
            std::vector<double> y(x.begin(), x.end());
            bool ok = true;
            for (std::size_t j = 0; j < x.size() && ok; ++j) {
                if (y[j] <= b.lower[j]) {
                    y[j] = b.lower[j];
                    if (!b.lower_closed[j]) y[j] += nudge / sc(j);
                } else if (y[j] >= b.upper[j]) {
                    y[j] = b.upper[j];
                    if (!b.upper_closed[j]) y[j] -= nudge / sc(j);
                }
                ok = y[j] >= b.lower[j] && y[j] <= b.upper[j];
            }
            if (!ok || !b.contains(y)) continue;
            double d2 = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) d2 += std::pow(sc(j) * (y[j] - x[j]), 2);
            if (d2 < best) {
                best = d2;
                out = std::move(y);
            }
        }
    }
    if (out && evaluate_rule(rule, *out) == tau) return std::nullopt;
    return out;
}

enum class RecipeKind { OutcomeFloor, OutcomeShift, BoundaryProjection, Mixture };

/// Which potential outcome a recipe moves.
enum class OutcomeArm { Assigned, Treated, Control };

/// Explicit transformation T applied to every atom (Mixture: with probability w).
struct WorstCaseRecipe {
    RecipeKind kind = RecipeKind::OutcomeShift;
    OutcomeArm arm = OutcomeArm::Assigned;
    double shift = 0.0;  ///< OutcomeShift: amount subtracted
    double weight = 1.0; ///< Mixture: probability of applying the base recipe
    std::shared_ptr<WorstCaseRecipe> base;

    static WorstCaseRecipe floor(OutcomeArm arm = OutcomeArm::Assigned) {
        return {RecipeKind::OutcomeFloor, arm, 0.0, 1.0, nullptr};
    }
    static WorstCaseRecipe shift_down(double delta, OutcomeArm arm = OutcomeArm::Assigned) {
        return {RecipeKind::OutcomeShift, arm, delta, 1.0, nullptr};
    }
    static WorstCaseRecipe projection() { return {RecipeKind::BoundaryProjection, OutcomeArm::Assigned, 0.0, 1.0, nullptr}; }
    static WorstCaseRecipe mixture(double w, WorstCaseRecipe base) {
        return {RecipeKind::Mixture, OutcomeArm::Assigned, 0.0, w, std::make_shared<WorstCaseRecipe>(std::move(base))};
    }
};

struct Certificate {
    std::vector<JointAtom> q;
    double distance = 0.0;
    double welfare = 0.0;
};

namespace detail {

inline JointAtom apply_recipe(const WorstCaseRecipe& r, const JointAtom& z, const PolicyRule& rule,
                              const SupportBounds& bounds, std::span<const double> scale) {
    JointAtom out = z;
    const bool treated = evaluate_rule(rule, z.x) == 1;
    const bool move_y1 = r.arm == OutcomeArm::Treated || (r.arm == OutcomeArm::Assigned && treated);
    switch (r.kind) {
        case RecipeKind::OutcomeFloor:
            if (!bounds.lower_finite()) throw InvalidArgument("outcome floor recipe needs a finite lower bound");
            (move_y1 ? out.y1 : out.y0) = bounds.y_lower;
            break;
        case RecipeKind::OutcomeShift:
            (move_y1 ? out.y1 : out.y0) -= r.shift;
            break;
        case RecipeKind::BoundaryProjection: {
            auto p = nearest_opposite_point(rule, z.x, scale);
            if (!p) throw InvalidArgument("boundary projection recipe: rule has no opposite region");
            out.x = std::move(*p);
            break;
        }
        case RecipeKind::Mixture: throw InternalError("nested mixture handled by caller");
    }
    return out;
}

} // namespace detail

/// Builds Q from P by the recipe, then measures W(P, Q) with a transport solve
/// and the welfare of Q under `objective`.
inline Certificate certify_construction(const std::vector<JointAtom>& p, const WorstCaseRecipe& recipe,
                                        const PolicyRule& rule, const SupportBounds& bounds, const CostFn& cost,
                                        const ObjectiveFn& objective, int order = 1,
                                        std::span<const double> scale = {}) {
    validate_masses(p, "source atoms");
    Certificate c;
    const WorstCaseRecipe* base = &recipe;
    double w = 1.0;
    if (recipe.kind == RecipeKind::Mixture) {
        if (!(recipe.weight >= 0.0 && recipe.weight <= 1.0)) throw InvalidArgument("mixture weight must lie in [0, 1]");
        if (!recipe.base || recipe.base->kind == RecipeKind::Mixture)
            throw InvalidArgument("mixture needs a non-mixture base recipe");
        base = recipe.base.get();
        w = recipe.weight;
    }
    for (const auto& z : p) {
        if (w < 1.0) {
            JointAtom stay = z;
            stay.mass = (1.0 - w) * z.mass;
            if (stay.mass > 0.0) c.q.push_back(stay);
        }
        if (w > 0.0) {
            JointAtom moved = detail::apply_recipe(*base, z, rule, bounds, scale);
            moved.mass = w * z.mass;
            c.q.push_back(moved);
        }
    }
    // Drop zero-mass atoms (w = 0 or 1 edge) before measuring.
    c.q.erase(std::remove_if(c.q.begin(), c.q.end(), [](const JointAtom& a) { return a.mass <= 0.0; }), c.q.end());
    c.distance = wasserstein_distance(p, c.q, cost, order);
    for (const auto& z : c.q) c.welfare += z.mass * objective(z);
    return c;
}

// ---------------------------------------------------------------------------
// Candidate destinations

struct GridOptions {
    /// Outcome shifts eps * k / steps for k = 1..steps, plus eps / mass and eps exactly.
    int steps = 4;
    /// Move the treated outcome down (true) or up (false); same for control.
    bool lower_treated = true;
    bool lower_control = true;
    bool include_floor = true;
    bool include_ceiling = true;
    /// Covariate moves to the nearest opposite-decision point.
    bool move_covariates = false;
    double nudge = 1e-9;
    std::vector<double> scale;
};

namespace detail {

inline std::vector<double> outcome_candidates(double y, double eps, double mass, bool down, const SupportBounds& b,
                                              const GridOptions& opt) {
    std::vector<double> out{y};
    auto add = [&](double s) {
        double v = down ? y - s : y + s;
        v = std::clamp(v, b.y_lower, b.y_upper);
        out.push_back(v);
    };
    if (eps > 0.0) {
        for (int k = 1; k <= opt.steps; ++k) add(eps * k / opt.steps);
        if (mass > 0.0) add(eps / mass);
    }
    if (opt.include_floor && b.lower_finite()) out.push_back(b.y_lower);
    if (opt.include_ceiling && b.upper_finite()) out.push_back(b.y_upper);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

} // namespace detail

/// Targets built from the destinations the duality arguments use: original
/// atoms, outcome shifts, bounds and covariate boundary projections.
inline std::vector<JointAtom> proof_targets(const std::vector<JointAtom>& source, const PolicyRule& rule, double eps,
                                            const SupportBounds& bounds, const GridOptions& opt = {}) {
    std::vector<JointAtom> out;
    for (const auto& z : source) {
        std::vector<std::vector<double>> xs{z.x};
        if (opt.move_covariates)
            if (auto p = nearest_opposite_point(rule, z.x, opt.scale, opt.nudge)) xs.push_back(std::move(*p));
        const auto y0s = detail::outcome_candidates(z.y0, eps, z.mass, opt.lower_control, bounds, opt);
        const auto y1s = detail::outcome_candidates(z.y1, eps, z.mass, opt.lower_treated, bounds, opt);
        for (const auto& x : xs)
            for (double a : y0s)
                for (double b : y1s) out.push_back({x, a, b, 0.0});
    }
    return out;
}

} // namespace extval::oracle
