#pragma once

// Inner problem of the joint-shift criterion:
//
//   sup_{eta >= 1}  sum_i w_i min{eta h0_i, delta_i + eta h1_i} - eta eps
//
// with weights normalized to unit mass. The objective is concave and
// piecewise linear in eta, so the maximizer sits at eta = 1 or at a term's
// kink delta_i / (h0_i - h1_i).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "extval/distance.hpp"
#include "extval/error.hpp"
#include "extval/lp.hpp"

namespace extval {

struct EtaTerm {
    Distance h0;
    Distance h1;
    double delta = 0.0;
    double weight = 1.0;
};

struct EtaProblem {
    std::vector<EtaTerm> terms;
    double epsilon = 0.0;
};

struct EtaSolution {
    double eta_star = 1.0;
    double value = 0.0;
    /// Objective grows without bound; value is +inf and eta_star meaningless.
    bool unbounded = false;
};

namespace detail {

inline void validate_terms(const std::vector<EtaTerm>& terms) {
    if (terms.empty()) throw InvalidArgument("eta problem needs at least one term");
    for (const auto& t : terms) {
        if (t.h0.is_infinite() && t.h1.is_infinite())
            throw InvalidArgument("eta term cannot have both distances infinite");
        if (!std::isfinite(t.delta)) throw InvalidArgument("eta term effect must be finite");
        if (!(t.weight > 0.0) || !std::isfinite(t.weight)) throw InvalidArgument("eta term weight must be positive");
    }
}

inline double term_value(const EtaTerm& t, double eta) {
    if (t.h0.is_infinite()) return t.delta + eta * t.h1.value();
    if (t.h1.is_infinite()) return eta * t.h0.value();
    return std::min(eta * t.h0.value(), t.delta + eta * t.h1.value());
}

} // namespace detail

/// Objective at a given eta (normalized weights).
inline double eta_objective(const std::vector<EtaTerm>& terms, double epsilon, double eta) {
    double acc = 0.0, total = 0.0;
    for (const auto& t : terms) {
        acc += t.weight * detail::term_value(t, eta);
        total += t.weight;
    }
    return acc / total - eta * epsilon;
}

/// Kinks of one set of terms, sorted once and reused across radii.
class EtaBreakpoints {
public:
    explicit EtaBreakpoints(std::vector<EtaTerm> terms) : terms_(std::move(terms)) {
        detail::validate_terms(terms_);
        for (const auto& t : terms_) total_weight_ += t.weight;

        // Right-derivative at eta = 1, then slope drops at each kink above 1.
        double slope = 0.0;
        for (const auto& t : terms_) {
            const double w = t.weight / total_weight_;
            if (t.h0.is_infinite()) {
                slope += w * t.h1.value();
                final_slope_ += w * t.h1.value();
                scale_ += w * t.h1.value();
                continue;
            }
            if (t.h1.is_infinite()) {
                slope += w * t.h0.value();
                final_slope_ += w * t.h0.value();
                scale_ += w * t.h0.value();
                continue;
            }
            const double a = t.h0.value(), b = t.h1.value();
            const double hi = std::max(a, b), lo = std::min(a, b);
            scale_ += w * hi;
            final_slope_ += w * lo;
            if (a == b) {
                slope += w * a;
                continue;
            }
            const double kink = t.delta / (a - b);
            if (kink > 1.0 && std::isfinite(kink)) {
                slope += w * hi;
                kinks_.push_back({kink, w * (hi - lo)});
            } else {
                slope += w * lo;
            }
        }
        std::sort(kinks_.begin(), kinks_.end(), [](const Kink& x, const Kink& y) { return x.eta < y.eta; });
        // Merge equal kinks so each position carries one slope drop.
        std::vector<Kink> merged;
        for (const auto& k : kinks_) {
            if (!merged.empty() && merged.back().eta == k.eta)
                merged.back().drop += k.drop;
            else
                merged.push_back(k);
        }
        kinks_ = std::move(merged);
        right_slope_.resize(kinks_.size() + 1);
        right_slope_[0] = slope;
        for (std::size_t k = 0; k < kinks_.size(); ++k) right_slope_[k + 1] = right_slope_[k] - kinks_[k].drop;
    }

    const std::vector<EtaTerm>& terms() const { return terms_; }
    std::size_t num_kinks() const { return kinks_.size(); }

    /// Smallest maximizer and the maximum for one radius.
    EtaSolution solve(double epsilon) const {
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("epsilon must be finite and >= 0");
        EtaSolution sol;
        const double tol = 1e-12 * (1.0 + scale_ + epsilon);
        if (final_slope_ - epsilon > tol) {
            sol.unbounded = true;
            sol.eta_star = kInfEta();
            sol.value = kInfEta();
            return sol;
        }
        // right_slope_ is non-increasing; first segment whose slope is <= eps.
        std::size_t idx = 0;
        while (idx < kinks_.size() && right_slope_[idx] > epsilon) ++idx;
        sol.eta_star = idx == 0 ? 1.0 : kinks_[idx - 1].eta;
        sol.value = eta_objective(terms_, epsilon, sol.eta_star);
        return sol;
    }

private:
    static double kInfEta() { return std::numeric_limits<double>::infinity(); }

    struct Kink {
        double eta;
        double drop;
    };
    std::vector<EtaTerm> terms_;
    std::vector<Kink> kinks_;
    std::vector<double> right_slope_;
    double final_slope_ = 0.0;
    double scale_ = 0.0;
    double total_weight_ = 0.0;
};

/// Exact solve by scanning sorted kinks.
inline EtaSolution solve_breakpoints(const EtaProblem& p) { return EtaBreakpoints(p.terms).solve(p.epsilon); }

/// Same problem through the simplex: variables (eta, t_1..t_n),
/// t_i <= eta h0_i, t_i <= delta_i + eta h1_i, maximize sum w_i t_i - eps eta.
inline EtaSolution solve_lp(const EtaProblem& p, const lp::Options& opt = {}) {
    detail::validate_terms(p.terms);
    if (!(p.epsilon >= 0.0) || !std::isfinite(p.epsilon)) throw InvalidArgument("epsilon must be finite and >= 0");
    const std::size_t n = p.terms.size();
    double total = 0.0;
    for (const auto& t : p.terms) total += t.weight;

    lp::LinearProgram prog;
    prog.sense = lp::Sense::Maximize;
    prog.add_variable(-p.epsilon, 1.0, lp::kInf);
    for (const auto& t : p.terms) prog.add_variable(t.weight / total, -lp::kInf, lp::kInf);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& t = p.terms[i];
        if (t.h0.is_finite()) {
            std::vector<double> row(n + 1, 0.0);
            row[0] = -t.h0.value();
            row[i + 1] = 1.0;
            prog.add_row(std::move(row), lp::RowSense::LessEqual, 0.0);
        }
        if (t.h1.is_finite()) {
            std::vector<double> row(n + 1, 0.0);
            row[0] = -t.h1.value();
            row[i + 1] = 1.0;
            prog.add_row(std::move(row), lp::RowSense::LessEqual, t.delta);
        }
    }
    const auto sol = lp::solve(prog, opt);
    EtaSolution out;
    if (sol.status == lp::Status::Unbounded) {
        out.unbounded = true;
        out.eta_star = lp::kInf;
        out.value = lp::kInf;
        return out;
    }
    if (sol.status != lp::Status::Optimal) throw InternalError("eta LP reported infeasible");
    out.eta_star = sol.x[0];
    out.value = sol.value;
    return out;
}

} // namespace extval
