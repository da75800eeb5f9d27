#pragma once

// Dense two-phase primal simplex with Bland's anti-cycling rule.
//
// Small problems only (a few hundred columns). The general problem
//
//   min/max c'x  s.t.  a_i'x {<=,=,>=} b_i,  lower <= x <= upper
//
// is reduced to standard form  min c~'p  s.t.  A p = b (b >= 0), p >= 0
// by shifting/reflecting/splitting variables and adding slacks, then solved
// on a full tableau that keeps the artificial columns so the final basis
// inverse (and hence the row duals) can be read off directly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "extval/error.hpp"

namespace extval::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class RowSense { LessEqual, Equal, GreaterEqual };
enum class Sense { Minimize, Maximize };
enum class Status { Optimal, Infeasible, Unbounded };

inline const char* to_string(Status s) {
    switch (s) {
        case Status::Optimal: return "optimal";
        case Status::Infeasible: return "infeasible";
        case Status::Unbounded: return "unbounded";
    }
    return "?";
}

struct LinearProgram {
    Sense sense = Sense::Minimize;
    std::vector<double> objective;
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<std::vector<double>> rows;
    std::vector<RowSense> senses;
    std::vector<double> rhs;

    std::size_t num_vars() const { return objective.size(); }
    std::size_t num_rows() const { return rows.size(); }

    std::size_t add_variable(double cost, double lo = 0.0, double hi = kInf) {
        objective.push_back(cost);
        lower.push_back(lo);
        upper.push_back(hi);
        for (auto& r : rows) r.push_back(0.0);
        return objective.size() - 1;
    }

    std::size_t add_row(std::vector<double> coeffs, RowSense s, double b) {
        if (coeffs.size() != num_vars()) throw InvalidArgument("LP row length must equal the number of variables");
        rows.push_back(std::move(coeffs));
        senses.push_back(s);
        rhs.push_back(b);
        return rows.size() - 1;
    }

    void validate() const {
        const std::size_t n = num_vars();
        if (lower.size() != n || upper.size() != n) throw InvalidArgument("LP bounds must match variables");
        if (senses.size() != rows.size() || rhs.size() != rows.size())
            throw InvalidArgument("LP senses/rhs must match rows");
        for (std::size_t j = 0; j < n; ++j) {
            if (!std::isfinite(objective[j])) throw InvalidArgument("LP objective entries must be finite");
            if (std::isnan(lower[j]) || std::isnan(upper[j]) || lower[j] > upper[j] || lower[j] == kInf ||
                upper[j] == -kInf)
                throw InvalidArgument("LP variable bounds must satisfy lower <= upper");
        }
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != n) throw InvalidArgument("LP row length mismatch");
            if (!std::isfinite(rhs[i])) throw InvalidArgument("LP right-hand side must be finite");
            for (double a : rows[i])
                if (!std::isfinite(a)) throw InvalidArgument("LP matrix entries must be finite");
        }
    }
};

struct Options {
    double pivot_tol = 1e-10;
    double feas_tol = 1e-9;
    double opt_tol = 1e-9;
    std::size_t max_iterations = 1'000'000;
};

struct Solution {
    Status status = Status::Infeasible;
    std::vector<double> x;
    double value = 0.0;
    /// Multipliers of the original rows at the final basis (sign convention of
    /// the caller's sense: for a minimization, >= rows have y >= 0 and <= rows y <= 0).
    std::vector<double> row_duals;
    /// c_j - y'a_j for each original variable.
    std::vector<double> reduced_costs;
    /// Dual objective b'y + sum of bound terms; equals value at optimality.
    double dual_value = 0.0;
    std::size_t iterations = 0;
};

namespace detail {

// How an original variable maps onto standard-form columns.
struct VarMap {
    enum Kind { Shifted, Reflected, Split } kind;
    std::size_t col;
    double offset; // x = offset + p (Shifted), offset - p (Reflected), p - q (Split, q at col + 1)
};

class Tableau {
public:
    Tableau(std::vector<std::vector<double>> a, std::vector<double> b, const Options& opt)
        : m_(a.size()), n_(a.empty() ? 0 : a.front().size()), opt_(opt), rhs_(std::move(b)) {
        width_ = n_ + m_;
        t_.assign(m_, std::vector<double>(width_, 0.0));
        for (std::size_t i = 0; i < m_; ++i) {
            std::copy(a[i].begin(), a[i].end(), t_[i].begin());
            t_[i][n_ + i] = 1.0;
        }
        basis_.resize(m_);
        for (std::size_t i = 0; i < m_; ++i) basis_[i] = n_ + i;
    }

    // Returns false when unbounded.
    bool optimize(const std::vector<double>& cost, bool allow_artificial, std::size_t& iters) {
        std::vector<double> d(width_, 0.0);
        double obj = 0.0;
        reset_objective(cost, d, obj);
        const double scale = 1.0 + max_abs(cost);
        while (true) {
            if (++iters > opt_.max_iterations) throw InternalError("simplex iteration limit reached");
            // Bland: lowest-index improving column.
            std::size_t enter = width_;
            const std::size_t limit = allow_artificial ? width_ : n_;
            for (std::size_t j = 0; j < limit; ++j)
                if (d[j] < -opt_.opt_tol * scale) {
                    enter = j;
                    break;
                }
            if (enter == width_) return true;

            std::size_t leave = m_;
            double best = kInf;
            for (std::size_t i = 0; i < m_; ++i) {
                const double a = t_[i][enter];
                if (a <= opt_.pivot_tol) continue;
                const double ratio = rhs_[i] / a;
                const double tie = 1e-12 * (1.0 + std::abs(best));
                if (leave == m_ || ratio < best - tie) {
                    best = ratio;
                    leave = i;
                } else if (std::abs(ratio - best) <= tie && basis_[i] < basis_[leave]) {
                    leave = i;
                }
            }
            if (leave == m_) return false;
            pivot(leave, enter);
            // Keep the reduced-cost row in step with the tableau.
            const double f = d[enter];
            if (f != 0.0) {
                const auto& row = t_[leave];
                for (std::size_t j = 0; j < width_; ++j) d[j] -= f * row[j];
                obj -= f * rhs_[leave];
                d[enter] = 0.0;
            }
        }
    }

    double objective_value(const std::vector<double>& cost) const {
        double v = 0.0;
        for (std::size_t i = 0; i < m_; ++i) v += cost[basis_[i]] * rhs_[i];
        return v;
    }

    // Pivot basic artificials out where possible; drop rows that are redundant.
    void expel_artificials() {
        for (std::size_t i = 0; i < m_;) {
            if (basis_[i] < n_) {
                ++i;
                continue;
            }
            std::size_t col = n_;
            double best = opt_.pivot_tol;
            for (std::size_t j = 0; j < n_; ++j)
                if (std::abs(t_[i][j]) > best) {
                    best = std::abs(t_[i][j]);
                    col = j;
                }
            if (col < n_) {
                pivot(i, col);
                ++i;
            } else {
                t_.erase(t_.begin() + static_cast<std::ptrdiff_t>(i));
                rhs_.erase(rhs_.begin() + static_cast<std::ptrdiff_t>(i));
                basis_.erase(basis_.begin() + static_cast<std::ptrdiff_t>(i));
                --m_;
            }
        }
    }

    std::vector<double> primal() const {
        std::vector<double> p(n_, 0.0);
        for (std::size_t i = 0; i < m_; ++i)
            if (basis_[i] < n_) p[basis_[i]] = std::max(rhs_[i], 0.0);
        return p;
    }

    // y_k = sum_i c_{B_i} (B^{-1})_{ik}; the artificial block of the tableau is B^{-1}.
    std::vector<double> duals(const std::vector<double>& cost, std::size_t original_rows) const {
        std::vector<double> y(original_rows, 0.0);
        for (std::size_t k = 0; k < original_rows; ++k)
            for (std::size_t i = 0; i < m_; ++i) y[k] += cost[basis_[i]] * t_[i][n_ + k];
        return y;
    }

private:
    static double max_abs(const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    }

    void reset_objective(const std::vector<double>& cost, std::vector<double>& d, double& obj) const {
        d = cost;
        d.resize(width_, 0.0);
        obj = 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
            const double cb = cost[basis_[i]];
            if (cb == 0.0) continue;
            for (std::size_t j = 0; j < width_; ++j) d[j] -= cb * t_[i][j];
            obj -= cb * rhs_[i];
        }
    }

    void pivot(std::size_t r, std::size_t c) {
        auto& prow = t_[r];
        const double inv = 1.0 / prow[c];
        for (double& v : prow) v *= inv;
        rhs_[r] *= inv;
        prow[c] = 1.0;
        for (std::size_t i = 0; i < m_; ++i) {
            if (i == r) continue;
            const double f = t_[i][c];
            if (f == 0.0) continue;
            auto& row = t_[i];
            for (std::size_t j = 0; j < width_; ++j) row[j] -= f * prow[j];
            row[c] = 0.0;
            rhs_[i] -= f * rhs_[r];
        }
        basis_[r] = c;
    }

    std::size_t m_, n_, width_ = 0;
    Options opt_;
    std::vector<std::vector<double>> t_;
    std::vector<double> rhs_;
    std::vector<std::size_t> basis_;
};

} // namespace detail

/// Solves the program. Infeasible and unbounded problems are reported through
/// Solution::status; exceptions signal malformed input only.
inline Solution solve(const LinearProgram& prog, const Options& opt = {}) {
    prog.validate();
    const std::size_t n = prog.num_vars();
    const double sense_sign = prog.sense == Sense::Maximize ? -1.0 : 1.0;

    // Variable substitution.
    std::vector<detail::VarMap> vmap(n);
    std::size_t ncols = 0;
    std::vector<std::pair<std::size_t, double>> upper_rows; // (col, u - l)
    for (std::size_t j = 0; j < n; ++j) {
        const double lo = prog.lower[j], hi = prog.upper[j];
        if (std::isfinite(lo)) {
            vmap[j] = {detail::VarMap::Shifted, ncols++, lo};
            if (std::isfinite(hi)) upper_rows.emplace_back(vmap[j].col, hi - lo);
        } else if (std::isfinite(hi)) {
            vmap[j] = {detail::VarMap::Reflected, ncols++, hi};
        } else {
            vmap[j] = {detail::VarMap::Split, ncols, 0.0};
            ncols += 2;
        }
    }
    const std::size_t m_orig = prog.num_rows();
    const std::size_t m = m_orig + upper_rows.size();
    std::size_t nslack = upper_rows.size();
    for (auto s : prog.senses)
        if (s != RowSense::Equal) ++nslack;
    const std::size_t N = ncols + nslack;

    std::vector<std::vector<double>> a(m, std::vector<double>(N, 0.0));
    std::vector<double> b(m, 0.0);
    std::vector<double> flip(m, 1.0);
    std::size_t slack = ncols;
    for (std::size_t i = 0; i < m_orig; ++i) {
        double bi = prog.rhs[i];
        for (std::size_t j = 0; j < n; ++j) {
            const double aij = prog.rows[i][j];
            if (aij == 0.0) continue;
            const auto& vm = vmap[j];
            switch (vm.kind) {
                case detail::VarMap::Shifted:
                    a[i][vm.col] += aij;
                    bi -= aij * vm.offset;
                    break;
                case detail::VarMap::Reflected:
                    a[i][vm.col] -= aij;
                    bi -= aij * vm.offset;
                    break;
                case detail::VarMap::Split:
                    a[i][vm.col] += aij;
                    a[i][vm.col + 1] -= aij;
                    break;
            }
        }
        if (prog.senses[i] == RowSense::LessEqual) a[i][slack++] = 1.0;
        if (prog.senses[i] == RowSense::GreaterEqual) a[i][slack++] = -1.0;
        b[i] = bi;
    }
    for (std::size_t k = 0; k < upper_rows.size(); ++k) {
        const std::size_t i = m_orig + k;
        a[i][upper_rows[k].first] = 1.0;
        a[i][slack++] = 1.0;
        b[i] = upper_rows[k].second;
    }
    for (std::size_t i = 0; i < m; ++i)
        if (b[i] < 0.0) {
            flip[i] = -1.0;
            b[i] = -b[i];
            for (double& v : a[i]) v = -v;
        }

    std::vector<double> cost(N + m, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double c = sense_sign * prog.objective[j];
        const auto& vm = vmap[j];
        if (vm.kind == detail::VarMap::Shifted) cost[vm.col] = c;
        if (vm.kind == detail::VarMap::Reflected) cost[vm.col] = -c;
        if (vm.kind == detail::VarMap::Split) {
            cost[vm.col] = c;
            cost[vm.col + 1] = -c;
        }
    }

    double bscale = 1.0;
    for (double v : b) bscale = std::max(bscale, std::abs(v));

    Solution sol;
    detail::Tableau tab(a, b, opt);
    std::vector<double> phase1(N + m, 0.0);
    std::fill(phase1.begin() + static_cast<std::ptrdiff_t>(N), phase1.end(), 1.0);
    tab.optimize(phase1, true, sol.iterations);
    if (tab.objective_value(phase1) > opt.feas_tol * bscale) {
        sol.status = Status::Infeasible;
        return sol;
    }
    tab.expel_artificials();
    if (!tab.optimize(cost, false, sol.iterations)) {
        sol.status = Status::Unbounded;
        sol.value = prog.sense == Sense::Maximize ? kInf : -kInf;
        return sol;
    }

    const auto p = tab.primal();
    sol.status = Status::Optimal;
    sol.x.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& vm = vmap[j];
        switch (vm.kind) {
            case detail::VarMap::Shifted: sol.x[j] = vm.offset + p[vm.col]; break;
            case detail::VarMap::Reflected: sol.x[j] = vm.offset - p[vm.col]; break;
            case detail::VarMap::Split: sol.x[j] = p[vm.col] - p[vm.col + 1]; break;
        }
        if (std::isfinite(prog.lower[j])) sol.x[j] = std::max(sol.x[j], prog.lower[j]);
        if (std::isfinite(prog.upper[j])) sol.x[j] = std::min(sol.x[j], prog.upper[j]);
    }
    sol.value = 0.0;
    for (std::size_t j = 0; j < n; ++j) sol.value += prog.objective[j] * sol.x[j];

    // Duals of the minimization form, mapped back to the caller's rows and sense.
    const auto y_std = tab.duals(cost, m);
    sol.row_duals.assign(m_orig, 0.0);
    for (std::size_t i = 0; i < m_orig; ++i) sol.row_duals[i] = sense_sign * flip[i] * y_std[i];
    sol.reduced_costs.assign(n, 0.0);
    double dual = 0.0;
    for (std::size_t i = 0; i < m_orig; ++i) dual += prog.rhs[i] * sol.row_duals[i];
    for (std::size_t j = 0; j < n; ++j) {
        double d = prog.objective[j];
        for (std::size_t i = 0; i < m_orig; ++i) d -= sol.row_duals[i] * prog.rows[i][j];
        sol.reduced_costs[j] = d;
        // A nonbasic variable sits at the bound matching the sign of its reduced cost.
        const double at_bound = (sense_sign * d > 0.0) ? prog.lower[j] : prog.upper[j];
        dual += d * (std::isfinite(at_bound) && d != 0.0 ? at_bound : sol.x[j]);
    }
    sol.dual_value = dual;
    return sol;
}

} // namespace extval::lp
