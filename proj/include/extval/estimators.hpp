#pragma once

// Nuisance estimates used by the empirical criteria: treatment-effect
// functions, per-observation effects under rank couplings, baseline means and
// kernel conditional CDFs.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "extval/distribution.hpp"
#include "extval/error.hpp"
#include "extval/model.hpp"

namespace extval {

enum class CouplingAssumption { ConstantTE, PerfectPositiveDependence, ConditionalIndependence, LeastFavorable };

inline const char* to_string(CouplingAssumption c) {
    switch (c) {
        case CouplingAssumption::ConstantTE: return "constant_te";
        case CouplingAssumption::PerfectPositiveDependence: return "perfect_positive_dependence";
        case CouplingAssumption::ConditionalIndependence: return "conditional_independence";
        case CouplingAssumption::LeastFavorable: return "least_favorable";
    }
    return "?";
}

/// Fitted x -> effect map.
using DeltaFunction = std::function<double(std::span<const double>)>;

// ---------------------------------------------------------------------------
// Regression

/// Regressors built from covariates.
struct Basis {
    enum class Kind { Constant, Linear, Quadratic };
    Kind kind = Kind::Linear;

    std::vector<double> operator()(std::span<const double> x) const {
        std::vector<double> f{1.0};
        if (kind == Kind::Constant) return f;
        f.insert(f.end(), x.begin(), x.end());
        if (kind == Kind::Quadratic)
            for (std::size_t i = 0; i < x.size(); ++i)
                for (std::size_t j = i; j < x.size(); ++j) f.push_back(x[i] * x[j]);
        return f;
    }
};

struct RegressionFit {
    Basis basis;
    std::vector<double> coef_treated;
    std::vector<double> coef_control;
    bool ridge_used = false;
    std::vector<std::string> warnings;

    double predict(std::span<const double> x) const {
        const auto f = basis(x);
        double a = 0.0, b = 0.0;
        for (std::size_t j = 0; j < f.size(); ++j) {
            a += f[j] * coef_treated[j];
            b += f[j] * coef_control[j];
        }
        return a - b;
    }

    DeltaFunction function() const {
        return [fit = *this](std::span<const double> x) { return fit.predict(x); };
    }
};

namespace detail {

struct LsqResult {
    std::vector<double> coef;
    bool ridge = false;
};

inline LsqResult weighted_least_squares(const Dataset& data, const Basis& basis, int arm) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data[i].d == arm) rows.push_back(i);
    const std::size_t p = basis(data[0].x).size();
    Eigen::MatrixXd X(rows.size(), p);
    Eigen::VectorXd y(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& o = data[rows[r]];
        const double sw = std::sqrt(o.w);
        const auto f = basis(o.x);
        for (std::size_t j = 0; j < p; ++j) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = sw * f[j];
        y(static_cast<Eigen::Index>(r)) = sw * o.y;
    }
    LsqResult out;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    Eigen::VectorXd beta;
    if (qr.rank() == static_cast<Eigen::Index>(p)) {
        beta = qr.solve(y);
    } else {
        Eigen::MatrixXd A = X.transpose() * X;
        A.diagonal().array() += 1e-8;
        beta = A.ldlt().solve(X.transpose() * y);
        out.ridge = true;
    }
    out.coef.assign(beta.data(), beta.data() + beta.size());
    return out;
}

} // namespace detail

/// Within-arm least squares on basis(x); effect = treated fit minus control fit.
inline RegressionFit fit_delta_regression(const Dataset& data, const Basis& basis = {}) {
    if (data.count_arm(1) == 0 || data.count_arm(0) == 0)
        throw InvalidArgument("fit_delta_regression needs both treatment arms");
    RegressionFit fit;
    fit.basis = basis;
    auto t = detail::weighted_least_squares(data, basis, 1);
    auto c = detail::weighted_least_squares(data, basis, 0);
    fit.coef_treated = std::move(t.coef);
    fit.coef_control = std::move(c.coef);
    fit.ridge_used = t.ridge || c.ridge;
    if (t.ridge) fit.warnings.push_back("treated-arm design is rank deficient; ridge 1e-8 applied");
    if (c.ridge) fit.warnings.push_back("control-arm design is rank deficient; ridge 1e-8 applied");
    return fit;
}

// ---------------------------------------------------------------------------
// Instrumental variables on covariate cells

/// Assigns a covariate vector to one of `count` cells.
struct CellPartition {
    std::size_t count = 1;
    std::function<std::size_t(std::span<const double>)> index = [](std::span<const double>) { return std::size_t{0}; };

    static CellPartition single() { return {}; }

    /// Cells from sorted cut points along one covariate: (-inf, c1), [c1, c2), ...
    static CellPartition cuts_on(std::size_t dim, std::vector<double> cuts) {
        std::sort(cuts.begin(), cuts.end());
        CellPartition p;
        p.count = cuts.size() + 1;
        p.index = [dim, cuts](std::span<const double> x) {
            if (dim >= x.size()) throw DimensionMismatch("cell covariate", dim + 1, x.size());
            return static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), x[dim]) - cuts.begin());
        };
        return p;
    }
};

struct IvFit {
    std::vector<double> cell_effect;
    /// Cells whose first-stage covariance is too small; their effect is 0 and unusable.
    std::vector<bool> flagged;
    CellPartition cells;

    bool ok() const { return std::none_of(flagged.begin(), flagged.end(), [](bool b) { return b; }); }

    DeltaFunction function() const {
        if (!ok()) throw MissingEstimate("IV fit has cells with a weak first stage");
        return [effects = cell_effect, idx = cells.index](std::span<const double> x) { return effects[idx(x)]; };
    }
};

/// Per-cell Wald ratio Cov(Y, Z) / Cov(D, Z).
inline IvFit fit_delta_iv(const Dataset& data, const CellPartition& cells) {
    if (!data.has_instrument()) throw InvalidArgument("fit_delta_iv needs an instrument for every observation");
    struct Acc {
        double w = 0, y = 0, d = 0, z = 0, yz = 0, dz = 0;
    };
    std::vector<Acc> acc(cells.count);
    for (const auto& o : data) {
        const std::size_t c = cells.index(o.x);
        if (c >= cells.count) throw InvalidArgument("cell index out of range");
        auto& a = acc[c];
        const double z = *o.z;
        a.w += o.w;
        a.y += o.w * o.y;
        a.d += o.w * o.d;
        a.z += o.w * z;
        a.yz += o.w * o.y * z;
        a.dz += o.w * o.d * z;
    }
    IvFit fit;
    fit.cells = cells;
    fit.cell_effect.assign(cells.count, 0.0);
    fit.flagged.assign(cells.count, false);
    for (std::size_t c = 0; c < cells.count; ++c) {
        const auto& a = acc[c];
        if (a.w == 0.0) {
            fit.flagged[c] = true;
            continue;
        }
        const double cov_yz = a.yz / a.w - (a.y / a.w) * (a.z / a.w);
        const double cov_dz = a.dz / a.w - (a.d / a.w) * (a.z / a.w);
        if (std::abs(cov_dz) < 1e-10) {
            fit.flagged[c] = true;
            continue;
        }
        fit.cell_effect[c] = cov_yz / cov_dz;
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Conditional CDFs

enum class Grouping { UseX, UseXandC };

struct KernelOptions {
    /// Per-dimension bandwidth is multiplier * sd(x_j). Defaults to n^(-1/(4+k)).
    std::optional<double> multiplier;
    Grouping grouping = Grouping::UseX;
};

/// F_d(. | X_i [, C_i]) for every observation i and arm d, as weighted atoms.
///
/// Kernel fits keep one sorted atom list per arm and recompute the kernel
/// weights on request, so memory stays linear in n.
class ConditionalCdfs {
public:
    /// Explicit per-observation distributions (index 0 = control, 1 = treated).
    static ConditionalCdfs from_atoms(std::vector<std::array<WeightedAtoms, 2>> atoms) {
        if (atoms.empty()) throw InvalidArgument("conditional CDFs need at least one observation");
        for (const auto& a : atoms)
            if (a[0].empty() || a[1].empty()) throw InvalidArgument("conditional CDF atom lists must be nonempty");
        ConditionalCdfs c;
        c.explicit_ = std::make_shared<const std::vector<std::array<WeightedAtoms, 2>>>(std::move(atoms));
        c.n_ = c.explicit_->size();
        return c;
    }

    static ConditionalCdfs fit(const Dataset& data, const KernelOptions& opt = {});

    std::size_t size() const { return n_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const std::vector<double>& bandwidths() const { return bandwidth_; }

    WeightedAtoms distribution(std::size_t i, int arm) const {
        if (i >= n_) throw InvalidArgument("conditional CDF index out of range");
        if (arm != 0 && arm != 1) throw InvalidArgument("arm must be 0 or 1");
        if (explicit_) return (*explicit_)[i][static_cast<std::size_t>(arm)];
        const auto& k = *kernel_;
        const auto& pool = k.arm_rows[static_cast<std::size_t>(arm)];
        std::vector<double> values, weights;
        values.reserve(pool.size());
        weights.reserve(pool.size());
        const double widen = k.widen[static_cast<std::size_t>(arm)][i];
        for (std::size_t j : pool) {
            const double w = kernel_weight(i, j, widen);
            if (w <= 0.0) continue;
            values.push_back(k.y[j]);
            weights.push_back(w);
        }
        return WeightedAtoms(std::move(values), std::move(weights));
    }

private:
    struct KernelState {
        std::vector<std::vector<double>> x;
        std::vector<double> y, w;
        std::vector<std::int64_t> group;
        bool use_group = false;
        std::vector<double> h;
        std::array<std::vector<std::size_t>, 2> arm_rows;
        std::array<std::vector<double>, 2> widen;
    };

    double kernel_weight(std::size_t i, std::size_t j, double widen) const {
        const auto& k = *kernel_;
        if (k.use_group && k.group[i] != k.group[j]) return 0.0;
        double q = 0.0;
        for (std::size_t d = 0; d < k.h.size(); ++d) {
            const double r = (k.x[i][d] - k.x[j][d]) / (k.h[d] * widen);
            q += r * r;
        }
        return k.w[j] * std::exp(-0.5 * q);
    }

    std::shared_ptr<const std::vector<std::array<WeightedAtoms, 2>>> explicit_;
    std::shared_ptr<KernelState> kernel_;
    std::vector<double> bandwidth_;
    std::vector<std::string> warnings_;
    std::size_t n_ = 0;
};

inline ConditionalCdfs ConditionalCdfs::fit(const Dataset& data, const KernelOptions& opt) {
    if (data.count_arm(0) == 0 || data.count_arm(1) == 0)
        throw InvalidArgument("conditional CDFs need observations in both arms");
    const bool use_group = opt.grouping == Grouping::UseXandC;
    if (use_group && !data.has_groups()) throw InvalidArgument("grouping by C needs a group label on every row");
    const std::size_t n = data.size(), k = data.dim();
    const double mult = opt.multiplier.value_or(std::pow(static_cast<double>(n), -1.0 / (4.0 + static_cast<double>(k))));
    if (!(mult > 0.0)) throw InvalidArgument("kernel bandwidth must be positive");

    auto st = std::make_shared<KernelState>();
    st->use_group = use_group;
    st->x.reserve(n);
    for (const auto& o : data) {
        st->x.push_back(o.x);
        st->y.push_back(o.y);
        st->w.push_back(o.w);
        st->group.push_back(use_group ? *o.c : 0);
        st->arm_rows[static_cast<std::size_t>(o.d)].push_back(st->x.size() - 1);
    }
    st->h.resize(k);
    for (std::size_t d = 0; d < k; ++d) {
        double m = 0.0, s = 0.0;
        for (const auto& x : st->x) m += x[d];
        m /= static_cast<double>(n);
        for (const auto& x : st->x) s += (x[d] - m) * (x[d] - m);
        const double sd = n > 1 ? std::sqrt(s / static_cast<double>(n - 1)) : 0.0;
        st->h[d] = mult * (sd > 0.0 ? sd : 1.0);
    }

    ConditionalCdfs c;
    c.kernel_ = st;
    c.n_ = n;
    c.bandwidth_ = st->h;
    std::size_t widened = 0;
    for (int arm = 0; arm < 2; ++arm) {
        auto& widen = st->widen[static_cast<std::size_t>(arm)];
        widen.assign(n, 1.0);
        const auto& pool = st->arm_rows[static_cast<std::size_t>(arm)];
        for (std::size_t i = 0; i < n; ++i) {
            if (use_group && std::none_of(pool.begin(), pool.end(), [&](std::size_t j) { return st->group[j] == st->group[i]; }))
                throw InvalidArgument("group " + std::to_string(st->group[i]) + " has no observations in arm " +
                                      std::to_string(arm));
            for (int attempt = 0;; ++attempt) {
                double mass = 0.0;
                for (std::size_t j : pool) mass += c.kernel_weight(i, j, widen[i]) / st->w[j];
                if (mass >= 1e-6) break;
                if (attempt > 60) throw InvalidArgument("kernel mass vanishes even after widening");
                widen[i] *= 2.0;
                if (attempt == 0) ++widened;
            }
        }
    }
    if (widened > 0)
        c.warnings_.push_back("kernel mass below 1e-6 at " + std::to_string(widened) +
                              " evaluation points; bandwidth widened locally");
    return c;
}

// ---------------------------------------------------------------------------
// Per-observation effects under rank couplings

/// D_i (Y_i - phi0(Y_i)) + (1 - D_i)(phi1(Y_i) - Y_i) with comonotone maps.
inline std::vector<double> rank_effects(const Dataset& data, const ConditionalCdfs& cdfs) {
    if (cdfs.size() != data.size()) throw DimensionMismatch("conditional CDFs", data.size(), cdfs.size());
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto f0 = cdfs.distribution(i, 0), f1 = cdfs.distribution(i, 1);
        const double y = data[i].y;
        out[i] = data[i].d == 1 ? y - rank_map(f1, f0, y) : rank_map(f0, f1, y) - y;
    }
    return out;
}

/// Same with antitone maps (perfect negative dependence).
inline std::vector<double> negative_rank_effects(const Dataset& data, const ConditionalCdfs& cdfs) {
    if (cdfs.size() != data.size()) throw DimensionMismatch("conditional CDFs", data.size(), cdfs.size());
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto f0 = cdfs.distribution(i, 0), f1 = cdfs.distribution(i, 1);
        const double y = data[i].y;
        out[i] = data[i].d == 1 ? y - antitone_map(f1, f0, y) : antitone_map(f0, f1, y) - y;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Baseline mean and overlap

struct Y0Method {
    enum class Kind { ControlMean, Ipw };
    Kind kind = Kind::ControlMean;
    std::function<double(std::span<const double>)> propensity;

    static Y0Method control_mean() { return {}; }
    static Y0Method ipw(std::function<double(std::span<const double>)> e) { return {Kind::Ipw, std::move(e)}; }
};

inline double estimate_y0_mean(const Dataset& data, const Y0Method& method = {}) {
    if (data.count_arm(0) == 0) throw InvalidArgument("estimate_y0_mean needs control observations");
    if (method.kind == Y0Method::Kind::ControlMean) {
        double num = 0.0, den = 0.0;
        for (const auto& o : data)
            if (o.d == 0) {
                num += o.w * o.y;
                den += o.w;
            }
        return num / den;
    }
    if (!method.propensity) throw InvalidArgument("IPW needs a propensity function");
    double num = 0.0;
    for (const auto& o : data) {
        const double e = method.propensity(o.x);
        if (!(e > 0.0 && e < 1.0)) throw InvalidArgument("propensity must lie strictly inside (0, 1)");
        if (o.d == 0) num += o.w * o.y / (1.0 - e);
    }
    return num / data.total_weight();
}

/// Smallest kernel-estimated probability of either arm across the sample.
/// Reported for inspection only.
inline double min_estimated_propensity(const Dataset& data, double multiplier) {
    const std::size_t k = data.dim();
    std::vector<double> h(k, multiplier);
    for (std::size_t d = 0; d < k; ++d) {
        double m = 0.0, s = 0.0;
        for (const auto& o : data) m += o.x[d];
        m /= static_cast<double>(data.size());
        for (const auto& o : data) s += (o.x[d] - m) * (o.x[d] - m);
        const double sd = data.size() > 1 ? std::sqrt(s / static_cast<double>(data.size() - 1)) : 0.0;
        h[d] *= sd > 0.0 ? sd : 1.0;
    }
    double worst = 1.0;
    for (const auto& a : data) {
        double num = 0.0, den = 0.0;
        for (const auto& b : data) {
            double q = 0.0;
            for (std::size_t d = 0; d < k; ++d) q += std::pow((a.x[d] - b.x[d]) / h[d], 2);
            const double w = b.w * std::exp(-0.5 * q);
            num += w * b.d;
            den += w;
        }
        const double e = num / den;
        worst = std::min(worst, std::min(e, 1.0 - e));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Bundle

struct EstimatorBundle {
    /// Effect function for the constant-effect coupling.
    std::optional<DeltaFunction> delta_fn;
    /// Precomputed delta_fn(X_i); used instead of delta_fn when present.
    std::optional<std::vector<double>> delta_x;
    std::optional<std::vector<double>> delta_i;
    std::optional<std::vector<double>> delta_star_i;
    double y0_mean = 0.0;
    std::shared_ptr<const ConditionalCdfs> cond_cdfs;

    /// Per-observation effects the coupling calls for.
    std::vector<double> effects_for(CouplingAssumption c, const Dataset& data) const {
        auto checked = [&](const std::optional<std::vector<double>>& v, const char* what) {
            if (!v) throw MissingEstimate(std::string("estimator bundle lacks ") + what);
            if (v->size() != data.size()) throw DimensionMismatch(what, data.size(), v->size());
            for (double e : *v)
                if (!std::isfinite(e)) throw MissingEstimate(std::string(what) + " contains non-finite values");
            return *v;
        };
        switch (c) {
            case CouplingAssumption::ConstantTE: {
                if (delta_x) return checked(delta_x, "delta_x");
                if (!delta_fn) throw MissingEstimate("estimator bundle lacks an effect function");
                std::vector<double> out;
                out.reserve(data.size());
                for (const auto& o : data) {
                    const double e = (*delta_fn)(o.x);
                    if (!std::isfinite(e)) throw MissingEstimate("effect function returned a non-finite value");
                    out.push_back(e);
                }
                return out;
            }
            case CouplingAssumption::PerfectPositiveDependence: return checked(delta_i, "delta_i");
            case CouplingAssumption::LeastFavorable: return checked(delta_star_i, "delta_star_i");
            case CouplingAssumption::ConditionalIndependence:
                throw InvalidArgument("conditional independence uses conditional CDFs, not effects");
        }
        throw InternalError("unknown coupling");
    }

    void validate() const {
        if (!std::isfinite(y0_mean)) throw MissingEstimate("baseline mean must be finite");
        for (const auto* v : {&delta_x, &delta_i, &delta_star_i})
            if (*v)
                for (double e : **v)
                    if (!std::isfinite(e)) throw MissingEstimate("estimator output contains non-finite values");
    }
};

} // namespace extval
