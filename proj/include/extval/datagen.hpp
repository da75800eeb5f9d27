#pragma once

// Synthetic data-generating processes with known potential outcomes.
//
// Seed splitting: rows are generated in blocks of kBlockRows; block b draws
// from mt19937_64(splitmix64(seed ^ splitmix64(b + 1))). Output therefore
// does not depend on the number of worker threads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <thread>
#include <variant>
#include <vector>

#include "extval/estimators.hpp"
#include "extval/model.hpp"

namespace extval::datagen {

inline constexpr std::size_t kBlockRows = 4096;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t block_seed(std::uint64_t seed, std::uint64_t block) {
    return splitmix64(seed ^ splitmix64(block + 1));
}

/// Mean-zero noise.
struct NoiseLaw {
    enum class Kind { None, Normal, Uniform };
    Kind kind = Kind::None;
    /// Standard deviation (Normal) or half-width (Uniform).
    double scale = 0.0;

    static NoiseLaw none() { return {}; }
    static NoiseLaw normal(double sd) { return {Kind::Normal, sd}; }
    static NoiseLaw uniform(double half_width) { return {Kind::Uniform, half_width}; }

    void validate() const {
        if (kind != Kind::None && !(scale >= 0.0 && std::isfinite(scale)))
            throw InvalidArgument("noise scale must be finite and >= 0");
    }
    template <class Rng>
    double draw(Rng& rng) const {
        switch (kind) {
            case Kind::None: return 0.0;
            case Kind::Normal: return scale * std::normal_distribution<double>(0.0, 1.0)(rng);
            case Kind::Uniform: return scale * (2.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng) - 1.0);
        }
        return 0.0;
    }
};

inline double dot(const std::vector<double>& a, std::span<const double> x) {
    if (a.size() != x.size()) throw DimensionMismatch("coefficient vector", x.size(), a.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * x[i];
    return s;
}

// ---------------------------------------------------------------------------
// Outcome models

/// Y0 = a + x'b + u, Y1 = Y0 + c + x'g + v: the effect is a function of x
/// when the effect noise v is absent.
struct LinearConstantTE {
    double intercept = 0.0;
    std::vector<double> beta;
    double effect_intercept = 0.0;
    std::vector<double> effect_coef;
    NoiseLaw noise;
    NoiseLaw effect_noise;
};

/// Y0 = a + x'b + U, Y1 = Y0 + c + x'g with one shared draw U: both
/// potential outcomes hold the same rank given x.
struct RankInvariant {
    double location = 0.0;
    std::vector<double> beta;
    NoiseLaw base;
    double shift_intercept = 0.0;
    std::vector<double> shift_coef;
};

/// Y0 = x'b0 + l0 a_C + u0, Y1 = x'b1 + l1 a_C + u1 with u0, u1 independent,
/// and the group C uniform over the listed group effects.
struct FactorModel {
    std::vector<double> beta0, beta1;
    double lambda0 = 0.0, lambda1 = 1.0;
    std::vector<double> group_effects;
    NoiseLaw noise0, noise1;
};

// ---------------------------------------------------------------------------
// Covariates and assignment

struct UniformCovariates {
    std::vector<double> lower, upper;
};
/// Independent coordinates, each uniform over its listed values.
struct DiscreteGridCovariates {
    std::vector<std::vector<double>> values;
};
struct NormalCovariates {
    std::vector<double> mean, sd;
};
using CovariateLaw = std::variant<UniformCovariates, DiscreteGridCovariates, NormalCovariates>;

inline std::size_t covariate_dim(const CovariateLaw& law) {
    if (const auto* u = std::get_if<UniformCovariates>(&law)) return u->lower.size();
    if (const auto* g = std::get_if<DiscreteGridCovariates>(&law)) return g->values.size();
    return std::get<NormalCovariates>(law).mean.size();
}

inline std::vector<double> covariate_mean(const CovariateLaw& law) {
    std::vector<double> m;
    if (const auto* u = std::get_if<UniformCovariates>(&law)) {
        for (std::size_t j = 0; j < u->lower.size(); ++j) m.push_back(0.5 * (u->lower[j] + u->upper[j]));
    } else if (const auto* g = std::get_if<DiscreteGridCovariates>(&law)) {
        for (const auto& v : g->values) m.push_back(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
    } else {
        m = std::get<NormalCovariates>(law).mean;
    }
    return m;
}

/// Support points and masses of a discrete grid law (product order, last coordinate fastest).
inline std::pair<std::vector<std::vector<double>>, std::vector<double>> covariate_atoms(const CovariateLaw& law) {
    const auto* g = std::get_if<DiscreteGridCovariates>(&law);
    if (!g) throw InvalidArgument("covariate atoms exist only for discrete grid laws");
    std::vector<std::vector<double>> pts{{}};
    std::vector<double> mass{1.0};
    for (const auto& vals : g->values) {
        std::vector<std::vector<double>> np;
        std::vector<double> nm;
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (double v : vals) {
                auto p = pts[i];
                p.push_back(v);
                np.push_back(std::move(p));
                nm.push_back(mass[i] / static_cast<double>(vals.size()));
            }
        pts = std::move(np);
        mass = std::move(nm);
    }
    return {pts, mass};
}

struct Randomized {
    double p = 0.5;
};
/// Logistic propensity 1 / (1 + exp(-(a + x'b))).
struct Propensity {
    double intercept = 0.0;
    std::vector<double> coef;
};
/// Binary instrument Z ~ Bernoulli(p_z); compliers take D = Z, the rest
/// take D ~ Bernoulli(noncomplier_p) regardless of Z.
struct Instrumented {
    double p_z = 0.5;
    double complier_share = 0.8;
    double noncomplier_p = 0.5;
};
using Assignment = std::variant<Randomized, Propensity, Instrumented>;

struct DgpSpec {
    std::variant<LinearConstantTE, RankInvariant, FactorModel> outcome;
    CovariateLaw covariates = UniformCovariates{{0.0}, {1.0}};
    Assignment assignment = Randomized{};
    SupportBounds bounds = SupportBounds::unbounded();
    std::uint64_t seed = 0;

    std::size_t dim() const { return covariate_dim(covariates); }

    void validate() const {
        bounds.validate();
        const std::size_t k = dim();
        if (k == 0) throw InvalidArgument("covariate law needs at least one dimension");
        if (const auto* u = std::get_if<UniformCovariates>(&covariates)) {
            if (u->upper.size() != k) throw DimensionMismatch("uniform covariate upper ends", k, u->upper.size());
            for (std::size_t j = 0; j < k; ++j)
                if (!(u->lower[j] < u->upper[j])) throw InvalidArgument("uniform covariate range is empty");
        } else if (const auto* g = std::get_if<DiscreteGridCovariates>(&covariates)) {
            for (const auto& v : g->values)
                if (v.empty()) throw InvalidArgument("discrete covariate grid has an empty coordinate");
        } else {
            const auto& nc = std::get<NormalCovariates>(covariates);
            if (nc.sd.size() != k) throw DimensionMismatch("normal covariate sds", k, nc.sd.size());
            for (double s : nc.sd)
                if (!(s >= 0.0)) throw InvalidArgument("normal covariate sd must be >= 0");
        }
        auto need = [&](const std::vector<double>& v, const char* what) {
            if (v.size() != k) throw DimensionMismatch(what, k, v.size());
        };
        if (const auto* l = std::get_if<LinearConstantTE>(&outcome)) {
            need(l->beta, "outcome coefficients");
            need(l->effect_coef, "effect coefficients");
            l->noise.validate();
            l->effect_noise.validate();
        } else if (const auto* r = std::get_if<RankInvariant>(&outcome)) {
            need(r->beta, "outcome coefficients");
            need(r->shift_coef, "shift coefficients");
            r->base.validate();
        } else {
            const auto& f = std::get<FactorModel>(outcome);
            need(f.beta0, "control coefficients");
            need(f.beta1, "treated coefficients");
            if (f.group_effects.empty()) throw InvalidArgument("factor model needs at least one group");
            f.noise0.validate();
            f.noise1.validate();
        }
        if (const auto* a = std::get_if<Randomized>(&assignment)) {
            if (!(a->p > 0.0 && a->p < 1.0)) throw InvalidArgument("assignment probability must lie in (0,1)");
        } else if (const auto* pr = std::get_if<Propensity>(&assignment)) {
            need(pr->coef, "propensity coefficients");
        } else {
            const auto& iv = std::get<Instrumented>(assignment);
            if (!(iv.p_z > 0.0 && iv.p_z < 1.0)) throw InvalidArgument("instrument probability must lie in (0,1)");
            if (!(iv.complier_share > 0.0 && iv.complier_share <= 1.0))
                throw InvalidArgument("complier share must lie in (0,1]");
            if (!(iv.noncomplier_p > 0.0 && iv.noncomplier_p < 1.0))
                throw InvalidArgument("noncomplier take-up must lie in (0,1)");
        }
    }

    /// Population conditional average effect.
    double effect(std::span<const double> x) const {
        if (const auto* l = std::get_if<LinearConstantTE>(&outcome)) return l->effect_intercept + dot(l->effect_coef, x);
        if (const auto* r = std::get_if<RankInvariant>(&outcome)) return r->shift_intercept + dot(r->shift_coef, x);
        const auto& f = std::get<FactorModel>(outcome);
        return dot(f.beta1, x) - dot(f.beta0, x) + (f.lambda1 - f.lambda0) * mean_group_effect(f);
    }

    /// Population mean of the control outcome.
    double y0_mean() const {
        const auto m = covariate_mean(covariates);
        if (const auto* l = std::get_if<LinearConstantTE>(&outcome)) return l->intercept + dot(l->beta, m);
        if (const auto* r = std::get_if<RankInvariant>(&outcome)) return r->location + dot(r->beta, m);
        const auto& f = std::get<FactorModel>(outcome);
        return dot(f.beta0, m) + f.lambda0 * mean_group_effect(f);
    }

    /// Propensity P(D = 1 | x).
    double propensity(std::span<const double> x) const {
        if (const auto* a = std::get_if<Randomized>(&assignment)) return a->p;
        if (const auto* p = std::get_if<Propensity>(&assignment))
            return 1.0 / (1.0 + std::exp(-(p->intercept + dot(p->coef, x))));
        const auto& iv = std::get<Instrumented>(assignment);
        return iv.complier_share * iv.p_z + (1.0 - iv.complier_share) * iv.noncomplier_p;
    }

private:
    static double mean_group_effect(const FactorModel& f) {
        return std::accumulate(f.group_effects.begin(), f.group_effects.end(), 0.0) /
               static_cast<double>(f.group_effects.size());
    }
};

struct Truth {
    std::vector<double> y0, y1;
    /// Population conditional average effect at each row's covariates.
    std::vector<double> effect_x;
    double y0_mean = 0.0;
    std::function<double(std::span<const double>)> effect;
};

struct Generated {
    Dataset data;
    Truth truth;
};

namespace detail {

template <class Rng>
std::vector<double> draw_x(const CovariateLaw& law, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> x;
    if (const auto* uc = std::get_if<UniformCovariates>(&law)) {
        for (std::size_t j = 0; j < uc->lower.size(); ++j) x.push_back(uc->lower[j] + (uc->upper[j] - uc->lower[j]) * u(rng));
    } else if (const auto* g = std::get_if<DiscreteGridCovariates>(&law)) {
        for (const auto& v : g->values) x.push_back(v[static_cast<std::size_t>(rng() % v.size())]);
    } else {
        const auto& nc = std::get<NormalCovariates>(law);
        for (std::size_t j = 0; j < nc.mean.size(); ++j)
            x.push_back(nc.mean[j] + nc.sd[j] * std::normal_distribution<double>(0.0, 1.0)(rng));
    }
    return x;
}

struct Row {
    Observation obs;
    double y0 = 0.0, y1 = 0.0;
};

template <class Rng>
Row draw_row(const DgpSpec& spec, Rng& rng) {
    Row r;
    r.obs.x = draw_x(spec.covariates, rng);
    const auto& x = r.obs.x;
    if (const auto* l = std::get_if<LinearConstantTE>(&spec.outcome)) {
        r.y0 = l->intercept + dot(l->beta, x) + l->noise.draw(rng);
        r.y1 = r.y0 + l->effect_intercept + dot(l->effect_coef, x) + l->effect_noise.draw(rng);
    } else if (const auto* ri = std::get_if<RankInvariant>(&spec.outcome)) {
        r.y0 = ri->location + dot(ri->beta, x) + ri->base.draw(rng);
        r.y1 = r.y0 + ri->shift_intercept + dot(ri->shift_coef, x);
    } else {
        const auto& f = std::get<FactorModel>(spec.outcome);
        const auto c = static_cast<std::size_t>(rng() % f.group_effects.size());
        const double a = f.group_effects[c];
        r.obs.c = static_cast<std::int64_t>(c);
        r.y0 = dot(f.beta0, x) + f.lambda0 * a + f.noise0.draw(rng);
        r.y1 = dot(f.beta1, x) + f.lambda1 * a + f.noise1.draw(rng);
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (const auto* iv = std::get_if<Instrumented>(&spec.assignment)) {
        const int z = u(rng) < iv->p_z ? 1 : 0;
        const bool complier = u(rng) < iv->complier_share;
        const int taker = u(rng) < iv->noncomplier_p ? 1 : 0;
        r.obs.z = z;
        r.obs.d = complier ? z : taker;
    } else {
        r.obs.d = u(rng) < spec.propensity(x) ? 1 : 0;
    }
    r.obs.y = r.obs.d ? r.y1 : r.y0;
    return r;
}

} // namespace detail

/// n draws from the process, with the potential-outcome pairs kept as truth.
inline Generated generate(const DgpSpec& spec, std::size_t n, unsigned threads = 1) {
    spec.validate();
    if (n == 0) throw InvalidArgument("generate needs n >= 1");
    std::vector<detail::Row> rows(n);
    const std::size_t blocks = (n + kBlockRows - 1) / kBlockRows;
    auto run_block = [&](std::size_t b) {
        std::mt19937_64 rng(block_seed(spec.seed, b));
        const std::size_t end = std::min(n, (b + 1) * kBlockRows);
        for (std::size_t i = b * kBlockRows; i < end; ++i) rows[i] = detail::draw_row(spec, rng);
    };
    if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, blocks));
    if (threads <= 1) {
        for (std::size_t b = 0; b < blocks; ++b) run_block(b);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t b = t; b < blocks; b += threads) run_block(b);
            });
        for (auto& th : pool) th.join();
    }
    Truth truth;
    truth.y0_mean = spec.y0_mean();
    truth.effect = [spec](std::span<const double> x) { return spec.effect(x); };
    std::vector<Observation> obs;
    obs.reserve(n);
    for (auto& r : rows) {
        truth.y0.push_back(r.y0);
        truth.y1.push_back(r.y1);
        truth.effect_x.push_back(spec.effect(r.obs.x));
        obs.push_back(std::move(r.obs));
    }
    return {Dataset(std::move(obs), spec.bounds), std::move(truth)};
}

} // namespace extval::datagen
