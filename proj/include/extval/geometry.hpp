#pragma once

// Distance from a covariate point to the non-treatment region (h0) and to the
// treatment region (h1) of a rule, under the Euclidean norm on rescaled
// covariates.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "extval/distance.hpp"
#include "extval/model.hpp"

namespace extval {

struct DistanceProfile {
    Distance h0; ///< to the nearest point the rule does not treat
    Distance h1; ///< to the nearest point the rule treats
};

namespace detail {

inline double scale_at(std::span<const double> scale, std::size_t i) { return scale.empty() ? 1.0 : scale[i]; }

inline double box_distance_scaled(std::span<const double> x, const Box& box, std::span<const double> scale) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double clamped = std::clamp(x[i], box.lower[i], box.upper[i]);
        const double r = scale_at(scale, i) * (x[i] - clamped);
        acc += r * r;
    }
    return std::sqrt(acc);
}

inline Distance min_box_distance(std::span<const double> x, const std::vector<Box>& boxes,
                                 std::span<const double> scale) {
    Distance best = Distance::infinite();
    for (const auto& b : boxes) {
        detail::require_dim(x, b.dim(), "tree box");
        best = min(best, Distance(box_distance_scaled(x, b, scale)));
    }
    return best;
}

} // namespace detail

/// Euclidean distance from x to the closure of box.
inline double box_distance(std::span<const double> x, const Box& box) {
    detail::require_dim(x, box.dim(), "box_distance");
    return detail::box_distance_scaled(x, box, {});
}

/// (h0(x), h1(x)) for a rule. `scale` multiplies each coordinate before the
/// norm is taken; rule parameters are given in raw covariate units.
inline DistanceProfile distance_profile(const PolicyRule& rule, std::span<const double> x,
                                        std::span<const double> scale = {}) {
    if (!scale.empty()) {
        detail::require_dim(scale, x.size(), "distance_profile scale");
        for (double s : scale)
            if (!(s > 0.0)) throw InvalidArgument("distance_profile scale must be positive");
    }
    if (auto k = rule.required_dim()) detail::require_dim(x, *k, "distance_profile");

    return std::visit(
        [&](const auto& r) -> DistanceProfile {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, LinearEligibility>) {
                // In scaled coordinates u = s*x the coefficient is coef/s.
                double score = r.intercept, norm2 = 0.0;
                for (std::size_t j = 0; j < x.size(); ++j) {
                    score += x[j] * r.coef[j];
                    const double b = r.coef[j] / detail::scale_at(scale, j);
                    norm2 += b * b;
                }
                const double norm = std::sqrt(norm2);
                return {Distance(std::max(score, 0.0) / norm), Distance(std::max(-score, 0.0) / norm)};
            } else if constexpr (std::is_same_v<T, Threshold>) {
                if (r.cuts.empty()) return {Distance::infinite(), Distance::zero()};
                const std::size_t k = x.size();
                // Treatment region is a box: per-dimension [lo, hi] from the cuts.
                std::vector<double> lo(k, -kInf), hi(k, kInf);
                Distance h0 = Distance::infinite();
                for (const auto& c : r.cuts) {
                    if (c.dim >= k) throw DimensionMismatch("threshold cut dimension", c.dim + 1, k);
                    if (c.sign > 0)
                        lo[c.dim] = std::max(lo[c.dim], c.cut);
                    else
                        hi[c.dim] = std::min(hi[c.dim], c.cut);
                    // Complement is the union of the open half-spaces that violate one cut.
                    const double margin = detail::scale_at(scale, c.dim) * c.sign * (x[c.dim] - c.cut);
                    h0 = min(h0, Distance(std::max(margin, 0.0)));
                }
                for (std::size_t j = 0; j < k; ++j)
                    if (lo[j] > hi[j]) return {Distance::zero(), Distance::infinite()};
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    const double r_j = detail::scale_at(scale, j) * (x[j] - std::clamp(x[j], lo[j], hi[j]));
                    acc += r_j * r_j;
                }
                return {h0, Distance(std::sqrt(acc))};
            } else if constexpr (std::is_same_v<T, TreeBoxes>) {
                return {detail::min_box_distance(x, r.complement_boxes, scale),
                        detail::min_box_distance(x, r.treat_boxes, scale)};
            } else {
                if (r.value == 1) return {Distance::infinite(), Distance::zero()};
                return {Distance::zero(), Distance::infinite()};
            }
        },
        rule.variant());
}

/// Profiles for every observation of a dataset.
inline std::vector<DistanceProfile> distance_profiles(const PolicyRule& rule, const Dataset& data,
                                                      std::span<const double> scale = {}) {
    std::vector<DistanceProfile> out;
    out.reserve(data.size());
    for (const auto& o : data) out.push_back(distance_profile(rule, o.x, scale));
    return out;
}

// ---------------------------------------------------------------------------
// Decision trees -> box partitions

/// Node of a binary decision tree stored in a flat array. Leaves carry a
/// treatment value; splits send x[dim] < threshold left and the rest right.
struct TreeNode {
    bool leaf = true;
    int treat = 0;
    std::size_t dim = 0;
    double threshold = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;

    static TreeNode make_leaf(int treat) { return TreeNode{true, treat, 0, 0.0, 0, 0}; }
    static TreeNode make_split(std::size_t dim, double threshold, std::size_t left, std::size_t right) {
        return TreeNode{false, 0, dim, threshold, left, right};
    }
};

/// Converts a tree (root at index 0) into a TreeBoxes rule whose leaves
/// partition R^k exactly.
inline PolicyRule tree_rule(const std::vector<TreeNode>& nodes, std::size_t k) {
    if (nodes.empty()) throw InvalidArgument("tree_rule needs a root");
    Box root;
    root.lower.assign(k, -kInf);
    root.upper.assign(k, kInf);
    root.lower_closed.assign(k, false);
    root.upper_closed.assign(k, false);

    std::vector<Box> treat, complement;
    std::vector<std::pair<std::size_t, Box>> stack{{0, root}};
    std::size_t visited = 0;
    while (!stack.empty()) {
        auto [idx, box] = std::move(stack.back());
        stack.pop_back();
        if (idx >= nodes.size()) throw InvalidArgument("tree_rule child index out of range");
        if (++visited > nodes.size()) throw InvalidArgument("tree_rule nodes do not form a tree");
        const auto& n = nodes[idx];
        if (n.leaf) {
            (n.treat ? treat : complement).push_back(std::move(box));
            continue;
        }
        if (n.dim >= k) throw DimensionMismatch("tree split dimension", n.dim + 1, k);
        Box left = box, right = box;
        if (n.threshold <= box.upper[n.dim]) {
            left.upper[n.dim] = std::min(box.upper[n.dim], n.threshold);
            left.upper_closed[n.dim] = box.upper[n.dim] < n.threshold ? box.upper_closed[n.dim] : false;
        }
        if (n.threshold >= box.lower[n.dim]) {
            right.lower[n.dim] = std::max(box.lower[n.dim], n.threshold);
            right.lower_closed[n.dim] = n.threshold > box.lower[n.dim] ? true : box.lower_closed[n.dim];
        }
        // Drop children that are empty after the split.
        auto nonempty = [](const Box& b) {
            for (std::size_t i = 0; i < b.dim(); ++i) {
                if (b.lower[i] > b.upper[i]) return false;
                if (b.lower[i] == b.upper[i] && !(b.lower_closed[i] && b.upper_closed[i])) return false;
            }
            return true;
        };
        if (n.threshold > box.lower[n.dim] && nonempty(left)) stack.emplace_back(n.left, std::move(left));
        if (n.threshold <= box.upper[n.dim] && nonempty(right)) stack.emplace_back(n.right, std::move(right));
    }
    if (treat.empty() && complement.empty()) throw InvalidArgument("tree_rule produced no leaves");
    return PolicyRule::tree(std::move(treat), std::move(complement));
}

} // namespace extval
