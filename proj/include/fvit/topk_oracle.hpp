#pragma once

// Exhaustive oracle for the minimal top-k-breaking divergence: the minimum
// of D_alpha(w || q) over every q on the simplex grid {c / G : sum c = G}
// whose top-k shares at most k - k0 indices with the top-k of w.
//
// Shares nothing with the closed-form path except the TopKContext fields
// k and k0. Branch and bound keeps n = 5, G = 200 tractable: for each
// candidate top-k set T of q the enumeration assigns T first, caps the
// remaining entries so that T really is the top-k under the
// (value desc, index asc) order, and prunes with the Holder lower bound
//   sum_j w_j^a q_j^(1-a) >= (sum_j w_j)^a r^(1-a)   for sum_j q_j = r.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "fvit/core.hpp"
#include "fvit/topk_cert.hpp"

namespace fvit {

inline constexpr std::size_t kOracleMaxTokens = 5;

namespace detail {

class GridOracle {
 public:
  GridOracle(std::span<const double> w, std::size_t k, std::size_t k0, double alpha,
             std::size_t grid)
      : w_(w.begin(), w.end()), n_(w.size()), k_(k), k0_(k0), alpha_(alpha), grid_(grid) {
    cost_.assign(n_, std::vector<double>(grid_ + 1));
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t c = 0; c <= grid_; ++c) {
        if (w_[i] <= 0.0) {
          cost_[i][c] = 0.0;
        } else if (c == 0) {
          cost_[i][c] = kInf;
        } else {
          const double q = static_cast<double>(c) / static_cast<double>(grid_);
          cost_[i][c] = std::pow(w_[i], alpha_) * std::pow(q, 1.0 - alpha_);
        }
      }
    }
    pow_one_minus_alpha_.resize(grid_ + 1);
    for (std::size_t r = 0; r <= grid_; ++r)
      pow_one_minus_alpha_[r] =
          r == 0 ? kInf : std::pow(static_cast<double>(r) / static_cast<double>(grid_), 1.0 - alpha_);
  }

  // Returns the minimal power sum, or +inf when no grid point violates.
  double solve() {
    // Reference top-k of w by (value desc, index asc).
    std::vector<std::size_t> order(n_);
    for (std::size_t i = 0; i < n_; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return w_[a] != w_[b] ? w_[a] > w_[b] : a < b;
    });
    std::vector<bool> in_ref(n_, false);
    for (std::size_t j = 0; j < k_; ++j) in_ref[order[j]] = true;

    // Every k-subset T with |T ∩ ref| <= k - k0.
    std::vector<std::size_t> subset;
    enumerate_subsets(0, subset, in_ref);
    return best_;
  }

 private:
  void enumerate_subsets(std::size_t start, std::vector<std::size_t>& subset,
                         const std::vector<bool>& in_ref) {
    if (subset.size() == k_) {
      std::size_t shared = 0;
      for (auto i : subset) shared += in_ref[i] ? 1 : 0;
      if (shared + k0_ <= k_) search_topset(subset);
      return;
    }
    for (std::size_t i = start; i < n_; ++i) {
      subset.push_back(i);
      enumerate_subsets(i + 1, subset, in_ref);
      subset.pop_back();
    }
  }

  void search_topset(const std::vector<std::size_t>& top) {
    top_ = top;
    in_top_.assign(n_, false);
    for (auto i : top_) in_top_[i] = true;
    rest_.clear();
    for (std::size_t i = 0; i < n_; ++i)
      if (!in_top_[i]) rest_.push_back(i);
    values_.assign(n_, 0);
    rest_mass_suffix_.assign(rest_.size() + 1, 0.0);
    for (std::size_t j = rest_.size(); j-- > 0;)
      rest_mass_suffix_[j] = rest_mass_suffix_[j + 1] + w_[rest_[j]];
    top_mass_suffix_.assign(top_.size() + 1, 0.0);
    for (std::size_t j = top_.size(); j-- > 0;)
      top_mass_suffix_[j] = top_mass_suffix_[j + 1] + w_[top_[j]];
    assign_top(0, grid_, 0.0);
  }

  double holder_bound(double mass, std::size_t budget) const {
    if (mass <= 0.0) return 0.0;
    if (budget == 0) return kInf;
    return std::pow(mass, alpha_) * pow_one_minus_alpha_[budget];
  }

  void assign_top(std::size_t pos, std::size_t budget, double partial) {
    if (pos == top_.size()) {
      // Each rest entry b must sort after every top entry a:
      // q_a > q_b, or q_a == q_b with a < b.
      caps_.assign(rest_.size(), 0);
      std::size_t cap_total = 0;
      for (std::size_t j = 0; j < rest_.size(); ++j) {
        const std::size_t b = rest_[j];
        long cap = static_cast<long>(grid_);
        for (auto a : top_) {
          const long va = static_cast<long>(values_[a]);
          cap = std::min(cap, a < b ? va : va - 1);
        }
        if (cap < 0) return;
        caps_[j] = static_cast<std::size_t>(cap);
        cap_total += caps_[j];
      }
      if (cap_total < budget) return;
      assign_rest(0, budget, partial);
      return;
    }
    const std::size_t item = top_[pos];
    const bool last_overall = rest_.empty() && pos + 1 == top_.size();
    std::size_t lo = last_overall ? budget : 0;
    for (std::size_t c = lo; c <= budget; ++c) {
      const double cost = partial + cost_[item][c];
      if (cost >= best_) continue;
      // Whatever budget remains is spread over the later top entries and the
      // rest; the bound ignores ordering constraints.
      const double lb = holder_bound(top_mass_suffix_[pos + 1] + rest_mass_suffix_[0], budget - c);
      if (cost + lb >= best_) continue;
      values_[item] = c;
      assign_top(pos + 1, budget - c, cost);
    }
  }

  void assign_rest(std::size_t pos, std::size_t budget, double partial) {
    if (pos + 1 == rest_.size() || rest_.empty()) {
      if (rest_.empty()) {
        if (budget == 0 && partial < best_) best_ = partial;
        return;
      }
      const std::size_t item = rest_[pos];
      if (budget > caps_[pos]) return;
      const double cost = partial + cost_[item][budget];
      if (cost < best_) best_ = cost;
      return;
    }
    const std::size_t item = rest_[pos];
    const std::size_t hi = std::min(budget, caps_[pos]);
    std::size_t later_caps = 0;
    for (std::size_t j = pos + 1; j < rest_.size(); ++j) later_caps += caps_[j];
    const std::size_t lo = budget > later_caps ? budget - later_caps : 0;
    for (std::size_t c = lo; c <= hi; ++c) {
      const double cost = partial + cost_[item][c];
      if (cost >= best_) continue;
      const double lb = holder_bound(rest_mass_suffix_[pos + 1], budget - c);
      if (cost + lb >= best_) continue;
      assign_rest(pos + 1, budget - c, cost);
    }
  }

  std::vector<double> w_;
  std::size_t n_, k_, k0_;
  double alpha_;
  std::size_t grid_;
  std::vector<std::vector<double>> cost_;
  std::vector<double> pow_one_minus_alpha_;
  std::vector<std::size_t> top_, rest_, values_, caps_;
  std::vector<bool> in_top_;
  std::vector<double> rest_mass_suffix_, top_mass_suffix_;
  double best_ = kInf;
};

}  // namespace detail

// Grid minimum of D_alpha(w || q) over q whose top-k differs from w's in at
// least k0 indices.
inline double brute_force_min_divergence(std::span<const double> w, std::size_t k,
                                         std::size_t k0, double alpha, std::size_t grid_points) {
  if (w.size() > kOracleMaxTokens) fail_usage("n too large for the exhaustive oracle");
  if (grid_points < 2) fail_usage("resolution too coarse");
  if (!(alpha > 1.0)) fail_usage("alpha must exceed 1");
  if (k < 1 || k > w.size() || k0 < 1 || k0 > k) fail_usage("invalid k or k0");
  detail::GridOracle oracle(w, k, k0, alpha, grid_points);
  const double best = oracle.solve();
  if (std::isinf(best)) fail_data("no valid violating q");
  return std::max(0.0, std::log(best) / (alpha - 1.0));
}

inline double brute_force_min_divergence(std::span<const double> w, const TopKContext& ctx,
                                         double alpha, std::size_t grid_points) {
  return brute_force_min_divergence(w, ctx.k, ctx.k0, alpha, grid_points);
}

}  // namespace fvit
