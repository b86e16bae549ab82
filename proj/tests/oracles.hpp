#pragma once

// Test-only reference implementations, independent of the library's solve paths.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "distflex/mdp.hpp"

namespace oracles {

using distflex::EnsemblePolicy;
using distflex::EnsembleSpec;
using distflex::Mat;
using distflex::StateUtilities;
using distflex::Vec;

// xorshift-based deterministic rng for test instance generation
struct Rng {
    std::uint64_t s;
    explicit Rng(std::uint64_t seed) : s(seed ? seed : 1) {}
    std::uint64_t next() {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        return s;
    }
    double uniform() { return (next() >> 11) * (1.0 / 9007199254740992.0); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double gauss() {
        double u1 = std::max(uniform(), 1e-300), u2 = uniform();
        return std::sqrt(-2 * std::log(u1)) * std::cos(2 * M_PI * u2);
    }
};

// single-column Bellman cost: sum_a P_a (w_a + gamma_a log(P_a / Pbar_a))
inline double column_cost(const Vec& p, const Vec& pbar, const Vec& gamma,
                          const Vec& w) {
    double c = 0;
    for (int a = 0; a < p.size(); ++a) {
        if (p[a] <= 0) continue;
        c += p[a] * (w[a] + gamma[a] * std::log(p[a] / pbar[a]));
    }
    return c;
}

// enumerate all lattice points of the probability simplex with given step
// (restricted to the support pattern), calling fn on each
inline void enumerate_simplex(const std::vector<int>& support, int slots,
                              const std::function<void(const std::vector<int>&)>& fn) {
    std::vector<int> counts(support.size(), 0);
    std::function<void(size_t, int)> rec = [&](size_t i, int left) {
        if (i + 1 == support.size()) {
            counts[i] = left;
            fn(counts);
            return;
        }
        for (int k = 0; k <= left; ++k) {
            counts[i] = k;
            rec(i + 1, left - k);
        }
    };
    if (!support.empty()) rec(0, slots);
}

// Backward DP where each column decision is restricted to the simplex lattice
// with the given step; forward pass then evaluates the grid policy exactly.
inline EnsemblePolicy grid_dp_policy(const EnsembleSpec& spec,
                                     const StateUtilities& util, double step) {
    const int T = spec.horizon;
    const int n = spec.n_states();
    const int slots = static_cast<int>(std::lround(1.0 / step));
    EnsemblePolicy pol;
    pol.transitions.assign(T, Mat::Zero(n, n));
    Vec v_next = Vec::Zero(n);
    for (int t = T - 1; t >= 0; --t) {
        Vec w = -(util.values.row(t + 1).transpose()) + v_next;
        Vec v_now(n);
        for (int b = 0; b < n; ++b) {
            std::vector<int> support;
            for (int a = 0; a < n; ++a)
                if (spec.default_transitions(a, b) > 0) support.push_back(a);
            double best = std::numeric_limits<double>::infinity();
            Vec best_p = Vec::Zero(n);
            enumerate_simplex(support, slots, [&](const std::vector<int>& counts) {
                Vec p = Vec::Zero(n);
                for (size_t i = 0; i < support.size(); ++i)
                    p[support[i]] = counts[i] * step;
                double c = 0;
                for (int a = 0; a < n; ++a) {
                    if (p[a] <= 0) continue;
                    c += p[a] * (w[a] + spec.gamma(a, b) *
                                            std::log(p[a] / spec.default_transitions(a, b)));
                }
                if (c < best) {
                    best = c;
                    best_p = p;
                }
            });
            pol.transitions[t].col(b) = best_p;
            v_now[b] = best;
        }
        v_next = v_now;
    }
    pol.rho = distflex::forward_propagate(pol.transitions, spec.rho_init);
    pol.objective_value = distflex::ensemble_objective(pol, spec, util);
    return pol;
}

// random feasible policy respecting the support of the default transitions
inline EnsemblePolicy random_policy(const EnsembleSpec& spec,
                                    const StateUtilities& util, Rng& rng) {
    const int T = spec.horizon;
    const int n = spec.n_states();
    EnsemblePolicy pol;
    pol.transitions.assign(T, Mat::Zero(n, n));
    for (int t = 0; t < T; ++t) {
        for (int b = 0; b < n; ++b) {
            double total = 0;
            Vec col = Vec::Zero(n);
            for (int a = 0; a < n; ++a) {
                if (spec.default_transitions(a, b) <= 0) continue;
                col[a] = -std::log(std::max(rng.uniform(), 1e-12));
                total += col[a];
            }
            pol.transitions[t].col(b) = col / total;
        }
    }
    pol.rho = distflex::forward_propagate(pol.transitions, spec.rho_init);
    pol.objective_value = distflex::ensemble_objective(pol, spec, util);
    return pol;
}

// projected gradient descent on the per-column problem (used for the
// non-uniform-penalty cross-check)
inline Vec projected_gradient_column(const Vec& pbar, const Vec& gamma, const Vec& w,
                                     int iters = 200000) {
    const int n = static_cast<int>(pbar.size());
    std::vector<int> support;
    for (int a = 0; a < n; ++a)
        if (pbar[a] > 0) support.push_back(a);
    Vec p = Vec::Zero(n);
    for (int a : support) p[a] = 1.0 / static_cast<double>(support.size());

    auto project = [&](Vec v) {
        // Euclidean projection onto the simplex over the support
        std::vector<double> u;
        for (int a : support) u.push_back(v[a]);
        std::sort(u.begin(), u.end(), std::greater<double>());
        double css = 0, theta = 0;
        int k = 0;
        for (size_t i = 0; i < u.size(); ++i) {
            css += u[i];
            const double th = (css - 1.0) / static_cast<double>(i + 1);
            if (u[i] - th > 0) {
                theta = th;
                k = static_cast<int>(i + 1);
            }
        }
        (void)k;
        Vec out = Vec::Zero(n);
        for (int a : support) out[a] = std::max(v[a] - theta, 0.0);
        return out;
    };

    const double floor_p = 1e-12;
    for (int it = 0; it < iters; ++it) {
        const double step = 0.5 / std::sqrt(double(it + 1));
        Vec g = Vec::Zero(n);
        for (int a : support) {
            const double pa = std::max(p[a], floor_p);
            g[a] = w[a] + gamma[a] * (std::log(pa / pbar[a]) + 1.0);
        }
        p = project(p - step * g);
    }
    return p;
}

}  // namespace oracles
