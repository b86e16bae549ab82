#include "distflex/mdp.hpp"

#include <cmath>
#include <limits>

namespace distflex {

void discretize_states(double avg_load_kw, int n_states, double lo_frac,
                       double hi_frac, double power_factor, Vec& p_state,
                       Vec& q_state) {
    if (n_states < 2) throw ValidationError("discretize_states: n_states must be >= 2");
    if (!(0 < lo_frac && lo_frac < hi_frac))
        throw ValidationError("discretize_states: need 0 < lo_frac < hi_frac");
    p_state.resize(n_states);
    q_state.resize(n_states);
    const double tan_phi = std::tan(std::acos(power_factor));
    for (int a = 0; a < n_states; ++a) {
        p_state[a] = avg_load_kw * (lo_frac + a * (hi_frac - lo_frac) / (n_states - 1));
        q_state[a] = p_state[a] * tan_phi;
    }
}

Mat gamma_for_mode(const std::string& mode, int n) {
    if (mode == "uniform") return Mat::Constant(n, n, 1.0);
    if (mode != "nonuniform")
        throw ValidationError("unknown gamma_mode: " + mode);
    Mat g = Mat::Constant(n, n, 10.0);
    for (int b = 0; b < n; ++b) {
        g(b, b) = 1.0;
        g((b + 1) % n, b) = 1.0;
        g((b + n - 1) % n, b) = 1.0;
    }
    return g;
}

EnsembleSpec make_ensemble_spec(const TclSite& site, int horizon) {
    EnsembleSpec spec;
    spec.bus = site.bus;
    discretize_states(site.avg_load_kw, site.n_states, site.range_lo_frac,
                      site.range_hi_frac, site.power_factor, spec.p_state,
                      spec.q_state);
    spec.default_transitions = site.default_transitions;
    spec.gamma = gamma_for_mode(site.gamma_mode, site.n_states);
    spec.rho_init = site.rho_init;
    spec.horizon = horizon;
    return spec;
}

StateUtilities utilities_from_prices(const EnsembleSpec& spec, const Vec& lambda_p,
                                     const Vec& lambda_q) {
    const int T = spec.horizon;
    if (lambda_p.size() != T || lambda_q.size() != T)
        throw ValidationError("multiplier sequences must have length horizon");
    StateUtilities u;
    u.values = Mat::Zero(T + 1, spec.n_states());
    for (int t = 0; t < T; ++t)
        u.values.row(t + 1) = u.values.row(t) +
                              lambda_p[t] * spec.p_state.transpose() +
                              lambda_q[t] * spec.q_state.transpose();
    return u;
}

namespace {

/// One Bellman column: minimize sum_a P_a (w_cost_a + gamma_a log(P_a/Pbar_a))
/// over the simplex, where w_cost = -(U[t+1] - v[t+1]). Returns the optimal
/// column and its value.
void solve_column(const Vec& pbar, const Vec& gamma_col, const Vec& w, Vec& p_out,
                  double& value_out) {
    const int n = static_cast<int>(pbar.size());
    p_out.resize(n);

    double gmin = std::numeric_limits<double>::infinity();
    double gmax = -gmin;
    for (int a = 0; a < n; ++a) {
        if (pbar[a] <= 0) continue;  // structural zero, stays zero
        gmin = std::min(gmin, gamma_col[a]);
        gmax = std::max(gmax, gamma_col[a]);
    }
    if (!std::isfinite(gmin))
        throw NumericalError("transition column has empty support");

    if (gmax - gmin < 1e-13) {
        // constant penalty: exponentiated-value closed form
        const double g = gmin;
        double wmax = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < n; ++a)
            if (pbar[a] > 0) wmax = std::max(wmax, w[a]);
        double z = 0;
        for (int a = 0; a < n; ++a)
            p_out[a] = pbar[a] > 0 ? pbar[a] * std::exp((w[a] - wmax) / g) : 0.0;
        z = p_out.sum();
        p_out /= z;
        value_out = -g * std::log(z) - wmax;
        return;
    }

    // mixed penalties: P_a = Pbar_a exp((w_a - g_a - mu)/g_a); the normalization
    // sum is strictly decreasing in mu, so bisect after geometric bracketing.
    auto sum_at = [&](double mu) {
        double s = 0;
        for (int a = 0; a < n; ++a) {
            if (pbar[a] <= 0) continue;
            const double ex = std::min((w[a] - gamma_col[a] - mu) / gamma_col[a], 700.0);
            s += pbar[a] * std::exp(ex);
        }
        return s;
    };
    double lo = -1.0, hi = 1.0;
    for (int a = 0; a < n; ++a) {
        if (pbar[a] <= 0) continue;
        lo = std::min(lo, w[a] - gamma_col[a]);
        hi = std::max(hi, w[a] - gamma_col[a]);
    }
    int guard = 0;
    while (sum_at(lo) < 1.0) {
        lo -= std::max(1.0, std::abs(lo));
        if (++guard > 200)
            throw NumericalError("normalization bracket expansion failed (low side)");
    }
    guard = 0;
    while (sum_at(hi) > 1.0) {
        hi += std::max(1.0, std::abs(hi));
        if (++guard > 200)
            throw NumericalError("normalization bracket expansion failed (high side)");
    }
    double mu = 0.5 * (lo + hi);
    bool converged = false;
    for (int it = 0; it < 500; ++it) {
        mu = 0.5 * (lo + hi);
        const double s = sum_at(mu);
        if (std::abs(s - 1.0) <= 1e-12) {
            converged = true;
            break;
        }
        if (s > 1.0)
            lo = mu;
        else
            hi = mu;
    }
    if (!converged && std::abs(sum_at(mu) - 1.0) > 1e-9)
        throw NumericalError("normalization root find did not converge");
    double z = 0;
    for (int a = 0; a < n; ++a) {
        p_out[a] = pbar[a] > 0
                       ? pbar[a] * std::exp((w[a] - gamma_col[a] - mu) / gamma_col[a])
                       : 0.0;
        z += p_out[a];
    }
    p_out /= z;  // removes the residual bisection error
    value_out = 0;
    for (int a = 0; a < n; ++a) {
        if (p_out[a] <= 0) continue;
        value_out += p_out[a] * (-w[a] + gamma_col[a] * std::log(p_out[a] / pbar[a]));
    }
}

}  // namespace

EnsemblePolicy backward_forward_solve(const EnsembleSpec& spec,
                                      const StateUtilities& utilities) {
    const int T = spec.horizon;
    const int n = spec.n_states();
    if (utilities.values.rows() != T + 1 || utilities.values.cols() != n)
        throw ValidationError("utilities shape mismatch");

    EnsemblePolicy policy;
    policy.transitions.assign(T, Mat::Zero(n, n));
    Vec v_next = Vec::Zero(n);
    std::vector<Vec> values(T + 1, Vec::Zero(n));
    values[T] = v_next;
    for (int t = T - 1; t >= 0; --t) {
        Vec w = utilities.values.row(t + 1).transpose() - values[t + 1];
        Vec col;
        double val;
        for (int b = 0; b < n; ++b) {
            solve_column(spec.default_transitions.col(b), spec.gamma.col(b), w, col,
                         val);
            policy.transitions[t].col(b) = col;
            values[t][b] = val;
        }
    }
    policy.rho = forward_propagate(policy.transitions, spec.rho_init);
    policy.objective_value = ensemble_objective(policy, spec, utilities);
    return policy;
}

Mat forward_propagate(const std::vector<Mat>& transitions, const Vec& rho_init) {
    const int T = static_cast<int>(transitions.size());
    const int n = static_cast<int>(rho_init.size());
    Mat rho(T, n);
    Vec cur = rho_init;
    for (int t = 0; t < T; ++t) {
        cur = transitions[t] * cur;
        rho.row(t) = cur.transpose();
    }
    return rho;
}

void expected_injections(const EnsemblePolicy& policy, const EnsembleSpec& spec,
                         Vec& p_out, Vec& q_out) {
    p_out = policy.rho * spec.p_state;
    q_out = policy.rho * spec.q_state;
}

double ensemble_objective(const EnsemblePolicy& policy, const EnsembleSpec& spec,
                          const StateUtilities& utilities) {
    const int T = spec.horizon;
    const int n = spec.n_states();
    double total = 0;
    Vec src = spec.rho_init;
    for (int t = 0; t < T; ++t) {
        const Mat& P = policy.transitions[t];
        for (int b = 0; b < n; ++b) {
            if (src[b] == 0.0) continue;
            double inner = 0;
            for (int a = 0; a < n; ++a) {
                const double p = P(a, b);
                if (p == 0.0) continue;
                const double pbar = spec.default_transitions(a, b);
                if (pbar <= 0)
                    throw NumericalError("policy places mass on a forbidden transition");
                inner += p * (-utilities.values(t + 1, a) +
                              spec.gamma(a, b) * std::log(p / pbar));
            }
            total += src[b] * inner;
        }
        src = policy.rho.row(t).transpose();
    }
    return total;
}

}  // namespace distflex
