#pragma once

#include <string>
#include <vector>

#include "distflex/common.hpp"
#include "distflex/network.hpp"

namespace distflex {

/// A TCL ensemble as a finite-state controlled Markov chain. States carry
/// rated powers; the aggregator chooses per-interval column-stochastic
/// transition matrices and pays a weighted KL penalty for deviating from the
/// default dynamics.
struct EnsembleSpec {
    int bus = 0;
    Vec p_state;            // kW per state
    Vec q_state;            // kvar per state
    Mat default_transitions;  // [to][from], column-stochastic
    Mat gamma;              // $ penalty weight per (to, from)
    Vec rho_init;
    int horizon = 0;

    int n_states() const { return static_cast<int>(p_state.size()); }
};

/// Per-interval, per-state accumulated price values; U[0] is the base row.
struct StateUtilities {
    Mat values;  // (horizon + 1) x n_states
};

struct EnsemblePolicy {
    std::vector<Mat> transitions;  // horizon matrices, column-stochastic
    Mat rho;                       // horizon x n_states, rho.row(t) after transition t
    double objective_value = 0.0;
};

/// Uniform grid of rated powers over [lo_frac, hi_frac] of the average load.
/// q states follow from the power factor.
void discretize_states(double avg_load_kw, int n_states, double lo_frac,
                       double hi_frac, double power_factor, Vec& p_state,
                       Vec& q_state);

/// Build an EnsembleSpec from a case-file TCL entry.
EnsembleSpec make_ensemble_spec(const TclSite& site, int horizon);

/// Penalty matrix for the named mode: "uniform" (all 1$) or "nonuniform"
/// (1$ for staying or moving to a ring-adjacent state, 10$ otherwise).
Mat gamma_for_mode(const std::string& mode, int n_states);

/// Cumulative price utilities: U[t+1][a] = U[t][a] + lp[t] p_a + lq[t] q_a,
/// U[0] = 0.
StateUtilities utilities_from_prices(const EnsembleSpec& spec, const Vec& lambda_p,
                                     const Vec& lambda_q);

/// Exact dynamic-programming minimizer of the ensemble objective for the given
/// utilities: backward pass over Bellman values (closed form when the penalty
/// column is constant, safeguarded bisection otherwise), then a forward pass
/// from rho_init.
EnsemblePolicy backward_forward_solve(const EnsembleSpec& spec,
                                      const StateUtilities& utilities);

/// rho sequence under fixed transitions; rho.row(0) = transitions[0] * rho_init.
Mat forward_propagate(const std::vector<Mat>& transitions, const Vec& rho_init);

/// Expected injections p_t = sum_a p_a rho[t][a] (and q analog), one row per
/// interval.
void expected_injections(const EnsemblePolicy& policy, const EnsembleSpec& spec,
                         Vec& p_out, Vec& q_out);

/// Realized objective: sum_t sum_b rho_src[t][b] sum_a P[t](a,b) *
/// (-U[t+1][a] + gamma(a,b) log(P / Pbar)), with 0 log 0 = 0.
double ensemble_objective(const EnsemblePolicy& policy, const EnsembleSpec& spec,
                          const StateUtilities& utilities);

}  // namespace distflex
