#pragma once

#include <string>
#include <vector>

#include "distflex/ccopf.hpp"
#include "distflex/common.hpp"
#include "distflex/mdp.hpp"
#include "distflex/network.hpp"

namespace distflex {

struct MultiplierState {
    Mat lambda_p;  // horizon x n_tcl, $/kW
    Mat lambda_q;
    int iteration = 0;
};

struct Std2Config {
    double delta = 0.1;
    double zeta = 1e-4;
    int max_iter = 20;
    double lambda_tariff = 10.0;
    double eta_g = 0.05;
    double eta_v = 0.05;
    std::string objective_mode = "exact";
    std::string alpha_mode = "fixed";
    std::string gamma_mode;     // empty = per-case setting
    double sigma_frac = -1.0;   // negative = per-case setting
    bool diminishing_step = false;  // delta / sqrt(iteration)
    int workers = 0;                // 0 = hardware concurrency
    SolverSettings solver = CcopfConfig().solver;
};

struct IterationRecord {
    int nu = 0;
    Mat lambda_p, lambda_q;  // state after the update
    Mat gap_p, gap_q;        // mdp - opf injections (kW)
    double max_abs_dlambda = 0.0;
    double step1_seconds = 0.0, step2_seconds = 0.0;
    Vec expected_loss;       // per interval, at the OPF dispatch
    double mdp_objective = 0.0;  // sum of step-1 optimal objectives
    double opf_objective = 0.0;  // sum of step-2 optimal objectives
};

struct IntegratedSolution {
    MultiplierState multipliers;
    std::vector<EnsemblePolicy> policies;
    std::vector<CcopfResult> intervals;       // final step-2 results per t
    std::vector<CcopfResult> dispatch_eval;   // per t, TCLs fixed at MDP injections
    Mat mdp_p, mdp_q, opf_p, opf_q;           // horizon x n_tcl, kW
    std::vector<IterationRecord> trace;
    double integrated_objective = 0.0;  // KL discomfort + tariff * loss at MDP primal
    bool converged = false;
    int iterations = 0;
    std::string case_hash;
};

/// Per-interval price utilities for the ensemble subproblem: the dualized
/// coupling charges each ensemble lambda_t per kW consumed during interval t,
/// so U[t+1][a] = -(lambda_p[t] p_a + lambda_q[t] q_a).
StateUtilities coordinator_utilities(const EnsembleSpec& spec, const Vec& lambda_p,
                                     const Vec& lambda_q);

struct Step1Result {
    std::vector<EnsemblePolicy> policies;
    Mat inj_p, inj_q;  // horizon x n_tcl, kW
    double objective_total = 0.0;
};

Step1Result step1_solve_ensembles(const Network& net, const MultiplierState& mult,
                                  const Std2Config& config);

struct Step2Result {
    std::vector<CcopfResult> intervals;
    Mat inj_p, inj_q;  // horizon x n_tcl, kW
    double objective_total = 0.0;
};

Step2Result step2_solve_network(const Network& net, const MultiplierState& mult,
                                const Std2Config& config);

MultiplierState step3_update(const MultiplierState& mult, const Mat& mdp_p,
                             const Mat& mdp_q, const Mat& opf_p, const Mat& opf_q,
                             double delta);

IntegratedSolution run(const Network& net, const Std2Config& config);

/// Per-interval CC-OPF evaluations with the TCL injections pinned to given
/// values (used for the integrated objective and no-dispatch baselines).
std::vector<CcopfResult> evaluate_at_injections(const Network& net,
                                                const Std2Config& config,
                                                const Mat& tcl_p, const Mat& tcl_q);

struct ConvergenceRow {
    int nu = 0;
    int t = 0;    // 1-based interval
    int bus = 0;
    double lambda_p = 0.0, lambda_q = 0.0;
    double gap_p = 0.0, gap_q = 0.0;
};

std::vector<ConvergenceRow> convergence_report(const Network& net,
                                               const std::vector<IterationRecord>& trace);

}  // namespace distflex
