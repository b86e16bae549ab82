#pragma once

#include <string>
#include <utility>
#include <vector>

#include "distflex/common.hpp"
#include "distflex/conic.hpp"
#include "distflex/network.hpp"

namespace distflex {

/// Per-bus, per-interval Gaussian forecast-error standard deviations (kW),
/// zero away from PV buses, with proportional reactive coupling eps_q = K eps_p.
struct UncertaintyModel {
    Mat sigma;  // horizon x n_buses, kW
    double k_factor = 0.0;
    bool independent = true;

    static UncertaintyModel from_network(const Network& net,
                                         double sigma_frac_override = -1.0);
};

/// Std devs of the aggregated active/reactive errors at interval t.
std::pair<double, double> aggregate_error_std(const UncertaintyModel& model, int t);

/// Inverse standard normal CDF via bisection on an erfc-based Phi; |err| <= 1e-10.
double normal_quantile(double p);

/// E x N linear map from per-bus active-power errors (p.u.) to line active-flow
/// deviations (p.u.): coeff(l, j) = a_lj - sum_k a_lk alpha_k.
/// alpha_by_bus is the participation vector expanded over buses.
Mat flow_deviation_coeffs(const Network& net, const Vec& alpha_by_bus);

/// N x N linear map from per-bus active-power errors (p.u.) to voltage-squared
/// deviations (p.u.^2), reactive coupling included through k_factor.
Mat voltage_deviation_coeffs(const Network& net, const Vec& alpha_by_bus,
                             double k_factor);

/// Analytic deterministic form of one Gaussian chance constraint:
/// upper:  mu'x + q * ||coeffs||  <= bound,  q = Phi^{-1}(1 - eta)
/// lower:  mu'x - q * ||coeffs||  >= bound
struct ConeConstraint {
    Vec mu;
    Vec scaled_coeffs;  // per-source coefficient times source std dev
    double quantile = 0.0;
    double bound = 0.0;
    bool upper = true;

    double margin() const { return quantile * scaled_coeffs.norm(); }
    bool feasible(const Vec& x, double tol = 1e-9) const;
};

ConeConstraint soc_reformulate(const Vec& mu, const Vec& std_coeffs, double eta,
                               double bound, bool upper);

struct CcopfConfig {
    double eta_g = 0.05;
    double eta_v = 0.05;
    double lambda_tariff = 10.0;           // $/kWh
    std::string objective_mode = "exact";  // "exact" | "paper"
    std::string alpha_mode = "fixed";      // "fixed" | "optimize"
    SolverSettings solver;

    CcopfConfig() {
        solver.tol_p = 1e-9;
        solver.tol_d = 1e-9;
        solver.tol_gap = 1e-9;
    }
};

struct DispatchSetpoints {
    Vec u;               // p.u.^2 per bus
    Vec fp, fq;          // kW per line
    double root_p = 0.0, root_q = 0.0;  // kW slack injection at the root
    Vec gen_p, gen_q;    // kW per declared generator
    Vec alpha;           // participation per declared generator
    Vec tcl_p, tcl_q;    // kW per TCL site
};

struct CcopfResult {
    DispatchSetpoints setpoints;
    double expected_loss_kw = 0.0;
    double det_loss_kw = 0.0;
    double objective = 0.0;     // program objective ($/h incl. pricing term)
    Vec dual_tcl_p, dual_tcl_q;  // reduced costs of the priced injections ($/kW)
    SolveStatus status = SolveStatus::Numerics;
    int iterations = 0;
    double max_balance_residual = 0.0;  // p.u.
};

/// Index bookkeeping for recovering named quantities from the flat program.
struct CcopfVarMap {
    int n_bus = 0, n_line = 0, n_gen = 0, n_tcl = 0;
    int u0 = 0, fp0 = 0, fq0 = 0, root_p = 0, root_q = 0;
    int gen_p0 = 0, gen_q0 = 0, tcl_p0 = 0, tcl_q0 = 0;
    int alpha0 = -1;        // -1 when alpha is fixed
    int loss_r0 = 0;        // epigraph variables, one per line
    Vec alpha_fixed;        // used when alpha0 < 0
    double objective_offset = 0.0;  // constant part ($/h)
    double obj_scale = 1.0;
};

struct TclBounds {
    Vec p_lo, p_hi, q_lo, q_hi;  // kW per TCL site; empty = derive from states
};

struct CcopfProblem {
    StandardConicProgram program;
    CcopfVarMap map;
};

/// Assemble the interval-t chance-constrained dispatch program in conic
/// standard form. lambda_* are $/kW prices on the TCL injection copies.
CcopfProblem build_ccopf(const Network& net, const UncertaintyModel& model, int t,
                         const Vec& lambda_p, const Vec& lambda_q,
                         const TclBounds& bounds, const CcopfConfig& config);

/// Solve and recover named setpoints; balance residuals are recomputed and
/// must stay within 1e-6 p.u.
CcopfResult solve_ccopf(const Network& net, const UncertaintyModel& model, int t,
                        const CcopfProblem& problem, const CcopfConfig& config);

/// Expected active losses (kW) at given setpoints. "paper" mode evaluates the
/// printed per-line variance sum; "exact" mode keeps the covariance cross
/// terms of the recourse.
double expected_loss(const DispatchSetpoints& sp, const Network& net,
                     const UncertaintyModel& model, int t, const std::string& mode);

/// Convenience: TCL bounds spanning each ensemble's physical state range.
TclBounds default_tcl_bounds(const Network& net);

}  // namespace distflex
