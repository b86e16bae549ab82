#include "distflex/std2.hpp"

#include <chrono>
#include <cmath>
#include <thread>

namespace distflex {

namespace {

double now_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

int resolve_workers(int requested, int jobs) {
    int w = requested > 0 ? requested
                          : static_cast<int>(std::thread::hardware_concurrency());
    if (w < 1) w = 1;
    return std::min(w, jobs);
}

// Runs fn(i) for i in [0, jobs) on a small pool; results must be written to
// pre-sized slots so scheduling cannot affect the outcome.
template <typename F>
void parallel_for(int jobs, int workers, F&& fn) {
    if (jobs <= 0) return;
    const int w = resolve_workers(workers, jobs);
    if (w <= 1) {
        for (int i = 0; i < jobs; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(w);
    for (int k = 0; k < w; ++k) {
        pool.emplace_back([&, k] {
            try {
                int i;
                while ((i = next.fetch_add(1)) < jobs) fn(i);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

EnsembleSpec spec_for_site(const Network& net, const TclSite& site,
                           const Std2Config& config) {
    TclSite s = site;
    if (!config.gamma_mode.empty()) s.gamma_mode = config.gamma_mode;
    return make_ensemble_spec(s, net.horizon());
}

CcopfConfig ccopf_config(const Std2Config& config) {
    CcopfConfig c;
    c.eta_g = config.eta_g;
    c.eta_v = config.eta_v;
    c.lambda_tariff = config.lambda_tariff;
    c.objective_mode = config.objective_mode;
    c.alpha_mode = config.alpha_mode;
    c.solver = config.solver;
    return c;
}

}  // namespace

StateUtilities coordinator_utilities(const EnsembleSpec& spec, const Vec& lambda_p,
                                     const Vec& lambda_q) {
    const int T = spec.horizon;
    if (lambda_p.size() != T || lambda_q.size() != T)
        throw ValidationError("multiplier sequences must have length horizon");
    StateUtilities u;
    u.values = Mat::Zero(T + 1, spec.n_states());
    for (int t = 0; t < T; ++t)
        u.values.row(t + 1) = -(lambda_p[t] * spec.p_state.transpose() +
                                lambda_q[t] * spec.q_state.transpose());
    return u;
}

Step1Result step1_solve_ensembles(const Network& net, const MultiplierState& mult,
                                  const Std2Config& config) {
    const int T = net.horizon();
    const int nt = static_cast<int>(net.tcl_sites().size());
    if (mult.lambda_p.rows() != T || mult.lambda_p.cols() != nt)
        throw ValidationError("multiplier state dimensioned incorrectly");
    Step1Result out;
    out.policies.resize(nt);
    out.inj_p = Mat::Zero(T, nt);
    out.inj_q = Mat::Zero(T, nt);
    Vec objectives = Vec::Zero(std::max(nt, 1));
    parallel_for(nt, config.workers, [&](int i) {
        EnsembleSpec spec = spec_for_site(net, net.tcl_sites()[i], config);
        StateUtilities u =
            coordinator_utilities(spec, mult.lambda_p.col(i), mult.lambda_q.col(i));
        EnsemblePolicy pol = backward_forward_solve(spec, u);
        Vec p, q;
        expected_injections(pol, spec, p, q);
        out.inj_p.col(i) = p;
        out.inj_q.col(i) = q;
        objectives[i] = pol.objective_value;
        out.policies[i] = std::move(pol);
    });
    out.objective_total = nt > 0 ? objectives.head(nt).sum() : 0.0;
    return out;
}

Step2Result step2_solve_network(const Network& net, const MultiplierState& mult,
                                const Std2Config& config) {
    const int T = net.horizon();
    const int nt = static_cast<int>(net.tcl_sites().size());
    Step2Result out;
    out.intervals.resize(T);
    out.inj_p = Mat::Zero(T, nt);
    out.inj_q = Mat::Zero(T, nt);
    UncertaintyModel model = UncertaintyModel::from_network(net, config.sigma_frac);
    CcopfConfig cfg = ccopf_config(config);
    TclBounds bounds = default_tcl_bounds(net);
    std::vector<std::string> failures(T);
    parallel_for(T, config.workers, [&](int t) {
        CcopfProblem prob = build_ccopf(net, model, t, mult.lambda_p.row(t).transpose(),
                                        mult.lambda_q.row(t).transpose(), bounds, cfg);
        CcopfResult res = solve_ccopf(net, model, t, prob, cfg);
        if (res.status != SolveStatus::Optimal)
            failures[t] = "interval " + std::to_string(t + 1) + ": " +
                          to_string(res.status);
        out.inj_p.row(t) = res.setpoints.tcl_p.transpose();
        out.inj_q.row(t) = res.setpoints.tcl_q.transpose();
        out.intervals[t] = std::move(res);
    });
    std::string joined;
    for (const auto& f : failures)
        if (!f.empty()) joined += (joined.empty() ? "" : "; ") + f;
    if (!joined.empty())
        throw NumericalError("step 2 subproblem failed: " + joined);
    for (const auto& r : out.intervals) out.objective_total += r.objective;
    return out;
}

MultiplierState step3_update(const MultiplierState& mult, const Mat& mdp_p,
                             const Mat& mdp_q, const Mat& opf_p, const Mat& opf_q,
                             double delta) {
    if (mdp_p.rows() != mult.lambda_p.rows() || mdp_p.cols() != mult.lambda_p.cols())
        throw ValidationError("injection matrices do not match multiplier state");
    MultiplierState next;
    next.lambda_p = mult.lambda_p + delta * (mdp_p - opf_p);
    next.lambda_q = mult.lambda_q + delta * (mdp_q - opf_q);
    next.iteration = mult.iteration + 1;
    return next;
}

std::vector<CcopfResult> evaluate_at_injections(const Network& net,
                                                const Std2Config& config,
                                                const Mat& tcl_p, const Mat& tcl_q) {
    const int T = net.horizon();
    const int nt = static_cast<int>(net.tcl_sites().size());
    UncertaintyModel model = UncertaintyModel::from_network(net, config.sigma_frac);
    CcopfConfig cfg = ccopf_config(config);
    std::vector<CcopfResult> out(T);
    parallel_for(T, config.workers, [&](int t) {
        TclBounds pinned;
        pinned.p_lo = tcl_p.row(t).transpose();
        pinned.p_hi = tcl_p.row(t).transpose();
        pinned.q_lo = tcl_q.row(t).transpose();
        pinned.q_hi = tcl_q.row(t).transpose();
        if (nt == 0) pinned = TclBounds{Vec(0), Vec(0), Vec(0), Vec(0)};
        CcopfProblem prob = build_ccopf(net, model, t, Vec::Zero(nt), Vec::Zero(nt),
                                        pinned, cfg);
        out[t] = solve_ccopf(net, model, t, prob, cfg);
    });
    return out;
}

IntegratedSolution run(const Network& net, const Std2Config& config) {
    if (config.delta <= 0 || config.zeta <= 0)
        throw ValidationError("delta and zeta must be positive");
    const int T = net.horizon();
    const int nt = static_cast<int>(net.tcl_sites().size());

    IntegratedSolution sol;
    sol.case_hash = net.structure_hash();
    MultiplierState mult;
    mult.lambda_p = Mat::Zero(T, nt);
    mult.lambda_q = Mat::Zero(T, nt);
    mult.iteration = 1;

    Step1Result s1;
    Step2Result s2;
    for (int nu = 1; nu <= config.max_iter; ++nu) {
        const double t0 = now_seconds();
        s1 = step1_solve_ensembles(net, mult, config);
        const double t1 = now_seconds();
        s2 = step2_solve_network(net, mult, config);
        const double t2 = now_seconds();

        const double delta_nu =
            config.diminishing_step ? config.delta / std::sqrt(double(nu)) : config.delta;
        MultiplierState next =
            step3_update(mult, s1.inj_p, s1.inj_q, s2.inj_p, s2.inj_q, delta_nu);

        IterationRecord rec;
        rec.nu = nu;
        rec.lambda_p = next.lambda_p;
        rec.lambda_q = next.lambda_q;
        rec.gap_p = s1.inj_p - s2.inj_p;
        rec.gap_q = s1.inj_q - s2.inj_q;
        double dmax = 0.0;
        if (nt > 0)
            dmax = std::max((next.lambda_p - mult.lambda_p).cwiseAbs().maxCoeff(),
                            (next.lambda_q - mult.lambda_q).cwiseAbs().maxCoeff());
        rec.max_abs_dlambda = dmax;
        rec.step1_seconds = t1 - t0;
        rec.step2_seconds = t2 - t1;
        rec.expected_loss.resize(T);
        for (int t = 0; t < T; ++t)
            rec.expected_loss[t] = s2.intervals[t].expected_loss_kw;
        rec.mdp_objective = s1.objective_total;
        rec.opf_objective = s2.objective_total;
        sol.trace.push_back(rec);

        mult = next;
        sol.iterations = nu;
        if (dmax <= config.zeta) {
            sol.converged = true;
            break;
        }
    }

    sol.multipliers = mult;
    sol.policies = s1.policies;
    sol.intervals = s2.intervals;
    sol.mdp_p = s1.inj_p;
    sol.mdp_q = s1.inj_q;
    sol.opf_p = s2.inj_p;
    sol.opf_q = s2.inj_q;

    // integrated objective at the MDP-side primal: pure KL discomfort plus the
    // monetized expected losses with the TCL injections pinned to the MDP values
    sol.dispatch_eval = evaluate_at_injections(net, config, sol.mdp_p, sol.mdp_q);
    double kl = 0;
    for (int i = 0; i < nt; ++i) {
        EnsembleSpec spec = spec_for_site(net, net.tcl_sites()[i], config);
        StateUtilities zero;
        zero.values = Mat::Zero(T + 1, spec.n_states());
        kl += ensemble_objective(sol.policies[i], spec, zero);
    }
    double loss_cost = 0;
    for (int t = 0; t < T; ++t)
        loss_cost += config.lambda_tariff * sol.dispatch_eval[t].expected_loss_kw;
    sol.integrated_objective = kl + loss_cost;
    return sol;
}

std::vector<ConvergenceRow> convergence_report(
    const Network& net, const std::vector<IterationRecord>& trace) {
    if (trace.empty()) throw ValidationError("empty trace");
    std::vector<ConvergenceRow> rows;
    for (const auto& rec : trace) {
        for (int t = 0; t < rec.lambda_p.rows(); ++t) {
            for (int i = 0; i < rec.lambda_p.cols(); ++i) {
                ConvergenceRow r;
                r.nu = rec.nu;
                r.t = t + 1;
                r.bus = net.tcl_sites()[i].bus;
                r.lambda_p = rec.lambda_p(t, i);
                r.lambda_q = rec.lambda_q(t, i);
                r.gap_p = rec.gap_p(t, i);
                r.gap_q = rec.gap_q(t, i);
                rows.push_back(r);
            }
        }
    }
    return rows;
}

}  // namespace distflex
