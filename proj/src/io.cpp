#include "distflex/io.hpp"

#include <fstream>
#include <iomanip>

#include <json.hpp>

namespace distflex {

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot open output file: " + path);
    f << std::setprecision(17);
    return f;
}

}  // namespace

std::string RunManifest::to_json() const {
    nlohmann::json j;
    j["case_path"] = case_path;
    j["out_dir"] = out_dir;
    j["seed"] = seed;
    j["samples"] = samples;
    j["version"] = "distflex 0.1.0";
    nlohmann::json c;
    c["delta"] = config.delta;
    c["zeta"] = config.zeta;
    c["max_iter"] = config.max_iter;
    c["lambda_tariff"] = config.lambda_tariff;
    c["eta_g"] = config.eta_g;
    c["eta_v"] = config.eta_v;
    c["objective_mode"] = config.objective_mode;
    c["alpha_mode"] = config.alpha_mode;
    c["gamma_mode"] = config.gamma_mode.empty() ? "case" : config.gamma_mode;
    c["sigma_frac"] = config.sigma_frac;
    c["diminishing_step"] = config.diminishing_step;
    c["workers"] = config.workers;
    j["config"] = c;
    return j.dump(1);
}

void write_trace_csv(const Network& net, const std::vector<IterationRecord>& trace,
                     const std::string& path) {
    auto f = open_out(path);
    f << "iteration,t,bus,lambda_p,lambda_q,gap_p,gap_q\n";
    for (const auto& row : convergence_report(net, trace))
        f << row.nu << "," << row.t << "," << row.bus << "," << row.lambda_p << ","
          << row.lambda_q << "," << row.gap_p << "," << row.gap_q << "\n";
}

void write_bus_results_csv(const Network& net,
                           const std::vector<CcopfResult>& intervals,
                           const std::string& path) {
    auto f = open_out(path);
    f << "t,bus,u,p_g,q_g,tcl_p,tcl_q\n";
    for (size_t t = 0; t < intervals.size(); ++t) {
        const auto& sp = intervals[t].setpoints;
        for (int b = 0; b < net.n_buses(); ++b) {
            double pg = 0, qg = 0, tp = 0, tq = 0;
            for (int g = 0; g < static_cast<int>(net.generators().size()); ++g)
                if (net.bus_index(net.generators()[g].bus) == b) {
                    pg += sp.gen_p[g];
                    qg += sp.gen_q[g];
                }
            if (net.buses()[b].id == net.root_bus()) {
                pg += sp.root_p;
                qg += sp.root_q;
            }
            for (int i = 0; i < static_cast<int>(net.tcl_sites().size()); ++i)
                if (net.bus_index(net.tcl_sites()[i].bus) == b) {
                    tp += sp.tcl_p[i];
                    tq += sp.tcl_q[i];
                }
            f << (t + 1) << "," << net.buses()[b].id << "," << sp.u[b] << "," << pg
              << "," << qg << "," << tp << "," << tq << "\n";
        }
    }
}

void write_line_results_csv(const Network& net,
                            const std::vector<CcopfResult>& intervals,
                            const std::string& path) {
    auto f = open_out(path);
    f << "t,line,f_p,f_q\n";
    for (size_t t = 0; t < intervals.size(); ++t)
        for (int l = 0; l < net.n_lines(); ++l)
            f << (t + 1) << "," << net.lines()[l].id << ","
              << intervals[t].setpoints.fp[l] << "," << intervals[t].setpoints.fq[l]
              << "\n";
}

void write_interval_results_csv(const std::vector<CcopfResult>& intervals,
                                const std::string& path) {
    auto f = open_out(path);
    f << "t,expected_loss,det_loss,objective,status,iterations\n";
    for (size_t t = 0; t < intervals.size(); ++t)
        f << (t + 1) << "," << intervals[t].expected_loss_kw << ","
          << intervals[t].det_loss_kw << "," << intervals[t].objective << ","
          << to_string(intervals[t].status) << "," << intervals[t].iterations << "\n";
}

void write_policy_csvs(const Network&, const EnsembleSpec& spec,
                       const EnsemblePolicy& policy, const std::string& rho_path,
                       const std::string& transitions_path) {
    {
        auto f = open_out(rho_path);
        f << "t,alpha,rho\n";
        for (int t = 0; t < policy.rho.rows(); ++t)
            for (int a = 0; a < spec.n_states(); ++a)
                f << (t + 1) << "," << (a + 1) << "," << policy.rho(t, a) << "\n";
    }
    {
        auto f = open_out(transitions_path);
        f << "t,alpha,beta,P\n";
        for (size_t t = 0; t < policy.transitions.size(); ++t)
            for (int a = 0; a < spec.n_states(); ++a)
                for (int b = 0; b < spec.n_states(); ++b)
                    f << (t + 1) << "," << (a + 1) << "," << (b + 1) << ","
                      << policy.transitions[t](a, b) << "\n";
    }
}

void write_violation_csv(const ViolationStats& stats, double eta,
                         const std::string& path) {
    auto f = open_out(path);
    f << "eta,t,constraint_family,count,rate\n";
    for (size_t t = 0; t < stats.counts_by_t.size(); ++t)
        for (int fam = 0; fam < ViolationStats::kFamilies; ++fam)
            f << eta << "," << (t + 1) << "," << ViolationStats::family_name(fam)
              << "," << stats.counts_by_t[t][fam] << "," << stats.rate(fam, int(t))
              << "\n";
}

void write_loss_stats_csv(const LossStats& stats, const std::string& path) {
    auto f = open_out(path);
    f << "t,mean_loss,std_loss\n";
    for (int t = 0; t < stats.mean.size(); ++t)
        f << (t + 1) << "," << stats.mean[t] << "," << stats.stddev[t] << "\n";
}

void write_summary_json(const RunManifest& manifest, const IntegratedSolution& sol,
                        const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(manifest.to_json());
    j["converged"] = sol.converged;
    j["iterations"] = sol.iterations;
    j["integrated_objective"] = sol.integrated_objective;
    j["case_hash"] = sol.case_hash;
    double s1 = 0, s2 = 0;
    for (const auto& r : sol.trace) {
        s1 += r.step1_seconds;
        s2 += r.step2_seconds;
    }
    j["step1_seconds"] = s1;
    j["step2_seconds"] = s2;
    double total_loss = 0;
    for (const auto& r : sol.dispatch_eval) total_loss += r.expected_loss_kw;
    j["total_expected_loss_kw"] = total_loss;
    auto f = open_out(path);
    f << j.dump(1) << "\n";
}

}  // namespace distflex
