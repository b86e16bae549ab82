#include "distflex/ccopf.hpp"

#include <cmath>
#include <limits>

#include "distflex/mdp.hpp"

namespace distflex {

namespace {
constexpr double kObjScale = 1e-3;  // objective assembled in k$/h
}

UncertaintyModel UncertaintyModel::from_network(const Network& net,
                                                double sigma_frac_override) {
    UncertaintyModel m;
    m.sigma = Mat::Zero(net.horizon(), net.n_buses());
    m.k_factor = net.k_factor();
    for (const auto& site : net.pv_sites()) {
        const int b = net.bus_index(site.bus);
        const double frac =
            sigma_frac_override >= 0 ? sigma_frac_override : site.sigma_frac;
        for (int t = 0; t < net.horizon(); ++t)
            m.sigma(t, b) = frac * site.forecast_p[t];
    }
    return m;
}

std::pair<double, double> aggregate_error_std(const UncertaintyModel& model, int t) {
    if (!model.independent)
        throw ValidationError("aggregate_error_std requires independent errors");
    const double var = model.sigma.row(t).squaredNorm();
    const double sp = std::sqrt(var);
    return {sp, model.k_factor * sp};
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("normal_quantile: p in (0,1)");
    auto phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (phi(mid) < p)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-13) break;
    }
    return 0.5 * (lo + hi);
}

Mat flow_deviation_coeffs(const Network& net, const Vec& alpha_by_bus) {
    const Mat& A = net.path_incidence();
    // coeff(l, j) = a_lj - sum_k a_lk alpha_k
    Vec routed = A * alpha_by_bus;  // per line
    Mat C = A;
    C.colwise() -= routed;
    return C;
}

Mat voltage_deviation_coeffs(const Network& net, const Vec& alpha_by_bus,
                             double k_factor) {
    const Mat& A = net.path_incidence();
    Mat C = flow_deviation_coeffs(net, alpha_by_bus);
    Vec rk(net.n_lines());
    for (int l = 0; l < net.n_lines(); ++l)
        rk[l] = net.lines()[l].r + k_factor * net.lines()[l].x;
    // dev_b = -2 sum_l a_lb (R_l + K X_l) C(l, :)
    return -2.0 * (A.transpose() * rk.asDiagonal() * C);
}

bool ConeConstraint::feasible(const Vec& x, double tol) const {
    const double v = mu.dot(x);
    if (upper) return v + margin() <= bound + tol;
    return v - margin() >= bound - tol;
}

ConeConstraint soc_reformulate(const Vec& mu, const Vec& std_coeffs, double eta,
                               double bound, bool upper) {
    if (!(eta > 0.0 && eta < 0.5))
        throw ValidationError("chance tolerance must lie in (0, 0.5)");
    ConeConstraint c;
    c.mu = mu;
    c.scaled_coeffs = std_coeffs;
    c.quantile = normal_quantile(1.0 - eta);
    c.bound = bound;
    c.upper = upper;
    return c;
}

TclBounds default_tcl_bounds(const Network& net) {
    TclBounds b;
    const int nt = static_cast<int>(net.tcl_sites().size());
    b.p_lo.resize(nt);
    b.p_hi.resize(nt);
    b.q_lo.resize(nt);
    b.q_hi.resize(nt);
    for (int i = 0; i < nt; ++i) {
        const auto& site = net.tcl_sites()[i];
        Vec p, q;
        discretize_states(site.avg_load_kw, site.n_states, site.range_lo_frac,
                          site.range_hi_frac, site.power_factor, p, q);
        b.p_lo[i] = p.minCoeff();
        b.p_hi[i] = p.maxCoeff();
        b.q_lo[i] = q.minCoeff();
        b.q_hi[i] = q.maxCoeff();
    }
    return b;
}

namespace {

struct Builder {
    std::vector<Triplet> trips;
    std::vector<double> rhs;
    int add_row(double b) {
        rhs.push_back(b);
        return static_cast<int>(rhs.size()) - 1;
    }
    void set(int row, int col, double v) {
        if (v != 0.0) trips.emplace_back(row, col, v);
    }
};

Vec alpha_proportional(const Network& net) {
    const int ng = static_cast<int>(net.generators().size());
    Vec alpha = Vec::Zero(ng);
    if (ng == 0) return alpha;
    if (ng == 1) {
        alpha[0] = 1.0;
        return alpha;
    }
    double total = 0;
    for (int g = 0; g < ng; ++g) {
        const auto& gen = net.generators()[g];
        alpha[g] = std::max(gen.p_max - gen.p_min, 0.0);
        total += alpha[g];
    }
    if (total <= 0) return Vec::Constant(ng, 1.0 / ng);
    return alpha / total;
}

}  // namespace

CcopfProblem build_ccopf(const Network& net, const UncertaintyModel& model, int t,
                         const Vec& lambda_p, const Vec& lambda_q,
                         const TclBounds& bounds_in, const CcopfConfig& config) {
    if (t < 0 || t >= net.horizon()) throw ValidationError("interval out of range");
    if (!(config.eta_g > 0 && config.eta_g < 0.5 && config.eta_v > 0 &&
          config.eta_v < 0.5))
        throw ValidationError("chance tolerances must lie in (0, 0.5)");

    const int N = net.n_buses();
    const int E = net.n_lines();
    const int ng = static_cast<int>(net.generators().size());
    const int nt = static_cast<int>(net.tcl_sites().size());
    const double S = net.base_kva();
    const double v0 = net.v0_sq();

    TclBounds bounds = bounds_in;
    if (bounds.p_lo.size() == 0) bounds = default_tcl_bounds(net);
    if (static_cast<int>(bounds.p_lo.size()) != nt)
        throw ValidationError("tcl bounds size mismatch");
    for (int i = 0; i < nt; ++i)
        if (bounds.p_lo[i] > bounds.p_hi[i] + 1e-12 ||
            bounds.q_lo[i] > bounds.q_hi[i] + 1e-12)
            throw ValidationError("infeasible tcl bounds (lower > upper)");
    if (lambda_p.size() != nt || lambda_q.size() != nt)
        throw ValidationError("lambda size mismatch");

    Vec sigma_pu = model.sigma.row(t).transpose() / S;
    const double sigma_agg_pu = sigma_pu.norm();
    const bool optimize_alpha = config.alpha_mode == "optimize" && ng > 1;
    if (config.alpha_mode != "fixed" && config.alpha_mode != "optimize")
        throw ValidationError("unknown alpha_mode " + config.alpha_mode);
    if (config.objective_mode != "exact" && config.objective_mode != "paper")
        throw ValidationError("unknown objective_mode " + config.objective_mode);
    if (ng == 0 && sigma_agg_pu > 0)
        throw ValidationError(
            "case has forecast uncertainty but no generator to hold participation");

    const double zv = normal_quantile(1.0 - config.eta_v);
    const double zg = normal_quantile(1.0 - config.eta_g);

    // root slack unless a declared generator sits at the root
    bool root_slack = true;
    for (const auto& g : net.generators())
        if (g.bus == net.root_bus()) root_slack = false;

    CcopfVarMap map;
    map.n_bus = N;
    map.n_line = E;
    map.n_gen = ng;
    map.n_tcl = nt;
    map.obj_scale = kObjScale;

    int pos = 0;
    map.u0 = pos; pos += N;
    map.fp0 = pos; pos += E;
    map.fq0 = pos; pos += E;
    map.root_p = pos; pos += 1;
    map.root_q = pos; pos += 1;
    map.gen_p0 = pos; pos += ng;
    map.gen_q0 = pos; pos += ng;
    map.tcl_p0 = pos; pos += nt;
    map.tcl_q0 = pos; pos += nt;
    const int n_free = pos;

    Vec alpha_fixed = alpha_proportional(net);
    map.alpha_fixed = alpha_fixed;

    // nonneg block: alpha (when optimized), then one slack per one-sided bound:
    // 2 voltage bounds per non-root bus, 4 generator bounds, 4 tcl bounds.
    const int n_slack = 2 * (N - 1) + 4 * ng + 4 * nt;
    const int n_nonneg = (optimize_alpha ? ng : 0) + n_slack;
    const int alpha0 = optimize_alpha ? n_free : -1;
    if (optimize_alpha) map.alpha0 = alpha0;
    int next_slack = n_free + (optimize_alpha ? ng : 0);

    Builder bl;

    // expanded per-bus alpha for deviation coefficients (fixed mode)
    Vec alpha_bus = Vec::Zero(N);
    for (int g = 0; g < ng; ++g)
        alpha_bus[net.bus_index(net.generators()[g].bus)] = alpha_fixed[g];

    // --- nodal balances (p then q per bus)
    for (int b = 0; b < N; ++b) {
        const Bus& bus = net.buses()[b];
        double pv_p = 0;
        for (const auto& s : net.pv_sites())
            if (net.bus_index(s.bus) == b) pv_p += s.forecast_p[t];
        const double inj_p = (-bus.load_p[t] + pv_p) / S;
        const double inj_q = (-bus.load_q[t] + model.k_factor * pv_p) / S;

        const int rp = bl.add_row(-inj_p);
        const int rq = bl.add_row(-inj_q);
        for (int l = 0; l < E; ++l) {
            const int from = net.bus_index(net.lines()[l].from_bus);
            const int to = net.bus_index(net.lines()[l].to_bus);
            if (to == b) {
                bl.set(rp, map.fp0 + l, 1.0);
                bl.set(rq, map.fq0 + l, 1.0);
            }
            if (from == b) {
                bl.set(rp, map.fp0 + l, -1.0);
                bl.set(rq, map.fq0 + l, -1.0);
            }
        }
        if (root_slack && bus.id == net.root_bus()) {
            bl.set(rp, map.root_p, 1.0);
            bl.set(rq, map.root_q, 1.0);
        }
        for (int g = 0; g < ng; ++g)
            if (net.bus_index(net.generators()[g].bus) == b) {
                bl.set(rp, map.gen_p0 + g, 1.0);
                bl.set(rq, map.gen_q0 + g, 1.0);
            }
        for (int i = 0; i < nt; ++i)
            if (net.bus_index(net.tcl_sites()[i].bus) == b) {
                bl.set(rp, map.tcl_p0 + i, -1.0);
                bl.set(rq, map.tcl_q0 + i, -1.0);
            }
    }

    // --- voltage recursion and root pin
    for (int l = 0; l < E; ++l) {
        const int from = net.bus_index(net.lines()[l].from_bus);
        const int to = net.bus_index(net.lines()[l].to_bus);
        const int r = bl.add_row(0.0);
        bl.set(r, map.u0 + to, 1.0);
        bl.set(r, map.u0 + from, -1.0);
        bl.set(r, map.fp0 + l, 2.0 * net.lines()[l].r);
        bl.set(r, map.fq0 + l, 2.0 * net.lines()[l].x);
    }
    {
        const int r = bl.add_row(v0);
        bl.set(r, map.u0 + net.bus_index(net.root_bus()), 1.0);
    }

    // --- alpha simplex
    if (optimize_alpha) {
        const int r = bl.add_row(1.0);
        for (int g = 0; g < ng; ++g) bl.set(r, alpha0 + g, 1.0);
    }

    auto add_slack = [&](int row, double coef) { bl.set(row, next_slack++, coef); };

    // --- voltage chance bounds (skip the pinned root)
    Mat vdev = voltage_deviation_coeffs(net, alpha_bus, model.k_factor);
    // per-bus std of u deviation under fixed alpha
    Vec vstd(N);
    for (int b = 0; b < N; ++b)
        vstd[b] = (vdev.row(b).transpose().cwiseProduct(sigma_pu)).norm();

    // SOC std variables for optimize mode: t_b >= || per-source coeffs(alpha) ||
    std::vector<int> pv_cols;
    for (int j = 0; j < N; ++j)
        if (sigma_pu[j] > 0) pv_cols.push_back(j);
    const int npv = static_cast<int>(pv_cols.size());
    const bool voltage_soc = optimize_alpha && npv > 0;

    const int root_idx = net.bus_index(net.root_bus());
    for (int b = 0; b < N; ++b) {
        if (b == root_idx) continue;
        const Bus& bus = net.buses()[b];
        if (!voltage_soc) {
            // u_b - s = lo + zv * vstd ; u_b + s = hi - zv * vstd
            const int rlo = bl.add_row(bus.v_min_sq + zv * vstd[b]);
            bl.set(rlo, map.u0 + b, 1.0);
            add_slack(rlo, -1.0);
            const int rhi = bl.add_row(bus.v_max_sq - zv * vstd[b]);
            bl.set(rhi, map.u0 + b, 1.0);
            add_slack(rhi, 1.0);
        }
    }

    // --- generator chance bounds (alpha >= 0 keeps them linear)
    const double sp_agg = sigma_agg_pu;
    const double sq_agg = model.k_factor * sigma_agg_pu;
    for (int g = 0; g < ng; ++g) {
        const auto& gen = net.generators()[g];
        const double pmin = gen.p_min / S, pmax = gen.p_max / S;
        const double qmin = gen.q_min / S, qmax = gen.q_max / S;
        if (optimize_alpha) {
            int r = bl.add_row(pmax);
            bl.set(r, map.gen_p0 + g, 1.0);
            bl.set(r, alpha0 + g, zg * sp_agg);
            add_slack(r, 1.0);
            r = bl.add_row(pmin);
            bl.set(r, map.gen_p0 + g, 1.0);
            bl.set(r, alpha0 + g, -zg * sp_agg);
            add_slack(r, -1.0);
            r = bl.add_row(qmax);
            bl.set(r, map.gen_q0 + g, 1.0);
            bl.set(r, alpha0 + g, zg * sq_agg);
            add_slack(r, 1.0);
            r = bl.add_row(qmin);
            bl.set(r, map.gen_q0 + g, 1.0);
            bl.set(r, alpha0 + g, -zg * sq_agg);
            add_slack(r, -1.0);
        } else {
            const double mp = zg * alpha_fixed[g] * sp_agg;
            const double mq = zg * alpha_fixed[g] * sq_agg;
            int r = bl.add_row(pmax - mp);
            bl.set(r, map.gen_p0 + g, 1.0);
            add_slack(r, 1.0);
            r = bl.add_row(pmin + mp);
            bl.set(r, map.gen_p0 + g, 1.0);
            add_slack(r, -1.0);
            r = bl.add_row(qmax - mq);
            bl.set(r, map.gen_q0 + g, 1.0);
            add_slack(r, 1.0);
            r = bl.add_row(qmin + mq);
            bl.set(r, map.gen_q0 + g, 1.0);
            add_slack(r, -1.0);
        }
    }

    // --- tcl injection bounds
    for (int i = 0; i < nt; ++i) {
        int r = bl.add_row(bounds.p_hi[i] / S);
        bl.set(r, map.tcl_p0 + i, 1.0);
        add_slack(r, 1.0);
        r = bl.add_row(bounds.p_lo[i] / S);
        bl.set(r, map.tcl_p0 + i, 1.0);
        add_slack(r, -1.0);
        r = bl.add_row(bounds.q_hi[i] / S);
        bl.set(r, map.tcl_q0 + i, 1.0);
        add_slack(r, 1.0);
        r = bl.add_row(bounds.q_lo[i] / S);
        bl.set(r, map.tcl_q0 + i, 1.0);
        add_slack(r, -1.0);
    }

    // cone variable positions come after free + nonneg
    int cone_pos = n_free + n_nonneg;

    // voltage SOC blocks (optimize mode)
    std::vector<int> tvar(N, -1);
    if (voltage_soc) {
        for (int b = 0; b < N; ++b) {
            if (b == root_idx) continue;
            tvar[b] = cone_pos;
            // m_bj = vdev(b, j; alpha) * sigma_j, affine in alpha:
            // vdev(b,j) = -2 sum_l a_lb (R+KX)_l (a_lj - sum_g a_l,g(bus) alpha_g)
            for (int k = 0; k < npv; ++k) {
                const int j = pv_cols[k];
                const int r = bl.add_row(0.0);
                bl.set(r, cone_pos + 1 + k, 1.0);
                // constant part: -2 (A' diag(R+KX) A)(b, j) sigma_j
                double w0 = 0;
                for (int l = 0; l < E; ++l)
                    w0 += net.path_incidence()(l, b) *
                          (net.lines()[l].r + model.k_factor * net.lines()[l].x) *
                          net.path_incidence()(l, j);
                // alpha part: +2 sum_g alpha_g (A' diag(R+KX) A)(b, bus(g)) sigma_j
                bl.rhs[r] = 0.0;
                // move constants to rhs: m + 0 = -2 w0 sigma + 2 sum_g H alpha sigma
                // -> m - 2 sigma sum_g H_g alpha_g = -2 w0 sigma
                for (int g = 0; g < ng; ++g) {
                    double hg = 0;
                    const int gb = net.bus_index(net.generators()[g].bus);
                    for (int l = 0; l < E; ++l)
                        hg += net.path_incidence()(l, b) *
                              (net.lines()[l].r + model.k_factor * net.lines()[l].x) *
                              net.path_incidence()(l, gb);
                    bl.set(r, alpha0 + g, -2.0 * sigma_pu[j] * hg);
                }
                bl.rhs[r] = -2.0 * w0 * sigma_pu[j];
            }
            // u_b - zv t_b >= lo ; u_b + zv t_b <= hi
            const Bus& bus = net.buses()[b];
            int r = bl.add_row(bus.v_min_sq);
            bl.set(r, map.u0 + b, 1.0);
            bl.set(r, tvar[b], -zv);
            add_slack(r, -1.0);
            r = bl.add_row(bus.v_max_sq);
            bl.set(r, map.u0 + b, 1.0);
            bl.set(r, tvar[b], zv);
            add_slack(r, 1.0);
            cone_pos += 1 + npv;
        }
    }

    // loss epigraph rotated cones: (r_l, h_l, g1_l, g2_l)
    map.loss_r0 = cone_pos;
    std::vector<int> rvar(E), var_v(E, -1);
    for (int l = 0; l < E; ++l) {
        rvar[l] = cone_pos;
        const int h = cone_pos + 1;
        const int g1 = cone_pos + 2;
        const int g2 = cone_pos + 3;
        int r = bl.add_row(0.5);
        bl.set(r, h, 1.0);
        r = bl.add_row(0.0);
        bl.set(r, g1, 1.0);
        bl.set(r, map.fp0 + l, -1.0);
        r = bl.add_row(0.0);
        bl.set(r, g2, 1.0);
        bl.set(r, map.fq0 + l, -1.0);
        cone_pos += 4;
    }

    // exact-mode variance epigraphs when alpha is optimized
    const bool var_soc = optimize_alpha && config.objective_mode == "exact" && npv > 0;
    if (var_soc) {
        Mat A = net.path_incidence();
        for (int l = 0; l < E; ++l) {
            var_v[l] = cone_pos;
            const int h = cone_pos + 1;
            int r = bl.add_row(0.5);
            bl.set(r, h, 1.0);
            for (int k = 0; k < npv; ++k) {
                const int j = pv_cols[k];
                r = bl.add_row(A(l, j) * sigma_pu[j]);
                bl.set(r, cone_pos + 2 + k, 1.0);
                for (int g = 0; g < ng; ++g) {
                    const int gb = net.bus_index(net.generators()[g].bus);
                    bl.set(r, alpha0 + g, A(l, gb) * sigma_pu[j]);
                }
            }
            cone_pos += 2 + npv;
        }
    }

    const int n_total = cone_pos;
    if (next_slack != n_free + n_nonneg)
        throw NumericalError("internal slack bookkeeping mismatch");

    // --- objective
    StandardConicProgram prog;
    prog.c = Vec::Zero(n_total);
    const double loss_coef = config.lambda_tariff * S / (v0);  // $/h per pu^2 via r_l
    double offset = 0.0;
    const double kq = 1.0 + model.k_factor * model.k_factor;
    for (int l = 0; l < E; ++l) {
        const double rl = net.lines()[l].r;
        prog.c[rvar[l]] += kObjScale * loss_coef * rl;
        if (config.objective_mode == "exact") {
            if (var_soc) {
                prog.c[var_v[l]] += kObjScale * loss_coef * rl * kq;
            } else {
                // constant variance at fixed alpha
                double var = 0;
                for (int k = 0; k < npv; ++k) {
                    const int j = pv_cols[k];
                    const double c =
                        net.path_incidence()(l, j) -
                        net.path_incidence().row(l).dot(alpha_bus);
                    var += sigma_pu[j] * sigma_pu[j] * c * c;
                }
                offset += loss_coef * rl * kq * var;
            }
        } else {
            // printed per-line variance sum; the concave -alpha^2 credit is kept
            // only when alpha is a constant
            double var = 0;
            for (int k = 0; k < npv; ++k) {
                const int j = pv_cols[k];
                var += net.path_incidence()(l, j) * sigma_pu[j] * sigma_pu[j] * kq;
            }
            if (!optimize_alpha) {
                const double s2 = sp_agg * sp_agg + sq_agg * sq_agg;
                for (int g = 0; g < ng; ++g) {
                    const int gb = net.bus_index(net.generators()[g].bus);
                    var -= net.path_incidence()(l, gb) * alpha_fixed[g] *
                           alpha_fixed[g] * s2;
                }
            }
            offset += loss_coef * rl * var;
        }
    }
    for (int i = 0; i < nt; ++i) {
        prog.c[map.tcl_p0 + i] -= kObjScale * lambda_p[i] * S;
        prog.c[map.tcl_q0 + i] -= kObjScale * lambda_q[i] * S;
    }
    map.objective_offset = offset;

    prog.b = Eigen::Map<Vec>(bl.rhs.data(), static_cast<long>(bl.rhs.size()));
    prog.A = SpMat(static_cast<int>(bl.rhs.size()), n_total);
    prog.A.setFromTriplets(bl.trips.begin(), bl.trips.end());

    prog.cones.push_back({ConeBlock::Type::Free, n_free});
    if (n_nonneg > 0) prog.cones.push_back({ConeBlock::Type::NonNeg, n_nonneg});
    if (voltage_soc)
        for (int b = 0; b < N; ++b)
            if (b != root_idx) prog.cones.push_back({ConeBlock::Type::Soc, 1 + npv});
    for (int l = 0; l < E; ++l) {
        prog.cones.push_back({ConeBlock::Type::Rsoc, 4});
        (void)l;
    }
    if (var_soc)
        for (int l = 0; l < E; ++l) prog.cones.push_back({ConeBlock::Type::Rsoc, 2 + npv});

    // cone blocks were appended in layout order; re-sort to match variable order:
    // free, nonneg, voltage socs, loss rsocs, variance rsocs -- already in order.
    prog.validate();
    return {std::move(prog), std::move(map)};
}

CcopfResult solve_ccopf(const Network& net, const UncertaintyModel& model, int t,
                        const CcopfProblem& problem, const CcopfConfig& config) {
    const auto& map = problem.map;
    ConicSolution sol = solve(problem.program, config.solver);

    CcopfResult res;
    res.status = sol.status;
    res.iterations = sol.iterations;
    if (sol.status == SolveStatus::Infeasible || sol.status == SolveStatus::Unbounded)
        return res;

    const double S = net.base_kva();
    DispatchSetpoints sp;
    sp.u = sol.x.segment(map.u0, map.n_bus);
    sp.fp = sol.x.segment(map.fp0, map.n_line) * S;
    sp.fq = sol.x.segment(map.fq0, map.n_line) * S;
    sp.root_p = sol.x[map.root_p] * S;
    sp.root_q = sol.x[map.root_q] * S;
    sp.gen_p = sol.x.segment(map.gen_p0, map.n_gen) * S;
    sp.gen_q = sol.x.segment(map.gen_q0, map.n_gen) * S;
    sp.tcl_p = sol.x.segment(map.tcl_p0, map.n_tcl) * S;
    sp.tcl_q = sol.x.segment(map.tcl_q0, map.n_tcl) * S;
    sp.alpha = map.alpha0 >= 0 ? Vec(sol.x.segment(map.alpha0, map.n_gen))
                               : map.alpha_fixed;
    res.setpoints = sp;

    // marginal value of the priced injections: duals of the nodal balances at
    // the TCL buses (rows 2b / 2b+1 by construction), unscaled to $/kW
    res.dual_tcl_p.resize(map.n_tcl);
    res.dual_tcl_q.resize(map.n_tcl);
    for (int i = 0; i < map.n_tcl; ++i) {
        const int b = net.bus_index(net.tcl_sites()[i].bus);
        res.dual_tcl_p[i] = sol.y[2 * b] / (map.obj_scale * S);
        res.dual_tcl_q[i] = sol.y[2 * b + 1] / (map.obj_scale * S);
    }

    res.det_loss_kw = 0;
    for (int l = 0; l < map.n_line; ++l)
        res.det_loss_kw += net.lines()[l].r *
                           (sp.fp[l] * sp.fp[l] + sp.fq[l] * sp.fq[l]) /
                           (net.v0_sq() * S);
    res.expected_loss_kw = expected_loss(sp, net, model, t, config.objective_mode);
    res.objective = sol.objective / map.obj_scale + map.objective_offset;

    // recompute nodal balance residuals in p.u.
    double max_res = 0;
    for (int b = 0; b < map.n_bus; ++b) {
        const Bus& bus = net.buses()[b];
        double pv_p = 0;
        for (const auto& s : net.pv_sites())
            if (net.bus_index(s.bus) == b) pv_p += s.forecast_p[t];
        double bal_p = (-bus.load_p[t] + pv_p) / S;
        double bal_q = (-bus.load_q[t] + model.k_factor * pv_p) / S;
        for (int l = 0; l < map.n_line; ++l) {
            const int from = net.bus_index(net.lines()[l].from_bus);
            const int to = net.bus_index(net.lines()[l].to_bus);
            if (to == b) {
                bal_p += sp.fp[l] / S;
                bal_q += sp.fq[l] / S;
            }
            if (from == b) {
                bal_p -= sp.fp[l] / S;
                bal_q -= sp.fq[l] / S;
            }
        }
        bool root_slack = true;
        for (const auto& g : net.generators())
            if (g.bus == net.root_bus()) root_slack = false;
        if (root_slack && bus.id == net.root_bus()) {
            bal_p += sp.root_p / S;
            bal_q += sp.root_q / S;
        }
        for (int g = 0; g < map.n_gen; ++g)
            if (net.bus_index(net.generators()[g].bus) == b) {
                bal_p += sp.gen_p[g] / S;
                bal_q += sp.gen_q[g] / S;
            }
        for (int i = 0; i < map.n_tcl; ++i)
            if (net.bus_index(net.tcl_sites()[i].bus) == b) {
                bal_p -= sp.tcl_p[i] / S;
                bal_q -= sp.tcl_q[i] / S;
            }
        max_res = std::max({max_res, std::abs(bal_p), std::abs(bal_q)});
    }
    res.max_balance_residual = max_res;
    return res;
}

double expected_loss(const DispatchSetpoints& sp, const Network& net,
                     const UncertaintyModel& model, int t, const std::string& mode) {
    const double S = net.base_kva();
    const double v0 = net.v0_sq();
    const int E = net.n_lines();
    const int N = net.n_buses();
    double det = 0;
    for (int l = 0; l < E; ++l)
        det += net.lines()[l].r * (sp.fp[l] * sp.fp[l] + sp.fq[l] * sp.fq[l]) /
               (v0 * S);

    Vec sigma_pu = model.sigma.row(t).transpose() / S;
    Vec alpha_bus = Vec::Zero(N);
    for (int g = 0; g < static_cast<int>(net.generators().size()); ++g)
        alpha_bus[net.bus_index(net.generators()[g].bus)] =
            sp.alpha.size() > g ? sp.alpha[g] : 0.0;
    const double kq = 1.0 + model.k_factor * model.k_factor;

    double var_term = 0;
    if (mode == "exact") {
        Mat C = flow_deviation_coeffs(net, alpha_bus);
        for (int l = 0; l < E; ++l) {
            double var = 0;
            for (int j = 0; j < N; ++j)
                var += sigma_pu[j] * sigma_pu[j] * C(l, j) * C(l, j);
            var_term += net.lines()[l].r * kq * var;
        }
    } else if (mode == "paper") {
        const double s2p = sigma_pu.squaredNorm();
        const double s2 = s2p + model.k_factor * model.k_factor * s2p;
        const Mat& A = net.path_incidence();
        for (int l = 0; l < E; ++l) {
            double var = 0;
            for (int j = 0; j < N; ++j) {
                var += A(l, j) * (sigma_pu[j] * sigma_pu[j] * kq -
                                  alpha_bus[j] * alpha_bus[j] * s2);
            }
            var_term += net.lines()[l].r * var;
        }
    } else {
        throw ValidationError("unknown expected-loss mode " + mode);
    }
    return det + var_term * S / v0;
}

}  // namespace distflex
