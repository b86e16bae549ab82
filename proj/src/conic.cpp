#include "distflex/conic.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace distflex {

namespace {

constexpr double kStaticReg = 1e-9;
constexpr double kStepScale = 0.98;
const double kInf = std::numeric_limits<double>::infinity();

struct ConeLayout {
    // index ranges of the conic (non-free) coordinates in x, in cone order
    struct Block {
        ConeBlock::Type type;
        int x_start;  // position in x
        int dim;
        int s_start;  // position in s
    };
    std::vector<Block> blocks;
    int n_lin = 0;    // total nonneg coordinates
    int m = 0;        // total conic coordinates
    int degree = 0;   // barrier degree: one per nonneg coord, one per (r)soc block
};

ConeLayout make_layout(const StandardConicProgram& prog) {
    ConeLayout lay;
    int xpos = 0;
    // nonneg blocks first in s ordering? keep original block order; simpler and
    // the NT code below is block-generic.
    for (const auto& cb : prog.cones) {
        if (cb.type != ConeBlock::Type::Free) {
            lay.blocks.push_back({cb.type, xpos, cb.dim, lay.m});
            lay.m += cb.dim;
            if (cb.type == ConeBlock::Type::NonNeg) {
                lay.n_lin += cb.dim;
                lay.degree += cb.dim;
            } else {
                lay.degree += 1;
            }
        }
        xpos += cb.dim;
    }
    return lay;
}

// s = M x maps cone coordinates of x into the cone space; rsoc blocks are
// rotated into plain soc by the orthogonal map
//   (u, v, w) -> ((u+v)/sqrt2, (u-v)/sqrt2, w).
SpMat make_cone_map(const StandardConicProgram& prog, const ConeLayout& lay) {
    std::vector<Triplet> trips;
    const double r = 1.0 / std::sqrt(2.0);
    for (const auto& blk : lay.blocks) {
        if (blk.type == ConeBlock::Type::Rsoc) {
            trips.emplace_back(blk.s_start, blk.x_start, r);
            trips.emplace_back(blk.s_start, blk.x_start + 1, r);
            trips.emplace_back(blk.s_start + 1, blk.x_start, r);
            trips.emplace_back(blk.s_start + 1, blk.x_start + 1, -r);
            for (int i = 2; i < blk.dim; ++i)
                trips.emplace_back(blk.s_start + i, blk.x_start + i, 1.0);
        } else {
            for (int i = 0; i < blk.dim; ++i)
                trips.emplace_back(blk.s_start + i, blk.x_start + i, 1.0);
        }
    }
    SpMat M(lay.m, prog.n_vars());
    M.setFromTriplets(trips.begin(), trips.end());
    return M;
}

// ---- cone-space helpers (after rsoc rotation everything is nonneg or soc)

struct SBlock {
    bool soc;
    int start, dim;
};

std::vector<SBlock> s_blocks(const ConeLayout& lay) {
    std::vector<SBlock> out;
    for (const auto& blk : lay.blocks)
        out.push_back({blk.type != ConeBlock::Type::NonNeg, blk.s_start, blk.dim});
    return out;
}

void bring_to_cone(const std::vector<SBlock>& blocks, Vec& v) {
    for (const auto& b : blocks) {
        if (!b.soc) {
            double mn = v.segment(b.start, b.dim).minCoeff();
            if (mn <= 0)
                v.segment(b.start, b.dim).array() += 1.0 - mn;
        } else {
            const double head = v[b.start];
            const double tail = v.segment(b.start + 1, b.dim - 1).norm();
            if (head - tail <= 0) v[b.start] += 1.0 + (tail - head);
        }
    }
}

double cone_violation(const std::vector<SBlock>& blocks, const Vec& v) {
    double vio = 0;
    for (const auto& b : blocks) {
        if (!b.soc) {
            vio = std::max(vio, -v.segment(b.start, b.dim).minCoeff());
        } else {
            vio = std::max(vio, v.segment(b.start + 1, b.dim - 1).norm() - v[b.start]);
        }
    }
    return std::max(vio, 0.0);
}

// max alpha in (0, inf) with u + alpha d staying in the cone
double max_step(const std::vector<SBlock>& blocks, const Vec& u, const Vec& d) {
    double alpha = kInf;
    for (const auto& b : blocks) {
        if (!b.soc) {
            for (int i = 0; i < b.dim; ++i)
                if (d[b.start + i] < 0)
                    alpha = std::min(alpha, -u[b.start + i] / d[b.start + i]);
        } else {
            const double u0 = u[b.start], d0 = d[b.start];
            const auto ub = u.segment(b.start + 1, b.dim - 1);
            const auto db = d.segment(b.start + 1, b.dim - 1);
            const double a = d0 * d0 - db.squaredNorm();
            const double bb = u0 * d0 - ub.dot(db);
            const double c = u0 * u0 - ub.squaredNorm();
            // smallest positive root of a t^2 + 2 b t + c = 0, else head limit
            double root = kInf;
            const double disc = bb * bb - a * c;
            if (std::abs(a) < 1e-300) {
                if (bb < 0) root = -c / (2 * bb);
            } else if (disc >= 0) {
                const double sq = std::sqrt(disc);
                const double q = -(bb + (bb >= 0 ? sq : -sq));
                double r1 = q / a;
                double r2 = (std::abs(q) > 0) ? c / q : kInf;
                if (r1 > 1e-14 && r1 < root) root = r1;
                if (r2 > 1e-14 && r2 < root) root = r2;
            }
            if (d0 < 0) root = std::min(root, -u0 / d0);
            alpha = std::min(alpha, root);
        }
    }
    return alpha;
}

// NT scaling state for one (r)soc block
struct SocScaling {
    double eta = 1.0;
    Vec w;  // unit-hyperbolic scaling point
};

struct Scalings {
    Vec lin_w2;                 // nonneg: s_i / z_i
    std::vector<SocScaling> soc;  // per soc block, in block order
    Vec lambda;                 // scaled point, cone space
};

void apply_w(const std::vector<SBlock>& blocks, const Scalings& sc, const Vec& in,
             Vec& out, bool inverse) {
    out.resize(in.size());
    int soc_idx = 0;
    for (const auto& b : blocks) {
        if (!b.soc) {
            for (int i = 0; i < b.dim; ++i) {
                const double w = std::sqrt(sc.lin_w2[/*offset*/ b.start + i]);
                out[b.start + i] = inverse ? in[b.start + i] / w : in[b.start + i] * w;
            }
        } else {
            const auto& S = sc.soc[soc_idx++];
            const double w0 = S.w[0];
            const auto wb = S.w.segment(1, b.dim - 1);
            const double u0 = in[b.start];
            const auto ub = in.segment(b.start + 1, b.dim - 1);
            const double dot = wb.dot(ub);
            if (!inverse) {
                out[b.start] = S.eta * (w0 * u0 + dot);
                out.segment(b.start + 1, b.dim - 1) =
                    S.eta * (ub + (u0 + dot / (1.0 + w0)) * wb);
            } else {
                out[b.start] = (w0 * u0 - dot) / S.eta;
                out.segment(b.start + 1, b.dim - 1) =
                    (ub + (-u0 + dot / (1.0 + w0)) * wb) / S.eta;
            }
        }
    }
}

Scalings update_scalings(const std::vector<SBlock>& blocks, const Vec& s, const Vec& z,
                         int m) {
    Scalings sc;
    sc.lin_w2 = Vec::Zero(m);
    for (const auto& b : blocks) {
        if (!b.soc) {
            for (int i = 0; i < b.dim; ++i)
                sc.lin_w2[b.start + i] = s[b.start + i] / z[b.start + i];
        } else {
            const int d = b.dim;
            const double s0 = s[b.start], z0 = z[b.start];
            const auto sb = s.segment(b.start + 1, d - 1);
            const auto zb = z.segment(b.start + 1, d - 1);
            const double sres2 = s0 * s0 - sb.squaredNorm();
            const double zres2 = z0 * z0 - zb.squaredNorm();
            if (sres2 <= 0 || zres2 <= 0)
                throw NumericalError("interior point left the cone");
            const double sres = std::sqrt(sres2), zres = std::sqrt(zres2);
            const double gamma =
                std::sqrt((1.0 + (s0 * z0 - sb.dot(zb)) / (sres * zres)) / 2.0);
            SocScaling S;
            S.w = Vec(d);
            S.w[0] = (s0 / sres + z0 / zres) / (2.0 * gamma);
            S.w.segment(1, d - 1) = (sb / sres - zb / zres) / (2.0 * gamma);
            S.eta = std::sqrt(sres / zres);
            sc.soc.push_back(std::move(S));
        }
    }
    sc.lambda.resize(m);
    Vec tmp;
    apply_w(blocks, sc, z, tmp, false);
    sc.lambda = tmp;
    return sc;
}

// Jordan product and inverse product (division), blockwise
void jordan_mul(const std::vector<SBlock>& blocks, const Vec& u, const Vec& v,
                Vec& out) {
    out.resize(u.size());
    for (const auto& b : blocks) {
        if (!b.soc) {
            out.segment(b.start, b.dim) =
                u.segment(b.start, b.dim).cwiseProduct(v.segment(b.start, b.dim));
        } else {
            const auto ub = u.segment(b.start + 1, b.dim - 1);
            const auto vb = v.segment(b.start + 1, b.dim - 1);
            out[b.start] = u.segment(b.start, b.dim).dot(v.segment(b.start, b.dim));
            out.segment(b.start + 1, b.dim - 1) = u[b.start] * vb + v[b.start] * ub;
        }
    }
}

void jordan_div(const std::vector<SBlock>& blocks, const Vec& u, const Vec& v,
                Vec& out) {
    // solves u o x = v blockwise
    out.resize(u.size());
    for (const auto& b : blocks) {
        if (!b.soc) {
            out.segment(b.start, b.dim) =
                v.segment(b.start, b.dim).cwiseQuotient(u.segment(b.start, b.dim));
        } else {
            const double u0 = u[b.start], v0 = v[b.start];
            const auto ub = u.segment(b.start + 1, b.dim - 1);
            const auto vb = v.segment(b.start + 1, b.dim - 1);
            const double det = u0 * u0 - ub.squaredNorm();
            const double x0 = (u0 * v0 - ub.dot(vb)) / det;
            out[b.start] = x0;
            out.segment(b.start + 1, b.dim - 1) = (vb - x0 * ub) / u0;
        }
    }
}

void add_identity_minus(std::vector<Triplet>& trips, int off,
                        const std::vector<SBlock>& blocks, const Scalings& sc) {
    // appends -W^2 (cone metric) at diagonal offset `off`
    int soc_idx = 0;
    for (const auto& b : blocks) {
        if (!b.soc) {
            for (int i = 0; i < b.dim; ++i)
                trips.emplace_back(off + b.start + i, off + b.start + i,
                                   -sc.lin_w2[b.start + i]);
        } else {
            const auto& S = sc.soc[soc_idx++];
            const int d = b.dim;
            const double e2 = S.eta * S.eta;
            // W^2 = eta^2 (2 w w' - J)
            for (int i = 0; i < d; ++i) {
                for (int j = 0; j < d; ++j) {
                    double v = 2.0 * S.w[i] * S.w[j];
                    if (i == j) v -= (i == 0 ? 1.0 : -1.0);
                    if (v != 0.0)
                        trips.emplace_back(off + b.start + i, off + b.start + j,
                                           -e2 * v);
                }
            }
        }
    }
}

struct PresolveInfo {
    std::vector<int> kept_rows;          // reduced row -> original row
    std::vector<std::pair<int, double>> fixed;  // (var, value)
    std::vector<int> fixing_row;         // original row used to fix var i (aligned)
    Vec x_fixed;                         // full-size template with fixed values
    bool infeasible = false;
    int infeasible_row = -1;
    double infeasible_rhs = 0.0;
};

// Assigns multipliers to the rows that presolve used for variable fixing so
// that the given dual-side vector (c for optimal y, zero for Farkas
// certificates) is matched exactly on the fixed columns. Processes fixings in
// reverse so cascaded substitutions resolve.
void complete_fixed_row_duals(const StandardConicProgram& prog,
                              const PresolveInfo& info, const Vec& target, Vec& y) {
    for (int k = static_cast<int>(info.fixed.size()) - 1; k >= 0; --k) {
        const int col = info.fixed[k].first;
        const int row = info.fixing_row[k];
        double coef = 0;
        double acc = target.size() > 0 ? target[col] : 0.0;
        for (SpMat::InnerIterator it(prog.A, col); it; ++it) {
            if (it.row() == row)
                coef = it.value();
            else
                acc -= it.value() * y[it.row()];
        }
        y[row] = acc / coef;
    }
}

}  // namespace

void StandardConicProgram::validate() const {
    int total = 0;
    for (const auto& cb : cones) {
        if (cb.dim <= 0) throw ValidationError("cone block with non-positive dim");
        if (cb.type == ConeBlock::Type::Soc && cb.dim < 2)
            throw ValidationError("soc cone needs dim >= 2");
        if (cb.type == ConeBlock::Type::Rsoc && cb.dim < 3)
            throw ValidationError("rsoc cone needs dim >= 3");
        total += cb.dim;
    }
    if (total != n_vars())
        throw ValidationError("cone dims sum to " + std::to_string(total) +
                              " but |x| = " + std::to_string(n_vars()));
    if (A.rows() != n_rows() || A.cols() != n_vars())
        throw ValidationError("A dimensions inconsistent with b / c");
}

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "optimal";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::Unbounded: return "unbounded";
        case SolveStatus::MaxIter: return "max_iter";
        case SolveStatus::Numerics: return "numerics";
    }
    return "?";
}

namespace {

// Duplicate-row removal and free-singleton fixing; returns the reduced program.
StandardConicProgram run_presolve(const StandardConicProgram& prog,
                                  const std::vector<bool>& is_free, PresolveInfo& info) {
    const int m = prog.n_rows();
    const int n = prog.n_vars();
    Eigen::SparseMatrix<double, Eigen::RowMajor> Ar(prog.A);
    Vec b = prog.b;
    std::vector<bool> drop_row(m, false), var_fixed(n, false);
    Vec xfix = Vec::Zero(n);

    // exact duplicate rows (same triplets and rhs)
    std::map<std::string, int> seen;
    for (int i = 0; i < m; ++i) {
        std::ostringstream sig;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Ar, i); it;
             ++it)
            if (it.value() != 0.0) sig << it.col() << ":" << it.value() << ",";
        sig << "|" << b[i];
        auto [pos, fresh] = seen.emplace(sig.str(), i);
        if (!fresh) drop_row[i] = true;
    }

    // iterated free-variable singleton fixing
    bool changed = true;
    while (changed) {
        changed = false;
        for (int i = 0; i < m; ++i) {
            if (drop_row[i]) continue;
            int nz = 0, col = -1;
            double coef = 0;
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Ar, i);
                 it; ++it) {
                if (it.value() == 0.0 || var_fixed[it.col()]) continue;
                ++nz;
                col = static_cast<int>(it.col());
                coef = it.value();
            }
            if (nz == 0) {
                double rhs = b[i];
                if (std::abs(rhs) > 1e-9) {
                    info.infeasible = true;
                    info.infeasible_row = i;
                    info.infeasible_rhs = rhs;
                    return prog;
                }
                drop_row[i] = true;
                changed = true;
            } else if (nz == 1 && is_free[col]) {
                const double val = b[i] / coef;
                var_fixed[col] = true;
                xfix[col] = val;
                info.fixed.emplace_back(col, val);
                info.fixing_row.push_back(i);
                drop_row[i] = true;
                // substitute into the rhs of the other rows
                for (SpMat::InnerIterator it(prog.A, col); it; ++it)
                    if (!drop_row[it.row()]) b[it.row()] -= it.value() * val;
                changed = true;
            }
        }
    }

    std::vector<int> newcol(n, -1);
    int nn = 0;
    for (int j = 0; j < n; ++j)
        if (!var_fixed[j]) newcol[j] = nn++;
    std::vector<int> newrow(m, -1);
    info.kept_rows.clear();
    for (int i = 0; i < m; ++i)
        if (!drop_row[i]) {
            newrow[i] = static_cast<int>(info.kept_rows.size());
            info.kept_rows.push_back(i);
        }
    info.x_fixed = xfix;

    StandardConicProgram red;
    red.c = Vec(nn);
    for (int j = 0; j < n; ++j)
        if (newcol[j] >= 0) red.c[newcol[j]] = prog.c[j];
    red.b = Vec(static_cast<long>(info.kept_rows.size()));
    for (size_t i = 0; i < info.kept_rows.size(); ++i) red.b[i] = b[info.kept_rows[i]];
    std::vector<Triplet> trips;
    for (int j = 0; j < n; ++j) {
        if (newcol[j] < 0) continue;
        for (SpMat::InnerIterator it(prog.A, j); it; ++it)
            if (newrow[it.row()] >= 0 && it.value() != 0.0)
                trips.emplace_back(newrow[it.row()], newcol[j], it.value());
    }
    red.A = SpMat(static_cast<int>(info.kept_rows.size()), nn);
    red.A.setFromTriplets(trips.begin(), trips.end());
    // cone blocks: fixed vars are always free, so shrink free blocks
    int xpos = 0;
    for (const auto& cb : prog.cones) {
        ConeBlock nb = cb;
        if (cb.type == ConeBlock::Type::Free) {
            int d = 0;
            for (int k = 0; k < cb.dim; ++k)
                if (!var_fixed[xpos + k]) ++d;
            nb.dim = d;
            if (d > 0) red.cones.push_back(nb);
        } else {
            red.cones.push_back(nb);
        }
        xpos += cb.dim;
    }
    return red;
}

struct CoreResult {
    SolveStatus status = SolveStatus::Numerics;
    Vec x, y, z_cone, s;
    double tau = 1, kappa = 1;
    int iterations = 0;
    Vec cert_y, cert_x;
};

// HSD interior-point core on: min c'x, A x = b, M x = s in K.
CoreResult solve_core(const Vec& c, const SpMat& A, const Vec& b, const SpMat& M,
                      const std::vector<SBlock>& blocks, int degree,
                      const SolverSettings& st) {
    CoreResult res;
    const int n = static_cast<int>(c.size());
    const int p = static_cast<int>(b.size());
    const int m = static_cast<int>(M.rows());
    const SpMat G = -M;

    const int dim = n + p + m;
    SpMat At = SpMat(A.transpose());
    SpMat Gt = SpMat(G.transpose());

    Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    bool analyzed = false;

    auto assemble = [&](const Scalings* sc) {
        std::vector<Triplet> trips;
        trips.reserve(static_cast<size_t>(A.nonZeros() + G.nonZeros()) * 2 + dim + m * 4);
        for (int i = 0; i < n; ++i) trips.emplace_back(i, i, kStaticReg);
        for (int i = 0; i < p; ++i) trips.emplace_back(n + i, n + i, -kStaticReg);
        for (int k = 0; k < A.outerSize(); ++k)
            for (SpMat::InnerIterator it(A, k); it; ++it) {
                trips.emplace_back(n + it.row(), it.col(), it.value());
                trips.emplace_back(it.col(), n + it.row(), it.value());
            }
        for (int k = 0; k < G.outerSize(); ++k)
            for (SpMat::InnerIterator it(G, k); it; ++it) {
                trips.emplace_back(n + p + it.row(), it.col(), it.value());
                trips.emplace_back(it.col(), n + p + it.row(), it.value());
            }
        if (sc) {
            add_identity_minus(trips, n + p, blocks, *sc);
            for (int i = 0; i < m; ++i)
                trips.emplace_back(n + p + i, n + p + i, -kStaticReg);
        } else {
            // same sparsity pattern as the scaled assemblies, so the symbolic
            // factorization can be reused
            for (const auto& b : blocks) {
                if (!b.soc) {
                    for (int i = 0; i < b.dim; ++i)
                        trips.emplace_back(n + p + b.start + i, n + p + b.start + i,
                                           -1.0 - kStaticReg);
                } else {
                    for (int i = 0; i < b.dim; ++i)
                        for (int j = 0; j < b.dim; ++j)
                            trips.emplace_back(n + p + b.start + i, n + p + b.start + j,
                                               i == j ? -1.0 - kStaticReg : 0.0);
                }
            }
        }
        SpMat K(dim, dim);
        K.setFromTriplets(trips.begin(), trips.end());
        return K;
    };

    SpMat K = assemble(nullptr);
    ldlt.analyzePattern(K);
    analyzed = true;
    ldlt.factorize(K);
    if (ldlt.info() != Eigen::Success)
        throw NumericalError("initial KKT factorization failed");

    auto kkt_solve = [&](const SpMat& Kmat, const Vec& rx, const Vec& ry, const Vec& rz,
                         Vec& ox, Vec& oy, Vec& oz, const Scalings* sc) {
        Vec rhs(dim);
        rhs << rx, ry, rz;
        Vec sol = ldlt.solve(rhs);
        // iterative refinement against the unregularized system
        for (int ref = 0; ref < 2; ++ref) {
            Vec resid = rhs;
            const Vec sx = sol.head(n), sy = sol.segment(n, p), sz = sol.tail(m);
            resid.head(n) -= At * sy + Gt * sz;
            resid.segment(n, p) -= A * sx;
            Vec w2z;
            if (sc) {
                Vec tmp;
                apply_w(blocks, *sc, sz, tmp, false);
                apply_w(blocks, *sc, tmp, w2z, false);
            } else {
                w2z = sz;
            }
            resid.tail(m) -= G * sx - w2z;
            if (resid.lpNorm<Eigen::Infinity>() < 1e-14 * (1.0 + rhs.lpNorm<Eigen::Infinity>()))
                break;
            sol += ldlt.solve(resid);
        }
        (void)Kmat;
        ox = sol.head(n);
        oy = sol.segment(n, p);
        oz = sol.tail(m);
    };

    // --- initial point
    Vec x1, y1, z1, x2, y2, z2;
    kkt_solve(K, Vec::Zero(n), b, Vec::Zero(m), x1, y1, z1, nullptr);
    Vec x = x1;
    Vec s = -z1;
    bring_to_cone(blocks, s);
    kkt_solve(K, -c, Vec::Zero(p), Vec::Zero(m), x2, y2, z2, nullptr);
    Vec y = y2;
    Vec z = z2;
    bring_to_cone(blocks, z);
    double tau = 1.0, kappa = 1.0;

    double best_metric = kInf;
    CoreResult best;

    Vec h = Vec::Zero(m);
    for (int iter = 0; iter <= st.max_iter; ++iter) {
        // residuals
        Vec rx = -(At * y) - (Gt * z) - c * tau;
        Vec ry = A * x - b * tau;
        Vec rz = s + G * x - h * tau;
        const double rt = kappa + c.dot(x) + b.dot(y) + h.dot(z);
        const double mu = (s.dot(z) + tau * kappa) / (degree + 1);

        // unscaled candidate and convergence metrics
        const double pres = std::max(ry.lpNorm<Eigen::Infinity>(),
                                     rz.lpNorm<Eigen::Infinity>()) / tau;
        const double dres = rx.lpNorm<Eigen::Infinity>() / tau;
        const double pobj = c.dot(x) / tau;
        const double dobj = -b.dot(y) / tau;
        const double gap_abs = std::abs(pobj - dobj);
        const double compl_abs = s.dot(z) / (tau * tau);

        if (st.verbose)
            std::fprintf(stderr, "iter %2d  pres %.2e dres %.2e gap %.2e mu %.2e tau %.2e kap %.2e\n",
                         iter, pres, dres, gap_abs, mu, tau, kappa);

        const double metric = std::max({pres, dres, compl_abs});
        if (metric < best_metric) {
            best_metric = metric;
            best.x = x / tau;
            best.y = y / tau;
            best.z_cone = z / tau;
            best.s = s / tau;
            best.tau = tau;
            best.kappa = kappa;
            best.iterations = iter;
        }

        if (pres <= st.tol_p && dres <= st.tol_d &&
            (gap_abs <= st.tol_gap * std::max(1.0, std::abs(pobj)) ||
             compl_abs <= st.tol_gap * std::max(1.0, std::abs(pobj)))) {
            res.status = SolveStatus::Optimal;
            res.x = x / tau;
            res.y = y / tau;
            res.z_cone = z / tau;
            res.s = s / tau;
            res.tau = tau;
            res.kappa = kappa;
            res.iterations = iter;
            return res;
        }

        // infeasibility certificates
        const double by = b.dot(y) + h.dot(z);
        if (by < -1e-12) {
            const double scale = -by;  // positive
            Vec yc = y / scale, zc = z / scale;
            const double vio = (At * yc + Gt * zc).lpNorm<Eigen::Infinity>();
            if (vio <= 1e-9 && cone_violation(blocks, zc) <= 1e-9) {
                res.status = SolveStatus::Infeasible;
                res.cert_y = -yc;  // standard form: b'y > 0, -A'y in K*
                res.z_cone = zc;
                res.x = x / std::max(tau, 1e-12);
                res.y = y / std::max(tau, 1e-12);
                res.s = s / std::max(tau, 1e-12);
                res.iterations = iter;
                return res;
            }
        }
        const double cx = c.dot(x);
        if (cx < -1e-12) {
            const double scale = -cx;
            Vec xc = x / scale;
            Vec sc_ = s / scale;
            const double vio = std::max((A * xc).lpNorm<Eigen::Infinity>(),
                                        (G * xc + sc_).lpNorm<Eigen::Infinity>());
            if (vio <= 1e-9 && cone_violation(blocks, sc_) <= 1e-9) {
                res.status = SolveStatus::Unbounded;
                res.cert_x = xc;
                res.x = xc;
                res.y = y / std::max(tau, 1e-12);
                res.z_cone = z / std::max(tau, 1e-12);
                res.s = sc_;
                res.iterations = iter;
                return res;
            }
        }
        if (iter == st.max_iter) break;

        // NT scalings and KKT refresh
        Scalings sc = update_scalings(blocks, s, z, m);
        K = assemble(&sc);
        if (!analyzed) ldlt.analyzePattern(K);
        ldlt.factorize(K);
        if (ldlt.info() != Eigen::Success)
            throw NumericalError("KKT factorization failed (numerically singular)");

        kkt_solve(K, -c, b, h, x1, y1, z1, &sc);
        const double denom = c.dot(x1) + b.dot(y1) + h.dot(z1) - kappa / tau;

        auto direction = [&](double sigma, const Vec& dcor, double tkcor, Vec& dx,
                             Vec& dy, Vec& dz, Vec& ds, double& dtau, double& dkap) {
            // d_c = sigma mu e - lambda o lambda - dcor ; d_tk = sigma mu - tau kap - tkcor
            Vec dc;
            jordan_mul(blocks, sc.lambda, sc.lambda, dc);
            dc = -dc - dcor;
            for (const auto& bk : blocks) {
                if (!bk.soc)
                    dc.segment(bk.start, bk.dim).array() += sigma * mu;
                else
                    dc[bk.start] += sigma * mu;
            }
            const double dtk = sigma * mu - tau * kappa - tkcor;
            Vec ldc;
            jordan_div(blocks, sc.lambda, dc, ldc);
            Vec wldc;
            apply_w(blocks, sc, ldc, wldc, false);
            const double f = 1.0 - sigma;
            Vec bz = -f * rz - wldc;
            kkt_solve(K, f * rx, -f * ry, bz, x2, y2, z2, &sc);
            dtau = (-f * rt - dtk / tau - (c.dot(x2) + b.dot(y2) + h.dot(z2))) / denom;
            dx = x2 + dtau * x1;
            dy = y2 + dtau * y1;
            dz = z2 + dtau * z1;
            Vec w2dz, tmp;
            apply_w(blocks, sc, dz, tmp, false);
            apply_w(blocks, sc, tmp, w2dz, false);
            ds = wldc - w2dz;
            dkap = (dtk - kappa * dtau) / tau;
        };

        // affine direction -> centering parameter
        Vec dx, dy, dz, ds;
        double dtau, dkap;
        direction(0.0, Vec::Zero(m), 0.0, dx, dy, dz, ds, dtau, dkap);
        double alpha = max_step(blocks, s, ds);
        alpha = std::min(alpha, max_step(blocks, z, dz));
        if (dtau < 0) alpha = std::min(alpha, -tau / dtau);
        if (dkap < 0) alpha = std::min(alpha, -kappa / dkap);
        alpha = std::min(alpha, 1.0);
        const double mu_aff = ((s + alpha * ds).dot(z + alpha * dz) +
                               (tau + alpha * dtau) * (kappa + alpha * dkap)) /
                              (degree + 1);
        double sigma = std::pow(std::max(mu_aff, 0.0) / mu, 3.0);
        sigma = std::clamp(sigma, 1e-8, 0.9999);

        // combined direction with Mehrotra correction
        Vec winv_ds, w_dz, dcor;
        apply_w(blocks, sc, ds, winv_ds, true);
        apply_w(blocks, sc, dz, w_dz, false);
        jordan_mul(blocks, winv_ds, w_dz, dcor);
        const double tkcor = dtau * dkap;
        direction(sigma, dcor, tkcor, dx, dy, dz, ds, dtau, dkap);

        alpha = max_step(blocks, s, ds);
        alpha = std::min(alpha, max_step(blocks, z, dz));
        if (dtau < 0) alpha = std::min(alpha, -tau / dtau);
        if (dkap < 0) alpha = std::min(alpha, -kappa / dkap);
        alpha = std::min(kStepScale * alpha, 1.0);

        x += alpha * dx;
        y += alpha * dy;
        z += alpha * dz;
        s += alpha * ds;
        tau += alpha * dtau;
        kappa += alpha * dkap;
        if (tau <= 0 || kappa < 0)
            throw NumericalError("homogeneous variables left the positive orthant");
    }

    res = best;
    res.status = SolveStatus::MaxIter;
    return res;
}

}  // namespace

ConicSolution solve(const StandardConicProgram& prog, const SolverSettings& st) {
    prog.validate();
    const int n = prog.n_vars();

    std::vector<bool> is_free(n, false);
    {
        int xpos = 0;
        for (const auto& cb : prog.cones) {
            if (cb.type == ConeBlock::Type::Free)
                for (int k = 0; k < cb.dim; ++k) is_free[xpos + k] = true;
            xpos += cb.dim;
        }
    }

    PresolveInfo info;
    StandardConicProgram red = st.presolve ? run_presolve(prog, is_free, info) : prog;
    if (!st.presolve) {
        info.kept_rows.resize(prog.n_rows());
        for (int i = 0; i < prog.n_rows(); ++i) info.kept_rows[i] = i;
        info.x_fixed = Vec::Zero(n);
    }

    ConicSolution sol;
    if (info.infeasible) {
        sol.status = SolveStatus::Infeasible;
        sol.x = Vec::Zero(n);
        sol.y = Vec::Zero(prog.n_rows());
        sol.z = Vec::Zero(n);
        Vec cert = Vec::Zero(prog.n_rows());
        cert[info.infeasible_row] = info.infeasible_rhs > 0 ? 1.0 : -1.0;
        complete_fixed_row_duals(prog, info, Vec(), cert);
        sol.certificate = cert;
        sol.primal_res = std::abs(info.infeasible_rhs);
        return sol;
    }

    ConeLayout lay = make_layout(red);
    SpMat M = make_cone_map(red, lay);
    auto blocks = s_blocks(lay);

    CoreResult core;
    if (lay.m == 0) {
        // pure equality least-squares case: solve the linear KKT directly
        throw ValidationError("program has no conic coordinates");
    }
    core = solve_core(red.c, red.A, red.b, M, blocks, lay.degree, st);

    // map back to the original variable space
    auto expand_x = [&](const Vec& xr) {
        Vec full = info.x_fixed;
        int j = 0;
        std::vector<bool> fixed(n, false);
        for (auto& f : info.fixed) fixed[f.first] = true;
        for (int i = 0; i < n; ++i)
            if (!fixed[i]) full[i] = xr[j++];
        return full;
    };
    auto expand_y = [&](const Vec& yr) {
        Vec full = Vec::Zero(prog.n_rows());
        for (size_t i = 0; i < info.kept_rows.size(); ++i) full[info.kept_rows[i]] = yr[i];
        return full;
    };

    sol.iterations = core.iterations;
    switch (core.status) {
        case SolveStatus::Optimal:
        case SolveStatus::MaxIter:
        case SolveStatus::Numerics: {
            sol.status = core.status;
            sol.x = expand_x(core.x);
            Vec y_std = expand_y(-core.y);
            // duals of fixing rows recover the dual residual on fixed columns
            complete_fixed_row_duals(prog, info, prog.c, y_std);
            sol.y = y_std;
            Vec z_std = M.transpose() * core.z_cone;
            // scatter into full x space (presolve only drops free coords, whose
            // dual is zero)
            Vec zfull = Vec::Zero(n);
            int j = 0;
            std::vector<bool> fixed(n, false);
            for (auto& f : info.fixed) fixed[f.first] = true;
            for (int i = 0; i < n; ++i) {
                if (!fixed[i]) zfull[i] = z_std[j++];
            }
            sol.z = zfull;
            sol.objective = prog.c.dot(sol.x);
            KktResiduals r = kkt_residuals(prog, sol);
            sol.primal_res = r.primal;
            sol.dual_res = r.dual;
            sol.gap = r.gap;
            break;
        }
        case SolveStatus::Infeasible: {
            sol.status = core.status;
            sol.x = expand_x(core.x);
            sol.y = expand_y(core.y);
            sol.z = Vec::Zero(n);
            Vec cert = expand_y(core.cert_y);
            complete_fixed_row_duals(prog, info, Vec(), cert);
            sol.certificate = cert;
            break;
        }
        case SolveStatus::Unbounded: {
            sol.status = core.status;
            sol.x = expand_x(core.x);
            sol.y = expand_y(core.y);
            sol.z = Vec::Zero(n);
            Vec ray = core.cert_x;
            Vec full = Vec::Zero(n);
            int j = 0;
            std::vector<bool> fixed(n, false);
            for (auto& f : info.fixed) fixed[f.first] = true;
            for (int i = 0; i < n; ++i) full[i] = fixed[i] ? 0.0 : ray[j++];
            sol.certificate = full;
            break;
        }
    }
    return sol;
}

KktResiduals kkt_residuals(const StandardConicProgram& prog, const ConicSolution& sol) {
    KktResiduals r;
    if (sol.x.size() != prog.n_vars() || sol.y.size() != prog.n_rows())
        throw ValidationError("solution dimensions do not match program");
    Vec pr = prog.A * sol.x - prog.b;
    ConeLayout lay = make_layout(prog);
    SpMat M = make_cone_map(prog, lay);
    auto blocks = s_blocks(lay);
    const Vec xs = M * sol.x;
    r.primal = std::max(pr.lpNorm<Eigen::Infinity>(), cone_violation(blocks, xs));
    Vec dr = prog.c - prog.A.transpose() * sol.y - sol.z;
    const Vec zs = M * sol.z;
    r.dual = std::max(dr.lpNorm<Eigen::Infinity>(), cone_violation(blocks, zs));
    r.gap = std::abs(prog.c.dot(sol.x) - prog.b.dot(sol.y));
    return r;
}

void dump_program(const StandardConicProgram& prog, std::ostream& out) {
    out << "conicprog v1\n";
    out << "n " << prog.n_vars() << "\n";
    out << "m " << prog.n_rows() << "\n";
    out << "cones";
    for (const auto& cb : prog.cones) {
        const char* t = cb.type == ConeBlock::Type::Free    ? "free"
                        : cb.type == ConeBlock::Type::NonNeg ? "nonneg"
                        : cb.type == ConeBlock::Type::Soc    ? "soc"
                                                             : "rsoc";
        out << " " << t << " " << cb.dim;
    }
    out << "\n";
    out.precision(17);
    for (int i = 0; i < prog.n_vars(); ++i)
        if (prog.c[i] != 0.0) out << "c " << i << " " << prog.c[i] << "\n";
    for (int k = 0; k < prog.A.outerSize(); ++k)
        for (SpMat::InnerIterator it(prog.A, k); it; ++it)
            if (it.value() != 0.0)
                out << "A " << it.row() << " " << it.col() << " " << it.value() << "\n";
    for (int i = 0; i < prog.n_rows(); ++i)
        if (prog.b[i] != 0.0) out << "b " << i << " " << prog.b[i] << "\n";
    out << "end\n";
}

StandardConicProgram parse_program(std::istream& in) {
    StandardConicProgram prog;
    std::string line;
    if (!std::getline(in, line) || line != "conicprog v1")
        throw ParseError("bad program dump header");
    int n = -1, m = -1;
    std::vector<Triplet> trips;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "end") break;
        if (tag == "n") {
            ls >> n;
            prog.c = Vec::Zero(n);
        } else if (tag == "m") {
            ls >> m;
            prog.b = Vec::Zero(m);
        } else if (tag == "cones") {
            std::string t;
            int d;
            while (ls >> t >> d) {
                ConeBlock cb;
                cb.dim = d;
                if (t == "free") cb.type = ConeBlock::Type::Free;
                else if (t == "nonneg") cb.type = ConeBlock::Type::NonNeg;
                else if (t == "soc") cb.type = ConeBlock::Type::Soc;
                else if (t == "rsoc") cb.type = ConeBlock::Type::Rsoc;
                else throw ParseError("unknown cone type " + t);
                prog.cones.push_back(cb);
            }
        } else if (tag == "c") {
            int i; double v;
            ls >> i >> v;
            prog.c[i] = v;
        } else if (tag == "A") {
            int i, j; double v;
            ls >> i >> j >> v;
            trips.emplace_back(i, j, v);
        } else if (tag == "b") {
            int i; double v;
            ls >> i >> v;
            prog.b[i] = v;
        } else {
            throw ParseError("unknown dump tag " + tag);
        }
    }
    if (n < 0 || m < 0) throw ParseError("dump missing dimensions");
    prog.A = SpMat(m, n);
    prog.A.setFromTriplets(trips.begin(), trips.end());
    prog.validate();
    return prog;
}

}  // namespace distflex
