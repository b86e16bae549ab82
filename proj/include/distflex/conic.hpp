#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "distflex/common.hpp"

namespace distflex {

struct ConeBlock {
    enum class Type { Free, NonNeg, Soc, Rsoc };
    Type type = Type::Free;
    int dim = 0;
};

/// Sparse conic standard form: minimize c'x subject to A x = b with x
/// partitioned into ordered free / nonnegative / second-order /
/// rotated-second-order blocks.
struct StandardConicProgram {
    Vec c;
    SpMat A;
    Vec b;
    std::vector<ConeBlock> cones;

    int n_vars() const { return static_cast<int>(c.size()); }
    int n_rows() const { return static_cast<int>(b.size()); }
    /// Checks dimension bookkeeping (cone dims sum to |x|, soc >= 2, rsoc >= 3).
    void validate() const;
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, MaxIter, Numerics };

std::string to_string(SolveStatus s);

struct ConicSolution {
    SolveStatus status = SolveStatus::Numerics;
    Vec x;            // primal point (best iterate on non-optimal exits)
    Vec y;            // equality duals; c - A'y = z in K* at optimality
    Vec z;            // dual cone vector (zero on free coordinates)
    double objective = 0.0;
    double primal_res = 0.0;  // ||A x - b||_inf
    double dual_res = 0.0;    // ||c - A'y - z||_inf
    double gap = 0.0;         // |c'x - b'y|
    int iterations = 0;
    Vec certificate;  // Farkas y (infeasible) or unbounded ray x
};

struct SolverSettings {
    double tol_p = 1e-8;
    double tol_d = 1e-8;
    double tol_gap = 1e-8;
    int max_iter = 200;
    bool verbose = false;
    bool presolve = true;
};

ConicSolution solve(const StandardConicProgram& prog, const SolverSettings& settings = {});

struct KktResiduals {
    double primal = 0.0;
    double dual = 0.0;
    double gap = 0.0;
};

/// Recompute residuals of a solution from scratch (same definitions the solver
/// reports).
KktResiduals kkt_residuals(const StandardConicProgram& prog, const ConicSolution& sol);

/// Text dump in the documented sparse-triplet format; parse_program inverts it.
void dump_program(const StandardConicProgram& prog, std::ostream& out);
StandardConicProgram parse_program(std::istream& in);

}  // namespace distflex
