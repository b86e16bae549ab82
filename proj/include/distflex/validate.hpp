#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distflex/ccopf.hpp"
#include "distflex/common.hpp"
#include "distflex/network.hpp"

namespace distflex {

/// Seeded Gaussian scenario draws: eps_p per (sample, interval, bus), kW.
/// Reactive errors follow as eps_q = K eps_p.
struct ScenarioBatch {
    std::uint64_t seed = 0;
    int n_samples = 0;
    std::vector<Mat> draws;  // one horizon x n_buses matrix per sample
};

ScenarioBatch sample_scenarios(const UncertaintyModel& model, int n,
                               std::uint64_t seed);

/// Affine recourse applied to one draw: generator outputs move by alpha times
/// the aggregated error, flows and voltages by the path-incidence propagation.
struct RealizedState {
    Mat fp, fq;      // horizon x n_lines, kW
    Mat u;           // horizon x n_buses, p.u.^2
    Mat gen_p, gen_q;  // horizon x n_gens, kW
};

RealizedState redispatch(const Network& net, const UncertaintyModel& model,
                         const std::vector<DispatchSetpoints>& setpoints,
                         const Mat& draw);

struct ViolationStats {
    // counts indexed [family][t]; families: v_hi, v_lo, gp_hi, gp_lo, gq_hi, gq_lo
    static constexpr int kFamilies = 6;
    std::vector<std::array<long, 6>> counts_by_t;  // per interval
    long n_samples = 0;
    static const char* family_name(int f);
    double rate(int family, int t) const {
        return n_samples ? double(counts_by_t[t][family]) / double(n_samples) : 0.0;
    }
    long total(int family) const;
};

ViolationStats violation_stats(const Network& net, const UncertaintyModel& model,
                               const std::vector<DispatchSetpoints>& setpoints,
                               const ScenarioBatch& batch, int workers = 0);

struct LossStats {
    Vec mean;    // per interval, kW
    Vec stddev;  // per interval, kW
};

LossStats loss_stats(const Network& net, const std::vector<DispatchSetpoints>& setpoints,
                     const UncertaintyModel& model, const ScenarioBatch& batch,
                     int workers = 0);

}  // namespace distflex
