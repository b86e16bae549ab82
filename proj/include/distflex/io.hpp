#pragma once

#include <cstdint>
#include <string>

#include "distflex/std2.hpp"
#include "distflex/validate.hpp"

namespace distflex {

/// Resolved run configuration, echoed verbatim so any output can be reproduced.
struct RunManifest {
    std::string case_path;
    std::string out_dir;
    Std2Config config;
    std::uint64_t seed = 0;
    int samples = 500;

    std::string to_json() const;
};

// CSV schemas are part of the tool contract; headers are pinned by tests.
void write_trace_csv(const Network& net, const std::vector<IterationRecord>& trace,
                     const std::string& path);
void write_bus_results_csv(const Network& net,
                           const std::vector<CcopfResult>& intervals,
                           const std::string& path);
void write_line_results_csv(const Network& net,
                            const std::vector<CcopfResult>& intervals,
                            const std::string& path);
void write_interval_results_csv(const std::vector<CcopfResult>& intervals,
                                const std::string& path);
void write_policy_csvs(const Network& net, const EnsembleSpec& spec,
                       const EnsemblePolicy& policy, const std::string& rho_path,
                       const std::string& transitions_path);
void write_violation_csv(const ViolationStats& stats, double eta,
                         const std::string& path);
void write_loss_stats_csv(const LossStats& stats, const std::string& path);
void write_summary_json(const RunManifest& manifest, const IntegratedSolution& sol,
                        const std::string& path);

}  // namespace distflex
