#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "distflex/common.hpp"

namespace distflex {

struct Bus {
    int id = 0;
    double v_min_sq = 0.0;   // p.u.^2
    double v_max_sq = 0.0;   // p.u.^2
    std::vector<double> load_p;  // kW, one entry per interval
    std::vector<double> load_q;  // kvar
};

struct Line {
    int id = 0;
    int from_bus = 0;  // o(l)
    int to_bus = 0;    // r(l)
    double r = 0.0;    // p.u.
    double x = 0.0;    // p.u.
};

struct Generator {
    int bus = 0;
    double p_min = 0.0, p_max = 0.0;  // kW
    double q_min = 0.0, q_max = 0.0;  // kvar
};

struct PvSite {
    int bus = 0;
    std::vector<double> forecast_p;  // kW per interval
    double sigma_frac = 0.0;         // std dev as fraction of forecast
};

struct TclSite {
    int bus = 0;
    double avg_load_kw = 0.0;
    int n_states = 8;
    double range_lo_frac = 0.10;
    double range_hi_frac = 2.00;
    double power_factor = 1.0;
    std::string gamma_mode = "uniform";  // "uniform" | "nonuniform"
    Mat default_transitions;  // column-stochastic, [to][from], shared across intervals
    Vec rho_init;
};

struct RadialReport {
    bool ok = false;
    std::vector<std::string> issues;  // cycles, disconnections, degree problems
};

/// Immutable radial feeder plus derived indexing; safe to share across threads
/// once constructed.
class Network {
  public:
    Network(std::string name, double base_kva, double base_kv, int horizon,
            double v0_sq, std::vector<Bus> buses, std::vector<Line> lines,
            std::vector<Generator> generators, std::vector<PvSite> pv,
            std::vector<TclSite> tcl, double k_factor);

    const std::string& name() const { return name_; }
    double base_kva() const { return base_kva_; }
    double base_kv() const { return base_kv_; }
    int horizon() const { return horizon_; }
    double v0_sq() const { return v0_sq_; }
    double k_factor() const { return k_factor_; }

    int n_buses() const { return static_cast<int>(buses_.size()); }
    int n_lines() const { return static_cast<int>(lines_.size()); }
    const std::vector<Bus>& buses() const { return buses_; }
    const std::vector<Line>& lines() const { return lines_; }
    const std::vector<Generator>& generators() const { return generators_; }
    const std::vector<PvSite>& pv_sites() const { return pv_; }
    const std::vector<TclSite>& tcl_sites() const { return tcl_; }

    int root_bus() const { return root_id_; }
    /// Dense index of a bus id in load order; throws on unknown id.
    int bus_index(int bus_id) const;
    /// Line feeding bus (index), -1 for the root.
    int parent_line(int bus_idx) const { return parent_line_[bus_idx]; }

    /// |E| x |N| binary matrix; entry (l, b) = 1 iff line l lies on the unique
    /// root-to-b path.
    const Mat& path_incidence() const { return path_incidence_; }

    /// Hash of the structural data, used to match solutions to their case.
    std::string structure_hash() const;

  private:
    std::string name_;
    double base_kva_, base_kv_;
    int horizon_;
    double v0_sq_;
    double k_factor_;
    std::vector<Bus> buses_;
    std::vector<Line> lines_;
    std::vector<Generator> generators_;
    std::vector<PvSite> pv_;
    std::vector<TclSite> tcl_;
    int root_id_ = 0;
    std::vector<int> parent_line_;
    Mat path_incidence_;
};

/// Parse and validate a case document (JSON, see docs/case_format.md).
Network load_case(std::istream& in);
Network load_case_file(const std::string& path);

/// Tree check on an edge list; reports offending cycles / disconnected buses.
RadialReport validate_radial(const std::vector<Bus>& buses,
                             const std::vector<Line>& lines, int root_id);
RadialReport validate_radial(const Network& net);

/// Path incidence for an already-validated radial edge list.
Mat build_path_incidence(const std::vector<Bus>& buses,
                         const std::vector<Line>& lines, int root_id);

}  // namespace distflex
