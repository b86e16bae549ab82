#include "distflex/network.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <cstring>
#include <sstream>

#include <json.hpp>

namespace distflex {

using nlohmann::json;

namespace {

int find_root(const std::vector<Bus>& buses, const std::vector<Line>& lines,
              std::optional<int> declared) {
    if (declared) return *declared;
    std::set<int> receiving;
    for (const auto& l : lines) receiving.insert(l.to_bus);
    std::vector<int> candidates;
    for (const auto& b : buses)
        if (!receiving.count(b.id)) candidates.push_back(b.id);
    if (candidates.size() != 1)
        throw ValidationError("case does not have a unique root bus (" +
                              std::to_string(candidates.size()) + " candidates)");
    return candidates.front();
}

}  // namespace

Network::Network(std::string name, double base_kva, double base_kv, int horizon,
                 double v0_sq, std::vector<Bus> buses, std::vector<Line> lines,
                 std::vector<Generator> generators, std::vector<PvSite> pv,
                 std::vector<TclSite> tcl, double k_factor)
    : name_(std::move(name)),
      base_kva_(base_kva),
      base_kv_(base_kv),
      horizon_(horizon),
      v0_sq_(v0_sq),
      k_factor_(k_factor),
      buses_(std::move(buses)),
      lines_(std::move(lines)),
      generators_(std::move(generators)),
      pv_(std::move(pv)),
      tcl_(std::move(tcl)) {
    if (base_kva_ <= 0 || base_kv_ <= 0) throw ValidationError("base must be positive");
    if (horizon_ < 1) throw ValidationError("horizon must be >= 1");
    if (v0_sq_ <= 0) throw ValidationError("v0_sq must be positive");

    std::map<int, int> index;
    for (int i = 0; i < static_cast<int>(buses_.size()); ++i) {
        const Bus& b = buses_[i];
        if (!index.emplace(b.id, i).second)
            throw ValidationError("duplicate bus id " + std::to_string(b.id));
        if (!(0 < b.v_min_sq && b.v_min_sq < b.v_max_sq))
            throw ValidationError("bus " + std::to_string(b.id) +
                                  ": need 0 < v_min_sq < v_max_sq");
        if (static_cast<int>(b.load_p.size()) != horizon_ ||
            static_cast<int>(b.load_q.size()) != horizon_)
            throw ValidationError("bus " + std::to_string(b.id) +
                                  ": load sequences must have length horizon");
    }
    auto check_bus = [&](int id, const char* what) {
        if (!index.count(id))
            throw ValidationError(std::string(what) + " references undefined bus " +
                                  std::to_string(id));
    };
    std::set<int> line_ids;
    for (const auto& l : lines_) {
        if (!line_ids.insert(l.id).second)
            throw ValidationError("duplicate line id " + std::to_string(l.id));
        check_bus(l.from_bus, "line");
        check_bus(l.to_bus, "line");
        if (l.from_bus == l.to_bus)
            throw ValidationError("line " + std::to_string(l.id) + " is a self-loop");
        if (l.r < 0 || l.x < 0)
            throw ValidationError("line " + std::to_string(l.id) +
                                  ": negative impedance");
        if (l.r == 0 && l.x == 0)
            throw ValidationError("line " + std::to_string(l.id) +
                                  ": non-positive impedance");
    }
    for (const auto& g : generators_) {
        check_bus(g.bus, "generator");
        if (g.p_min > g.p_max || g.q_min > g.q_max)
            throw ValidationError("generator at bus " + std::to_string(g.bus) +
                                  ": limit inversion");
    }
    for (const auto& s : pv_) {
        check_bus(s.bus, "pv site");
        if (static_cast<int>(s.forecast_p.size()) != horizon_)
            throw ValidationError("pv at bus " + std::to_string(s.bus) +
                                  ": forecast length != horizon");
        if (s.sigma_frac < 0)
            throw ValidationError("pv sigma_frac must be >= 0");
    }
    for (const auto& t : tcl_) {
        check_bus(t.bus, "tcl ensemble");
        if (t.n_states < 2) throw ValidationError("tcl ensemble needs >= 2 states");
        if (!(0 < t.range_lo_frac && t.range_lo_frac < t.range_hi_frac))
            throw ValidationError("tcl range fractions invalid");
        const int n = t.n_states;
        if (t.default_transitions.rows() != n || t.default_transitions.cols() != n)
            throw ValidationError("tcl default_transitions must be n_states x n_states");
        for (int c = 0; c < n; ++c) {
            double s = 0;
            for (int r = 0; r < n; ++r) {
                double v = t.default_transitions(r, c);
                if (v < 0 || v > 1)
                    throw ValidationError("tcl transition entries must lie in [0, 1]");
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-9)
                throw ValidationError("tcl default_transitions column " +
                                      std::to_string(c + 1) + " does not sum to 1");
        }
        if (t.rho_init.size() != n)
            throw ValidationError("tcl rho_init must have n_states entries");
        if (t.rho_init.minCoeff() < 0 || std::abs(t.rho_init.sum() - 1.0) > 1e-9)
            throw ValidationError("tcl rho_init must be a distribution");
    }

    root_id_ = find_root(buses_, lines_, std::nullopt);
    RadialReport rep = validate_radial(buses_, lines_, root_id_);
    if (!rep.ok) {
        std::string msg = "network is not a rooted tree:";
        for (const auto& s : rep.issues) msg += " " + s + ";";
        throw ValidationError(msg);
    }
    path_incidence_ = build_path_incidence(buses_, lines_, root_id_);

    parent_line_.assign(buses_.size(), -1);
    for (int l = 0; l < static_cast<int>(lines_.size()); ++l)
        parent_line_[index.at(lines_[l].to_bus)] = l;
}

int Network::bus_index(int bus_id) const {
    for (int i = 0; i < n_buses(); ++i)
        if (buses_[i].id == bus_id) return i;
    throw ValidationError("unknown bus id " + std::to_string(bus_id));
}

std::string Network::structure_hash() const {
    // FNV-1a over the structural fields; stable across runs and platforms.
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    auto mixd = [&](double d) {
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, sizeof(bits));
        mix(bits);
    };
    mix(static_cast<uint64_t>(buses_.size()));
    mix(static_cast<uint64_t>(lines_.size()));
    mix(static_cast<uint64_t>(horizon_));
    mixd(base_kva_);
    mixd(v0_sq_);
    for (const auto& b : buses_) {
        mix(static_cast<uint64_t>(b.id));
        mixd(b.v_min_sq);
        mixd(b.v_max_sq);
        for (double v : b.load_p) mixd(v);
    }
    for (const auto& l : lines_) {
        mix(static_cast<uint64_t>(l.from_bus));
        mix(static_cast<uint64_t>(l.to_bus));
        mixd(l.r);
        mixd(l.x);
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

RadialReport validate_radial(const std::vector<Bus>& buses,
                             const std::vector<Line>& lines, int root_id) {
    RadialReport rep;
    const int n = static_cast<int>(buses.size());
    const int e = static_cast<int>(lines.size());
    std::map<int, int> index;
    for (int i = 0; i < n; ++i) index[buses[i].id] = i;

    if (e != n - 1)
        rep.issues.push_back("|E| = " + std::to_string(e) + " but |N| - 1 = " +
                             std::to_string(n - 1));

    // undirected adjacency; union-find to catch cycles and components
    std::vector<int> parent(n);
    for (int i = 0; i < n; ++i) parent[i] = i;
    std::function<int(int)> find = [&](int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (const auto& l : lines) {
        int a = find(index.at(l.from_bus));
        int b = find(index.at(l.to_bus));
        if (a == b) {
            rep.issues.push_back("cycle closed by line " + std::to_string(l.id) + " (" +
                                 std::to_string(l.from_bus) + "-" +
                                 std::to_string(l.to_bus) + ")");
        } else {
            parent[a] = b;
        }
    }
    const int root_comp = find(index.at(root_id));
    for (int i = 0; i < n; ++i)
        if (find(i) != root_comp)
            rep.issues.push_back("bus " + std::to_string(buses[i].id) +
                                 " disconnected from root");
    rep.ok = rep.issues.empty();
    return rep;
}

RadialReport validate_radial(const Network& net) {
    return validate_radial(net.buses(), net.lines(), net.root_bus());
}

Mat build_path_incidence(const std::vector<Bus>& buses,
                         const std::vector<Line>& lines, int root_id) {
    RadialReport rep = validate_radial(buses, lines, root_id);
    if (!rep.ok) {
        std::string msg = "cannot build path incidence on a non-radial network:";
        for (const auto& s : rep.issues) msg += " " + s + ";";
        throw ValidationError(msg);
    }
    const int n = static_cast<int>(buses.size());
    const int e = static_cast<int>(lines.size());
    std::map<int, int> index;
    for (int i = 0; i < n; ++i) index[buses[i].id] = i;

    // parent line of each bus, then walk each bus up to the root
    std::vector<int> parent_line(n, -1);
    for (int l = 0; l < e; ++l) parent_line[index.at(lines[l].to_bus)] = l;

    Mat A = Mat::Zero(e, n);
    for (int b = 0; b < n; ++b) {
        int cur = b;
        while (parent_line[cur] != -1) {
            const int l = parent_line[cur];
            A(l, b) = 1.0;
            cur = index.at(lines[l].from_bus);
        }
        if (buses[cur].id != root_id && b != cur)
            throw ValidationError("bus " + std::to_string(buses[b].id) +
                                  " does not reach the root");
    }
    return A;
}

Network load_case(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& ex) {
        throw ParseError(std::string("malformed case document: ") + ex.what());
    }
    try {
        const int horizon = doc.at("horizon").get<int>();
        std::vector<Bus> buses;
        for (const auto& jb : doc.at("buses")) {
            Bus b;
            b.id = jb.at("id").get<int>();
            b.v_min_sq = jb.at("v_min_sq").get<double>();
            b.v_max_sq = jb.at("v_max_sq").get<double>();
            b.load_p = jb.at("load_p").get<std::vector<double>>();
            b.load_q = jb.at("load_q").get<std::vector<double>>();
            buses.push_back(std::move(b));
        }
        std::vector<Line> lines;
        for (const auto& jl : doc.at("lines")) {
            Line l;
            l.id = jl.at("id").get<int>();
            l.from_bus = jl.at("from").get<int>();
            l.to_bus = jl.at("to").get<int>();
            l.r = jl.at("r_pu").get<double>();
            l.x = jl.at("x_pu").get<double>();
            lines.push_back(l);
        }
        std::vector<Generator> gens;
        for (const auto& jg : doc.value("generators", json::array())) {
            Generator g;
            g.bus = jg.at("bus").get<int>();
            g.p_min = jg.at("p_min").get<double>();
            g.p_max = jg.at("p_max").get<double>();
            g.q_min = jg.at("q_min").get<double>();
            g.q_max = jg.at("q_max").get<double>();
            gens.push_back(g);
        }
        std::vector<PvSite> pv;
        for (const auto& jp : doc.value("pv", json::array())) {
            PvSite s;
            s.bus = jp.at("bus").get<int>();
            s.forecast_p = jp.at("forecast_p").get<std::vector<double>>();
            s.sigma_frac = jp.at("sigma_frac").get<double>();
            pv.push_back(std::move(s));
        }
        std::vector<TclSite> tcl;
        for (const auto& jt : doc.value("tcl", json::array())) {
            TclSite t;
            t.bus = jt.at("bus").get<int>();
            t.avg_load_kw = jt.at("avg_load_kw").get<double>();
            t.n_states = jt.value("n_states", 8);
            t.range_lo_frac = jt.value("range_lo_frac", 0.10);
            t.range_hi_frac = jt.value("range_hi_frac", 2.00);
            t.power_factor = jt.value("power_factor", 1.0);
            t.gamma_mode = jt.value("gamma_mode", std::string("uniform"));
            const auto rows = jt.at("default_transitions");
            const int n = t.n_states;
            t.default_transitions.resize(n, n);
            if (static_cast<int>(rows.size()) != n)
                throw ValidationError("default_transitions must have n_states rows");
            for (int r = 0; r < n; ++r) {
                const auto& row = rows.at(r);
                if (static_cast<int>(row.size()) != n)
                    throw ValidationError("default_transitions rows must have n_states entries");
                for (int c = 0; c < n; ++c)
                    t.default_transitions(r, c) = row.at(c).get<double>();
            }
            if (jt.contains("rho_init")) {
                auto ri = jt.at("rho_init").get<std::vector<double>>();
                t.rho_init = Eigen::Map<Vec>(ri.data(), static_cast<long>(ri.size()));
            } else {
                t.rho_init = Vec::Constant(n, 1.0 / n);
            }
            tcl.push_back(std::move(t));
        }
        double k_factor = 0.0;
        if (doc.contains("uncertainty"))
            k_factor = doc.at("uncertainty").value("k_factor", 0.0);
        return Network(doc.value("name", std::string("case")),
                       doc.at("base_kva").get<double>(),
                       doc.at("base_kv").get<double>(), horizon,
                       doc.at("v0_sq").get<double>(), std::move(buses),
                       std::move(lines), std::move(gens), std::move(pv),
                       std::move(tcl), k_factor);
    } catch (const json::exception& ex) {
        throw ParseError(std::string("case document missing fields: ") + ex.what());
    }
}

Network load_case_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open case file: " + path);
    return load_case(f);
}

}  // namespace distflex
