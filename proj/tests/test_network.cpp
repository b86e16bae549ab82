#include <doctest.h>

#include <fstream>
#include <sstream>

#include "distflex/network.hpp"

using namespace distflex;

namespace {

std::string two_bus_case() {
    return R"({
      "name": "two-bus", "base_kva": 1.0, "base_kv": 1.0, "horizon": 1, "v0_sq": 1.0,
      "buses": [
        {"id": 1, "v_min_sq": 0.8, "v_max_sq": 1.2, "load_p": [0], "load_q": [0]},
        {"id": 2, "v_min_sq": 0.8, "v_max_sq": 1.2, "load_p": [5], "load_q": [1]}
      ],
      "lines": [{"id": 1, "from": 1, "to": 2, "r_pu": 0.01, "x_pu": 0.02}]
    })";
}

Bus mk_bus(int id) {
    Bus b;
    b.id = id;
    b.v_min_sq = 0.8;
    b.v_max_sq = 1.2;
    b.load_p = {0.0};
    b.load_q = {0.0};
    return b;
}

Line mk_line(int id, int from, int to) {
    Line l;
    l.id = id;
    l.from_bus = from;
    l.to_bus = to;
    l.r = 0.01;
    l.x = 0.01;
    return l;
}

}  // namespace

TEST_CASE("two-bus case loads with one line") {
    std::istringstream in(two_bus_case());
    Network net = load_case(in);
    CHECK(net.n_buses() == 2);
    CHECK(net.n_lines() == 1);
    CHECK(net.root_bus() == 1);
    CHECK(net.path_incidence()(0, 1) == 1.0);
    CHECK(net.path_incidence()(0, 0) == 0.0);
}

TEST_CASE("dangling line reference is a validation error") {
    std::string doc = two_bus_case();
    auto pos = doc.find("\"to\": 2");
    doc.replace(pos, 7, "\"to\": 7");
    std::istringstream in(doc);
    CHECK_THROWS_AS(load_case(in), ValidationError);
}

TEST_CASE("malformed document is a parse error") {
    std::istringstream in("{ not json");
    CHECK_THROWS_AS(load_case(in), ParseError);
}

TEST_CASE("validate_radial classifies chains, cycles and splits") {
    std::vector<Bus> buses = {mk_bus(1), mk_bus(2), mk_bus(3)};

    SUBCASE("chain ok") {
        std::vector<Line> lines = {mk_line(1, 1, 2), mk_line(2, 2, 3)};
        auto rep = validate_radial(buses, lines, 1);
        CHECK(rep.ok);
        CHECK(rep.issues.empty());
    }
    SUBCASE("triangle reports a cycle") {
        std::vector<Line> lines = {mk_line(1, 1, 2), mk_line(2, 2, 3), mk_line(3, 3, 1)};
        auto rep = validate_radial(buses, lines, 1);
        CHECK_FALSE(rep.ok);
        bool has_cycle = false;
        for (const auto& s : rep.issues) has_cycle |= s.find("cycle") != std::string::npos;
        CHECK(has_cycle);
    }
    SUBCASE("two components reports disconnection") {
        std::vector<Line> lines = {mk_line(1, 1, 2)};
        auto rep = validate_radial(buses, lines, 1);
        CHECK_FALSE(rep.ok);
        bool has_disc = false;
        for (const auto& s : rep.issues)
            has_disc |= s.find("disconnected") != std::string::npos;
        CHECK(has_disc);
    }
}

TEST_CASE("path incidence on a chain and a star") {
    std::vector<Bus> buses = {mk_bus(1), mk_bus(2), mk_bus(3)};

    SUBCASE("chain root-2-3") {
        std::vector<Line> lines = {mk_line(1, 1, 2), mk_line(2, 2, 3)};
        Mat A = build_path_incidence(buses, lines, 1);
        CHECK(A(0, 0) == 0.0);
        CHECK(A(0, 1) == 1.0);
        CHECK(A(0, 2) == 1.0);
        CHECK(A(1, 0) == 0.0);
        CHECK(A(1, 1) == 0.0);
        CHECK(A(1, 2) == 1.0);
    }
    SUBCASE("star root-2, root-3") {
        std::vector<Line> lines = {mk_line(1, 1, 2), mk_line(2, 1, 3)};
        Mat A = build_path_incidence(buses, lines, 1);
        CHECK(A(0, 1) == 1.0);
        CHECK(A(0, 2) == 0.0);
        CHECK(A(1, 1) == 0.0);
        CHECK(A(1, 2) == 1.0);
    }
    SUBCASE("non-radial input throws") {
        std::vector<Line> lines = {mk_line(1, 1, 2), mk_line(2, 2, 3), mk_line(3, 3, 1)};
        CHECK_THROWS_AS(build_path_incidence(buses, lines, 1), ValidationError);
    }
}

TEST_CASE("bundled 33-bus case") {
    Network net = load_case_file(DISTFLEX_CASE33);
    CHECK(net.n_buses() == 33);
    CHECK(net.n_lines() == 32);
    CHECK(net.horizon() == 24);
    CHECK(net.pv_sites().size() == 7);
    CHECK(net.tcl_sites().size() == 4);
    CHECK(net.generators().size() == 1);
    CHECK(net.generators()[0].bus == 14);

    // depth-first traversal oracle: subtree sizes per line
    const Mat& A = net.path_incidence();
    // line 1 leaves the root, so its row must cover every other bus
    const int root_idx = net.bus_index(net.root_bus());
    int covered = 0;
    for (int b = 0; b < net.n_buses(); ++b) covered += int(A(0, b));
    CHECK(covered == 32);
    CHECK(A(0, root_idx) == 0.0);

    // every bus's path length equals its depth; recompute by walking parents
    for (int b = 0; b < net.n_buses(); ++b) {
        int depth = 0;
        int cur = b;
        while (net.parent_line(cur) >= 0) {
            ++depth;
            cur = net.bus_index(net.lines()[net.parent_line(cur)].from_bus);
        }
        CHECK(A.col(b).sum() == doctest::Approx(depth));
    }

    // determinism of recomputation
    Mat A2 = build_path_incidence(net.buses(), net.lines(), net.root_bus());
    CHECK((A - A2).cwiseAbs().maxCoeff() == 0.0);

    // radial validation agrees with successful incidence construction
    CHECK(validate_radial(net).ok);
}

TEST_CASE("structure hash is stable and load-order sensitive") {
    Network a = load_case_file(DISTFLEX_CASE33);
    Network b = load_case_file(DISTFLEX_CASE33);
    CHECK(a.structure_hash() == b.structure_hash());
}
