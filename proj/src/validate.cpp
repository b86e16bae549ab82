#include "distflex/validate.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <thread>

namespace distflex {

namespace {

// splitmix64 + Box-Muller keeps the stream identical across platforms
struct Rng {
    std::uint64_t state;
    explicit Rng(std::uint64_t seed) : state(seed) {}
    std::uint64_t next_u64() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    double next_unit() {  // (0, 1)
        return (next_u64() >> 11) * (1.0 / 9007199254740992.0) +
               (0.5 / 9007199254740992.0);
    }
    double next_gauss() {
        if (have_spare) {
            have_spare = false;
            return spare;
        }
        const double u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare = r * std::sin(a);
        have_spare = true;
        return r * std::cos(a);
    }
    bool have_spare = false;
    double spare = 0.0;
};

}  // namespace

ScenarioBatch sample_scenarios(const UncertaintyModel& model, int n,
                               std::uint64_t seed) {
    if (n < 1) throw ValidationError("need at least one sample");
    ScenarioBatch batch;
    batch.seed = seed;
    batch.n_samples = n;
    batch.draws.reserve(n);
    Rng rng(seed);
    const int T = static_cast<int>(model.sigma.rows());
    const int N = static_cast<int>(model.sigma.cols());
    for (int i = 0; i < n; ++i) {
        Mat d = Mat::Zero(T, N);
        for (int t = 0; t < T; ++t)
            for (int b = 0; b < N; ++b)
                if (model.sigma(t, b) > 0) d(t, b) = model.sigma(t, b) * rng.next_gauss();
        batch.draws.push_back(std::move(d));
    }
    return batch;
}

RealizedState redispatch(const Network& net, const UncertaintyModel& model,
                         const std::vector<DispatchSetpoints>& setpoints,
                         const Mat& draw) {
    const int T = net.horizon();
    const int N = net.n_buses();
    const int E = net.n_lines();
    const int ng = static_cast<int>(net.generators().size());
    if (static_cast<int>(setpoints.size()) != T)
        throw ValidationError("setpoints must cover the horizon");

    RealizedState rs;
    rs.fp = Mat(T, E);
    rs.fq = Mat(T, E);
    rs.u = Mat(T, N);
    rs.gen_p = Mat(T, ng);
    rs.gen_q = Mat(T, ng);

    const double S = net.base_kva();
    for (int t = 0; t < T; ++t) {
        const DispatchSetpoints& sp = setpoints[t];
        Vec alpha_bus = Vec::Zero(N);
        double alpha_sum = 0;
        for (int g = 0; g < ng; ++g) {
            alpha_bus[net.bus_index(net.generators()[g].bus)] += sp.alpha[g];
            alpha_sum += sp.alpha[g];
        }
        if (ng > 0 && std::abs(alpha_sum - 1.0) > 1e-6)
            throw ValidationError("participation factors do not sum to 1");

        const Vec eps = draw.row(t).transpose();  // kW
        const double eps_agg = eps.sum();
        Mat C = flow_deviation_coeffs(net, alpha_bus);
        const Vec dev_p = C * eps;                      // kW
        const Vec dev_q = model.k_factor * dev_p;       // kW
        rs.fp.row(t) = (sp.fp + dev_p).transpose();
        rs.fq.row(t) = (sp.fq + dev_q).transpose();

        Mat V = voltage_deviation_coeffs(net, alpha_bus, model.k_factor);
        rs.u.row(t) = (sp.u + V * (eps / S)).transpose();

        for (int g = 0; g < ng; ++g) {
            rs.gen_p(t, g) = sp.gen_p[g] + sp.alpha[g] * eps_agg;
            rs.gen_q(t, g) = sp.gen_q[g] + sp.alpha[g] * model.k_factor * eps_agg;
        }
    }
    return rs;
}

const char* ViolationStats::family_name(int f) {
    static const char* names[6] = {"voltage_upper", "voltage_lower",
                                   "gen_p_upper",   "gen_p_lower",
                                   "gen_q_upper",   "gen_q_lower"};
    return names[f];
}

long ViolationStats::total(int family) const {
    long s = 0;
    for (const auto& row : counts_by_t) s += row[family];
    return s;
}

ViolationStats violation_stats(const Network& net, const UncertaintyModel& model,
                               const std::vector<DispatchSetpoints>& setpoints,
                               const ScenarioBatch& batch, int workers) {
    const int T = net.horizon();
    const int N = net.n_buses();
    const int ng = static_cast<int>(net.generators().size());
    constexpr double kTol = 1e-9;

    ViolationStats stats;
    stats.n_samples = batch.n_samples;
    stats.counts_by_t.assign(T, {0, 0, 0, 0, 0, 0});

    const int W = std::max(1, workers > 0
                                  ? workers
                                  : int(std::thread::hardware_concurrency()));
    std::vector<std::vector<std::array<long, 6>>> partial(
        W, std::vector<std::array<long, 6>>(T, {0, 0, 0, 0, 0, 0}));
    std::atomic<int> next{0};
    auto body = [&](int w) {
        int i;
        while ((i = next.fetch_add(1)) < batch.n_samples) {
            RealizedState rs = redispatch(net, model, setpoints, batch.draws[i]);
            for (int t = 0; t < T; ++t) {
                for (int b = 0; b < N; ++b) {
                    const Bus& bus = net.buses()[b];
                    if (rs.u(t, b) > bus.v_max_sq + kTol) ++partial[w][t][0];
                    if (rs.u(t, b) < bus.v_min_sq - kTol) ++partial[w][t][1];
                }
                for (int g = 0; g < ng; ++g) {
                    const auto& gen = net.generators()[g];
                    if (rs.gen_p(t, g) > gen.p_max + kTol) ++partial[w][t][2];
                    if (rs.gen_p(t, g) < gen.p_min - kTol) ++partial[w][t][3];
                    if (rs.gen_q(t, g) > gen.q_max + kTol) ++partial[w][t][4];
                    if (rs.gen_q(t, g) < gen.q_min - kTol) ++partial[w][t][5];
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < W; ++w) pool.emplace_back(body, w);
    for (auto& th : pool) th.join();
    for (int w = 0; w < W; ++w)
        for (int t = 0; t < T; ++t)
            for (int f = 0; f < 6; ++f) stats.counts_by_t[t][f] += partial[w][t][f];
    return stats;
}

LossStats loss_stats(const Network& net, const std::vector<DispatchSetpoints>& setpoints,
                     const UncertaintyModel& model, const ScenarioBatch& batch,
                     int workers) {
    const int T = net.horizon();
    const int E = net.n_lines();
    const double S = net.base_kva();
    const double v0 = net.v0_sq();

    // per-sample per-interval losses, then a fixed-order reduction
    Mat losses(batch.n_samples, T);
    const int W = std::max(1, workers > 0
                                  ? workers
                                  : int(std::thread::hardware_concurrency()));
    std::atomic<int> next{0};
    auto body = [&] {
        int i;
        while ((i = next.fetch_add(1)) < batch.n_samples) {
            RealizedState rs = redispatch(net, model, setpoints, batch.draws[i]);
            for (int t = 0; t < T; ++t) {
                double loss = 0;
                for (int l = 0; l < E; ++l)
                    loss += net.lines()[l].r *
                            (rs.fp(t, l) * rs.fp(t, l) + rs.fq(t, l) * rs.fq(t, l)) /
                            (v0 * S);
                losses(i, t) = loss;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < W; ++w) pool.emplace_back(body);
    for (auto& th : pool) th.join();

    LossStats out;
    out.mean = Vec::Zero(T);
    out.stddev = Vec::Zero(T);
    for (int t = 0; t < T; ++t) {
        double m = 0;
        for (int i = 0; i < batch.n_samples; ++i) m += losses(i, t);
        m /= batch.n_samples;
        double v = 0;
        for (int i = 0; i < batch.n_samples; ++i)
            v += (losses(i, t) - m) * (losses(i, t) - m);
        out.mean[t] = m;
        out.stddev[t] = batch.n_samples > 1 ? std::sqrt(v / (batch.n_samples - 1)) : 0.0;
    }
    return out;
}

}  // namespace distflex
