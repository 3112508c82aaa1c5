#include "bsdelab/counterexamples/counterexamples.hpp"

#include "bsdelab/core/error.hpp"
#include "bsdelab/core/parallel.hpp"
#include "bsdelab/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>

namespace bsdelab {

namespace {

Eigen::Matrix2d rotation(double theta) {
    Eigen::Matrix2d R;
    R << std::cos(theta), std::sin(theta), -std::sin(theta), std::cos(theta);
    return R;
}

} // namespace

EmeryEnsemble emery_closed_form(const PathEnsemble& paths, const EmerySpec& spec,
                                std::vector<std::size_t> record_steps) {
    BSDELAB_REQUIRE(paths.dim() == 1, "the Emery example needs d = 1");
    BSDELAB_REQUIRE(spec.level > 0.0, "exit level must be positive");
    const TimeGrid& grid = paths.grid();
    const std::size_t K = grid.steps();
    if (record_steps.empty())
        for (std::size_t k = 0; k <= K; ++k) record_steps.push_back(k);

    EmeryEnsemble out;
    out.expo = ExponentialEnsemble(grid, 2, 1, paths.paths(), record_steps, true, true);
    out.expo.scheme = "closed_form";
    out.expo.field_name = "emery";
    out.expo.seed = paths.seed();
    out.exit_time.assign(paths.paths(), std::numeric_limits<double>::infinity());
    const auto& rec = out.expo.record_steps();
    const std::size_t R = rec.size();

    parallel_chunks(paths.paths(), [&](std::size_t begin, std::size_t end) {
        std::vector<double> stopped_t(R), stopped_b(R), running_max(R);
        for (std::size_t m = begin; m < end; ++m) {
            double b = 0.0, mx = 0.0, t_stop = 0.0;
            bool exited = false;
            std::size_t r = 0;
            auto record = [&](std::size_t k) {
                while (r < R && rec[r] == k) {
                    stopped_t[r] = exited ? t_stop : grid.time(k);
                    stopped_b[r] = b;
                    running_max[r] = mx;
                    ++r;
                }
            };
            record(0);
            for (std::size_t k = 0; k < K && !exited; ++k) {
                double dB = 0.0;
                paths.increment(m, k, &dB);
                b += dB;
                mx = std::max(mx, std::abs(b));
                if (std::abs(b) >= spec.level) {
                    exited = true;
                    t_stop = grid.time(k + 1);
                    if (spec.clamp_exit) b = std::copysign(spec.level, b);
                    out.exit_time[m] = t_stop;
                }
                record(k + 1);
            }
            // frozen after exit
            while (r < R) {
                stopped_t[r] = t_stop;
                stopped_b[r] = b;
                running_max[r] = mx;
                ++r;
            }
            const double tT = stopped_t[R - 1], bT = stopped_b[R - 1];
            for (std::size_t q = 0; q < R; ++q) {
                const double s = std::exp(0.5 * stopped_t[q]);
                const Eigen::Matrix2d Rq = rotation(stopped_b[q]);
                out.expo.S(m, q) = s * Rq;
                out.expo.X(m, q) = Rq.transpose() / s;
                out.expo.inverse_residual_at(m, q) = 0.0;
                const double growth = std::exp(0.5 * (tT - stopped_t[q]));
                out.expo.C(m, q) = growth * rotation(bT - stopped_b[q]);
                out.expo.sup_continuation(m, q) = growth;
                out.expo.state(m, q)[0] = stopped_b[q];
                out.expo.max_abs(m, q)[0] = running_max[q];
            }
        }
    });
    for (double t : out.exit_time)
        if (std::isinf(t)) ++out.unexited;
    return out;
}

namespace {

double fitted_order(const std::vector<std::size_t>& steps, const std::vector<double>& rmse) {
    const std::size_t n = steps.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += std::log(static_cast<double>(steps[i])) / static_cast<double>(n);
        my += std::log(rmse[i]) / static_cast<double>(n);
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = std::log(static_cast<double>(steps[i])) - mx;
        sxy += dx * (std::log(rmse[i]) - my);
        sxx += dx * dx;
    }
    return -sxy / sxx;
}

} // namespace

ConvergenceReport emery_euler_convergence(double T, std::vector<std::size_t> steps, std::size_t paths,
                                          std::uint64_t seed, std::size_t batches) {
    BSDELAB_REQUIRE(steps.size() >= 2, "need at least two step counts");
    BSDELAB_REQUIRE(batches >= 2 && paths >= 2 * batches, "need at least two paths per batch");
    std::sort(steps.begin(), steps.end());
    const std::size_t finest = steps.back();
    for (std::size_t K : steps) BSDELAB_REQUIRE(K > 0 && finest % K == 0, "step counts must divide the finest");
    const PathEnsemble fine = PathEnsemble::brownian(TimeGrid::uniform(T, finest), 1, paths, seed);
    const CoefficientField field = emery_field(std::numbers::pi / 2);

    ConvergenceReport rep;
    rep.steps = steps;
    std::vector<std::vector<double>> batch_mse(steps.size(), std::vector<double>(batches, 0.0));
    const std::size_t per = paths / batches;
    for (std::size_t s = 0; s < steps.size(); ++s) {
        const std::size_t K = steps[s];
        const PathEnsemble pc = K == finest ? fine : fine.coarsened(finest / K);
        IntegrationOptions io;
        io.record_steps = {0, K};
        const ExponentialEnsemble eu = integrate_exponential(field, pc, io);
        EmerySpec sp;
        sp.clamp_exit = false;
        const EmeryEnsemble cf = emery_closed_form(pc, sp, {0, K});
        std::vector<double> err(paths);
        for (std::size_t m = 0; m < paths; ++m) err[m] = (eu.S(m, 1) - cf.expo.S(m, 1)).squaredNorm();
        double total = 0.0;
        for (std::size_t m = 0; m < paths; ++m) {
            total += err[m];
            if (m / per < batches) batch_mse[s][m / per] += err[m] / static_cast<double>(per);
        }
        rep.rmse.push_back(std::sqrt(total / static_cast<double>(paths)));
        double mean = 0.0, sq = 0.0;
        for (double v : batch_mse[s]) mean += std::sqrt(v) / static_cast<double>(batches);
        for (double v : batch_mse[s]) sq += (std::sqrt(v) - mean) * (std::sqrt(v) - mean);
        rep.rmse_se.push_back(std::sqrt(sq / static_cast<double>(batches - 1) / static_cast<double>(batches)));
    }
    rep.order = fitted_order(steps, rep.rmse);
    std::vector<double> orders;
    for (std::size_t b = 0; b < batches; ++b) {
        std::vector<double> r;
        for (std::size_t s = 0; s < steps.size(); ++s) r.push_back(std::sqrt(batch_mse[s][b]));
        orders.push_back(fitted_order(steps, r));
    }
    double mean = 0.0, sq = 0.0;
    for (double o : orders) mean += o / static_cast<double>(batches);
    for (double o : orders) sq += (o - mean) * (o - mean);
    rep.order_se = std::sqrt(sq / static_cast<double>(batches - 1) / static_cast<double>(batches));
    return rep;
}

ExitTimeEstimate exit_time_exponential(double b, const ExitTimeOptions& opts) {
    BSDELAB_REQUIRE(b > 0.0, "exit level must be positive");
    BSDELAB_REQUIRE(b < std::numbers::pi / 2, "E[exp(sigma_b/2)] is infinite for b >= pi/2");
    BSDELAB_REQUIRE(opts.paths >= 2 && opts.dt > 0.0 && opts.max_time > 0.0, "invalid exit-time options");
    ExitTimeEstimate est;
    est.b = b;
    est.exact = 1.0 / std::cos(b);
    est.heavy_tail_warning = b > std::numbers::pi / 3 + 1e-12;

    const double sd = std::sqrt(opts.dt);
    const auto max_steps = static_cast<std::size_t>(std::ceil(opts.max_time / opts.dt));
    std::vector<double> value(opts.paths), sigma(opts.paths);
    std::vector<std::uint8_t> unexited(opts.paths, 0);

    parallel_chunks(opts.paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t m = begin; m < end; ++m) {
            const std::uint64_t key = derive_key(opts.seed, m);
            CounterStream normals(derive_key(key, 0));
            CounterStream uniforms(derive_key(key, 1));
            double x = 0.0;
            std::size_t k = 0;
            bool out = false;
            while (!out && k < max_steps) {
                const double y = x + sd * normals.normal();
                ++k;
                if (std::abs(y) >= b) {
                    out = true;
                } else if (opts.bridge_correction) {
                    // probability that the bridge from x to y touched +b or -b within the step
                    const double up = std::exp(-2.0 * (b - x) * (b - y) / opts.dt);
                    const double down = std::exp(-2.0 * (b + x) * (b + y) / opts.dt);
                    const double u = uniforms.uniform();
                    if (up + down > 1e-300 && u < up + down) out = true;
                }
                x = y;
            }
            const double s = static_cast<double>(k) * opts.dt;
            sigma[m] = s;
            value[m] = std::exp(0.5 * s);
            if (!out) unexited[m] = 1;
        }
    });

    double s1 = 0.0, s2 = 0.0, st = 0.0;
    for (std::size_t m = 0; m < opts.paths; ++m) {
        s1 += value[m];
        s2 += value[m] * value[m];
        st += sigma[m];
        est.unexited += unexited[m];
    }
    const auto N = static_cast<double>(opts.paths);
    est.estimate = s1 / N;
    est.std_error = std::sqrt(std::max(0.0, (s2 - N * est.estimate * est.estimate) / (N - 1.0)) / N);
    est.mean_exit_time = st / N;
    return est;
}

double NonexistenceSpec::b(std::size_t k) const {
    BSDELAB_REQUIRE(k >= 1, "sequence index starts at 1");
    return std::acos(static_cast<double>(k) / std::ldexp(1.0, static_cast<int>(k)));
}

double NonexistenceSpec::f(double s) const {
    if (s <= T / 2) return 0.0;
    BSDELAB_REQUIRE(s < T, "f is defined on [0, T)");
    return 1.0 / (T - s);
}

double NonexistenceSpec::changed_time(double s) const {
    if (s <= T / 2) return 0.0;
    BSDELAB_REQUIRE(s < T, "the changed time is finite only on [0, T)");
    return 1.0 / (T - s) - 2.0 / T;
}

void check_nonexistence_sequence(const NonexistenceSpec& spec) {
    BSDELAB_REQUIRE(spec.prefix >= 4, "sequence prefix too short to check");
    double prev_b = 0.0, prev_term = std::numeric_limits<double>::infinity(), sum = 0.0;
    std::vector<double> partial;
    for (std::size_t k = 1; k <= spec.prefix; ++k) {
        const double bk = spec.b(k);
        const double tk = spec.term(k);
        if (!(bk >= 0.0 && bk < std::numbers::pi / 2)) throw ConfigError("b_k outside [0, pi/2)");
        if (bk < prev_b) throw ConfigError("b_k is not nondecreasing");
        if (tk > prev_term + 1e-15) throw ConfigError("terms 1/(2^k cos b_k) do not decrease");
        prev_b = bk;
        prev_term = tk;
        sum += tk;
        partial.push_back(sum);
    }
    if (!(prev_term < 2.0 / static_cast<double>(spec.prefix))) throw ConfigError("terms do not tend to 0");
    // divergence of the series: every dyadic block adds a fixed amount
    for (std::size_t j = 1; 2 * j <= spec.prefix; ++j)
        if (partial[2 * j - 1] - partial[j - 1] < 0.5) throw ConfigError("partial sums do not diverge");
}

Eigen::Vector2d nonexistence_terminal(double n_tau) { return {std::cos(n_tau), std::sin(n_tau)}; }

BlowupReport nonexistence_blowup(const NonexistenceSpec& spec, std::size_t j_sim, const ExitTimeOptions& opts) {
    check_nonexistence_sequence(spec);
    BSDELAB_REQUIRE(j_sim <= spec.prefix, "simulated prefix longer than the analytic prefix");
    BlowupReport rep;
    double sum = 0.0, sim = 0.0, sim_var = 0.0;
    for (std::size_t j = 1; j <= spec.prefix; ++j) {
        BlowupRow row;
        row.j = j;
        sum += spec.term(j);
        row.partial_sum = sum;
        row.remainder_bound = spec.term(j);
        if (j <= j_sim) {
            // stratum A_j: exit from b_j in changed time, weighted by P[A_j] = 2^{-j}
            ExitTimeOptions o = opts;
            o.seed = derive_key(opts.seed, j);
            const ExitTimeEstimate e = exit_time_exponential(spec.b(j), o);
            const double w = std::ldexp(1.0, -static_cast<int>(j));
            sim += w * e.estimate;
            sim_var += w * w * e.std_error * e.std_error;
            row.simulated_estimate = sim;
            row.simulated_std_error = std::sqrt(sim_var);
            if (e.unexited > 0) rep.bias_flag = true;
        }
        rep.rows.push_back(row);
    }
    return rep;
}

void write_blowup_csv(std::ostream& os, const BlowupReport& rep) {
    os << "j,partial_sum,simulated_estimate,remainder_bound\n" << std::setprecision(17);
    for (const auto& r : rep.rows) {
        os << r.j << ',' << r.partial_sum << ',';
        if (!std::isnan(r.simulated_estimate)) os << r.simulated_estimate;
        os << ',' << r.remainder_bound << '\n';
    }
}

} // namespace bsdelab
