#include "gshield/gan_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "gshield/error.hpp"

namespace gshield::gan {

namespace {

constexpr double kSumTolerance = 1e-12;

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

void check_distribution(const std::vector<double>& v, const char* name) {
    double sum = 0.0;
    for (double x : v) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw DataError(std::string(name) + " has a negative or non-finite entry");
        sum += x;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) throw DataError(std::string(name) + " does not sum to 1");
}

std::vector<double> dirichlet(std::size_t n, std::size_t zeros, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) {
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        x = -std::log(u);
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx.begin(), idx.end());
    for (std::size_t k = 0; k < std::min(zeros, n - 1); ++k) v[idx[k]] = 0.0;
    const double sum = std::accumulate(v.begin(), v.end(), 0.0);
    for (auto& x : v) x /= sum;
    return v;
}

std::vector<double> grid(double lo, double hi, double step) {
    if (!(step > 0.0) || !(lo <= hi)) throw ConfigError("grid search needs lo <= hi and a positive step");
    std::vector<double> g;
    const auto count = static_cast<std::size_t>(std::llround((hi - lo) / step));
    for (std::size_t k = 0; k <= count; ++k) g.push_back(lo + static_cast<double>(k) * step);
    return g;
}

double term(double p, double q, double f) { return -xlogy(p, f) - xlogy(q, 1.0 - f); }

} // namespace

void DiscreteDistPair::validate() const {
    if (p.size() != q.size() || p.empty()) throw DataError("distribution pair must have equal, non-zero length");
    check_distribution(p, "p");
    check_distribution(q, "q");
}

DiscreteDistPair random_pair(std::size_t n, Rng& rng, std::size_t zeros) {
    DiscreteDistPair pair;
    pair.p = dirichlet(n, zeros, rng);
    pair.q = dirichlet(n, zeros, rng);
    return pair;
}

double discriminator_objective(const DiscreteDistPair& pair, const std::vector<double>& f) {
    if (f.size() != pair.p.size()) throw DataError("discriminator has the wrong number of outcomes");
    double v = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) v += term(pair.p[i], pair.q[i], f[i]);
    return v;
}

OptimalDiscriminator optimal_discriminator(const DiscreteDistPair& pair) {
    pair.validate();
    OptimalDiscriminator out;
    for (std::size_t i = 0; i < pair.p.size(); ++i) {
        const double s = pair.p[i] + pair.q[i];
        out.in_support.push_back(s > 0.0);
        out.f.push_back(s > 0.0 ? pair.p[i] / s : 0.5);
    }
    return out;
}

GridSearchReport grid_search_discriminator(const DiscreteDistPair& pair, double lo, double hi, double step) {
    const auto opt = optimal_discriminator(pair);
    const auto g = grid(lo, hi, step);
    GridSearchReport report;
    report.grid_step = step;
    for (std::size_t i = 0; i < pair.p.size(); ++i) {
        double best = g.front(), best_value = std::numeric_limits<double>::infinity();
        for (double f : g) {
            const double v = term(pair.p[i], pair.q[i], f);
            if (v < best_value) {
                best_value = v;
                best = f;
            }
        }
        report.argmin.push_back(best);
        if (opt.in_support[i]) {
            report.max_deviation = std::max(report.max_deviation, std::abs(best - std::clamp(opt.f[i], lo, hi)));
        }
    }
    report.matches = report.max_deviation <= step;
    return report;
}

std::vector<double> joint_grid_argmin(const DiscreteDistPair& pair, double lo, double hi, double step) {
    pair.validate();
    const auto g = grid(lo, hi, step);
    const std::size_t n = pair.p.size();
    std::vector<std::size_t> idx(n, 0);
    std::vector<double> f(n), best(n);
    double best_value = std::numeric_limits<double>::infinity();
    while (true) {
        for (std::size_t i = 0; i < n; ++i) f[i] = g[idx[i]];
        const double v = discriminator_objective(pair, f);
        if (v < best_value) {
            best_value = v;
            best = f;
        }
        std::size_t k = 0;
        while (k < n && ++idx[k] == g.size()) idx[k++] = 0;
        if (k == n) break;
    }
    return best;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw DataError("kl_divergence: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

GanIdentityReport gan_identity_check(const DiscreteDistPair& pair, double tolerance) {
    const auto opt = optimal_discriminator(pair);
    GanIdentityReport r;
    r.direct = discriminator_objective(pair, opt.f);
    std::vector<double> m(pair.p.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (pair.p[i] + pair.q[i]);
    const double kl_p = kl_divergence(pair.p, m), kl_q = kl_divergence(pair.q, m);
    r.jsd = 0.5 * (kl_p + kl_q);
    r.via_divergence = 2.0 * std::numbers::ln2 - kl_p - kl_q;
    r.discrepancy = std::abs(r.direct - r.via_divergence);
    r.at_maximum = std::abs(r.direct - 2.0 * std::numbers::ln2) <= tolerance;
    r.equal_distributions = pair.p == pair.q;
    r.agrees = r.discrepancy <= tolerance && r.at_maximum == r.equal_distributions;
    return r;
}

void DiscreteJoint::validate() const {
    if (nx == 0 || ny == 0 || p.size() != nx * ny) throw DataError("joint distribution has inconsistent dimensions");
    check_distribution(p, "joint");
}

DiscreteJoint random_joint(std::size_t nx, std::size_t ny, Rng& rng) {
    return {nx, ny, dirichlet(nx * ny, 0, rng)};
}

Conditional true_posterior(const DiscreteJoint& joint) {
    joint.validate();
    Conditional q(joint.p.size(), 0.0);
    for (std::size_t y = 0; y < joint.ny; ++y) {
        double py = 0.0;
        for (std::size_t x = 0; x < joint.nx; ++x) py += joint.at(x, y);
        for (std::size_t x = 0; x < joint.nx; ++x) {
            q[x * joint.ny + y] = py > 0.0 ? joint.at(x, y) / py : 1.0 / static_cast<double>(joint.nx);
        }
    }
    return q;
}

Conditional random_conditional(std::size_t nx, std::size_t ny, Rng& rng) {
    Conditional q(nx * ny);
    for (std::size_t y = 0; y < ny; ++y) {
        const auto column = dirichlet(nx, 0, rng);
        for (std::size_t x = 0; x < nx; ++x) q[x * ny + y] = column[x];
    }
    return q;
}

BoundReport ba_bound_check(const DiscreteJoint& joint, const Conditional& q, double tolerance) {
    joint.validate();
    if (q.size() != joint.p.size()) throw DataError("conditional has the wrong shape");
    for (std::size_t y = 0; y < joint.ny; ++y) {
        double sum = 0.0;
        for (std::size_t x = 0; x < joint.nx; ++x) {
            const double v = q[x * joint.ny + y];
            if (!(v >= 0.0)) throw DataError("conditional has a negative entry");
            sum += v;
        }
        if (std::abs(sum - 1.0) > kSumTolerance) throw DataError("conditional column does not sum to 1");
    }
    std::vector<double> px(joint.nx, 0.0), py(joint.ny, 0.0);
    for (std::size_t x = 0; x < joint.nx; ++x)
        for (std::size_t y = 0; y < joint.ny; ++y) {
            px[x] += joint.at(x, y);
            py[y] += joint.at(x, y);
        }
    BoundReport r;
    for (double v : px) r.entropy_x -= xlogy(v, v);
    const auto posterior = true_posterior(joint);
    double expected_log_q = 0.0, expected_log_post = 0.0;
    for (std::size_t x = 0; x < joint.nx; ++x)
        for (std::size_t y = 0; y < joint.ny; ++y) {
            const double pxy = joint.at(x, y);
            if (pxy == 0.0) continue;
            r.mutual_information += pxy * std::log(pxy / (px[x] * py[y]));
            expected_log_q += xlogy(pxy, q[x * joint.ny + y]);
            expected_log_post += xlogy(pxy, posterior[x * joint.ny + y]);
        }
    r.lower_bound = r.entropy_x + expected_log_q;
    r.gap = r.mutual_information - r.lower_bound;
    r.posterior_gap = r.mutual_information - (r.entropy_x + expected_log_post);
    r.holds = r.gap >= -tolerance;
    r.tight = std::abs(r.posterior_gap) <= tolerance;
    return r;
}

} // namespace gshield::gan
