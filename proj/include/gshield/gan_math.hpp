#pragma once

#include <cstddef>
#include <vector>

#include "gshield/rng.hpp"

namespace gshield::gan {

/// Two distributions over the same n outcomes (real p, generated q).
struct DiscreteDistPair {
    std::vector<double> p;
    std::vector<double> q;

    /// Throws DataError unless both are non-negative, equally long and sum to 1 within 1e-12.
    void validate() const;
};

/// Random pair with Dirichlet(1)-distributed p and q; `zeros` entries of each are zeroed first.
DiscreteDistPair random_pair(std::size_t n, Rng& rng, std::size_t zeros = 0);

/// Discriminator objective -sum p log F - sum q log(1 - F), with 0 log 0 = 0.
double discriminator_objective(const DiscreteDistPair& pair, const std::vector<double>& f);

struct OptimalDiscriminator {
    /// F*[i] = p[i] / (p[i] + q[i]); 0.5 where p[i] = q[i] = 0 (outside the support).
    std::vector<double> f;
    std::vector<bool> in_support;
};

OptimalDiscriminator optimal_discriminator(const DiscreteDistPair& pair);

struct GridSearchReport {
    std::vector<double> argmin;  ///< best grid point
    double grid_step = 0.0;
    /// max over the support of |argmin - clamp(F*, lo, hi)|
    double max_deviation = 0.0;
    bool matches = false;        ///< max_deviation <= grid_step
};

/// Exhaustive search over F in {lo, lo + step, ..., hi}^n. The objective is a
/// sum of per-outcome terms, so the argmin over the product grid is found by
/// exhausting each coordinate's grid.
GridSearchReport grid_search_discriminator(const DiscreteDistPair& pair, double lo = 0.01, double hi = 0.99,
                                           double step = 0.01);

/// Same search by enumerating the whole product grid (only for small n).
std::vector<double> joint_grid_argmin(const DiscreteDistPair& pair, double lo, double hi, double step);

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

struct GanIdentityReport {
    double direct = 0.0;           ///< -E_p log F* - E_q log(1 - F*)
    double via_divergence = 0.0;   ///< 2 log 2 - KL(p||m) - KL(q||m), m = (p + q) / 2
    double discrepancy = 0.0;
    double jsd = 0.0;
    bool at_maximum = false;       ///< value equals 2 log 2 within tolerance
    bool equal_distributions = false;
    bool agrees = false;           ///< discrepancy <= tolerance and at_maximum == equal_distributions
};

GanIdentityReport gan_identity_check(const DiscreteDistPair& pair, double tolerance = 1e-9);

/// Joint distribution p(x, y) stored row-major as [nx][ny].
struct DiscreteJoint {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::vector<double> p;

    double at(std::size_t x, std::size_t y) const { return p[x * ny + y]; }
    void validate() const;
};

DiscreteJoint random_joint(std::size_t nx, std::size_t ny, Rng& rng);

/// q(x | y) stored as [nx][ny]; each column sums to 1.
using Conditional = std::vector<double>;

Conditional true_posterior(const DiscreteJoint& joint);
Conditional random_conditional(std::size_t nx, std::size_t ny, Rng& rng);

struct BoundReport {
    double mutual_information = 0.0;
    double entropy_x = 0.0;
    double lower_bound = 0.0;     ///< H(x) + E log q(x|y)
    double gap = 0.0;             ///< I - lower_bound (>= 0)
    double posterior_gap = 0.0;   ///< I - bound at the true posterior
    bool holds = false;
    bool tight = false;
};

/// Exact enumeration in natural-log units.
BoundReport ba_bound_check(const DiscreteJoint& joint, const Conditional& q, double tolerance = 1e-9);

} // namespace gshield::gan
