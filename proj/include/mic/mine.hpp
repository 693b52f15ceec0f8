#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mic/nn.hpp"
#include "mic/rng.hpp"
#include "mic/tensor.hpp"

namespace mic::mine {

struct MineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Statistics network T: R^{d_e + d_i} -> R, a 2-hidden-layer relu MLP.
struct StatisticsNet {
    nn::ParamStore params;
    std::size_t d_in = 0, hidden = 128;

    StatisticsNet(std::size_t d_e, std::size_t d_i, Rng& rng, std::size_t hidden = 128);
    // pairs: (n, d_in) -> scores (n)
    Tensor forward(Graph& g, Tensor pairs);
};

// One Monte-Carlo evaluation of the Donsker-Varadhan bound.
struct MiEstimate {
    double value = 0.0;
    double joint_term = 0.0;         // mean T over joint pairs
    double marginal_log_term = 0.0;  // log-mean-exp T over shuffled pairs
    std::size_t n = 0;
    bool degenerate_pairing = false;  // pi == identity: marginal reuses the joint
};

// Moving-average denominator for the bias-corrected log-term gradient.
struct EmaState {
    double ema = 0.0;
    double rate = 0.99;
    bool initialized = false;

    void update(double batch_mean_exp);
};

// Uniform random permutation pairing z_E rows with shuffled z_I rows.
std::vector<std::size_t> marginal_pairing(std::size_t n, Rng& rng);

// log-mean-exp over a score vector with an exact forward value but a gradient
// whose denominator is the supplied moving average (bias correction)
Tensor log_mean_exp_ema(Graph& g, Tensor scores, double ema_denominator);

// max-shifted mean of e^x
double mean_exp_shifted(const std::vector<double>& v);

// Graph nodes of the DV bound, reusable inside larger objectives. When
// ema_denominator is set, the log term keeps its exact forward value but its
// gradient uses the moving-average denominator instead of the batch mean.
struct DvBound {
    Tensor value;              // scalar, joint_term - marginal_log_term
    Tensor joint_term;         // scalar
    Tensor marginal_log_term;  // scalar
    double batch_mean_exp = 0.0;  // max-shift-computed mean of e^T over marginal pairs
};
DvBound dv_bound(Graph& g, Tensor z_e, Tensor z_i, const std::vector<std::size_t>& pi,
                 StatisticsNet& net, std::optional<double> ema_denominator = {});

MiEstimate estimate_mi_batch(const Tensor& z_e, const Tensor& z_i,
                             const std::vector<std::size_t>& pi, StatisticsNet& net);

// One ascent step on the DV bound with the bias-corrected gradient.
MiEstimate mine_train_step(const Tensor& z_e, const Tensor& z_i, StatisticsNet& net,
                           EmaState& ema, Rng& rng, double lr);

// (z_e batch, z_i batch) pairs drawn from the joint distribution
using BatchSampler = std::function<std::pair<Tensor, Tensor>(Rng&)>;

struct ConvergedMi {
    double value = 0.0;    // mean over the final 10% of steps, clipped to [0, ln n]
    double raw = 0.0;      // same mean without the clip
    bool saturated = false;
    std::size_t steps = 0;
};

// Trains a fresh StatisticsNet and reads out the smoothed estimate. csv, when
// given, receives per-step lines: step,estimate,joint_term,marginal_log_term.
ConvergedMi estimate_mi_converged(const BatchSampler& sampler, std::size_t d_e,
                                  std::size_t d_i, std::size_t steps, double lr, Rng& rng,
                                  std::ostream* csv = nullptr, std::size_t hidden = 128);

// Correlated-Gaussian benchmark source: componentwise correlation rho, so the
// ground truth is -dim/2 * ln(1 - rho^2) nats.
BatchSampler make_gaussian_sampler(double rho, std::size_t dim, std::size_t batch);

}  // namespace mic::mine
