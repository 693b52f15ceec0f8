#include "mic/mine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace mic::mine {

StatisticsNet::StatisticsNet(std::size_t d_e, std::size_t d_i, Rng& rng, std::size_t hidden)
    : d_in(d_e + d_i), hidden(hidden) {
    nn::Linear::create(params, "t.fc1", d_in, hidden, rng);
    nn::Linear::create(params, "t.fc2", hidden, hidden, rng);
    nn::Linear::create(params, "t.fc3", hidden, 1, rng);
}

Tensor StatisticsNet::forward(Graph& g, Tensor pairs) {
    if (pairs.shape.size() != 2 || pairs.shape[1] != d_in)
        throw MineError("StatisticsNet: input must be (n, " + std::to_string(d_in) + ")");
    const std::size_t n = pairs.shape[0];
    auto fc1 = nn::Linear::attach(params, "t.fc1");
    auto fc2 = nn::Linear::attach(params, "t.fc2");
    auto fc3 = nn::Linear::attach(params, "t.fc3");
    Tensor h = relu(g, fc1.forward(g, std::move(pairs)));
    h = relu(g, fc2.forward(g, h));
    return reshape(g, fc3.forward(g, h), {n});
}

void EmaState::update(double batch_mean_exp) {
    if (!initialized) {
        ema = batch_mean_exp;
        initialized = true;
    } else {
        ema = rate * ema + (1.0 - rate) * batch_mean_exp;
    }
    if (!(ema > 0.0))
        throw MineError("EmaState: non-positive moving average (exp overflow?)");
}

std::vector<std::size_t> marginal_pairing(std::size_t n, Rng& rng) {
    if (n < 2) throw MineError("marginal_pairing: batch size must be >= 2");
    return rng.permutation(n);
}

Tensor log_mean_exp_ema(Graph& g, Tensor t, double ema_denominator) {
    const std::size_t n = t.size();
    const int it = g.wrap(t);
    const auto& d = *t.data;
    double mx = d[0];
    for (double v : d) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : d) s += std::exp(v - mx);
    Tensor out = Tensor::scalar(mx + std::log(s / static_cast<double>(n)));
    auto td = t.data;
    out.node = g.add_node(1, {it}, [it, n, td, ema_denominator](Graph& gg, int id) {
        const double u = gg.adjoint(id)[0];
        auto& da = gg.adjoint(it);
        const double denom = static_cast<double>(n) * ema_denominator;
        for (std::size_t i = 0; i < n; ++i) da[i] += u * std::exp((*td)[i]) / denom;
    });
    return out;
}

double mean_exp_shifted(const std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return std::exp(mx) * (s / static_cast<double>(v.size()));
}

DvBound dv_bound(Graph& g, Tensor z_e, Tensor z_i, const std::vector<std::size_t>& pi,
                 StatisticsNet& net, std::optional<double> ema_denominator) {
    if (z_e.shape.size() != 2 || z_i.shape.size() != 2 || z_e.shape[0] != z_i.shape[0])
        throw MineError("dv_bound: z_e and z_i must be 2-d with matching batch");
    const std::size_t n = z_e.shape[0];
    if (pi.size() != n) throw MineError("dv_bound: permutation size mismatch");
    {
        std::vector<bool> seen(n, false);
        for (std::size_t p : pi) {
            if (p >= n || seen[p]) throw MineError("dv_bound: not a permutation");
            seen[p] = true;
        }
    }

    Tensor joint = concat(g, {z_e, z_i}, 1);
    Tensor z_i_shuf = permute_rows(g, z_i, pi);
    Tensor marg = concat(g, {z_e, z_i_shuf}, 1);
    Tensor t_joint = net.forward(g, joint);
    Tensor t_marg = net.forward(g, marg);

    for (double v : *t_joint.data)
        if (std::isnan(v)) throw MineError("dv_bound: NaN from statistics network (joint)");
    for (double v : *t_marg.data)
        if (std::isnan(v)) throw MineError("dv_bound: NaN from statistics network (marginal)");

    DvBound b;
    b.joint_term = mean_all(g, t_joint);
    b.batch_mean_exp = mean_exp_shifted(*t_marg.data);
    if (ema_denominator) {
        b.marginal_log_term = log_mean_exp_ema(g, t_marg, *ema_denominator);
    } else {
        Tensor lse = logsumexp(g, t_marg);
        b.marginal_log_term =
            subtract(g, lse, Tensor::scalar(std::log(static_cast<double>(n))));
    }
    b.value = subtract(g, b.joint_term, b.marginal_log_term);
    return b;
}

MiEstimate estimate_mi_batch(const Tensor& z_e, const Tensor& z_i,
                             const std::vector<std::size_t>& pi, StatisticsNet& net) {
    Graph g;
    DvBound b = dv_bound(g, z_e, z_i, pi, net);
    MiEstimate est;
    est.joint_term = b.joint_term.item();
    est.marginal_log_term = b.marginal_log_term.item();
    est.value = est.joint_term - est.marginal_log_term;
    est.n = pi.size();
    est.degenerate_pairing = true;
    for (std::size_t i = 0; i < pi.size(); ++i)
        if (pi[i] != i) {
            est.degenerate_pairing = false;
            break;
        }
    return est;
}

MiEstimate mine_train_step(const Tensor& z_e, const Tensor& z_i, StatisticsNet& net,
                           EmaState& ema, Rng& rng, double lr) {
    const std::size_t n = z_e.shape.empty() ? 0 : z_e.shape[0];
    if (n < 2) throw MineError("mine_train_step: batch size must be >= 2");
    const auto pi = marginal_pairing(n, rng);

    Graph g;
    Tensor joint = concat(g, {z_e, z_i}, 1);
    Tensor z_i_shuf = permute_rows(g, z_i, pi);
    Tensor marg = concat(g, {z_e, z_i_shuf}, 1);
    Tensor t_joint = net.forward(g, joint);
    Tensor t_marg = net.forward(g, marg);
    for (double v : *t_marg.data)
        if (std::isnan(v)) throw MineError("mine_train_step: NaN from statistics network");

    // the EMA absorbs this batch before serving as the gradient denominator
    ema.update(mean_exp_shifted(*t_marg.data));

    Tensor joint_term = mean_all(g, t_joint);
    Tensor marginal_log_term = log_mean_exp_ema(g, t_marg, ema.ema);
    Tensor value = subtract(g, joint_term, marginal_log_term);
    Tensor neg = scale(g, value, -1.0);  // ascent on the bound
    net.params.zero_grads();
    g.backward(neg);
    net.params.adam_step(lr);

    MiEstimate est;
    est.joint_term = joint_term.item();
    est.marginal_log_term = marginal_log_term.item();
    est.value = est.joint_term - est.marginal_log_term;
    est.n = n;
    return est;
}

ConvergedMi estimate_mi_converged(const BatchSampler& sampler, std::size_t d_e,
                                  std::size_t d_i, std::size_t steps, double lr, Rng& rng,
                                  std::ostream* csv, std::size_t hidden) {
    if (steps < 1) throw MineError("estimate_mi_converged: steps must be >= 1");
    StatisticsNet net(d_e, d_i, rng, hidden);
    EmaState ema;
    std::vector<double> trace;
    trace.reserve(steps);
    std::size_t batch_n = 0;
    if (csv) *csv << "step,estimate,joint_term,marginal_log_term\n";
    for (std::size_t s = 0; s < steps; ++s) {
        auto [z_e, z_i] = sampler(rng);
        batch_n = z_e.shape[0];
        MiEstimate est;
        try {
            est = mine_train_step(z_e, z_i, net, ema, rng, lr);
        } catch (const MineError& e) {
            throw MineError("estimate_mi_converged: diverged at step " + std::to_string(s) +
                            ": " + e.what());
        }
        if (std::isnan(est.value))
            throw MineError("estimate_mi_converged: NaN estimate at step " +
                            std::to_string(s));
        trace.push_back(est.value);
        if (csv)
            *csv << s << ',' << est.value << ',' << est.joint_term << ','
                 << est.marginal_log_term << '\n';
    }
    const std::size_t tail = std::max<std::size_t>(1, steps / 10);
    double sum = 0.0;
    for (std::size_t s = steps - tail; s < steps; ++s) sum += trace[s];
    ConvergedMi out;
    out.raw = sum / static_cast<double>(tail);
    out.steps = steps;
    const double cap = std::log(static_cast<double>(batch_n));
    out.saturated = out.raw > cap;
    out.value = std::clamp(out.raw, 0.0, cap);
    return out;
}

BatchSampler make_gaussian_sampler(double rho, std::size_t dim, std::size_t batch) {
    const double mix = std::sqrt(1.0 - rho * rho);
    return [rho, mix, dim, batch](Rng& rng) {
        Tensor z_e = Tensor::zeros({batch, dim});
        Tensor z_i = Tensor::zeros({batch, dim});
        for (std::size_t i = 0; i < batch * dim; ++i) {
            const double a = rng.normal();
            const double b = rng.normal();
            (*z_e.data)[i] = a;
            (*z_i.data)[i] = rho * a + mix * b;
        }
        return std::make_pair(z_e, z_i);
    };
}

}  // namespace mic::mine
