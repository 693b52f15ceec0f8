#include "mic/nn.hpp"

#include <cmath>
#include <cstring>

namespace mic::nn {

Tensor& ParamStore::create(const std::string& name, std::vector<std::size_t> shape) {
    if (params_.count(name)) throw TensorError("ParamStore: duplicate parameter " + name);
    Tensor t = Tensor::zeros(std::move(shape));
    t.requires_grad();
    auto [it, ok] = params_.emplace(name, std::move(t));
    (void)ok;
    order_.push_back(name);
    adam_[name] = AdamState{};
    return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw TensorError("ParamStore: unknown parameter " + name);
    return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw TensorError("ParamStore: unknown parameter " + name);
    return it->second;
}

bool ParamStore::has(const std::string& name) const { return params_.count(name) != 0; }

void ParamStore::zero_grads() {
    for (auto& name : order_) params_[name].zero_grad();
}

void ParamStore::adam_step(double lr) {
    for (auto& name : order_) {
        Tensor& p = params_[name];
        adam_update(p, *p.grad, adam_[name], lr, name);
    }
}

void ParamStore::set_weight_decay(double wd) {
    for (auto& [name, st] : adam_) st.weight_decay = wd;
}

std::uint64_t ParamStore::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& name : order_) {
        mix(name.data(), name.size());
        const auto& d = *params_.at(name).data;
        mix(d.data(), d.size() * sizeof(double));
    }
    return h;
}

void init_linear(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : *w.data) v = rng.uniform(-a, a);
}

Linear Linear::create(ParamStore& ps, const std::string& prefix, std::size_t in,
                      std::size_t out, Rng& rng) {
    Linear l;
    l.w = &ps.create(prefix + ".w", {in, out});
    l.b = &ps.create(prefix + ".b", {out});
    init_linear(*l.w, in, out, rng);
    return l;
}

Linear Linear::attach(ParamStore& ps, const std::string& prefix) {
    Linear l;
    l.w = &ps.get(prefix + ".w");
    l.b = &ps.get(prefix + ".b");
    return l;
}

Tensor Linear::forward(Graph& g, Tensor x) const {
    return add(g, matmul(g, std::move(x), *w), *b);
}

Conv Conv::create(ParamStore& ps, const std::string& prefix, std::size_t ic, std::size_t oc,
                  std::size_t k, std::size_t stride, Rng& rng) {
    Conv c;
    c.w = &ps.create(prefix + ".w", {oc, ic, k, k});
    c.b = &ps.create(prefix + ".b", {oc});
    c.stride = stride;
    init_linear(*c.w, ic * k * k, oc * k * k, rng);
    return c;
}

Conv Conv::attach(ParamStore& ps, const std::string& prefix, std::size_t stride) {
    Conv c;
    c.w = &ps.get(prefix + ".w");
    c.b = &ps.get(prefix + ".b");
    c.stride = stride;
    return c;
}

Tensor Conv::forward(Graph& g, Tensor x) const {
    Tensor y = conv2d(g, std::move(x), *w, stride, pad);
    // bias per output channel: reshape to rows of (oh*ow) per (n, oc)
    const auto s = y.shape;
    const std::size_t plane = s[2] * s[3];
    Tensor flat = reshape(g, y, {s[0] * s[1], plane});
    // broadcast add needs bias along the channel axis; expand to a plane
    Tensor bcol = reshape(g, *b, {s[1], 1});
    Tensor ones = Tensor::full({1, plane}, 1.0);
    Tensor bplane = matmul(g, bcol, ones);                       // (oc, plane)
    Tensor btile = reshape(g, bplane, {s[1] * plane});
    // rows of flat are (n, oc) blocks; tile bias over n via suffix broadcast
    Tensor out = add(g, reshape(g, flat, {s[0], s[1] * plane}), btile);
    return reshape(g, out, s);
}

Lstm Lstm::create(ParamStore& ps, const std::string& prefix, std::size_t in,
                  std::size_t hidden, Rng& rng) {
    Lstm l;
    l.wx = &ps.create(prefix + ".wx", {in, 4 * hidden});
    l.wh = &ps.create(prefix + ".wh", {hidden, 4 * hidden});
    l.b = &ps.create(prefix + ".b", {4 * hidden});
    l.hidden = hidden;
    init_linear(*l.wx, in, 4 * hidden, rng);
    init_linear(*l.wh, hidden, 4 * hidden, rng);
    return l;
}

Lstm Lstm::attach(ParamStore& ps, const std::string& prefix, std::size_t hidden) {
    Lstm l;
    l.wx = &ps.get(prefix + ".wx");
    l.wh = &ps.get(prefix + ".wh");
    l.b = &ps.get(prefix + ".b");
    l.hidden = hidden;
    return l;
}

Tensor Lstm::forward(Graph& g, const std::vector<Tensor>& xs) const {
    if (xs.empty()) throw TensorError("lstm: empty sequence");
    const std::size_t batch = xs[0].shape[0];
    const std::size_t H = hidden;
    Tensor h = Tensor::zeros({batch, H});
    Tensor c = Tensor::zeros({batch, H});
    for (Tensor x : xs) {
        Tensor gates = add(g, add(g, matmul(g, std::move(x), *wx), matmul(g, h, *wh)), *b);
        Tensor i = sigmoid(g, slice(g, gates, 1, 0 * H, H));
        Tensor f = sigmoid(g, slice(g, gates, 1, 1 * H, H));
        Tensor gt = tanh_op(g, slice(g, gates, 1, 2 * H, H));
        Tensor o = sigmoid(g, slice(g, gates, 1, 3 * H, H));
        c = add(g, multiply(g, f, c), multiply(g, i, gt));
        h = multiply(g, o, tanh_op(g, c));
    }
    return h;
}

}  // namespace mic::nn
