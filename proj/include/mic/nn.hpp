#pragma once

#include <map>
#include <string>
#include <vector>

#include "mic/rng.hpp"
#include "mic/tensor.hpp"

namespace mic::nn {

// Named trainable parameters plus their Adam state. Iteration order is the
// registration order (deterministic).
class ParamStore {
public:
    Tensor& create(const std::string& name, std::vector<std::size_t> shape);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;

    std::vector<std::string> names() const { return order_; }
    void zero_grads();
    void adam_step(double lr);
    void set_weight_decay(double wd);
    // FNV-1a over raw parameter bytes, for frozen-module checks
    std::uint64_t checksum() const;

private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, AdamState> adam_;
    std::vector<std::string> order_;
};

// Glorot-uniform fan-in/fan-out init for weights, zeros for biases.
void init_linear(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct Linear {
    Tensor *w = nullptr, *b = nullptr;  // w: (in, out), b: (out)
    static Linear create(ParamStore& ps, const std::string& prefix, std::size_t in,
                         std::size_t out, Rng& rng);
    static Linear attach(ParamStore& ps, const std::string& prefix);
    Tensor forward(Graph& g, Tensor x) const;  // x: (batch, in)
};

struct Conv {
    Tensor *w = nullptr, *b = nullptr;  // w: (oc, ic, k, k), b: (oc)
    std::size_t stride = 1, pad = 0;
    static Conv create(ParamStore& ps, const std::string& prefix, std::size_t ic,
                       std::size_t oc, std::size_t k, std::size_t stride, Rng& rng);
    static Conv attach(ParamStore& ps, const std::string& prefix, std::size_t stride);
    Tensor forward(Graph& g, Tensor x) const;  // x: (n, ic, h, w)
};

// Single-layer LSTM, standard gate equations; gate order i, f, g, o.
struct Lstm {
    Tensor *wx = nullptr, *wh = nullptr, *b = nullptr;  // wx: (in, 4H), wh: (H, 4H)
    std::size_t hidden = 0;
    static Lstm create(ParamStore& ps, const std::string& prefix, std::size_t in,
                       std::size_t hidden, Rng& rng);
    static Lstm attach(ParamStore& ps, const std::string& prefix, std::size_t hidden);
    // xs: T tensors of (batch, in); returns final hidden state (batch, H)
    Tensor forward(Graph& g, const std::vector<Tensor>& xs) const;
};

}  // namespace mic::nn
