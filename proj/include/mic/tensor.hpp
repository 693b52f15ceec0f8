#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mic {

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Value-semantic n-d array of doubles. `data` is shared so graph nodes can
// keep forward values alive; `grad` is allocated only for parameters.
// `node` is a handle into the Graph that produced the tensor (-1 = none).
struct Tensor {
    std::vector<std::size_t> shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;
    int node = -1;

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor scalar(double v);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values);

    std::size_t size() const;
    bool is_scalar() const { return size() == 1; }
    double item() const;

    double& operator[](std::size_t i) { return (*data)[i]; }
    double operator[](std::size_t i) const { return (*data)[i]; }

    // turn this tensor into a trainable parameter (allocates grad)
    Tensor& requires_grad();
    void zero_grad();
};

// Append-only differentiation tape. Node order is topological by
// construction; backward visits each node once in reverse order.
class Graph {
public:
    struct Node {
        std::size_t out_size = 0;
        std::vector<int> inputs;
        std::function<void(Graph&, int)> vjp;  // id of this node; may be empty
        std::shared_ptr<std::vector<double>> leaf_grad;  // params only
    };

    int add_node(std::size_t out_size, std::vector<int> inputs,
                 std::function<void(Graph&, int)> vjp);

    // Register a tensor as a graph input. Parameters keep their grad buffer
    // attached so backward can accumulate into it.
    Tensor leaf(const Tensor& t);

    // node id for t, registering it as a leaf on first use
    int wrap(Tensor& t);

    // Adjoint buffer of a node (allocated zero-filled on first touch).
    std::vector<double>& adjoint(int id);
    bool has_adjoint(int id) const;

    // Reverse sweep from a scalar loss. Accumulates into the grad buffers of
    // every reachable parameter leaf. Call zero_grad on params beforehand.
    void backward(const Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> adj_;
};

// ---- primitive catalog ----
// Every op validates shapes (TensorError names the primitive and extents)
// and registers a vector-Jacobian rule on g.

Tensor add(Graph& g, Tensor a, Tensor b);        // b may broadcast as a trailing suffix of a
Tensor subtract(Graph& g, Tensor a, Tensor b);
Tensor multiply(Graph& g, Tensor a, Tensor b);   // elementwise
Tensor scale(Graph& g, Tensor a, double c);
Tensor matmul(Graph& g, Tensor a, Tensor b);
Tensor conv2d(Graph& g, Tensor x, Tensor w, std::size_t stride, std::size_t pad);
Tensor relu(Graph& g, Tensor a);
Tensor tanh_op(Graph& g, Tensor a);
Tensor sigmoid(Graph& g, Tensor a);
Tensor exp_op(Graph& g, Tensor a);
Tensor log_op(Graph& g, Tensor a);               // domain error on values <= 0
Tensor logsumexp(Graph& g, Tensor a);            // over last axis, max-shifted
Tensor softmax(Graph& g, Tensor a);              // over last axis
Tensor mean_all(Graph& g, Tensor a);
Tensor mean_axis(Graph& g, Tensor a, std::size_t axis);
Tensor sum_all(Graph& g, Tensor a);
Tensor sum_axis(Graph& g, Tensor a, std::size_t axis);
Tensor concat(Graph& g, std::vector<Tensor> parts, std::size_t axis);
Tensor slice(Graph& g, Tensor a, std::size_t axis, std::size_t start, std::size_t len);
Tensor reshape(Graph& g, Tensor a, std::vector<std::size_t> shape);
Tensor sqnorm(Graph& g, Tensor a);               // squared L2 norm, scalar
// rows of the output are rows perm[i] of the input (2-d only)
Tensor permute_rows(Graph& g, Tensor a, const std::vector<std::size_t>& perm);
// identity forward, gradient multiplied by factor (negative = reversal layer)
Tensor grad_scale(Graph& g, Tensor a, double factor);

// String-dispatch facade over the catalog (used by the catalog-wide
// gradient-check sweep).
struct PrimitiveAttrs {
    double scalar = 0.0;
    std::size_t axis = 0;
    std::size_t start = 0, len = 0;
    std::size_t stride = 1, pad = 0;
    std::vector<std::size_t> shape;
    bool all = true;  // mean/sum: reduce everything vs one axis
};
Tensor apply_primitive(Graph& g, const std::string& name, std::vector<Tensor> inputs,
                       const PrimitiveAttrs& attrs = {});
const std::vector<std::string>& primitive_names();

// ---- gradient verification ----
// f rebuilds the computation from the given params on a fresh graph and
// returns a scalar. Returns max over coordinates of
// |analytic - central difference| / max(1, |central difference|).
double finite_diff_check(const std::function<Tensor(Graph&)>& f,
                         std::vector<Tensor*> params, double epsilon = 1e-5);

// ---- optimizer ----
struct AdamState {
    std::vector<double> m, v;
    long long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
};

// Classic coupled-weight-decay Adam step; throws on NaN grad, naming `name`.
void adam_update(Tensor& param, const std::vector<double>& grad, AdamState& state,
                 double lr, const std::string& name = "param");

}  // namespace mic
