#include "mic/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mic/kernels.hpp"

namespace mic {

namespace {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

[[noreturn]] void shape_fail(const std::string& prim, const std::vector<std::size_t>& a,
                             const std::vector<std::size_t>& b) {
    throw TensorError(prim + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// outer x axis_len x inner decomposition for axis ops
void axis_split(const std::vector<std::size_t>& shape, std::size_t axis,
                std::size_t& outer, std::size_t& len, std::size_t& inner) {
    outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    len = shape[axis];
    inner = 1;
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t;
    const std::size_t n = shape_size(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(n, v);
    return t;
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
    if (shape_size(shape) != values.size())
        throw TensorError("Tensor::from: " + shape_str(shape) + " does not hold " +
                          std::to_string(values.size()) + " values");
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    return t;
}

std::size_t Tensor::size() const { return data ? data->size() : 0; }

double Tensor::item() const {
    if (!is_scalar()) throw TensorError("item: tensor is not scalar, shape " + shape_str(shape));
    return (*data)[0];
}

Tensor& Tensor::requires_grad() {
    if (!grad) grad = std::make_shared<std::vector<double>>(size(), 0.0);
    return *this;
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

int Graph::add_node(std::size_t out_size, std::vector<int> inputs,
                    std::function<void(Graph&, int)> vjp) {
    Node n;
    n.out_size = out_size;
    n.inputs = std::move(inputs);
    n.vjp = std::move(vjp);
    nodes_.push_back(std::move(n));
    adj_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Graph::leaf(const Tensor& t) {
    Tensor out = t;
    const int id = add_node(t.size(), {}, nullptr);
    nodes_[id].leaf_grad = t.grad;
    out.node = id;
    return out;
}

int Graph::wrap(Tensor& t) {
    if (t.node >= 0) return t.node;
    t = leaf(t);
    return t.node;
}

std::vector<double>& Graph::adjoint(int id) {
    auto& a = adj_[id];
    if (a.empty()) a.assign(nodes_[id].out_size, 0.0);
    return a;
}

bool Graph::has_adjoint(int id) const { return !adj_[id].empty(); }

void Graph::backward(const Tensor& loss) {
    if (!loss.is_scalar()) throw TensorError("backward: loss must be scalar, got shape " +
                                             shape_str(loss.shape));
    if (loss.node < 0) throw TensorError("backward: loss is not attached to this graph");
    for (auto& a : adj_) a.clear();
    adjoint(loss.node)[0] = 1.0;
    for (int id = loss.node; id >= 0; --id) {
        if (adj_[id].empty()) continue;
        Node& n = nodes_[id];
        if (n.leaf_grad) {
            auto& gbuf = *n.leaf_grad;
            const auto& a = adj_[id];
            for (std::size_t i = 0; i < gbuf.size(); ++i) gbuf[i] += a[i];
        }
        if (n.vjp) n.vjp(*this, id);
    }
}

// ---- primitives ----

Tensor add(Graph& g, Tensor a, Tensor b) {
    const bool same = a.shape == b.shape;
    bool suffix = b.shape.size() <= a.shape.size() &&
                  std::equal(b.shape.rbegin(), b.shape.rend(), a.shape.rbegin());
    if (!same && !suffix) shape_fail("add", a.shape, b.shape);
    const int ia = g.wrap(a), ib = g.wrap(b);
    Tensor out = Tensor::zeros(a.shape);
    out.node = -1;
    const std::size_t bn = b.size(), n = a.size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i % bn];
    out.node = g.add_node(n, {ia, ib}, [ia, ib, bn, n](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        auto& db = gg.adjoint(ib);
        for (std::size_t i = 0; i < n; ++i) da[i] += up[i];
        for (std::size_t i = 0; i < n; ++i) db[i % bn] += up[i];
    });
    return out;
}

Tensor subtract(Graph& g, Tensor a, Tensor b) {
    if (a.shape != b.shape) shape_fail("subtract", a.shape, b.shape);
    const int ia = g.wrap(a), ib = g.wrap(b);
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    out.node = g.add_node(n, {ia, ib}, [ia, ib, n](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        auto& db = gg.adjoint(ib);
        for (std::size_t i = 0; i < n; ++i) {
            da[i] += up[i];
            db[i] -= up[i];
        }
    });
    return out;
}

Tensor multiply(Graph& g, Tensor a, Tensor b) {
    if (a.shape != b.shape) shape_fail("elementwise-multiply", a.shape, b.shape);
    const int ia = g.wrap(a), ib = g.wrap(b);
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    auto ad = a.data, bd = b.data;
    out.node = g.add_node(n, {ia, ib}, [ia, ib, n, ad, bd](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        auto& db = gg.adjoint(ib);
        for (std::size_t i = 0; i < n; ++i) {
            da[i] += up[i] * (*bd)[i];
            db[i] += up[i] * (*ad)[i];
        }
    });
    return out;
}

Tensor scale(Graph& g, Tensor a, double c) {
    const int ia = g.wrap(a);
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = c * (*a.data)[i];
    out.node = g.add_node(n, {ia}, [ia, c, n](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += c * up[i];
    });
    return out;
}

Tensor matmul(Graph& g, Tensor a, Tensor b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        shape_fail("matmul", a.shape, b.shape);
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    const int ia = g.wrap(a), ib = g.wrap(b);
    Tensor out = Tensor::zeros({m, n});
    kernels::matmul_nn(a.data->data(), b.data->data(), out.data->data(), m, k, n);
    auto ad = a.data, bd = b.data;
    out.node = g.add_node(m * n, {ia, ib}, [=](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        auto& db = gg.adjoint(ib);
        std::vector<double> tmp(m * k);
        kernels::matmul_nt(up.data(), bd->data(), tmp.data(), m, n, k);  // dA = up * B^T
        for (std::size_t i = 0; i < m * k; ++i) da[i] += tmp[i];
        tmp.assign(k * n, 0.0);
        kernels::matmul_tn(ad->data(), up.data(), tmp.data(), k, m, n);  // dB = A^T * up
        for (std::size_t i = 0; i < k * n; ++i) db[i] += tmp[i];
    });
    return out;
}

Tensor conv2d(Graph& g, Tensor x, Tensor w, std::size_t stride, std::size_t pad) {
    if (x.shape.size() != 4 || w.shape.size() != 4 || x.shape[1] != w.shape[1])
        shape_fail("conv2d", x.shape, w.shape);
    if (stride == 0) throw TensorError("conv2d: stride must be positive");
    const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::size_t oc = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    if (h + 2 * pad < kh || wd + 2 * pad < kw) shape_fail("conv2d", x.shape, w.shape);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
    const std::size_t ckk = c * kh * kw, ncols = n * oh * ow;

    const int ix = g.wrap(x), iw = g.wrap(w);
    auto col = std::make_shared<std::vector<double>>(ckk * ncols);
    kernels::im2col(x.data->data(), col->data(), n, c, h, wd, kh, kw, stride, pad, oh, ow);

    // tmp is (oc x ncols) with columns ordered (img, oy, ox); out is NCHW
    std::vector<double> tmp(oc * ncols);
    kernels::matmul_nn(w.data->data(), col->data(), tmp.data(), oc, ckk, ncols);
    Tensor out = Tensor::zeros({n, oc, oh, ow});
    for (std::size_t o = 0; o < oc; ++o)
        for (std::size_t img = 0; img < n; ++img)
            std::copy_n(tmp.data() + (o * n + img) * oh * ow, oh * ow,
                        out.data->data() + (img * oc + o) * oh * ow);

    auto wd_ptr = w.data;
    out.node = g.add_node(out.size(), {ix, iw}, [=](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& dx = gg.adjoint(ix);
        auto& dw = gg.adjoint(iw);
        // permute up (NCHW) back to (oc x ncols)
        std::vector<double> dtmp(oc * ncols);
        for (std::size_t o = 0; o < oc; ++o)
            for (std::size_t img = 0; img < n; ++img)
                std::copy_n(up.data() + (img * oc + o) * oh * ow, oh * ow,
                            dtmp.data() + (o * n + img) * oh * ow);
        std::vector<double> buf(oc * ckk);
        kernels::matmul_nt(dtmp.data(), col->data(), buf.data(), oc, ncols, ckk);
        for (std::size_t i = 0; i < oc * ckk; ++i) dw[i] += buf[i];
        std::vector<double> dcol(ckk * ncols);
        kernels::matmul_tn(wd_ptr->data(), dtmp.data(), dcol.data(), ckk, oc, ncols);
        std::vector<double> dxbuf(n * c * h * wd, 0.0);
        kernels::col2im(dcol.data(), dxbuf.data(), n, c, h, wd, kh, kw, stride, pad, oh, ow);
        for (std::size_t i = 0; i < dxbuf.size(); ++i) dx[i] += dxbuf[i];
    });
    return out;
}

namespace {

template <class Fwd, class Dfo>  // derivative expressed in terms of the output
Tensor unary_from_output(Graph& g, Tensor a, const char* /*name*/, Fwd fwd, Dfo dfo) {
    const int ia = g.wrap(a);
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = fwd((*a.data)[i]);
    auto od = out.data;
    out.node = g.add_node(n, {ia}, [ia, n, od, dfo](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += up[i] * dfo((*od)[i]);
    });
    return out;
}

}  // namespace

Tensor relu(Graph& g, Tensor a) {
    return unary_from_output(
        g, std::move(a), "relu", [](double x) { return x > 0 ? x : 0.0; },
        [](double y) { return y > 0 ? 1.0 : 0.0; });
}

Tensor tanh_op(Graph& g, Tensor a) {
    return unary_from_output(
        g, std::move(a), "tanh", [](double x) { return std::tanh(x); },
        [](double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Graph& g, Tensor a) {
    return unary_from_output(
        g, std::move(a), "sigmoid",
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double y) { return y * (1.0 - y); });
}

Tensor exp_op(Graph& g, Tensor a) {
    return unary_from_output(
        g, std::move(a), "exp", [](double x) { return std::exp(x); },
        [](double y) { return y; });
}

Tensor log_op(Graph& g, Tensor a) {
    for (double v : *a.data)
        if (!(v > 0.0)) throw TensorError("log: domain error, input " + std::to_string(v));
    const int ia = g.wrap(a);
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = std::log((*a.data)[i]);
    auto ad = a.data;
    out.node = g.add_node(n, {ia}, [ia, n, ad](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += up[i] / (*ad)[i];
    });
    return out;
}

Tensor logsumexp(Graph& g, Tensor a) {
    if (a.shape.empty()) shape_fail("logsumexp", a.shape, {});
    const std::size_t k = a.shape.back();
    const std::size_t rows = a.size() / k;
    const int ia = g.wrap(a);
    std::vector<std::size_t> oshape(a.shape.begin(), a.shape.end() - 1);
    if (oshape.empty()) oshape = {1};
    Tensor out = Tensor::zeros(oshape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a.data->data() + r * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
        (*out.data)[r] = mx + std::log(s);
    }
    auto ad = a.data, od = out.data;
    out.node = g.add_node(rows, {ia}, [ia, rows, k, ad, od](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < k; ++j)
                da[r * k + j] += up[r] * std::exp((*ad)[r * k + j] - (*od)[r]);
    });
    return out;
}

Tensor softmax(Graph& g, Tensor a) {
    if (a.shape.empty()) shape_fail("softmax", a.shape, {});
    const std::size_t k = a.shape.back();
    const std::size_t rows = a.size() / k;
    const int ia = g.wrap(a);
    Tensor out = Tensor::zeros(a.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a.data->data() + r * k;
        double* orow = out.data->data() + r * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += orow[j] = std::exp(row[j] - mx);
        for (std::size_t j = 0; j < k; ++j) orow[j] /= s;
    }
    auto od = out.data;
    out.node = g.add_node(a.size(), {ia}, [ia, rows, k, od](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = od->data() + r * k;
            const double* u = up.data() + r * k;
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j) dot += u[j] * y[j];
            for (std::size_t j = 0; j < k; ++j) da[r * k + j] += y[j] * (u[j] - dot);
        }
    });
    return out;
}

Tensor sum_all(Graph& g, Tensor a) {
    const int ia = g.wrap(a);
    const std::size_t n = a.size();
    double s = 0.0;
    for (double v : *a.data) s += v;
    Tensor out = Tensor::scalar(s);
    out.node = g.add_node(1, {ia}, [ia, n](Graph& gg, int id) {
        const double u = gg.adjoint(id)[0];
        auto& da = gg.adjoint(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += u;
    });
    return out;
}

Tensor mean_all(Graph& g, Tensor a) {
    const int ia = g.wrap(a);
    const std::size_t n = a.size();
    double s = 0.0;
    for (double v : *a.data) s += v;
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    out.node = g.add_node(1, {ia}, [ia, n](Graph& gg, int id) {
        const double u = gg.adjoint(id)[0] / static_cast<double>(n);
        auto& da = gg.adjoint(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += u;
    });
    return out;
}

namespace {

Tensor reduce_axis(Graph& g, Tensor a, std::size_t axis, bool mean, const char* name) {
    if (axis >= a.shape.size())
        throw TensorError(std::string(name) + ": axis " + std::to_string(axis) +
                          " out of range for shape " + shape_str(a.shape));
    std::size_t outer, len, inner;
    axis_split(a.shape, axis, outer, len, inner);
    const int ia = g.wrap(a);
    std::vector<std::size_t> oshape;
    for (std::size_t i = 0; i < a.shape.size(); ++i)
        if (i != axis) oshape.push_back(a.shape[i]);
    if (oshape.empty()) oshape = {1};
    Tensor out = Tensor::zeros(oshape);
    const double inv = mean ? 1.0 / static_cast<double>(len) : 1.0;
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i)
                (*out.data)[o * inner + i] += (*a.data)[(o * len + l) * inner + i] * inv;
    out.node = g.add_node(outer * inner, {ia}, [=](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i)
                    da[(o * len + l) * inner + i] += up[o * inner + i] * inv;
    });
    return out;
}

}  // namespace

Tensor sum_axis(Graph& g, Tensor a, std::size_t axis) {
    return reduce_axis(g, std::move(a), axis, false, "sum");
}

Tensor mean_axis(Graph& g, Tensor a, std::size_t axis) {
    return reduce_axis(g, std::move(a), axis, true, "mean");
}

Tensor concat(Graph& g, std::vector<Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw TensorError("concat: no inputs");
    const auto& s0 = parts[0].shape;
    if (axis >= s0.size()) throw TensorError("concat: axis out of range");
    std::size_t total = 0;
    for (auto& p : parts) {
        if (p.shape.size() != s0.size()) shape_fail("concat", s0, p.shape);
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != axis && p.shape[i] != s0[i]) shape_fail("concat", s0, p.shape);
        total += p.shape[axis];
    }
    std::vector<std::size_t> oshape = s0;
    oshape[axis] = total;
    std::size_t outer, len_out, inner;
    axis_split(oshape, axis, outer, len_out, inner);
    Tensor out = Tensor::zeros(oshape);
    std::vector<int> ids;
    std::vector<std::size_t> lens;
    std::size_t off = 0;
    for (auto& p : parts) {
        ids.push_back(g.wrap(p));
        const std::size_t len = p.shape[axis];
        lens.push_back(len);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.data->data() + o * len * inner, len * inner,
                        out.data->data() + (o * len_out + off) * inner);
        off += len;
    }
    out.node = g.add_node(out.size(), ids, [=](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        std::size_t roff = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            auto& da = gg.adjoint(ids[p]);
            const std::size_t len = lens[p];
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < len * inner; ++i)
                    da[o * len * inner + i] += up[(o * len_out + roff) * inner + i];
            roff += len;
        }
    });
    return out;
}

Tensor slice(Graph& g, Tensor a, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= a.shape.size() || start + len > a.shape[axis] || len == 0)
        throw TensorError("slice: range [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") invalid for axis " +
                          std::to_string(axis) + " of shape " + shape_str(a.shape));
    std::size_t outer, alen, inner;
    axis_split(a.shape, axis, outer, alen, inner);
    const int ia = g.wrap(a);
    std::vector<std::size_t> oshape = a.shape;
    oshape[axis] = len;
    Tensor out = Tensor::zeros(oshape);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.data->data() + (o * alen + start) * inner, len * inner,
                    out.data->data() + o * len * inner);
    out.node = g.add_node(out.size(), {ia}, [=](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < len * inner; ++i)
                da[(o * alen + start) * inner + i] += up[o * len * inner + i];
    });
    return out;
}

Tensor reshape(Graph& g, Tensor a, std::vector<std::size_t> shape) {
    if (shape_size(shape) != a.size()) shape_fail("reshape", a.shape, shape);
    const int ia = g.wrap(a);
    Tensor out;
    out.shape = std::move(shape);
    out.data = std::make_shared<std::vector<double>>(*a.data);
    const std::size_t n = a.size();
    out.node = g.add_node(n, {ia}, [ia, n](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += up[i];
    });
    return out;
}

Tensor sqnorm(Graph& g, Tensor a) {
    const int ia = g.wrap(a);
    const std::size_t n = a.size();
    double s = 0.0;
    for (double v : *a.data) s += v * v;
    Tensor out = Tensor::scalar(s);
    auto ad = a.data;
    out.node = g.add_node(1, {ia}, [ia, n, ad](Graph& gg, int id) {
        const double u = gg.adjoint(id)[0];
        auto& da = gg.adjoint(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += 2.0 * u * (*ad)[i];
    });
    return out;
}

Tensor permute_rows(Graph& g, Tensor a, const std::vector<std::size_t>& perm) {
    if (a.shape.size() != 2 || perm.size() != a.shape[0])
        throw TensorError("permute_rows: need 2-d input with one index per row");
    const std::size_t rows = a.shape[0], cols = a.shape[1];
    for (std::size_t r : perm)
        if (r >= rows) throw TensorError("permute_rows: index out of range");
    const int ia = g.wrap(a);
    Tensor out = Tensor::zeros(a.shape);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(a.data->data() + perm[r] * cols, cols, out.data->data() + r * cols);
    auto p = perm;
    out.node = g.add_node(a.size(), {ia}, [ia, p, cols](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        for (std::size_t r = 0; r < p.size(); ++r)
            for (std::size_t j = 0; j < cols; ++j) da[p[r] * cols + j] += up[r * cols + j];
    });
    return out;
}

Tensor grad_scale(Graph& g, Tensor a, double factor) {
    const int ia = g.wrap(a);
    Tensor out;
    out.shape = a.shape;
    out.data = std::make_shared<std::vector<double>>(*a.data);
    const std::size_t n = a.size();
    out.node = g.add_node(n, {ia}, [ia, factor, n](Graph& gg, int id) {
        const auto& up = gg.adjoint(id);
        auto& da = gg.adjoint(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += factor * up[i];
    });
    return out;
}

const std::vector<std::string>& primitive_names() {
    static const std::vector<std::string> names = {
        "add", "subtract", "elementwise-multiply", "scalar-scale", "matmul", "conv2d",
        "relu", "tanh", "sigmoid", "exp", "log", "logsumexp", "softmax",
        "mean", "sum", "concat", "slice", "reshape", "squared-l2-norm"};
    return names;
}

Tensor apply_primitive(Graph& g, const std::string& name, std::vector<Tensor> in,
                       const PrimitiveAttrs& at) {
    auto one = [&]() -> Tensor& {
        if (in.size() != 1) throw TensorError(name + ": expects 1 input");
        return in[0];
    };
    auto two = [&]() {
        if (in.size() != 2) throw TensorError(name + ": expects 2 inputs");
    };
    if (name == "add") { two(); return add(g, in[0], in[1]); }
    if (name == "subtract") { two(); return subtract(g, in[0], in[1]); }
    if (name == "elementwise-multiply") { two(); return multiply(g, in[0], in[1]); }
    if (name == "scalar-scale") return scale(g, one(), at.scalar);
    if (name == "matmul") { two(); return matmul(g, in[0], in[1]); }
    if (name == "conv2d") { two(); return conv2d(g, in[0], in[1], at.stride, at.pad); }
    if (name == "relu") return relu(g, one());
    if (name == "tanh") return tanh_op(g, one());
    if (name == "sigmoid") return sigmoid(g, one());
    if (name == "exp") return exp_op(g, one());
    if (name == "log") return log_op(g, one());
    if (name == "logsumexp") return logsumexp(g, one());
    if (name == "softmax") return softmax(g, one());
    if (name == "mean") return at.all ? mean_all(g, one()) : mean_axis(g, one(), at.axis);
    if (name == "sum") return at.all ? sum_all(g, one()) : sum_axis(g, one(), at.axis);
    if (name == "concat") return concat(g, std::move(in), at.axis);
    if (name == "slice") return slice(g, one(), at.axis, at.start, at.len);
    if (name == "reshape") return reshape(g, one(), at.shape);
    if (name == "squared-l2-norm") return sqnorm(g, one());
    throw TensorError("unknown primitive: " + name);
}

double finite_diff_check(const std::function<Tensor(Graph&)>& f,
                         std::vector<Tensor*> params, double epsilon) {
    if (!(epsilon > 0)) throw TensorError("finite_diff_check: epsilon must be positive");
    auto eval = [&]() {
        Graph g;
        return f(g).item();
    };
    const double v1 = eval(), v2 = eval();
    if (v1 != v2) throw TensorError("finite_diff_check: f is non-deterministic");

    for (Tensor* p : params) {
        p->requires_grad();
        p->zero_grad();
    }
    {
        Graph g;
        Tensor loss = f(g);
        g.backward(loss);
    }
    double worst = 0.0;
    for (Tensor* p : params) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double saved = (*p->data)[i];
            (*p->data)[i] = saved + epsilon;
            const double fp = eval();
            (*p->data)[i] = saved - epsilon;
            const double fm = eval();
            (*p->data)[i] = saved;
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double analytic = (*p->grad)[i];
            const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

void adam_update(Tensor& param, const std::vector<double>& grad, AdamState& state,
                 double lr, const std::string& name) {
    const std::size_t n = param.size();
    if (grad.size() != n)
        throw TensorError("adam_update: grad size mismatch for " + name);
    if (!(lr > 0)) throw TensorError("adam_update: lr must be positive");
    if (state.m.empty()) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
    }
    for (double gv : grad)
        if (std::isnan(gv)) throw TensorError("adam_update: NaN gradient in " + name);
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    auto& p = *param.data;
    for (std::size_t i = 0; i < n; ++i) {
        const double gv = grad[i] + state.weight_decay * p[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * gv;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * gv * gv;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

}  // namespace mic
