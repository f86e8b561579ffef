#include "omnifuse/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "omnifuse/errors.hpp"

namespace omnifuse {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

ImplPtr new_leaf(const Shape& shape, std::vector<double> value, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    impl->shape = shape;
    impl->value = std::move(value);
    impl->requires_grad = requires_grad;
    impl->is_leaf = true;
    return impl;
}

/// Op-node factory. Drops the graph edges when no parent needs gradients,
/// so frozen-weight forwards allocate no tape.
Tensor make_op(const Shape& shape, std::vector<double> value, std::vector<ImplPtr> parents,
               std::function<void(detail::TensorImpl&)> pullback) {
    bool rg = false;
    for (const auto& p : parents)
        if (p->requires_grad) rg = true;
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    impl->shape = shape;
    impl->value = std::move(value);
    impl->requires_grad = rg;
    impl->is_leaf = false;
    if (rg) {
        impl->parents = std::move(parents);
        impl->pullback = std::move(pullback);
    }
    return Tensor(impl);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void accumulate(detail::TensorImpl& node, const double* g, std::size_t n) {
    auto& buf = node.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) buf[i] += g[i];
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

} // namespace

std::vector<double>& detail::TensorImpl::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// ---- Tensor handle ----

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(new_leaf(shape, std::vector<double>(numel(shape), 0.0), requires_grad));
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
    return Tensor(new_leaf(shape, std::vector<double>(numel(shape), v), requires_grad));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
    if (data.size() != numel(shape)) {
        throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " +
                         shape_str(shape));
    }
    return Tensor(new_leaf(shape, std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor(new_leaf({1}, {v}, requires_grad));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double mean, double stddev, bool requires_grad) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.normal(mean, stddev);
    return Tensor(new_leaf(shape, std::move(v), requires_grad));
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->value.size(); }
const std::vector<double>& Tensor::data() const { return impl_->value; }

std::vector<double>& Tensor::mutable_data() {
    if (!impl_->is_leaf) throw ContractError("mutable_data: only leaves may be rewritten");
    return impl_->value;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
    return impl_->value[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
    if (!impl_->is_leaf) throw ContractError("set_requires_grad: only valid on leaves");
    impl_->requires_grad = v;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->value.size(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw StateError("grad: no gradient recorded; run backward first");
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
    return Tensor(new_leaf(impl_->shape, impl_->value, false));
}

std::uint64_t Tensor::node_id() const { return impl_->id; }

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    const auto &av = a.data(), &bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto pa = a.impl(), pb = b.impl();
    return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](detail::TensorImpl& n) {
        if (pa->requires_grad) accumulate(*pa, n.grad.data(), n.grad.size());
        if (pb->requires_grad) accumulate(*pb, n.grad.data(), n.grad.size());
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    const auto &av = a.data(), &bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    auto pa = a.impl(), pb = b.impl();
    return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](detail::TensorImpl& n) {
        if (pa->requires_grad) accumulate(*pa, n.grad.data(), n.grad.size());
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    const auto &av = a.data(), &bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    auto pa = a.impl(), pb = b.impl();
    return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](detail::TensorImpl& n) {
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    auto pa = a.impl();
    return make_op(a.shape(), std::move(out), {pa}, [pa, s](detail::TensorImpl& n) {
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * s;
    });
}

// ---- matmul family ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    const auto &av = a.data(), &bv = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = &bv[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    auto pa = a.impl(), pb = b.impl();
    return make_op({m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](detail::TensorImpl& node) {
        const auto& g = node.grad;
        if (pa->requires_grad) { // dA = G * B^T
            auto& ga = pa->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* grow = &g[i * n];
                    const double* brow = &pb->value[p * n];
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    ga[i * k + p] += s;
                }
        }
        if (pb->requires_grad) { // dB = A^T * G
            auto& gb = pb->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = pa->value[i * k + p];
                    if (aip == 0.0) continue;
                    const double* grow = &g[i * n];
                    double* gbrow = &gb[p * n];
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    const auto& av = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    auto pa = a.impl();
    return make_op({n, m}, std::move(out), {pa}, [pa, m, n](detail::TensorImpl& node) {
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += node.grad[j * m + i];
    });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || x.dim(1) != bias.dim(0)) {
        throw ShapeError("add_row_bias: shapes " + shape_str(x.shape()) + " and " +
                         shape_str(bias.shape()));
    }
    const std::size_t L = x.dim(0), d = x.dim(1);
    std::vector<double> out(L * d);
    const auto &xv = x.data(), &bv = bias.data();
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + bv[j];
    auto px = x.impl(), pb = bias.impl();
    return make_op(x.shape(), std::move(out), {px, pb}, [px, pb, L, d](detail::TensorImpl& node) {
        if (px->requires_grad) accumulate(*px, node.grad.data(), node.grad.size());
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += node.grad[i * d + j];
        }
    });
}

// ---- nonlinearities ----

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.size());
    const auto& xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double cdf = 0.5 * std::erfc(-xv[i] * kInvSqrt2);
        out[i] = xv[i] * cdf;
    }
    auto px = x.impl();
    return make_op(x.shape(), std::move(out), {px}, [px](detail::TensorImpl& node) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
            const double v = px->value[i];
            const double cdf = 0.5 * std::erfc(-v * kInvSqrt2);
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            g[i] += node.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d) {
        throw ShapeError("layer_norm: last dim " + shape_str(x.shape()) + " vs gain " +
                         shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()));
    }
    const std::size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size()); // saved for backward
    std::vector<double> inv_sigma(rows);
    const auto &xv = x.data(), &gv = gain.data(), &bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = &xv[r * d];
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = gv[j] * h + bv[j];
        }
    }
    auto px = x.impl(), pg = gain.impl(), pb = bias.impl();
    return make_op(x.shape(), std::move(out), {px, pg, pb},
                   [px, pg, pb, d, rows, xhat = std::move(xhat),
                    inv_sigma = std::move(inv_sigma)](detail::TensorImpl& node) {
        const auto& g = node.grad;
        if (pg->requires_grad) {
            auto& gg = pg->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (pb->requires_grad) {
            auto& gb = pb->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (px->requires_grad) {
            auto& gx = px->ensure_grad();
            const auto& gv = pg->value;
            for (std::size_t r = 0; r < rows; ++r) {
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = g[r * d + j] * gv[j];
                    sum_dh += dh;
                    sum_dh_h += dh * xhat[r * d + j];
                }
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = g[r * d + j] * gv[j];
                    gx[r * d + j] += inv_sigma[r] *
                                     (dh - inv_d * sum_dh - xhat[r * d + j] * inv_d * sum_dh_h);
                }
            }
        }
    });
}

namespace {

/// Shared softmax body: lines of length n addressed by (outer, inner) strides.
Tensor softmax_lines(const Tensor& x, std::size_t outer, std::size_t n, std::size_t inner) {
    std::vector<double> out(x.size());
    const auto& xv = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = xv[base];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(xv[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            const double iz = 1.0 / z;
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] *= iz;
        }
    }
    auto px = x.impl();
    return make_op(x.shape(), std::move(out), {px},
                   [px, outer, n, inner](detail::TensorImpl& node) {
        auto& gx = px->ensure_grad();
        const auto &g = node.grad, &y = node.value;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < n; ++j)
                    gx[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
            }
        }
    });
}

} // namespace

Tensor softmax(const Tensor& x, int axis) {
    const int r = static_cast<int>(x.rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<std::size_t>(i));
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(static_cast<std::size_t>(i));
    return softmax_lines(x, outer, x.dim(static_cast<std::size_t>(axis)), inner);
}

Tensor softmax_rows(const Tensor& x, bool causal) {
    if (x.rank() != 2) throw ShapeError("softmax_rows: expected 2-D, got " + shape_str(x.shape()));
    if (!causal) return softmax_lines(x, x.dim(0), x.dim(1), 1);

    const std::size_t Lq = x.dim(0), Lk = x.dim(1);
    if (Lk < Lq) throw ShapeError("softmax_rows: causal needs Lk >= Lq, got " + shape_str(x.shape()));
    const std::size_t offset = Lk - Lq;
    std::vector<double> out(x.size(), 0.0);
    const auto& xv = x.data();
    for (std::size_t i = 0; i < Lq; ++i) {
        const std::size_t valid = i + offset + 1; // columns [0, valid)
        const double* row = &xv[i * Lk];
        double mx = row[0];
        for (std::size_t j = 1; j < valid; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < valid; ++j) {
            const double e = std::exp(row[j] - mx);
            out[i * Lk + j] = e;
            z += e;
        }
        const double iz = 1.0 / z;
        for (std::size_t j = 0; j < valid; ++j) out[i * Lk + j] *= iz;
    }
    auto px = x.impl();
    return make_op(x.shape(), std::move(out), {px}, [px, Lq, Lk, offset](detail::TensorImpl& node) {
        auto& gx = px->ensure_grad();
        const auto &g = node.grad, &y = node.value;
        for (std::size_t i = 0; i < Lq; ++i) {
            const std::size_t valid = i + offset + 1;
            double dot = 0.0;
            for (std::size_t j = 0; j < valid; ++j) dot += g[i * Lk + j] * y[i * Lk + j];
            for (std::size_t j = 0; j < valid; ++j)
                gx[i * Lk + j] += y[i * Lk + j] * (g[i * Lk + j] - dot);
        }
    });
}

// ---- slicing / concatenation ----

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
    if (x.rank() != 2 || r0 > r1 || r1 > x.dim(0)) {
        throw ShapeError("slice_rows: rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") of " + shape_str(x.shape()));
    }
    const std::size_t d = x.dim(1), L = r1 - r0;
    std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(r0 * d),
                            x.data().begin() + static_cast<std::ptrdiff_t>(r1 * d));
    auto px = x.impl();
    return make_op({L, d}, std::move(out), {px}, [px, r0, L, d](detail::TensorImpl& node) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < L * d; ++i) g[r0 * d + i] += node.grad[i];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    if (x.rank() != 2 || c0 > c1 || c1 > x.dim(1)) {
        throw ShapeError("slice_cols: cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") of " + shape_str(x.shape()));
    }
    const std::size_t L = x.dim(0), d = x.dim(1), w = c1 - c0;
    std::vector<double> out(L * w);
    const auto& xv = x.data();
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * d + c0 + j];
    auto px = x.impl();
    return make_op({L, w}, std::move(out), {px}, [px, c0, L, d, w](detail::TensorImpl& node) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * d + c0 + j] += node.grad[i * w + j];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no parts");
    const std::size_t d = parts.front().dim(1);
    std::size_t L = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != d) {
            throw ShapeError("concat_rows: width mismatch " + shape_str(p.shape()) + " vs [*x" +
                             std::to_string(d) + "]");
        }
        L += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(L * d);
    std::vector<ImplPtr> impls;
    std::vector<std::size_t> row_offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        impls.push_back(p.impl());
        row_offsets.push_back(off);
        off += p.dim(0);
    }
    return make_op({L, d}, std::move(out), impls,
                   [impls, row_offsets, d](detail::TensorImpl& node) {
        for (std::size_t t = 0; t < impls.size(); ++t) {
            if (!impls[t]->requires_grad) continue;
            auto& g = impls[t]->ensure_grad();
            const std::size_t base = row_offsets[t] * d;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[base + i];
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no parts");
    const std::size_t L = parts.front().dim(0);
    std::size_t d = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != L) {
            throw ShapeError("concat_cols: row-count mismatch " + shape_str(p.shape()));
        }
        d += p.dim(1);
    }
    std::vector<double> out(L * d);
    std::vector<ImplPtr> impls;
    std::vector<std::size_t> col_offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        const auto& pv = p.data();
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * d + off + j] = pv[i * w + j];
        impls.push_back(p.impl());
        col_offsets.push_back(off);
        off += w;
    }
    return make_op({L, d}, std::move(out), impls,
                   [impls, col_offsets, L, d](detail::TensorImpl& node) {
        for (std::size_t t = 0; t < impls.size(); ++t) {
            if (!impls[t]->requires_grad) continue;
            auto& g = impls[t]->ensure_grad();
            const std::size_t w = impls[t]->shape[1];
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    g[i * w + j] += node.grad[i * d + col_offsets[t] + j];
        }
    });
}

Tensor pad_rows(const Tensor& x, std::size_t rows) {
    if (x.rank() != 2) throw ShapeError("pad_rows: expected 2-D, got " + shape_str(x.shape()));
    const std::size_t L = x.dim(0), d = x.dim(1);
    std::vector<double> out(x.data());
    out.resize((L + rows) * d, 0.0);
    auto px = x.impl();
    return make_op({L + rows, d}, std::move(out), {px}, [px, L, d](detail::TensorImpl& node) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < L * d; ++i) g[i] += node.grad[i];
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    auto px = x.impl();
    return make_op({1}, {s}, {px}, [px](detail::TensorImpl& node) {
        auto& g = px->ensure_grad();
        for (auto& v : g) v += node.grad[0];
    });
}

Tensor linear_combination(const std::vector<Tensor>& parts, const Tensor& coeffs) {
    if (parts.empty()) throw ContractError("linear_combination: no parts");
    if (coeffs.rank() != 1 || coeffs.dim(0) != parts.size()) {
        throw ShapeError("linear_combination: " + std::to_string(parts.size()) + " parts vs coeffs " +
                         shape_str(coeffs.shape()));
    }
    const Shape& shape = parts.front().shape();
    for (const auto& p : parts) check_same_shape(p, parts.front(), "linear_combination");
    const std::size_t n = parts.front().size();
    std::vector<double> out(n, 0.0);
    const auto& cv = coeffs.data();
    for (std::size_t t = 0; t < parts.size(); ++t) {
        const auto& pv = parts[t].data();
        for (std::size_t i = 0; i < n; ++i) out[i] += cv[t] * pv[i];
    }
    std::vector<ImplPtr> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    auto pc = coeffs.impl();
    std::vector<ImplPtr> all = impls;
    all.push_back(pc);
    return make_op(shape, std::move(out), all, [impls, pc, n](detail::TensorImpl& node) {
        for (std::size_t t = 0; t < impls.size(); ++t) {
            if (impls[t]->requires_grad) {
                auto& g = impls[t]->ensure_grad();
                const double c = pc->value[t];
                for (std::size_t i = 0; i < n; ++i) g[i] += c * node.grad[i];
            }
        }
        if (pc->requires_grad) {
            auto& gc = pc->ensure_grad();
            for (std::size_t t = 0; t < impls.size(); ++t) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += node.grad[i] * impls[t]->value[i];
                gc[t] += s;
            }
        }
    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding_lookup: table " + shape_str(table.shape()));
    const std::size_t V = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    const auto& tv = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= V) {
            throw ContractError("embedding_lookup: id " + std::to_string(ids[i]) +
                                " out of range for vocab " + std::to_string(V));
        }
        std::copy_n(&tv[ids[i] * d], d, &out[i * d]);
    }
    auto pt = table.impl();
    return make_op({ids.size(), d}, std::move(out), {pt}, [pt, ids, d](detail::TensorImpl& node) {
        auto& g = pt->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) g[ids[i] * d + j] += node.grad[i * d + j];
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets,
                     const std::vector<bool>& mask) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()));
    const std::size_t T = logits.dim(0), V = logits.dim(1);
    if (targets.size() != T || mask.size() != T) {
        throw ShapeError("cross_entropy: " + std::to_string(T) + " rows vs " +
                         std::to_string(targets.size()) + " targets / " +
                         std::to_string(mask.size()) + " mask entries");
    }
    std::size_t m = 0;
    for (bool b : mask)
        if (b) ++m;
    if (m == 0) throw ContractError("cross_entropy: loss mask is all false");

    const auto& lv = logits.data();
    double loss = 0.0;
    std::vector<double> probs(T * V, 0.0); // rows for masked-out positions stay zero
    for (std::size_t t = 0; t < T; ++t) {
        if (!mask[t]) continue;
        if (targets[t] >= V) {
            throw ContractError("cross_entropy: target " + std::to_string(targets[t]) +
                                " out of range for vocab " + std::to_string(V));
        }
        const double* row = &lv[t * V];
        double mx = row[0];
        for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        loss += lse - row[targets[t]];
        const double iz = 1.0 / z;
        for (std::size_t j = 0; j < V; ++j) probs[t * V + j] = std::exp(row[j] - mx) * iz;
    }
    loss /= static_cast<double>(m);

    auto pl = logits.impl();
    return make_op({1}, {loss}, {pl},
                   [pl, targets, mask, m, T, V, probs = std::move(probs)](detail::TensorImpl& node) {
        auto& g = pl->ensure_grad();
        const double s = node.grad[0] / static_cast<double>(m);
        for (std::size_t t = 0; t < T; ++t) {
            if (!mask[t]) continue;
            for (std::size_t j = 0; j < V; ++j) g[t * V + j] += s * probs[t * V + j];
            g[t * V + targets[t]] -= s;
        }
    });
}

// ---- attention ----

AttentionWeights AttentionWeights::init(std::size_t d, Rng& rng, bool requires_grad) {
    const double std = 1.0 / std::sqrt(static_cast<double>(d));
    AttentionWeights w;
    w.wq = Tensor::randn({d, d}, rng, 0.0, std, requires_grad);
    w.wk = Tensor::randn({d, d}, rng, 0.0, std, requires_grad);
    w.wv = Tensor::randn({d, d}, rng, 0.0, std, requires_grad);
    w.wo = Tensor::randn({d, d}, rng, 0.0, std, requires_grad);
    w.bq = Tensor::zeros({d}, requires_grad);
    w.bv = Tensor::zeros({d}, requires_grad);
    w.bo = Tensor::zeros({d}, requires_grad);
    return w;
}

std::vector<std::pair<std::string, Tensor>> AttentionWeights::named(const std::string& prefix) const {
    return {{prefix + ".wq", wq}, {prefix + ".bq", bq}, {prefix + ".wk", wk},
            {prefix + ".wv", wv}, {prefix + ".bv", bv}, {prefix + ".wo", wo}, {prefix + ".bo", bo}};
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                      bool causal) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
        throw ShapeError("attention_core: expected 2-D q/k/v");
    }
    const std::size_t d = q.dim(1);
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("attention_core: width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (k.dim(1) != d || v.dim(1) != d) {
        throw ShapeError("attention_core: widths " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
    }
    if (k.dim(0) != v.dim(0)) {
        throw ShapeError("attention_core: key rows " + shape_str(k.shape()) + " vs value rows " +
                         shape_str(v.shape()));
    }
    const std::size_t dh = d / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
        Tensor attn = softmax_rows(scores, causal);
        outs.push_back(matmul(attn, vh));
    }
    return concat_cols(outs);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionWeights& w, std::size_t heads, bool causal) {
    Tensor qp = add_row_bias(matmul(q, w.wq), w.bq);
    Tensor kp = matmul(k, w.wk);
    Tensor vp = add_row_bias(matmul(v, w.wv), w.bv);
    Tensor core = attention_core(qp, kp, vp, heads, causal);
    return add_row_bias(matmul(core, w.wo), w.bo);
}

// ---- reverse pass ----

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward: loss must be a defined scalar, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
    }
    auto root = loss.impl();
    if (!root->requires_grad) {
        throw ContractError("backward: loss does not depend on any requires_grad tensor");
    }

    // Collect the recorded subgraph (nodes contributing gradients).
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<detail::TensorImpl*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const detail::TensorImpl* a, const detail::TensorImpl* b) { return a->id > b->id; });

    root->ensure_grad()[0] += 1.0;
    for (auto* n : order) {
        if (n->pullback && n->grad.size() == n->value.size()) n->pullback(*n);
    }
}

} // namespace omnifuse
