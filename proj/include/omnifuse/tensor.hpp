#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "omnifuse/rng.hpp"

namespace omnifuse {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

/// One node of the differentiation graph. Nodes are created in program
/// order; ids give a topological order (every node's parents have smaller
/// ids), which the backward pass walks in reverse exactly once.
struct TensorImpl {
    std::uint64_t id = 0;
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<double> grad; // allocated on first accumulation
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> pullback; // reads this->grad, accumulates into parents

    std::vector<double>& ensure_grad();
};

} // namespace detail

/// Dense row-major f64 tensor. Value-semantic handle: copies share the
/// underlying node, and node values are immutable once an op has produced
/// them. Leaves (parameters) may be rewritten between graph constructions
/// via mutable_data().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double v, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    /// Entries drawn i.i.d. normal(mean, stddev).
    static Tensor randn(const Shape& shape, Rng& rng, double mean = 0.0, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t i) const { return shape().at(i); }
    std::size_t size() const;

    const std::vector<double>& data() const;
    /// Leaf-only value rewrite (optimizer updates between steps).
    std::vector<double>& mutable_data();
    double item() const; // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool v); // leaves only

    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    /// Value copy detached from any graph.
    Tensor detach() const;

    std::uint64_t node_id() const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// ---- elementwise & linear algebra ----

Tensor add(const Tensor& a, const Tensor& b);      // same shape
Tensor sub(const Tensor& a, const Tensor& b);      // same shape
Tensor mul(const Tensor& a, const Tensor& b);      // same shape, elementwise
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);   // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                 // 2-D
Tensor add_row_bias(const Tensor& x, const Tensor& bias); // [L,d] + [d] per row

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF (erf-based).
Tensor gelu(const Tensor& x);

/// Normalizes each slice along the last dimension to zero mean / unit
/// variance (population variance + eps), then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Softmax along `axis` with max-subtraction.
Tensor softmax(const Tensor& x, int axis);

/// Row-wise softmax of a 2-D [Lq, Lk] score matrix. When causal, row i only
/// attends to columns j <= i + (Lk - Lq); masked entries get zero weight.
Tensor softmax_rows(const Tensor& x, bool causal = false);

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1); // rows [r0, r1)
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1); // cols [c0, c1)
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Appends `rows` zero rows (no gradient into the padding).
Tensor pad_rows(const Tensor& x, std::size_t rows);

Tensor sum(const Tensor& x); // scalar

/// coeffs[0]*parts[0] + ... + coeffs[n-1]*parts[n-1]; all parts same shape,
/// coeffs is a length-n vector (typically a trainable leaf).
Tensor linear_combination(const std::vector<Tensor>& parts, const Tensor& coeffs);

/// Gathers rows of `table` ([V,d]) by id; backward scatter-adds.
Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids);

/// Mean next-token cross-entropy over positions where mask is true.
/// logits [T,V], targets length T. Throws ContractError if mask is all false.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets,
                     const std::vector<bool>& mask);

// ---- attention ----

struct AttentionWeights {
    Tensor wq, wk, wv, wo; // all [d,d]
    Tensor bq, bv, bo;     // all [d]; no key bias — softmax ignores
                           // row-constant score shifts, so it cannot train

    static AttentionWeights init(std::size_t d, Rng& rng, bool requires_grad);
    std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

/// Scaled dot-product attention over pre-projected q/k/v, split into
/// `heads` column groups, scale 1/sqrt(d/heads), concatenated back.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                      bool causal = false);

/// Full multi-head attention: project q/k/v, attend, output-project.
/// q [Lq,d], k/v [Lk,d] -> [Lq,d].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionWeights& w, std::size_t heads, bool causal = false);

// ---- reverse pass ----

/// Populates grad on every requires_grad node reachable from `loss`.
/// `loss` must be scalar. Visits each recorded op exactly once, in reverse
/// topological order.
void backward(const Tensor& loss);

} // namespace omnifuse
