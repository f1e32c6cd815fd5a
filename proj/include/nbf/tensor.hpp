// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nbf::kernels
{

/// C[m, n] = A[m, k] B[k, n] (or C += when accumulate). Row-parallel; each
/// output element is summed over k in ascending order, so the result is
/// bit-identical to gemm_serial.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double *a, const double *b, double *c,
          bool accumulate = false);
void gemm_serial(std::size_t m, std::size_t n, std::size_t k, const double *a, const double *b, double *c,
                 bool accumulate = false);

/// out[cols, rows] = in[rows, cols]^T
void transpose(std::size_t rows, std::size_t cols, const double *in, double *out);

} // namespace nbf::kernels

namespace nbf::ad
{

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape &s);
std::string shape_str(const Shape &s);

struct Node;
using BackwardFn = std::function<void(Node &)>;

struct Node
{
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;

    /// Gradient buffer, allocated on first use.
    std::vector<double> &grad_buffer();
};

/// Handle to a graph node. Copies share the node.
class Tensor
{
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor parameter(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v) { return constant({1}, {v}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape &shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    /// Size of dimension i; negative i counts from the back.
    std::size_t dim(int i) const;
    std::size_t size() const { return node_->value.size(); }
    const std::vector<double> &value() const { return node_->value; }
    std::vector<double> &mutable_value() { return node_->value; }
    double item() const;
    bool requires_grad() const { return node_->requires_grad; }

    /// Empty until a backward pass reaches this tensor.
    const std::vector<double> &grad() const { return node_->grad; }
    std::vector<double> &mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() const;

    /// Reverse-mode sweep from this tensor. Leaf gradients accumulate;
    /// intermediate gradients are reset first.
    void backward() const;
    void backward(std::span<const double> seed) const;

    /// Same values, cut from the graph.
    Tensor detach() const;

    Node *node() const { return node_.get(); }
    const std::shared_ptr<Node> &node_ptr() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

/// Builds a result node. Parents that do not require gradients are
/// dropped; if none remain the result is a constant and `fn` is discarded.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents, BackwardFn fn);

// Elementwise binary ops. Shapes must match or b's shape must be a
// suffix of a's (b is broadcast over a's leading dimensions).
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor div(const Tensor &a, const Tensor &b);

Tensor scale(const Tensor &a, double s);
Tensor add_scalar(const Tensor &a, double s);

Tensor relu(const Tensor &a);
Tensor gelu(const Tensor &a);
Tensor sigmoid(const Tensor &a);
Tensor exp(const Tensor &a);
Tensor log(const Tensor &a);
Tensor sqrt(const Tensor &a);
Tensor square(const Tensor &a);

/// a [..., m, k] times b [k, n] (shared) or b [..., k, n] (same leading dims).
Tensor matmul(const Tensor &a, const Tensor &b);
/// Swaps the last two dimensions.
Tensor transpose(const Tensor &a);
Tensor permute(const Tensor &a, const std::vector<std::size_t> &perm);
Tensor reshape(const Tensor &a, Shape shape);
/// Prepends a dimension of size n by repetition.
Tensor expand(const Tensor &a, std::size_t n);
Tensor concat(const std::vector<Tensor> &parts, int axis);
Tensor slice(const Tensor &a, int axis, std::size_t start, std::size_t len);
/// Rows of a (first dimension) at the given indices.
Tensor index_select(const Tensor &a, const std::vector<std::size_t> &rows);

Tensor softmax(const Tensor &a);
/// Normalises the last dimension, then applies gamma and beta of that size.
Tensor layer_norm(const Tensor &a, const Tensor &gamma, const Tensor &beta, double eps = 1e-5);
/// Divides each vector along the last dimension by its Euclidean norm.
Tensor normalize_last(const Tensor &a, double eps = 1e-12);

Tensor sum(const Tensor &a);
Tensor sum(const Tensor &a, int axis);
Tensor mean(const Tensor &a);
Tensor mean(const Tensor &a, int axis);

/// Mean of the elementwise Smooth-L1 between a and a fixed target.
Tensor smooth_l1_loss(const Tensor &pred, std::span<const double> target, double beta);
/// Mean binary cross-entropy of logits against fixed 0/1 targets.
Tensor bce_with_logits(const Tensor &logits, std::span<const double> target);
/// Mean squared difference; both sides may carry gradients.
Tensor mse_loss(const Tensor &a, const Tensor &b);

} // namespace nbf::ad
