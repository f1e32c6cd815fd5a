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

#include "nbf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace nbf::kernels
{

namespace
{

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

} // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const double *a, const double *b, double *c, bool accumulate)
{
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel if (m * n * k >= kParallelWork && m > 1)
    {
        std::vector<double> acc(n);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < rows; ++i)
        {
            std::fill(acc.begin(), acc.end(), 0.0);
            const double *ai = a + i * k;
            for (std::size_t p = 0; p < k; ++p)
            {
                const double av = ai[p];
                const double *bp = b + p * n;
                for (std::size_t j = 0; j < n; ++j)
                    acc[j] += av * bp[j];
            }
            double *ci = c + i * n;
            if (accumulate)
                for (std::size_t j = 0; j < n; ++j)
                    ci[j] += acc[j];
            else
                std::copy(acc.begin(), acc.end(), ci);
        }
    }
}

void gemm_serial(std::size_t m, std::size_t n, std::size_t k, const double *a, const double *b, double *c,
                 bool accumulate)
{
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
        {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
}

void transpose(std::size_t rows, std::size_t cols, const double *in, double *out)
{
    constexpr std::size_t tile = 32;
    for (std::size_t i0 = 0; i0 < rows; i0 += tile)
        for (std::size_t j0 = 0; j0 < cols; j0 += tile)
            for (std::size_t i = i0; i < std::min(rows, i0 + tile); ++i)
                for (std::size_t j = j0; j < std::min(cols, j0 + tile); ++j)
                    out[j * rows + i] = in[i * cols + j];
}

} // namespace nbf::kernels

namespace nbf::ad
{

std::size_t numel(const Shape &s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape &s)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i)
        os << (i ? ", " : "") << s[i];
    os << ']';
    return os.str();
}

std::vector<double> &Node::grad_buffer()
{
    if (grad.size() != value.size())
        grad.assign(value.size(), 0.0);
    return grad;
}

namespace
{

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values, bool requires_grad)
{
    if (shape.empty() || std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end())
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " must have positive dimensions");
    if (numel(shape) != values.size())
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return n;
}

std::size_t norm_axis(int axis, std::size_t ndim, const char *op)
{
    const int nd = static_cast<int>(ndim);
    const int ax = axis < 0 ? axis + nd : axis;
    if (ax < 0 || ax >= nd)
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                                    std::to_string(ndim) + "-d tensor");
    return static_cast<std::size_t>(ax);
}

struct Split
{
    std::size_t outer = 1, len = 1, inner = 1;
};

Split split_at(const Shape &s, std::size_t axis)
{
    Split r;
    for (std::size_t i = 0; i < axis; ++i)
        r.outer *= s[i];
    r.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i)
        r.inner *= s[i];
    return r;
}

std::size_t broadcast_inner(const char *op, const Tensor &a, const Tensor &b)
{
    const Shape &sa = a.shape(), &sb = b.shape();
    if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin()))
        throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                                    " are not broadcast-compatible");
    return b.size();
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char *op, const Tensor &a, const Tensor &b, Fwd f, DA da, DB db)
{
    const std::size_t inner = broadcast_inner(op, a, b);
    const std::size_t total = a.size();
    const auto &av = a.value();
    const auto &bv = b.value();
    std::vector<double> out(total);
    for (std::size_t i = 0; i < total; ++i)
        out[i] = f(av[i], bv[i % inner]);
    return make_result(a.shape(), std::move(out), {a, b}, [a, b, inner, da, db](Node &self) {
        const auto &g = self.grad;
        const auto &av = a.value();
        const auto &bv = b.value();
        if (a.requires_grad())
        {
            auto &ga = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * da(av[i], bv[i % inner]);
        }
        if (b.requires_grad())
        {
            auto &gb = b.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                gb[i % inner] += g[i] * db(av[i], bv[i % inner]);
        }
    });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor &a, Fwd f, Deriv d)
{
    std::vector<double> out(a.size());
    const auto &av = a.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = f(av[i]);
    return make_result(a.shape(), std::move(out), {a}, [a, d](Node &self) {
        auto &ga = a.node()->grad_buffer();
        const auto &av = a.value();
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] += self.grad[i] * d(av[i], self.value[i]);
    });
}

double stable_sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> values)
{
    return Tensor(new_node(std::move(shape), std::move(values), false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values)
{
    return Tensor(new_node(std::move(shape), std::move(values), true));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v)
{
    const std::size_t n = numel(shape);
    return constant(std::move(shape), std::vector<double>(n, v));
}

std::size_t Tensor::dim(int i) const { return shape()[norm_axis(i, ndim(), "dim")]; }

double Tensor::item() const
{
    if (size() != 1)
        throw std::invalid_argument("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return value()[0];
}

void Tensor::zero_grad() const
{
    if (!node_->grad.empty())
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const
{
    const std::vector<double> one(size(), 1.0);
    backward(one);
}

void Tensor::backward(std::span<const double> seed) const
{
    if (seed.size() != size())
        throw std::invalid_argument("backward: seed size does not match " + shape_str(shape()));
    if (!requires_grad())
        return;

    // iterative post-order DFS
    std::vector<Node *> order;
    std::unordered_set<Node *> seen;
    std::vector<std::pair<Node *, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty())
    {
        auto &[n, next] = stack.back();
        if (next < n->parents.size())
        {
            Node *p = n->parents[next++].get();
            if (seen.insert(p).second)
                stack.emplace_back(p, 0);
        }
        else
        {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (Node *n : order)
    {
        if (n->backward)
            n->grad.assign(n->value.size(), 0.0);
        else
            n->grad_buffer();
    }
    for (std::size_t i = 0; i < seed.size(); ++i)
        node_->grad[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward)
            (*it)->backward(**it);
}

Tensor Tensor::detach() const { return constant(shape(), value()); }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents, BackwardFn fn)
{
    auto n = new_node(std::move(shape), std::move(value), false);
    for (const Tensor &p : parents)
        if (p.requires_grad())
            n->parents.push_back(p.node_ptr());
    if (!n->parents.empty())
    {
        n->requires_grad = true;
        n->backward = std::move(fn);
    }
    return Tensor(std::move(n));
}

Tensor add(const Tensor &a, const Tensor &b)
{
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor &a, const Tensor &b)
{
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor &a, const Tensor &b)
{
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor div(const Tensor &a, const Tensor &b)
{
    return binary(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor &a, double s)
{
    return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor &a, double s)
{
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor &a)
{
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor &a)
{
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x, double) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x); });
}

Tensor sigmoid(const Tensor &a)
{
    return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor &a)
{
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor &a)
{
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor &a)
{
    return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor &a)
{
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor matmul(const Tensor &a, const Tensor &b)
{
    if (a.ndim() < 2 || b.ndim() < 2)
        throw std::invalid_argument("matmul: operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                    " need at least 2 dimensions");
    const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    const bool shared = b.ndim() == 2;
    const bool batch_ok = shared || (b.ndim() == a.ndim() && std::equal(a.shape().begin(), a.shape().end() - 2,
                                                                         b.shape().begin()));
    if (b.dim(-2) != k || !batch_ok)
        throw std::invalid_argument("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                    " are incompatible");
    const std::size_t batch = a.size() / (m * k);
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(batch * m * n);
    if (shared)
        kernels::gemm(batch * m, n, k, a.value().data(), b.value().data(), out.data());
    else
        for (std::size_t t = 0; t < batch; ++t)
            kernels::gemm(m, n, k, a.value().data() + t * m * k, b.value().data() + t * k * n, out.data() + t * m * n);

    return make_result(std::move(out_shape), std::move(out), {a, b}, [a, b, m, n, k, batch, shared](Node &self) {
        const double *g = self.grad.data();
        if (shared)
        {
            const std::size_t rows = batch * m;
            if (a.requires_grad())
            {
                std::vector<double> bt(n * k);
                kernels::transpose(k, n, b.value().data(), bt.data());
                kernels::gemm(rows, k, n, g, bt.data(), a.node()->grad_buffer().data(), true);
            }
            if (b.requires_grad())
            {
                std::vector<double> at(k * rows);
                kernels::transpose(rows, k, a.value().data(), at.data());
                kernels::gemm(k, n, rows, at.data(), g, b.node()->grad_buffer().data(), true);
            }
            return;
        }
        std::vector<double> bt(n * k), at(k * m);
        for (std::size_t t = 0; t < batch; ++t)
        {
            const double *gt = g + t * m * n;
            if (a.requires_grad())
            {
                kernels::transpose(k, n, b.value().data() + t * k * n, bt.data());
                kernels::gemm(m, k, n, gt, bt.data(), a.node()->grad_buffer().data() + t * m * k, true);
            }
            if (b.requires_grad())
            {
                kernels::transpose(m, k, a.value().data() + t * m * k, at.data());
                kernels::gemm(k, n, m, at.data(), gt, b.node()->grad_buffer().data() + t * k * n, true);
            }
        }
    });
}

Tensor transpose(const Tensor &a)
{
    if (a.ndim() < 2)
        throw std::invalid_argument("transpose: shape " + shape_str(a.shape()) + " needs at least 2 dimensions");
    const std::size_t r = a.dim(-2), c = a.dim(-1), batch = a.size() / (r * c);
    Shape s = a.shape();
    std::swap(s[s.size() - 1], s[s.size() - 2]);
    std::vector<double> out(a.size());
    for (std::size_t t = 0; t < batch; ++t)
        kernels::transpose(r, c, a.value().data() + t * r * c, out.data() + t * r * c);
    return make_result(std::move(s), std::move(out), {a}, [a, r, c, batch](Node &self) {
        auto &ga = a.node()->grad_buffer();
        std::vector<double> tmp(r * c);
        for (std::size_t t = 0; t < batch; ++t)
        {
            kernels::transpose(c, r, self.grad.data() + t * r * c, tmp.data());
            for (std::size_t i = 0; i < r * c; ++i)
                ga[t * r * c + i] += tmp[i];
        }
    });
}

Tensor permute(const Tensor &a, const std::vector<std::size_t> &perm)
{
    const std::size_t nd = a.ndim();
    std::vector<std::size_t> check = perm;
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < check.size(); ++i)
        if (check[i] != i || check.size() != nd)
            throw std::invalid_argument("permute: invalid permutation for shape " + shape_str(a.shape()));

    std::vector<std::size_t> in_stride(nd, 1);
    for (std::size_t i = nd - 1; i > 0; --i)
        in_stride[i - 1] = in_stride[i] * a.shape()[i];
    Shape out_shape(nd);
    for (std::size_t i = 0; i < nd; ++i)
        out_shape[i] = a.shape()[perm[i]];

    // source offset of every output element, walked as an odometer
    auto src = std::make_shared<std::vector<std::size_t>>(a.size());
    std::vector<std::size_t> idx(nd, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < a.size(); ++o)
    {
        (*src)[o] = off;
        for (std::size_t d = nd; d-- > 0;)
        {
            off += in_stride[perm[d]];
            if (++idx[d] < out_shape[d])
                break;
            off -= in_stride[perm[d]] * out_shape[d];
            idx[d] = 0;
        }
    }
    std::vector<double> out(a.size());
    for (std::size_t o = 0; o < out.size(); ++o)
        out[o] = a.value()[(*src)[o]];
    return make_result(std::move(out_shape), std::move(out), {a}, [a, src](Node &self) {
        auto &ga = a.node()->grad_buffer();
        for (std::size_t o = 0; o < self.grad.size(); ++o)
            ga[(*src)[o]] += self.grad[o];
    });
}

Tensor reshape(const Tensor &a, Shape shape)
{
    if (numel(shape) != a.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    return make_result(std::move(shape), a.value(), {a}, [a](Node &self) {
        auto &ga = a.node()->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] += self.grad[i];
    });
}

Tensor expand(const Tensor &a, std::size_t n)
{
    Shape s{n};
    s.insert(s.end(), a.shape().begin(), a.shape().end());
    std::vector<double> out;
    out.reserve(n * a.size());
    for (std::size_t r = 0; r < n; ++r)
        out.insert(out.end(), a.value().begin(), a.value().end());
    return make_result(std::move(s), std::move(out), {a}, [a, n](Node &self) {
        auto &ga = a.node()->grad_buffer();
        const std::size_t m = ga.size();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t i = 0; i < m; ++i)
                ga[i] += self.grad[r * m + i];
    });
}

Tensor concat(const std::vector<Tensor> &parts, int axis)
{
    if (parts.empty())
        throw std::invalid_argument("concat: no inputs");
    const Shape &s0 = parts[0].shape();
    const std::size_t ax = norm_axis(axis, s0.size(), "concat");
    Shape out_shape = s0;
    out_shape[ax] = 0;
    for (const Tensor &p : parts)
    {
        Shape s = p.shape();
        if (s.size() != s0.size())
            throw std::invalid_argument("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != ax && s[d] != s0[d])
                throw std::invalid_argument("concat: shapes " + shape_str(s0) + " and " + shape_str(s) +
                                            " differ off the concat axis");
        out_shape[ax] += s[ax];
    }
    const Split sp = split_at(out_shape, ax);
    std::vector<double> out(numel(out_shape));
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const Tensor &p : parts)
    {
        const std::size_t chunk = p.shape()[ax] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(p.value().begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                        out.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + offset));
        offsets.push_back(offset);
        offset += chunk;
    }
    return make_result(std::move(out_shape), std::move(out), parts, [parts, offsets, sp, ax](Node &self) {
        for (std::size_t q = 0; q < parts.size(); ++q)
        {
            if (!parts[q].requires_grad())
                continue;
            auto &gp = parts[q].node()->grad_buffer();
            const std::size_t chunk = parts[q].shape()[ax] * sp.inner;
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < chunk; ++i)
                    gp[o * chunk + i] += self.grad[o * sp.len * sp.inner + offsets[q] + i];
        }
    });
}

Tensor slice(const Tensor &a, int axis, std::size_t start, std::size_t len)
{
    const std::size_t ax = norm_axis(axis, a.ndim(), "slice");
    if (len == 0 || start + len > a.shape()[ax])
        throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                                    ") out of bounds for " + shape_str(a.shape()));
    const Split sp = split_at(a.shape(), ax);
    Shape s = a.shape();
    s[ax] = len;
    const std::size_t chunk = len * sp.inner;
    std::vector<double> out(sp.outer * chunk);
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(a.value().begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + start * sp.inner), chunk,
                    out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
    return make_result(std::move(s), std::move(out), {a}, [a, sp, start, chunk](Node &self) {
        auto &ga = a.node()->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < chunk; ++i)
                ga[o * sp.len * sp.inner + start * sp.inner + i] += self.grad[o * chunk + i];
    });
}

Tensor index_select(const Tensor &a, const std::vector<std::size_t> &rows)
{
    if (rows.empty())
        throw std::invalid_argument("index_select: empty index list");
    const std::size_t n_rows = a.shape()[0], width = a.size() / n_rows;
    Shape s = a.shape();
    s[0] = rows.size();
    std::vector<double> out(rows.size() * width);
    for (std::size_t r = 0; r < rows.size(); ++r)
    {
        if (rows[r] >= n_rows)
            throw std::invalid_argument("index_select: row " + std::to_string(rows[r]) + " out of range for " +
                                        shape_str(a.shape()));
        std::copy_n(a.value().begin() + static_cast<std::ptrdiff_t>(rows[r] * width), width,
                    out.begin() + static_cast<std::ptrdiff_t>(r * width));
    }
    return make_result(std::move(s), std::move(out), {a}, [a, rows, width](Node &self) {
        auto &ga = a.node()->grad_buffer();
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t i = 0; i < width; ++i)
                ga[rows[r] * width + i] += self.grad[r * width + i];
    });
}

Tensor softmax(const Tensor &a)
{
    const std::size_t d = a.dim(-1), rows = a.size() / d;
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r)
    {
        const double *x = a.value().data() + r * d;
        double *y = out.data() + r * d;
        const double mx = *std::max_element(x, x + d);
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i)
        {
            y[i] = std::exp(x[i] - mx);
            s += y[i];
        }
        for (std::size_t i = 0; i < d; ++i)
            y[i] /= s;
    }
    return make_result(a.shape(), std::move(out), {a}, [a, d, rows](Node &self) {
        auto &ga = a.node()->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
        {
            const double *y = self.value.data() + r * d;
            const double *g = self.grad.data() + r * d;
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                dot += g[i] * y[i];
            for (std::size_t i = 0; i < d; ++i)
                ga[r * d + i] += y[i] * (g[i] - dot);
        }
    });
}

Tensor layer_norm(const Tensor &a, const Tensor &gamma, const Tensor &beta, double eps)
{
    const std::size_t d = a.dim(-1), rows = a.size() / d;
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
        throw std::invalid_argument("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                                    shape_str(beta.shape()) + " must be [" + std::to_string(d) + "]");
    auto xhat = std::make_shared<std::vector<double>>(a.size());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r)
    {
        const double *x = a.value().data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            mu += x[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            var += (x[i] - mu) * (x[i] - mu);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t i = 0; i < d; ++i)
        {
            const double xh = (x[i] - mu) * rs;
            (*xhat)[r * d + i] = xh;
            out[r * d + i] = xh * gamma.value()[i] + beta.value()[i];
        }
    }
    return make_result(a.shape(), std::move(out), {a, gamma, beta}, [a, gamma, beta, xhat, rstd, d, rows](Node &self) {
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r)
        {
            const double *g = self.grad.data() + r * d;
            const double *xh = xhat->data() + r * d;
            if (gamma.requires_grad())
            {
                auto &gg = gamma.node()->grad_buffer();
                for (std::size_t i = 0; i < d; ++i)
                    gg[i] += g[i] * xh[i];
            }
            if (beta.requires_grad())
            {
                auto &gb = beta.node()->grad_buffer();
                for (std::size_t i = 0; i < d; ++i)
                    gb[i] += g[i];
            }
            if (a.requires_grad())
            {
                auto &ga = a.node()->grad_buffer();
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t i = 0; i < d; ++i)
                {
                    const double gx = g[i] * gamma.value()[i];
                    m1 += gx;
                    m2 += gx * xh[i];
                }
                m1 *= inv_d;
                m2 *= inv_d;
                for (std::size_t i = 0; i < d; ++i)
                    ga[r * d + i] += (*rstd)[r] * (g[i] * gamma.value()[i] - m1 - xh[i] * m2);
            }
        }
    });
}

Tensor normalize_last(const Tensor &a, double eps)
{
    const std::size_t d = a.dim(-1), rows = a.size() / d;
    auto norms = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r)
    {
        const double *x = a.value().data() + r * d;
        double s = eps * eps;
        for (std::size_t i = 0; i < d; ++i)
            s += x[i] * x[i];
        const double n = std::sqrt(s);
        (*norms)[r] = n;
        for (std::size_t i = 0; i < d; ++i)
            out[r * d + i] = x[i] / n;
    }
    return make_result(a.shape(), std::move(out), {a}, [a, norms, d, rows](Node &self) {
        auto &ga = a.node()->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
        {
            const double *y = self.value.data() + r * d;
            const double *g = self.grad.data() + r * d;
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                dot += g[i] * y[i];
            for (std::size_t i = 0; i < d; ++i)
                ga[r * d + i] += (g[i] - y[i] * dot) / (*norms)[r];
        }
    });
}

Tensor sum(const Tensor &a)
{
    double s = 0.0;
    for (double v : a.value())
        s += v;
    return make_result({1}, {s}, {a}, [a](Node &self) {
        auto &ga = a.node()->grad_buffer();
        for (double &g : ga)
            g += self.grad[0];
    });
}

Tensor sum(const Tensor &a, int axis)
{
    const std::size_t ax = norm_axis(axis, a.ndim(), "sum");
    const Split sp = split_at(a.shape(), ax);
    Shape s = a.shape();
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(ax));
    if (s.empty())
        s = {1};
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out[o * sp.inner + i] += a.value()[(o * sp.len + l) * sp.inner + i];
    return make_result(std::move(s), std::move(out), {a}, [a, sp](Node &self) {
        auto &ga = a.node()->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t l = 0; l < sp.len; ++l)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    ga[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
    });
}

Tensor mean(const Tensor &a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor mean(const Tensor &a, int axis)
{
    const std::size_t ax = norm_axis(axis, a.ndim(), "mean");
    return scale(sum(a, axis), 1.0 / static_cast<double>(a.shape()[ax]));
}

Tensor smooth_l1_loss(const Tensor &pred, std::span<const double> target, double beta)
{
    if (target.size() != pred.size())
        throw std::invalid_argument("smooth_l1_loss: " + std::to_string(target.size()) + " targets for prediction " +
                                    shape_str(pred.shape()));
    if (!(beta > 0.0))
        throw std::invalid_argument("smooth_l1_loss: beta must be positive");
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
    {
        const double e = pred.value()[i] - target[i];
        s += std::abs(e) < beta ? 0.5 * e * e / beta : std::abs(e) - 0.5 * beta;
    }
    std::vector<double> t(target.begin(), target.end());
    return make_result({1}, {s * inv_n}, {pred}, [pred, t = std::move(t), beta, inv_n](Node &self) {
        auto &gp = pred.node()->grad_buffer();
        const double g = self.grad[0] * inv_n;
        for (std::size_t i = 0; i < gp.size(); ++i)
        {
            const double e = pred.value()[i] - t[i];
            gp[i] += g * (std::abs(e) < beta ? e / beta : (e > 0.0 ? 1.0 : -1.0));
        }
    });
}

Tensor bce_with_logits(const Tensor &logits, std::span<const double> target)
{
    if (target.size() != logits.size())
        throw std::invalid_argument("bce_with_logits: " + std::to_string(target.size()) + " targets for logits " +
                                    shape_str(logits.shape()));
    const double inv_n = 1.0 / static_cast<double>(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i)
    {
        const double z = logits.value()[i];
        s += std::max(z, 0.0) - z * target[i] + std::log1p(std::exp(-std::abs(z)));
    }
    std::vector<double> t(target.begin(), target.end());
    return make_result({1}, {s * inv_n}, {logits}, [logits, t = std::move(t), inv_n](Node &self) {
        auto &gl = logits.node()->grad_buffer();
        const double g = self.grad[0] * inv_n;
        for (std::size_t i = 0; i < gl.size(); ++i)
            gl[i] += g * (stable_sigmoid(logits.value()[i]) - t[i]);
    });
}

Tensor mse_loss(const Tensor &a, const Tensor &b)
{
    if (a.shape() != b.shape())
        throw std::invalid_argument("mse_loss: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                    " differ");
    return mean(square(sub(a, b)));
}

} // namespace nbf::ad
