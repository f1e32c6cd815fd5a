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

#include "nbf/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nbf::ad
{

void adam_step(std::span<double> param, std::span<const double> grad, AdamState &state, double lr, double beta1,
               double beta2, double eps)
{
    if (grad.size() != param.size())
        throw std::invalid_argument("adam_step: gradient size does not match parameter size");
    if (state.m.size() != param.size())
    {
        state.m.assign(param.size(), 0.0);
        state.v.assign(param.size(), 0.0);
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < param.size(); ++i)
    {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), state_(params_.size()), beta1_(beta1), beta2_(beta2), eps_(eps)
{
}

void Adam::step(double lr)
{
    for (std::size_t i = 0; i < params_.size(); ++i)
    {
        Tensor &p = params_[i];
        adam_step(p.mutable_value(), p.mutable_grad(), state_[i], lr, beta1_, beta2_, eps_);
    }
}

void Adam::zero_grad()
{
    for (Tensor &p : params_)
        p.zero_grad();
}

double onecycle_lr(std::size_t step, std::size_t total_steps, double lr_max, double pct_start, double div,
                   double final_div)
{
    if (step > total_steps)
        throw std::invalid_argument("onecycle_lr: step beyond total_steps");
    const double lr_start = lr_max / div;
    const double lr_end = lr_max / final_div;
    const double warm = pct_start * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (s <= warm && warm > 0.0)
        return lr_start + (lr_max - lr_start) * 0.5 * (1.0 - std::cos(std::numbers::pi * s / warm));
    const double rest = static_cast<double>(total_steps) - warm;
    if (rest <= 0.0)
        return lr_end;
    return lr_end + (lr_max - lr_end) * 0.5 * (1.0 + std::cos(std::numbers::pi * (s - warm) / rest));
}

} // namespace nbf::ad
