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

#include "nbf/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace nbf::ad
{

struct AdamState
{
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
};

/// One bias-corrected Adam update of `param` in place.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState &state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Adam over a fixed list of parameter tensors, reading their gradients.
class Adam
{
  public:
    explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(double lr);
    void zero_grad();
    std::uint64_t steps() const { return state_.empty() ? 0 : state_[0].t; }

  private:
    std::vector<Tensor> params_;
    std::vector<AdamState> state_;
    double beta1_, beta2_, eps_;
};

/// One-cycle schedule: cosine rise from lr_max/div to lr_max over the first
/// pct_start of the run, then cosine decay to lr_max/final_div.
double onecycle_lr(std::size_t step, std::size_t total_steps, double lr_max, double pct_start = 0.3,
                   double div = 25.0, double final_div = 1e4);

} // namespace nbf::ad
