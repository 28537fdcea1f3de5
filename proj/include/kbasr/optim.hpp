// Copyright 2026 The kbasr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef KBASR_OPTIM_HPP_
#define KBASR_OPTIM_HPP_

#include <cstdint>
#include <vector>

#include "kbasr/tape.hpp"

namespace kbasr {

struct TrainConfig {
  double peak_lr = 5e-5;
  long long warmup_steps = 1000;
  long long total_steps = 110000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double epsilon = 1e-8;
  int batch_size = 6;
  std::uint64_t seed = 0;
};

// Linear warmup to peak_lr at warmup_steps, then linear decay to zero at
// total_steps. step must lie in [0, total_steps].
double lr_at(long long step, const TrainConfig& cfg);

// Decoupled-weight-decay adaptive-moment optimizer over a fixed parameter
// set. Bias correction uses the internal update counter, which is part of
// checkpointed state.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, const TrainConfig& cfg);

  // One update using lr_at(schedule_step). Throws on non-finite gradients,
  // naming the offending parameter.
  void step(long long schedule_step);
  void zero_grad();

  struct Slot {
    Mat m, v;
  };

  const std::vector<Parameter*>& params() const { return params_; }
  std::vector<Slot>& slots() { return slots_; }
  long long& update_count() { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Slot> slots_;
  TrainConfig cfg_;
  long long t_ = 0;
};

}  // namespace kbasr

#endif  // KBASR_OPTIM_HPP_
