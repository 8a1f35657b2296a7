// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode tape. Ops append themselves in execution order,
// which is a topological order of the DAG, so replaying the list backwards
// propagates adjoints correctly. The tape owns nothing but closures; tensor
// buffers are shared with the closures via Tensor handles.
#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "geoattn/tensor.hpp"

namespace geoattn {

class Tape {
 public:
  // `output` is the tensor this op produced; its adjoint buffer is cleared at
  // the start of every backward pass so repeated passes accumulate exactly
  // one contribution per pass into the leaves.
  void record(const Tensor& output, std::function<void()> backward) {
    outputs_.push_back(output);
    ops_.push_back(std::move(backward));
  }

  std::size_t size() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }

  void clear() {
    ops_.clear();
    outputs_.clear();
  }

  // Reverse replay from a recorded scalar. Leaf (requires_grad) tensors keep
  // accumulating across calls; intermediate adjoints are reset per pass.
  void backward(Tensor& loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("Tape::backward: loss must be a scalar");
    for (Tensor& t : outputs_) t.zero_grad();
    bool seeded = false;
    for (Tensor& t : outputs_) {
      if (t.same_buffer(loss)) {
        t.grad()[0] = 1.0;
        seeded = true;
      }
    }
    if (!seeded)
      throw std::invalid_argument("Tape::backward: loss was not recorded on this tape");
    for (std::size_t i = ops_.size(); i > 0; --i) ops_[i - 1]();
  }

 private:
  std::vector<std::function<void()>> ops_;
  std::vector<Tensor> outputs_;
};

}  // namespace geoattn
