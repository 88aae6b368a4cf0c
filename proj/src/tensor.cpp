// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/tensor.hpp"

#include <algorithm>

namespace mlff {

std::string Shape::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values) : shape_(shape) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw DegenerateShapeError("tensor extents must be >= 1, got " + shape.str());
  }
  if (values.size() != shape.numel()) {
    throw ContractError("tensor of shape " + shape.str() + " needs " +
                        std::to_string(shape.numel()) + " values, got " +
                        std::to_string(values.size()));
  }
  data_ = std::make_shared<const std::vector<Scalar>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(shape, Scalar(0)); }

Tensor Tensor::full(Shape shape, Scalar value) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw DegenerateShapeError("tensor extents must be >= 1, got " + shape.str());
  }
  return Tensor(shape, std::vector<Scalar>(shape.numel(), value));
}

Tensor Tensor::scalar(Scalar value) { return Tensor(Shape{}, {value}); }

Scalar Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_.str());
  }
  return (*data_)[0];
}

Scalar Tensor::at(int n, int c, int h, int w) const {
  const auto idx = ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  return (*data_)[idx];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

namespace detail {

int TapeState::add_node(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

void TapeState::backward(int loss_node) {
  grads_.assign(nodes_.size(), {});
  grads_[static_cast<std::size_t>(loss_node)].assign(1, Scalar(1));

  std::vector<Scalar*> grad_in;
  for (int id = loss_node; id >= 0; --id) {
    auto& g = grads_[static_cast<std::size_t>(id)];
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (g.empty() || !node.backward) {
      continue;
    }
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const int in = node.inputs[i];
      if (in < 0) {
        continue;
      }
      auto& gi = grads_[static_cast<std::size_t>(in)];
      if (gi.empty()) {
        gi.assign(nodes_[static_cast<std::size_t>(in)].size, Scalar(0));
      }
      grad_in[i] = gi.data();
    }
    node.backward(g, grad_in);
  }
}

std::vector<Scalar> TapeState::grad(int id, std::size_t size) const {
  if (id < 0 || static_cast<std::size_t>(id) >= grads_.size() ||
      grads_[static_cast<std::size_t>(id)].empty()) {
    return std::vector<Scalar>(size, Scalar(0));
  }
  return grads_[static_cast<std::size_t>(id)];
}

Tensor record(Shape shape, std::vector<Scalar> values, std::span<const Tensor* const> inputs,
              BackwardFn backward) {
  Tensor out(shape, std::move(values));
  std::shared_ptr<TapeState> tape;
  for (const Tensor* in : inputs) {
    if (in->on_tape()) {
      if (tape && tape != in->tape_state()) {
        throw ContractError("operation mixes tensors from different tapes");
      }
      tape = in->tape_state();
    }
  }
  if (!tape) {
    return out;
  }
  Node node;
  node.size = out.numel();
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    node.inputs.push_back(in->on_tape() ? in->node() : -1);
  }
  node.backward = std::move(backward);
  const int id = tape->add_node(std::move(node));
  TapeState::attach(out, tape, id);
  return out;
}

Tensor record(Shape shape, std::vector<Scalar> values, std::initializer_list<const Tensor*> inputs,
              BackwardFn backward) {
  return record(shape, std::move(values), std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                std::move(backward));
}

}  // namespace detail

Tape::Tape() : state_(std::make_shared<detail::TapeState>()) {}

Tensor Tape::leaf(const Tensor& value) {
  detail::Node node;
  node.size = value.numel();
  Tensor t = value.detach();
  t.tape_ = state_;
  t.node_ = state_->add_node(std::move(node));
  return t;
}

Tensor Tape::leaf(Shape shape, std::vector<Scalar> values) {
  return leaf(Tensor(shape, std::move(values)));
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward needs a single-element loss, got shape " + loss.shape().str());
  }
  if (!loss.on_tape() || loss.tape_state() != state_) {
    throw ContractError("backward: loss is not recorded on this tape");
  }
  state_->backward(loss.node());
}

std::vector<Scalar> Tape::grad(const Tensor& t) const {
  if (!t.on_tape() || t.tape_state() != state_) {
    return std::vector<Scalar>(t.numel(), Scalar(0));
  }
  return state_->grad(t.node(), t.numel());
}

}  // namespace mlff
