// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense 4-D tensors with a reverse-mode gradient tape.

#ifndef MLFF_TENSOR_HPP
#define MLFF_TENSOR_HPP

#include <array>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlff {

#ifdef MLFF_USE_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

// ---------------------------------------------------------------------------
// Errors. Every layer of the library throws one of these; the C API maps them
// onto status codes.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated (shapes, value domains).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An operation would produce a tensor with a zero extent.
class DegenerateShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// A model or run configuration is invalid.
class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------

/// Extents [n, c, h, w].
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {
class TapeState;
}

class Tape;

/// Immutable dense tensor. Values are shared between copies; a tensor that
/// was produced on a tape carries a node handle into it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Scalar> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Scalar value);
  static Tensor scalar(Scalar value);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_.numel(); }
  bool defined() const { return data_ != nullptr; }

  std::span<const Scalar> data() const { return {data_->data(), data_->size()}; }
  std::vector<Scalar> to_vector() const { return *data_; }
  const std::shared_ptr<const std::vector<Scalar>>& buffer() const { return data_; }
  Scalar item() const;
  Scalar at(int n, int c, int h, int w) const;

  bool on_tape() const { return node_ >= 0; }
  int node() const { return node_; }
  const std::shared_ptr<detail::TapeState>& tape_state() const { return tape_; }

  /// Same values, no tape connection.
  Tensor detach() const;

 private:
  friend class Tape;
  friend class detail::TapeState;

  Shape shape_;
  std::shared_ptr<const std::vector<Scalar>> data_;
  std::shared_ptr<detail::TapeState> tape_;
  int node_ = -1;
};

/// Receives the upstream gradient of an op's output and accumulates into the
/// gradient buffers of its inputs. A null input pointer means that input does
/// not need a gradient.
using BackwardFn =
    std::function<void(std::span<const Scalar> grad_out, std::span<Scalar* const> grad_in)>;

namespace detail {

struct Node {
  std::size_t size = 0;
  std::vector<int> inputs;  // -1 for inputs that are not on the tape
  BackwardFn backward;      // empty for leaves
};

class TapeState {
 public:
  int add_node(Node node);
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }

  void backward(int loss_node);
  std::vector<Scalar> grad(int id, std::size_t size) const;

  static void attach(Tensor& t, std::shared_ptr<TapeState> state, int id) {
    t.tape_ = std::move(state);
    t.node_ = id;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<Scalar>> grads_;
};

/// Builds the result of an op. The result is attached to the tape shared by
/// the inputs, or detached when no input is on a tape.
Tensor record(Shape shape, std::vector<Scalar> values, std::initializer_list<const Tensor*> inputs,
              BackwardFn backward);
Tensor record(Shape shape, std::vector<Scalar> values, std::span<const Tensor* const> inputs,
              BackwardFn backward);

}  // namespace detail

/// Append-only record of differentiable operations. Nodes are appended in
/// evaluation order, so reverse append order is a valid topological order.
class Tape {
 public:
  Tape();

  /// Registers a value as a gradient-receiving leaf.
  Tensor leaf(const Tensor& value);
  Tensor leaf(Shape shape, std::vector<Scalar> values);

  /// Runs reverse accumulation from a single-element loss. Previous gradients
  /// are discarded, so repeated calls give identical results.
  void backward(const Tensor& loss);

  /// Gradient of the last backward pass; zeros for unreachable tensors.
  std::vector<Scalar> grad(const Tensor& t) const;

  std::size_t size() const { return state_->size(); }

 private:
  std::shared_ptr<detail::TapeState> state_;
};

}  // namespace mlff

#endif  // MLFF_TENSOR_HPP
