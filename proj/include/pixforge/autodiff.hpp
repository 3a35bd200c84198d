#pragma once

// Dense tensors with tape-free reverse-mode differentiation.
//
// Every op result keeps shared references to its parents and a closure that
// pushes its gradient back into them. `backward` sorts the reachable graph
// topologically, runs each closure once, and then releases the graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pixforge::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }

  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->parents.empty(); }
  // Empty span until a backward pass has reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  // Leaf-only mutation, used by optimizers and checkpoint loading.
  void assign(std::span<const double> values);
  std::span<double> mutable_data();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  // Copy of the values as a new leaf without history.
  Tensor detach(bool requires_grad = false) const;

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Elementwise binary ops broadcast numpy-style (right-aligned, extents equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Reductions over the trailing axis keep it as extent 1.
Tensor sum_last(const Tensor& a);
Tensor mean_last(const Tensor& a);

// Rank-2 only.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Softmax over the trailing axis. `allowed`, when non-empty, has one entry
// per trailing-axis position; disallowed positions get probability 0.
Tensor softmax_last(const Tensor& a, const std::vector<bool>& allowed = {});

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_last(const std::vector<Tensor>& parts);
// out.flat[i] = a.flat[index[i]]; gradient scatters back additively.
Tensor take(const Tensor& a, std::vector<std::size_t> index, Shape shape);
// Rows of a rank-2 table.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);

// Cosine similarity of two tensors viewed as flat vectors.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// mean + std * noise, with `noise` a constant standard-normal draw.
Tensor reparameterize(const Tensor& mean, double stddev, const Tensor& noise);

// Reverse pass from a scalar. Accumulates into every requires_grad leaf, then
// releases the graph hanging off `loss`.
void backward(const Tensor& loss);

// Counter-based generator: the value at (key, counter) is a pure function of
// both, so any draw can be reproduced without replaying a stream.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t bits(std::uint64_t counter) const;
  // Uniform on (0, 1].
  double uniform(std::uint64_t counter) const;
  // Standard normal via Box-Muller on counters (2i, 2i+1).
  double normal(std::uint64_t index) const;

  std::vector<double> normals(std::size_t count) const;

  // Sequential helpers; advance an internal cursor.
  std::uint64_t next_bits() { return bits(cursor_++); }
  double next_uniform() { return uniform(cursor_++); }
  std::size_t next_index(std::size_t bound);

 private:
  std::uint64_t key_;
  std::uint64_t cursor_ = 0;
};

std::uint64_t mix64(std::uint64_t z);
std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

}  // namespace pixforge::ad
