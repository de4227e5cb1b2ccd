#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pursuit::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// One vertex of the computation graph. Leaves have no backward function.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first use.
  std::span<double> grad_buffer();
};

/// Dense float64 array that may take part in a reverse-mode graph.
/// Copies are shallow: they share the underlying node.
class DiffArray {
 public:
  DiffArray() = default;
  explicit DiffArray(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static DiffArray constant(Shape shape, std::vector<double> values);
  static DiffArray parameter(Shape shape, std::vector<double> values);
  static DiffArray zeros(Shape shape, bool requires_grad = false);
  static DiffArray full(Shape shape, double value);
  static DiffArray scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Writable values; only meaningful for leaves (parameters, constants).
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  /// New leaf holding a copy of the values, detached from any graph.
  DiffArray detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Boolean array used by masking ops; true marks a valid (kept) entry.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> values;
};

/// Whether new ops record graph edges on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// When on, every op rejects non-finite inputs with NonFiniteError.
/// Defaults to on in builds without NDEBUG.
void set_debug_checks(bool enabled);
bool debug_checks();

/// Hook for ops defined outside this library (fused kernels). Records the
/// parents and backward function only when grad mode is on and some parent
/// requires a gradient.
DiffArray make_result(const char* op, Shape shape, std::vector<double> values,
                      const std::vector<DiffArray>& parents, std::function<void(Node&)> backward);

/// Throws NonFiniteError naming `op` when debug checks are on and any input
/// holds NaN or Inf.
void check_finite(const char* op, std::initializer_list<const DiffArray*> inputs);

/// Keeps freed multi-megabyte buffers in the heap instead of returning them
/// to the OS, so each training step does not page-fault its graph back in.
/// Affects glibc only; call once at program start.
void tune_allocator();

/// Reverse sweep from a single-element output. Accumulates into every
/// reachable leaf that requires a gradient, then releases the graph.
void backward(const DiffArray& output);

}  // namespace pursuit::ad
