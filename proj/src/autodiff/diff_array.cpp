#include "pursuit/autodiff/diff_array.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pursuit::ad {
namespace {

thread_local bool g_grad_enabled = true;

#ifdef NDEBUG
std::atomic<bool> g_debug_checks{false};
#else
std::atomic<bool> g_debug_checks{true};
#endif

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ']';
  return out.str();
}

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

DiffArray DiffArray::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size())
    throw ShapeError("constant: shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return DiffArray(std::move(node));
}

DiffArray DiffArray::parameter(Shape shape, std::vector<double> values) {
  DiffArray out = constant(std::move(shape), std::move(values));
  out.node_->requires_grad = true;
  return out;
}

DiffArray DiffArray::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = numel(shape);
  DiffArray out = constant(std::move(shape), std::vector<double>(n, 0.0));
  out.node_->requires_grad = requires_grad;
  return out;
}

DiffArray DiffArray::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

DiffArray DiffArray::scalar(double value) { return constant({}, {value}); }

double DiffArray::item() const {
  if (size() != 1) throw ShapeError("item: array of shape " + to_string(shape()) + " is not a scalar");
  return node_->value[0];
}

void DiffArray::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

DiffArray DiffArray::detach() const { return constant(shape(), node_->value); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_debug_checks(bool enabled) { g_debug_checks.store(enabled); }
bool debug_checks() { return g_debug_checks.load(); }

void check_finite(const char* op, std::initializer_list<const DiffArray*> inputs) {
  if (!debug_checks()) return;
  for (const DiffArray* in : inputs) {
    for (double v : in->values())
      if (!std::isfinite(v))
        throw NonFiniteError(std::string(op) + ": non-finite input of shape " +
                             to_string(in->shape()));
  }
}

DiffArray make_result(const char* op, Shape shape, std::vector<double> values,
                      const std::vector<DiffArray>& parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const DiffArray& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const DiffArray& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return DiffArray(std::move(node));
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

void backward(const DiffArray& output) {
  if (!output.defined() || output.size() != 1)
    throw ShapeError("backward: output must have exactly one element, got shape " +
                     (output.defined() ? to_string(output.shape()) : std::string("<undefined>")));
  Node* root = output.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (Node* node : order) {
    if (!node->backward) continue;
    node->backward = nullptr;
    node->parents.clear();
  }
}

}  // namespace pursuit::ad
