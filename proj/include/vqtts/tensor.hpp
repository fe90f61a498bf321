#pragma once

// Reverse-mode differentiable tensors over dense 64-bit reals.
//
// A Tensor is a value-semantic handle on a graph node. Ops (see ops.hpp)
// build a DAG; backward() walks it once in reverse topological order and
// returns a gradient map keyed by node. Parameters keep their own grad
// buffer which the trainer fills from gradient maps and zeroes explicitly,
// so independent graphs sharing the same parameters can be evaluated in
// parallel and reduced in a fixed order.

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace vqtts {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

class GradStore;
struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;   // leaf parameter flag
  bool needs_grad = false;      // this node or an ancestor requires grad
  const char* op = "leaf";
  std::string name;             // set for named parameters
  std::vector<NodePtr> inputs;
  // Adds this node's contribution to its inputs' gradients.
  std::function<void(const std::vector<double>& gout, GradStore&)> backward;
  // Accumulation buffer for parameters; owned by the trainer.
  std::vector<double> grad;

  int64_t numel() const { return shape_numel(shape); }
};

// Gradient map produced by one backward() call.
class GradStore {
 public:
  std::vector<double>& acc(const Node* n) {
    auto it = grads_.find(n);
    if (it == grads_.end())
      it = grads_.emplace(n, std::vector<double>(n->numel(), 0.0)).first;
    return it->second;
  }
  const std::vector<double>* find(const Node* n) const {
    auto it = grads_.find(n);
    return it == grads_.end() ? nullptr : &it->second;
  }
  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Node*, std::vector<double>> grads_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) +
                                  " does not match data length " + std::to_string(data.size()));
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return Tensor(n);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)), 0.0);
    return from(std::move(shape), std::move(d), requires_grad);
  }
  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int64_t numel() const { return n_->numel(); }
  std::vector<double>& value() { return n_->value; }
  const std::vector<double>& value() const { return n_->value; }
  double item() const {
    if (n_->numel() != 1)
      throw std::invalid_argument("Tensor::item: tensor is not scalar, shape " + shape_str(n_->shape));
    return n_->value[0];
  }
  bool requires_grad() const { return n_->requires_grad; }
  bool needs_grad() const { return n_->needs_grad; }
  const std::string& name() const { return n_->name; }
  void set_name(std::string s) { n_->name = std::move(s); }
  NodePtr node() const { return n_; }
  Node* raw() const { return n_.get(); }

  std::vector<double>& grad_buffer() {
    if (n_->grad.empty()) n_->grad.assign(static_cast<size_t>(n_->numel()), 0.0);
    return n_->grad;
  }
  void zero_grad() { n_->grad.assign(static_cast<size_t>(n_->numel()), 0.0); }

 private:
  NodePtr n_;
};

// Reverse topological order (root last) over the sub-DAG feeding `root`.
inline std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; input order fixes the traversal, so the
  // resulting float accumulation order is reproducible.
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->inputs.size()) {
      Node* child = n->inputs[idx++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;
}

// Computes d(loss)/d(node) for every node that needs a gradient and is
// reachable from `loss`. Gradients add across multiple uses of a node.
inline GradStore backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  GradStore store;
  store.acc(loss.raw())[0] = 1.0;
  std::vector<Node*> order = topo_order(loss.raw());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    const std::vector<double>* g = store.find(n);
    if (!g) continue;
    n->backward(*g, store);
  }
  return store;
}

// Straight-through sites are checked against the estimator's own
// linearisation: grad_check records (h, q) pairs on its analytic pass and
// replays perturbed forwards as q + (h - h_ref), which is the function the
// identity Jacobian claims to differentiate. Exact finite differences of
// the raw substitution are skipped and reported.
struct StContext {
  enum class Mode { off, record, replay };
  Mode mode = Mode::off;
  size_t cursor = 0;
  std::vector<std::vector<double>> h_ref;
  std::vector<std::vector<double>> q_ref;

  static StContext& get() {
    thread_local StContext ctx;
    return ctx;
  }
  void reset(Mode m) {
    mode = m;
    cursor = 0;
    if (m != Mode::replay) {
      h_ref.clear();
      q_ref.clear();
    }
  }
};

}  // namespace vqtts
