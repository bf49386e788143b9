#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "advdial/common.hpp"

namespace advdial {

// Dense double tensor participating in an implicit reverse-mode graph.
// Nodes carry a global creation sequence number; since an op node is always
// created after its inputs, descending sequence order is a valid reverse
// topological order for backward.
struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated by backward(), same length as values
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates into parents' grad given this node's grad. Null for leaves.
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return values.size(); }
  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor uniform(std::vector<std::size_t> shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& values() { return node_->values; }
  bool has_grad() const { return node_->has_grad(); }
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  double item() const;  // scalar tensors only
  double at(std::size_t i) const { return node_->values[i]; }

  std::shared_ptr<Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

// ---- elementwise / structural ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor matvec(const Tensor& w, const Tensor& x);  // w: [m,n], x: [n] -> [m]
Tensor dot(const Tensor& a, const Tensor& b);     // -> scalar
Tensor concat(const Tensor& a, const Tensor& b);  // 1-D only
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor pick(const Tensor& a, std::size_t flat_index);          // -> scalar
Tensor row(const Tensor& a, std::size_t r);                    // [m,n] -> [n]
Tensor stack_rows(const std::vector<Tensor>& rows);            // k x [n] -> [k,n]
Tensor stack_scalars(const std::vector<Tensor>& scalars);      // k scalars -> [k]
// sum_k weights[k] * items[k]; items: k x [n], weights: [k] -> [n]
Tensor weighted_sum(const std::vector<Tensor>& items, const Tensor& weights);

// Numerically stable softmax over a 1-D tensor (max-subtraction).
Tensor softmax(const Tensor& logits);

// -sum_t log probs[t, targets[t]] for row-stochastic probs [T,V].
Tensor sequence_nll(const Tensor& stepwise_probs, const std::vector<int>& targets);

// Reverse pass from a scalar loss. Populates grad on every requires_grad
// ancestor; visits each reachable node exactly once.
void backward(const Tensor& loss);

// ---- parameter utilities ----
void zero_grads(const std::vector<Tensor>& params);
double global_grad_norm(const std::vector<Tensor>& params);
// Scales all grads so the global norm is at most max_norm. Returns the norm
// observed before clipping.
double clip_gradients(const std::vector<Tensor>& params, double max_norm);
void sgd_step(const std::vector<Tensor>& params, double lr);

// Max over parameter elements of |analytic - central difference| /
// max(1, |central difference|). fn must rebuild the loss graph on each call.
double finite_difference_check(const std::function<Tensor()>& fn,
                               const std::vector<Tensor>& params, double eps);

}  // namespace advdial
