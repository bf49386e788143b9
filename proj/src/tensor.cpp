#include "advdial/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace advdial {

namespace {

std::atomic<std::uint64_t> g_seq{0};

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw Error("ZeroDimension");
    n *= d;
  }
  return n;
}

std::shared_ptr<Node> new_node(std::vector<std::size_t> shape, std::vector<double> values,
                               bool requires_grad) {
  auto n = std::make_shared<Node>();
  if (shape_product(shape) != values.size()) throw Error("ShapeMismatch");
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

bool any_requires_grad(const std::vector<std::shared_ptr<Node>>& parents) {
  for (const auto& p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

// Builds an op node; backward_fn is only attached when some parent needs it.
Tensor make_op(std::vector<std::size_t> shape, std::vector<double> values,
               std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backward_fn) {
  bool rg = any_requires_grad(parents);
  auto n = new_node(std::move(shape), std::move(values), rg);
  if (rg) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(n));
}

void check_same_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw Error("ShapeMismatch");
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = shape_product(shape);
  return wrap(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v, bool requires_grad) {
  std::size_t n = shape_product(shape);
  return wrap(new_node(std::move(shape), std::vector<double>(n, v), requires_grad));
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values,
                    bool requires_grad) {
  return wrap(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return wrap(new_node({1}, {v}, requires_grad));
}

Tensor Tensor::uniform(std::vector<std::size_t> shape, Rng& rng, double lo, double hi,
                       bool requires_grad) {
  std::size_t n = shape_product(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return wrap(new_node(std::move(shape), std::move(v), requires_grad));
}

double Tensor::item() const {
  if (size() != 1) throw Error("NonScalarTensor");
  return node_->values[0];
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i] * pb.values[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] += self.grad[i] * pa.values[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + c;
  return make_op(a.shape(), std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
  return make_op(a.shape(), std::move(out), {a.node()}, [c](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
  });
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  if (w.shape().size() != 2 || x.shape().size() != 1) throw Error("ShapeMismatch");
  std::size_t m = w.shape()[0], n = w.shape()[1];
  if (x.size() != n) throw Error("ShapeMismatch");
  std::vector<double> out(m, 0.0);
  const auto& wv = w.values();
  const auto& xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    const double* row = wv.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) s += row[j] * xv[j];
    out[i] = s;
  }
  return make_op({m}, std::move(out), {w.node(), x.node()}, [m, n](Node& self) {
    Node& pw = *self.parents[0];
    Node& px = *self.parents[1];
    if (pw.requires_grad) {
      pw.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double g = self.grad[i];
        double* row = pw.grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += g * px.values[j];
      }
    }
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double g = self.grad[i];
        const double* row = pw.values.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) px.grad[j] += g * row[j];
      }
    }
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i) * b.at(i);
  return make_op({1}, {s}, {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    double g = self.grad[0];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < pa.values.size(); ++i) pa.grad[i] += g * pb.values[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < pb.values.size(); ++i) pb.grad[i] += g * pa.values[i];
    }
  });
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 1 || b.shape().size() != 1) throw Error("ShapeMismatch");
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  std::size_t na = a.size();
  return make_op({a.size() + b.size()}, std::move(out), {a.node(), b.node()},
                 [na](Node& self) {
                   Node& pa = *self.parents[0];
                   Node& pb = *self.parents[1];
                   if (pa.requires_grad) {
                     pa.ensure_grad();
                     for (std::size_t i = 0; i < na; ++i) pa.grad[i] += self.grad[i];
                   }
                   if (pb.requires_grad) {
                     pb.ensure_grad();
                     for (std::size_t i = na; i < self.grad.size(); ++i)
                       pb.grad[i - na] += self.grad[i];
                   }
                 });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.at(i));
  return make_op(a.shape(), std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double y = self.values[i];
      p.grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.at(i);
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return make_op(a.shape(), std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double y = self.values[i];
      p.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.at(i));
  return make_op(a.shape(), std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * self.values[i];
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.at(i));
  return make_op(a.shape(), std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] / p.values[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
  return make_op({1}, {s}, {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
  double inv = 1.0 / static_cast<double>(a.size());
  return make_op({1}, {s * inv}, {a.node()}, [inv](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0] * inv;
  });
}

Tensor pick(const Tensor& a, std::size_t flat_index) {
  if (flat_index >= a.size()) throw Error("IndexOutOfRange");
  return make_op({1}, {a.at(flat_index)}, {a.node()}, [flat_index](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    p.grad[flat_index] += self.grad[0];
  });
}

Tensor row(const Tensor& a, std::size_t r) {
  if (a.shape().size() != 2) throw Error("ShapeMismatch");
  std::size_t n = a.shape()[1];
  if (r >= a.shape()[0]) throw Error("IndexOutOfRange");
  std::vector<double> out(a.values().begin() + static_cast<long>(r * n),
                          a.values().begin() + static_cast<long>((r + 1) * n));
  return make_op({n}, std::move(out), {a.node()}, [r, n](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t j = 0; j < n; ++j) p.grad[r * n + j] += self.grad[j];
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw Error("EmptyStack");
  std::size_t n = rows[0].size();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.shape().size() != 1 || r.size() != n) throw Error("ShapeMismatch");
    out.insert(out.end(), r.values().begin(), r.values().end());
    parents.push_back(r.node());
  }
  return make_op({rows.size(), n}, std::move(out), std::move(parents), [n](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t j = 0; j < n; ++j) p.grad[j] += self.grad[k * n + j];
    }
  });
}

Tensor stack_scalars(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw Error("EmptyStack");
  std::vector<double> out;
  out.reserve(scalars.size());
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(scalars.size());
  for (const auto& s : scalars) {
    if (s.size() != 1) throw Error("NonScalarTensor");
    out.push_back(s.at(0));
    parents.push_back(s.node());
  }
  return make_op({scalars.size()}, std::move(out), std::move(parents), [](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      p.grad[0] += self.grad[k];
    }
  });
}

Tensor weighted_sum(const std::vector<Tensor>& items, const Tensor& weights) {
  if (items.empty()) throw Error("EmptyStack");
  if (weights.size() != items.size()) throw Error("ShapeMismatch");
  std::size_t n = items[0].size();
  std::vector<double> out(n, 0.0);
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(items.size() + 1);
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (items[k].size() != n) throw Error("ShapeMismatch");
    double w = weights.at(k);
    for (std::size_t j = 0; j < n; ++j) out[j] += w * items[k].at(j);
    parents.push_back(items[k].node());
  }
  parents.push_back(weights.node());
  std::size_t k_items = items.size();
  return make_op({n}, std::move(out), std::move(parents), [n, k_items](Node& self) {
    Node& pw = *self.parents[k_items];
    for (std::size_t k = 0; k < k_items; ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) {
        p.ensure_grad();
        double w = pw.values[k];
        for (std::size_t j = 0; j < n; ++j) p.grad[j] += w * self.grad[j];
      }
      if (pw.requires_grad) {
        pw.ensure_grad();
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += p.values[j] * self.grad[j];
        pw.grad[k] += s;
      }
    }
  });
}

Tensor softmax(const Tensor& logits) {
  if (!logits.defined() || logits.size() == 0) throw Error("EmptyLogits");
  std::size_t n = logits.size();
  double mx = logits.at(0);
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits.at(i));
  std::vector<double> out(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(logits.at(i) - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
  return make_op(logits.shape(), std::move(out), {logits.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    double gy = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gy += self.grad[i] * self.values[i];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.values[i] * (self.grad[i] - gy);
  });
}

Tensor sequence_nll(const Tensor& stepwise_probs, const std::vector<int>& targets) {
  if (stepwise_probs.shape().size() != 2) throw Error("ShapeMismatch");
  std::size_t t_steps = stepwise_probs.shape()[0];
  std::size_t vocab = stepwise_probs.shape()[1];
  if (targets.size() != t_steps) throw Error("ShapeMismatch");
  double loss = 0.0;
  for (std::size_t t = 0; t < t_steps; ++t) {
    int tgt = targets[t];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= vocab) throw Error("TokenOutOfVocab");
    loss -= std::log(stepwise_probs.at(t * vocab + static_cast<std::size_t>(tgt)));
  }
  std::vector<int> tgts = targets;
  return make_op({1}, {loss}, {stepwise_probs.node()}, [tgts, vocab](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    double g = self.grad[0];
    for (std::size_t t = 0; t < tgts.size(); ++t) {
      std::size_t idx = t * vocab + static_cast<std::size_t>(tgts[t]);
      p.grad[idx] -= g / p.values[idx];
    }
  });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) throw Error("NonScalarLoss");
  // Collect reachable nodes, then run in descending creation order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{loss.node()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    order.push_back(n.get());
    for (const auto& p : n->parents) stack.push_back(p);
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (Node* n : order) {
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

void zero_grads(const std::vector<Tensor>& params) {
  for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_gradients(const std::vector<Tensor>& params, double max_norm) {
  double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : const_cast<Tensor&>(p).grad()) g *= scale;
    }
  }
  return norm;
}

void sgd_step(const std::vector<Tensor>& params, double lr) {
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    auto& vals = const_cast<Tensor&>(p).values();
    const auto& g = p.grad();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= lr * g[i];
  }
}

double finite_difference_check(const std::function<Tensor()>& fn,
                               const std::vector<Tensor>& params, double eps) {
  if (!(eps > 0.0)) throw Error("InvalidEpsilon");
  Tensor loss = fn();
  double base = loss.item();
  {
    Tensor again = fn();
    if (again.item() != base) throw Error("NonDeterministicFunction");
  }
  zero_grads(params);
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params)
    analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0));

  double max_err = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& vals = const_cast<Tensor&>(params[k]).values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double orig = vals[i];
      vals[i] = orig + eps;
      double up = fn().item();
      vals[i] = orig - eps;
      double down = fn().item();
      vals[i] = orig;
      double numeric = (up - down) / (2.0 * eps);
      double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  zero_grads(params);
  return max_err;
}

}  // namespace advdial
