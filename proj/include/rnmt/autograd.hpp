#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "rnmt/util.hpp"

namespace rnmt::ag {

using Mat = Eigen::MatrixXd;

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled_flag()) { grad_enabled_flag() = false; }
  ~NoGradGuard() { grad_enabled_flag() = prev; }
};

class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Mat value;
  Mat grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void()> backprop;

  Mat& grad_ref() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Mat::Zero(value.rows(), value.cols());
    return grad;
  }
  void zero_grad() { grad.setZero(); }
};

inline Var make_var(Mat v, bool requires_grad = false) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

inline Var constant(Mat v) { return make_var(std::move(v), false); }

namespace detail {
inline bool track(std::initializer_list<const Var*> parents) {
  if (!grad_enabled_flag()) return false;
  for (const Var* p : parents)
    if ((*p)->requires_grad) return true;
  return false;
}
inline void wire(const Var& out, std::initializer_list<Var> parents,
                 std::function<void()> fn) {
  out->requires_grad = true;
  out->parents.assign(parents);
  out->backprop = std::move(fn);
}
}  // namespace detail

// ---- arithmetic -------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  auto out = make_var(a->value + b->value);
  if (detail::track({&a, &b})) {
    Node *ap = a.get(), *bp = b.get(), *op = out.get();
    detail::wire(out, {a, b}, [ap, bp, op] {
      if (ap->requires_grad) ap->grad_ref() += op->grad;
      if (bp->requires_grad) bp->grad_ref() += op->grad;
    });
  }
  return out;
}

inline Var sub(const Var& a, const Var& b) {
  auto out = make_var(a->value - b->value);
  if (detail::track({&a, &b})) {
    Node *ap = a.get(), *bp = b.get(), *op = out.get();
    detail::wire(out, {a, b}, [ap, bp, op] {
      if (ap->requires_grad) ap->grad_ref() += op->grad;
      if (bp->requires_grad) bp->grad_ref() -= op->grad;
    });
  }
  return out;
}

inline Var scale(const Var& a, double s) {
  auto out = make_var(a->value * s);
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a}, [ap, op, s] { ap->grad_ref() += op->grad * s; });
  }
  return out;
}

inline Var mul(const Var& a, const Var& b) {  // elementwise
  auto out = make_var(a->value.cwiseProduct(b->value));
  if (detail::track({&a, &b})) {
    Node *ap = a.get(), *bp = b.get(), *op = out.get();
    detail::wire(out, {a, b}, [ap, bp, op] {
      if (ap->requires_grad)
        ap->grad_ref() += op->grad.cwiseProduct(bp->value);
      if (bp->requires_grad)
        bp->grad_ref() += op->grad.cwiseProduct(ap->value);
    });
  }
  return out;
}

inline Var matmul(const Var& a, const Var& b) {
  auto out = make_var(a->value * b->value);
  if (detail::track({&a, &b})) {
    Node *ap = a.get(), *bp = b.get(), *op = out.get();
    detail::wire(out, {a, b}, [ap, bp, op] {
      if (ap->requires_grad)
        ap->grad_ref() += op->grad * bp->value.transpose();
      if (bp->requires_grad)
        bp->grad_ref() += ap->value.transpose() * op->grad;
    });
  }
  return out;
}

inline Var transpose(const Var& a) {
  auto out = make_var(a->value.transpose());
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a},
                 [ap, op] { ap->grad_ref() += op->grad.transpose(); });
  }
  return out;
}

// Broadcast a 1 x d row vector over every row of a.
inline Var add_rowvec(const Var& a, const Var& bias) {
  auto out = make_var(a->value.rowwise() + bias->value.row(0));
  if (detail::track({&a, &bias})) {
    Node *ap = a.get(), *bp = bias.get(), *op = out.get();
    detail::wire(out, {a, bias}, [ap, bp, op] {
      if (ap->requires_grad) ap->grad_ref() += op->grad;
      if (bp->requires_grad)
        bp->grad_ref() += op->grad.colwise().sum();
    });
  }
  return out;
}

// ---- nonlinearities ---------------------------------------------------------

inline Var relu(const Var& a) {
  auto out = make_var(a->value.cwiseMax(0.0));
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a}, [ap, op] {
      ap->grad_ref() +=
          op->grad.cwiseProduct((ap->value.array() > 0.0).cast<double>().matrix());
    });
  }
  return out;
}

inline Var sigmoid(const Var& a) {
  Mat v = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
  auto out = make_var(std::move(v));
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a}, [ap, op] {
      ap->grad_ref() += op->grad.cwiseProduct(
          (op->value.array() * (1.0 - op->value.array())).matrix());
    });
  }
  return out;
}

inline Var log_elem(const Var& a) {
  auto out = make_var(a->value.array().log().matrix());
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a}, [ap, op] {
      ap->grad_ref() += op->grad.cwiseQuotient(ap->value);
    });
  }
  return out;
}

// Hard clamp; gradient passes through only where the value was inside the
// range.
inline Var clamp(const Var& a, double lo, double hi) {
  auto out = make_var(a->value.cwiseMax(lo).cwiseMin(hi));
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a}, [ap, op, lo, hi] {
      Mat inside = ((ap->value.array() > lo) && (ap->value.array() < hi))
                       .cast<double>()
                       .matrix();
      ap->grad_ref() += op->grad.cwiseProduct(inside);
    });
  }
  return out;
}

inline Var softmax_rows(const Var& a) {
  Mat v = a->value;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double mx = v.row(i).maxCoeff();
    v.row(i) = (v.row(i).array() - mx).exp();
    v.row(i) /= v.row(i).sum();
  }
  auto out = make_var(std::move(v));
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a}, [ap, op] {
      Mat& g = ap->grad_ref();
      for (Eigen::Index i = 0; i < op->value.rows(); ++i) {
        const auto s = op->value.row(i).array();
        const auto go = op->grad.row(i).array();
        double dot = (go * s).sum();
        g.row(i) += ((go - dot) * s).matrix();
      }
    });
  }
  return out;
}

inline Var log_softmax_rows(const Var& a) {
  Mat v = a->value;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double mx = v.row(i).maxCoeff();
    double lse = std::log((v.row(i).array() - mx).exp().sum()) + mx;
    v.row(i).array() -= lse;
  }
  auto out = make_var(std::move(v));
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a}, [ap, op] {
      Mat& g = ap->grad_ref();
      for (Eigen::Index i = 0; i < op->value.rows(); ++i) {
        const auto go = op->grad.row(i).array();
        double gsum = go.sum();
        g.row(i) += (go - gsum * op->value.row(i).array().exp()).matrix();
      }
    });
  }
  return out;
}

// Per-row layer norm with learned gain and bias (both 1 x d).
inline Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias,
                           double eps = 1e-6) {
  const Eigen::Index rows = a->value.rows(), d = a->value.cols();
  Mat normed(rows, d);
  Mat inv_std(rows, 1);
  for (Eigen::Index i = 0; i < rows; ++i) {
    double mean = a->value.row(i).mean();
    Eigen::RowVectorXd centered = a->value.row(i).array() - mean;
    double var = centered.squaredNorm() / static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(i, 0) = is;
    normed.row(i) = centered * is;
  }
  Mat v = (normed.array().rowwise() * gain->value.row(0).array()).matrix();
  v = v.rowwise() + bias->value.row(0);
  auto out = make_var(std::move(v));
  if (detail::track({&a, &gain, &bias})) {
    Node *ap = a.get(), *gp = gain.get(), *bp = bias.get(), *op = out.get();
    auto normed_p = std::make_shared<Mat>(std::move(normed));
    auto invstd_p = std::make_shared<Mat>(std::move(inv_std));
    detail::wire(out, {a, gain, bias}, [ap, gp, bp, op, normed_p, invstd_p] {
      const Mat& nm = *normed_p;
      const Eigen::Index rows = nm.rows(), d = nm.cols();
      if (gp->requires_grad)
        gp->grad_ref() += op->grad.cwiseProduct(nm).colwise().sum();
      if (bp->requires_grad) bp->grad_ref() += op->grad.colwise().sum();
      if (ap->requires_grad) {
        Mat& g = ap->grad_ref();
        for (Eigen::Index i = 0; i < rows; ++i) {
          Eigen::RowVectorXd dy =
              op->grad.row(i).cwiseProduct(gp->value.row(0));
          double m1 = dy.mean();
          double m2 = dy.cwiseProduct(nm.row(i)).mean();
          g.row(i) += ((dy.array() - m1 - nm.row(i).array() * m2) *
                       (*invstd_p)(i, 0))
                          .matrix();
        }
        (void)d;
      }
    });
  }
  return out;
}

// ---- structure --------------------------------------------------------------

inline Var cols(const Var& a, Eigen::Index start, Eigen::Index n) {
  auto out = make_var(a->value.middleCols(start, n));
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a}, [ap, op, start, n] {
      ap->grad_ref().middleCols(start, n) += op->grad;
    });
  }
  return out;
}

inline Var hcat(const std::vector<Var>& parts) {
  Eigen::Index rows = parts.at(0)->value.rows(), total = 0;
  for (const auto& p : parts) total += p->value.cols();
  Mat v(rows, total);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p->value.cols()) = p->value;
    off += p->value.cols();
  }
  auto out = make_var(std::move(v));
  bool need = false;
  if (grad_enabled_flag())
    for (const auto& p : parts)
      if (p->requires_grad) need = true;
  if (need) {
    auto parents = parts;
    Node* op = out.get();
    out->requires_grad = true;
    out->parents = parts;
    out->backprop = [parents, op] {
      Eigen::Index off = 0;
      for (const auto& p : parents) {
        Eigen::Index n = p->value.cols();
        if (p->requires_grad) p->grad_ref() += op->grad.middleCols(off, n);
        off += n;
      }
    };
  }
  return out;
}

// Row gather from an embedding table; backward scatters.
inline Var embed(const Var& table, const std::vector<int>& ids) {
  Mat v(static_cast<Eigen::Index>(ids.size()), table->value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    v.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  auto out = make_var(std::move(v));
  if (detail::track({&table})) {
    Node *tp = table.get(), *op = out.get();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    detail::wire(out, {table}, [tp, op, ids_copy] {
      Mat& g = tp->grad_ref();
      for (std::size_t i = 0; i < ids_copy->size(); ++i)
        g.row((*ids_copy)[i]) += op->grad.row(static_cast<Eigen::Index>(i));
    });
  }
  return out;
}

// Mean over rows flagged valid; output is 1 x d.
inline Var mean_rows_masked(const Var& a, const std::vector<char>& valid) {
  double count = 0;
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(a->value.cols());
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) {
      sum += a->value.row(static_cast<Eigen::Index>(i));
      count += 1.0;
    }
  if (count == 0.0)
    throw std::invalid_argument("mean_rows_masked: all rows masked");
  Mat v(1, a->value.cols());
  v.row(0) = sum / count;
  auto out = make_var(std::move(v));
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    auto mask = std::make_shared<std::vector<char>>(valid);
    detail::wire(out, {a}, [ap, op, mask, count] {
      Mat& g = ap->grad_ref();
      for (std::size_t i = 0; i < mask->size(); ++i)
        if ((*mask)[i])
          g.row(static_cast<Eigen::Index>(i)) += op->grad.row(0) / count;
    });
  }
  return out;
}

inline Var mean_all(const Var& a) {
  double n = static_cast<double>(a->value.size());
  Mat v(1, 1);
  v(0, 0) = a->value.sum() / n;
  auto out = make_var(std::move(v));
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a}, [ap, op, n] {
      ap->grad_ref().array() += op->grad(0, 0) / n;
    });
  }
  return out;
}

// Identity forward; backward multiplies the incoming gradient by -lambda.
inline Var grad_reverse(const Var& a, double lambda = 1.0) {
  auto out = make_var(a->value);
  if (detail::track({&a})) {
    Node *ap = a.get(), *op = out.get();
    detail::wire(out, {a}, [ap, op, lambda] {
      ap->grad_ref() -= lambda * op->grad;
    });
  }
  return out;
}

// Inverted dropout; identity when rng is null or p == 0.
inline Var dropout(const Var& a, double p, std::mt19937_64* rng) {
  if (rng == nullptr || p <= 0.0) return a;
  Mat mask(a->value.rows(), a->value.cols());
  const double keep = 1.0 - p;
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
  auto m = constant(std::move(mask));
  return mul(a, m);
}

// Adds i.i.d. Gaussian noise in the forward pass; gradient passes through
// unchanged. Identity when rng is null or sigma == 0.
inline Var gaussian_noise(const Var& a, double sigma, std::mt19937_64* rng) {
  if (rng == nullptr || sigma <= 0.0) return a;
  Mat noise(a->value.rows(), a->value.cols());
  for (Eigen::Index i = 0; i < noise.rows(); ++i)
    for (Eigen::Index j = 0; j < noise.cols(); ++j)
      noise(i, j) = sigma * normal01(*rng);
  return add(a, constant(std::move(noise)));
}

// Smoothed NLL over T rows of log-probabilities: the target distribution is
// (1 - eps) one-hot + eps uniform over the vocabulary; result is the mean
// over positions (1 x 1).
inline Var nll_rows(const Var& log_probs, const std::vector<int>& targets,
                    double eps) {
  const Eigen::Index t_len = log_probs->value.rows();
  const Eigen::Index vocab = log_probs->value.cols();
  if (static_cast<Eigen::Index>(targets.size()) != t_len)
    throw std::invalid_argument("nll_rows: target length mismatch");
  double loss = 0.0;
  const double uni = eps / static_cast<double>(vocab);
  for (Eigen::Index i = 0; i < t_len; ++i) {
    loss -= (1.0 - eps) * log_probs->value(i, targets[i]);
    if (eps > 0.0) loss -= uni * log_probs->value.row(i).sum();
  }
  loss /= static_cast<double>(t_len);
  Mat v(1, 1);
  v(0, 0) = loss;
  auto out = make_var(std::move(v));
  if (detail::track({&log_probs})) {
    Node *lp = log_probs.get(), *op = out.get();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    detail::wire(out, {log_probs}, [lp, op, tgt, eps, uni, t_len] {
      double g = op->grad(0, 0) / static_cast<double>(t_len);
      Mat& grad = lp->grad_ref();
      for (Eigen::Index i = 0; i < t_len; ++i) {
        if (eps > 0.0) grad.row(i).array() -= g * uni;
        grad(i, (*tgt)[i]) -= g * (1.0 - eps);
      }
    });
  }
  return out;
}

// ---- backward ---------------------------------------------------------------

inline void backward(const Var& loss) {
  if (loss->value.rows() != 1 || loss->value.cols() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (!loss->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // order is parents-before-children; walk it backwards.
  loss->grad_ref()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

}  // namespace rnmt::ag
