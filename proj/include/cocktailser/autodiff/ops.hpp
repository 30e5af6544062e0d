// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Differentiable ops. Layout is row-major: a [C,T] tensor stores channel c at
// data[c*T .. c*T+T). Heavy ops lower to Eigen GEMMs on mapped buffers.

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "cocktailser/autodiff/tensor.hpp"
#include "cocktailser/signal.hpp"

namespace cocktailser::ad {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using MapV = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using CMapV = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Eigen starts a vectorized reduction over a raw Map at the first aligned
// element, so the summation order would follow the heap address. Reducing an
// expression instead pins the order and keeps results bit-reproducible.
template <typename X>
auto pinned(const X& x) {
  return x * typename X::Scalar(1);
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  CSER_CHECK(a.shape() == b.shape(), "add: shape mismatch ", shape_str(a.shape()), " vs ",
             shape_str(b.shape()));
  const auto n = static_cast<Eigen::Index>(a.size());
  std::vector<T> out(a.size());
  ArrMap<T>(out.data(), n) = CArrMap<T>(a.data().data(), n) + CArrMap<T>(b.data().data(), n);
  auto* pa = a.node();
  auto* pb = b.node();
  return make_result<T>(a.shape(), std::move(out), {a.shared(), b.shared()}, [pa, pb, n](Node<T>& r) {
    for (Node<T>* p : {pa, pb})
      if (p->requires_grad) ArrMap<T>(p->grad_data(), n) += CArrMap<T>(r.grad.data(), n);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  CSER_CHECK(a.shape() == b.shape(), "sub: shape mismatch ", shape_str(a.shape()), " vs ",
             shape_str(b.shape()));
  const auto n = static_cast<Eigen::Index>(a.size());
  std::vector<T> out(a.size());
  ArrMap<T>(out.data(), n) = CArrMap<T>(a.data().data(), n) - CArrMap<T>(b.data().data(), n);
  auto* pa = a.node();
  auto* pb = b.node();
  return make_result<T>(a.shape(), std::move(out), {a.shared(), b.shared()}, [pa, pb, n](Node<T>& r) {
    if (pa->requires_grad) ArrMap<T>(pa->grad_data(), n) += CArrMap<T>(r.grad.data(), n);
    if (pb->requires_grad) ArrMap<T>(pb->grad_data(), n) -= CArrMap<T>(r.grad.data(), n);
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  const auto n = static_cast<Eigen::Index>(a.size());
  std::vector<T> out(a.size());
  ArrMap<T>(out.data(), n) = CArrMap<T>(a.data().data(), n) * factor;
  auto* pa = a.node();
  return make_result<T>(a.shape(), std::move(out), {a.shared()}, [pa, factor, n](Node<T>& r) {
    ArrMap<T>(pa->grad_data(), n) += CArrMap<T>(r.grad.data(), n) * factor;
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  const bool chan = !same && a.rank() >= 2 && static_cast<int>(b.size()) == a.dim(0) &&
                    (b.rank() == 1 || (b.rank() == 2 && b.dim(1) == 1));
  CSER_CHECK(same || chan, "mul: incompatible shapes ", shape_str(a.shape()), " and ",
             shape_str(b.shape()));
  const std::size_t inner = same ? 1 : a.size() / b.size();
  std::vector<T> out(a.size());
  const auto x = a.data(), y = b.data();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  } else {
    for (std::size_t c = 0; c < b.size(); ++c)
      for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] = x[c * inner + i] * y[c];
  }
  auto* pa = a.node();
  auto* pb = b.node();
  return make_result<T>(
      a.shape(), std::move(out), {a.shared(), b.shared()}, [pa, pb, same, inner](Node<T>& n) {
        const auto& x = pa->value;
        const auto& y = pb->value;
        if (same) {
          if (pa->requires_grad) {
            T* g = pa->grad_data();
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * y[i];
          }
          if (pb->requires_grad) {
            T* g = pb->grad_data();
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * x[i];
          }
          return;
        }
        if (pa->requires_grad) {
          T* g = pa->grad_data();
          for (std::size_t c = 0; c < y.size(); ++c)
            for (std::size_t i = 0; i < inner; ++i) g[c * inner + i] += n.grad[c * inner + i] * y[c];
        }
        if (pb->requires_grad) {
          T* g = pb->grad_data();
          for (std::size_t c = 0; c < y.size(); ++c) {
            T acc = 0;
            for (std::size_t i = 0; i < inner; ++i) acc += n.grad[c * inner + i] * x[c * inner + i];
            g[c] += acc;
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  const auto n = static_cast<Eigen::Index>(a.size());
  std::vector<T> out(a.size());
  ArrMap<T>(out.data(), n) = CArrMap<T>(a.data().data(), n).max(T(0));
  auto* pa = a.node();
  return make_result<T>(a.shape(), std::move(out), {a.shared()}, [pa, n](Node<T>& r) {
    CArrMap<T> x(pa->value.data(), n);
    ArrMap<T>(pa->grad_data(), n) += CArrMap<T>(r.grad.data(), n) * (x > T(0)).template cast<T>();
  });
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& a, const Tensor<T>& slope) {
  CSER_CHECK(slope.size() == 1, "prelu: slope must have one element");
  const auto n = static_cast<Eigen::Index>(a.size());
  const T sl = slope.data()[0];
  std::vector<T> out(a.size());
  CArrMap<T> x(a.data().data(), n);
  ArrMap<T>(out.data(), n) = x.max(T(0)) + sl * x.min(T(0));
  auto* pa = a.node();
  auto* ps = slope.node();
  return make_result<T>(a.shape(), std::move(out), {a.shared(), slope.shared()},
                        [pa, ps, n](Node<T>& r) {
                          CArrMap<T> x(pa->value.data(), n);
                          CArrMap<T> g(r.grad.data(), n);
                          const T sl = ps->value[0];
                          if (pa->requires_grad)
                            ArrMap<T>(pa->grad_data(), n) += g * (sl + (T(1) - sl) * (x > T(0)).template cast<T>());
                          if (ps->requires_grad) ps->grad_data()[0] += (x.min(T(0)) * g).sum();
                        });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  const auto n = static_cast<Eigen::Index>(a.size());
  std::vector<T> out(a.size());
  // Scalar std::exp: Eigen's packet exp rounds differently from its scalar
  // path, which would make results depend on buffer alignment.
  const T* x = a.data().data();
  for (Eigen::Index i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  auto* pa = a.node();
  return make_result<T>(a.shape(), std::move(out), {a.shared()}, [pa, n](Node<T>& r) {
    CArrMap<T> y(r.value.data(), n);
    ArrMap<T>(pa->grad_data(), n) += CArrMap<T>(r.grad.data(), n) * y * (T(1) - y);
  });
}

// ------------------------------------------------------------ shape helpers

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  CSER_CHECK(numel(shape) == a.size(), "reshape: ", shape_str(a.shape()), " -> ",
             shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  auto* pa = a.node();
  return make_result<T>(std::move(shape), std::move(out), {a.shared()}, [pa](Node<T>& n) {
    T* g = pa->grad_data();
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

/// Truncates or zero-pads the last axis of a [C,T] (or [T]) tensor to length.
template <typename T>
Tensor<T> fit_length(const Tensor<T>& a, int length) {
  CSER_CHECK(length >= 1, "fit_length: length must be >= 1");
  const int t_in = a.dim(-1);
  const int rows = static_cast<int>(a.size()) / t_in;
  Shape shape = a.shape();
  shape.back() = length;
  std::vector<T> out(static_cast<std::size_t>(rows) * length, T(0));
  const int keep = std::min(t_in, length);
  const auto x = a.data();
  for (int r = 0; r < rows; ++r)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r) * t_in, keep,
                out.begin() + static_cast<std::ptrdiff_t>(r) * length);
  auto* pa = a.node();
  return make_result<T>(std::move(shape), std::move(out), {a.shared()},
                        [pa, rows, t_in, length, keep](Node<T>& n) {
                          T* g = pa->grad_data();
                          for (int r = 0; r < rows; ++r)
                            for (int t = 0; t < keep; ++t)
                              g[r * t_in + t] += n.grad[static_cast<std::size_t>(r) * length + t];
                        });
}

// ------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto n = static_cast<Eigen::Index>(a.size());
  const T total = pinned(CArrMap<T>(a.data().data(), n)).sum();
  auto* pa = a.node();
  return make_result<T>({1}, {total}, {a.shared()}, [pa, n](Node<T>& r) {
    ArrMap<T>(pa->grad_data(), n) += r.grad[0];
  });
}

template <typename T>
Tensor<T> mean_pool_time(const Tensor<T>& a) {
  CSER_CHECK(a.rank() >= 2, "mean_pool_time: expects [C,T...], got ", shape_str(a.shape()));
  const int c = a.dim(0);
  const auto inner = static_cast<Eigen::Index>(a.size() / static_cast<std::size_t>(c));
  std::vector<T> out(static_cast<std::size_t>(c));
  MapV<T>(out.data(), c) = pinned(CMapR<T>(a.data().data(), c, inner)).rowwise().mean();
  auto* pa = a.node();
  return make_result<T>({c}, std::move(out), {a.shared()}, [pa, c, inner](Node<T>& r) {
    MapR<T>(pa->grad_data(), c, inner).colwise() +=
        CMapV<T>(r.grad.data(), c) / static_cast<T>(inner);
  });
}

// -------------------------------------------------------- normalization

/// Global layer norm over all (C,T) entries with per-channel gain and bias.
template <typename T>
Tensor<T> global_layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias,
                            T eps = T(1e-8)) {
  CSER_CHECK(a.rank() == 2, "global_layer_norm: expects [C,T], got ", shape_str(a.shape()));
  const int c = a.dim(0), t = a.dim(1);
  CSER_CHECK(static_cast<int>(gain.size()) == c && static_cast<int>(bias.size()) == c,
             "global_layer_norm: gain/bias must have ", c, " entries");
  const auto n = static_cast<Eigen::Index>(a.size());
  CArrMap<T> x(a.data().data(), n);
  const T mean = pinned(x).mean();
  const T var = (x - mean).square().mean();
  const T inv_std = T(1) / std::sqrt(var + eps);

  auto normed = std::make_shared<std::vector<T>>(a.size());
  ArrMap<T>(normed->data(), n) = (x - mean) * inv_std;
  std::vector<T> out(a.size());
  MapR<T>(out.data(), c, t).array() =
      (CMapR<T>(normed->data(), c, t).array().colwise() * CMapV<T>(gain.data().data(), c).array())
          .colwise() +
      CMapV<T>(bias.data().data(), c).array();

  auto* pa = a.node();
  auto* pg = gain.node();
  auto* pb = bias.node();
  return make_result<T>(
      a.shape(), std::move(out), {a.shared(), gain.shared(), bias.shared()},
      [pa, pg, pb, normed, c, t, n, inv_std](Node<T>& r) {
        CMapR<T> g(r.grad.data(), c, t);
        CMapR<T> xh(normed->data(), c, t);
        if (pg->requires_grad)
          MapV<T>(pg->grad_data(), c) += (g.array() * xh.array()).rowwise().sum().matrix();
        if (pb->requires_grad) MapV<T>(pb->grad_data(), c) += pinned(g).rowwise().sum();
        if (!pa->requires_grad) return;
        MatR<T> dxh = g.array().colwise() * CMapV<T>(pg->value.data(), c).array();
        const T m1 = dxh.mean();
        const T m2 = (dxh.array() * xh.array()).mean();
        MapR<T>(pa->grad_data(), c, t).array() += inv_std * (dxh.array() - m1 - xh.array() * m2);
        (void)n;
      });
}

// ----------------------------------------------------------------- dense

/// y = x W^T + b for x of shape [In] or [N,In]; W is [Out,In], b is [Out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  CSER_CHECK(w.rank() == 2, "linear: weight must be [Out,In]");
  const int out_dim = w.dim(0), in_dim = w.dim(1);
  CSER_CHECK(x.dim(-1) == in_dim && (x.rank() == 1 || x.rank() == 2),
             "linear: input ", shape_str(x.shape()), " incompatible with weight ",
             shape_str(w.shape()));
  CSER_CHECK(static_cast<int>(b.size()) == out_dim, "linear: bias must have ", out_dim, " entries");
  const int rows = x.rank() == 1 ? 1 : x.dim(0);
  std::vector<T> out(static_cast<std::size_t>(rows) * out_dim);
  MapR<T> Y(out.data(), rows, out_dim);
  CMapR<T> X(x.data().data(), rows, in_dim);
  CMapR<T> W(w.data().data(), out_dim, in_dim);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += CMapV<T>(b.data().data(), out_dim).transpose();
  Shape shape = x.rank() == 1 ? Shape{out_dim} : Shape{rows, out_dim};
  auto *px = x.node(), *pw = w.node(), *pb = b.node();
  return make_result<T>(std::move(shape), std::move(out), {x.shared(), w.shared(), b.shared()},
                        [px, pw, pb, rows, in_dim, out_dim](Node<T>& n) {
                          CMapR<T> dY(n.grad.data(), rows, out_dim);
                          if (px->requires_grad) {
                            MapR<T> dX(px->grad_data(), rows, in_dim);
                            dX.noalias() += dY * CMapR<T>(pw->value.data(), out_dim, in_dim);
                          }
                          if (pw->requires_grad) {
                            MapR<T> dW(pw->grad_data(), out_dim, in_dim);
                            dW.noalias() += dY.transpose() * CMapR<T>(px->value.data(), rows, in_dim);
                          }
                          if (pb->requires_grad) {
                            MapV<T>(pb->grad_data(), out_dim) += dY.colwise().sum().transpose();
                          }
                        });
}

/// Row-wise softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  const int k = a.dim(-1);
  const std::size_t rows = a.size() / static_cast<std::size_t>(k);
  std::vector<T> out(a.size());
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < k; ++j) mx = std::max(mx, x[r * k + j]);
    T s = 0;
    for (int j = 0; j < k; ++j) s += (out[r * k + j] = std::exp(x[r * k + j] - mx));
    for (int j = 0; j < k; ++j) out[r * k + j] /= s;
  }
  auto* pa = a.node();
  return make_result<T>(a.shape(), std::move(out), {a.shared()}, [pa, rows, k](Node<T>& n) {
    T* g = pa->grad_data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (int j = 0; j < k; ++j) dot += n.grad[r * k + j] * n.value[r * k + j];
      for (int j = 0; j < k; ++j) g[r * k + j] += n.value[r * k + j] * (n.grad[r * k + j] - dot);
    }
  });
}

/// Mean over the batch of -log softmax(logits)[label]. logits is [N,K] or [K].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const int k = logits.dim(-1);
  const int rows = logits.rank() == 1 ? 1 : logits.dim(0);
  CSER_CHECK(rows >= 1 && !labels.empty(), "cross_entropy: empty batch");
  CSER_CHECK(static_cast<int>(labels.size()) == rows, "cross_entropy: ", labels.size(),
             " labels for ", rows, " rows");
  auto probs = std::make_shared<std::vector<T>>(logits.size());
  std::vector<int> lab(labels.begin(), labels.end());
  const auto x = logits.data();
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    CSER_CHECK(lab[r] >= 0 && lab[r] < k, "cross_entropy: label ", lab[r], " out of range");
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < k; ++j) mx = std::max(mx, x[r * k + j]);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(static_cast<double>(x[r * k + j] - mx));
    const double lse = std::log(s) + mx;
    for (int j = 0; j < k; ++j)
      (*probs)[r * k + j] = static_cast<T>(std::exp(static_cast<double>(x[r * k + j]) - lse));
    loss += lse - x[r * k + lab[r]];
  }
  loss /= rows;
  auto* pl = logits.node();
  return make_result<T>({1}, {static_cast<T>(loss)}, {logits.shared()},
                        [pl, probs, lab, rows, k](Node<T>& n) {
                          T* g = pl->grad_data();
                          const T d = n.grad[0] / static_cast<T>(rows);
                          for (int r = 0; r < rows; ++r)
                            for (int j = 0; j < k; ++j)
                              g[r * k + j] += d * ((*probs)[r * k + j] - (j == lab[r] ? T(1) : T(0)));
                        });
}

// ---------------------------------------------------------- convolutions

struct Conv1dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;  // 1 or C_in (depthwise)
};

/// Cross-correlation. x: [C_in,T]; w: [C_out, C_in/groups, K]; bias may be
/// undefined. Output length floor((T + 2p - d(K-1) - 1)/s) + 1.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Conv1dOptions opt = {}) {
  CSER_CHECK(x.rank() == 2, "conv1d: input must be [C,T], got ", shape_str(x.shape()));
  CSER_CHECK(w.rank() == 3, "conv1d: weight must be [Cout,Cin,K], got ", shape_str(w.shape()));
  const int cin = x.dim(0), t_in = x.dim(1);
  const int cout = w.dim(0), k = w.dim(2);
  const int s = opt.stride, p = opt.padding, d = opt.dilation;
  CSER_CHECK(s >= 1 && d >= 1 && p >= 0, "conv1d: invalid stride/dilation/padding");
  const bool depthwise = opt.groups != 1;
  if (depthwise) {
    CSER_CHECK(opt.groups == cin && cout == cin && w.dim(1) == 1 && s == 1,
               "conv1d: only groups=1 or stride-1 depthwise (groups=C_in=C_out) supported");
  } else {
    CSER_CHECK(w.dim(1) == cin, "conv1d: weight expects ", w.dim(1), " input channels, got ", cin);
  }
  const bool has_bias = bias.defined();
  if (has_bias)
    CSER_CHECK(static_cast<int>(bias.size()) == cout, "conv1d: bias must have ", cout, " entries");
  const int span_k = d * (k - 1) + 1;
  CSER_CHECK(t_in + 2 * p >= span_k, "conv1d: input length ", t_in, " shorter than kernel span ",
             span_k);
  const int t_out = (t_in + 2 * p - span_k) / s + 1;

  std::vector<T> out(static_cast<std::size_t>(cout) * t_out, T(0));
  const T* xv = x.data().data();
  const T* wv = w.data().data();

  // Index of input sample feeding output t through tap j, or -1 if padding.
  auto src = [=](int t, int j) {
    const int i = t * s + j * d - p;
    return (i >= 0 && i < t_in) ? i : -1;
  };

  const bool pointwise = !depthwise && k == 1 && s == 1 && p == 0;
  std::shared_ptr<std::vector<T>> cols;
  if (depthwise) {
    for (int c = 0; c < cin; ++c) {
      MapV<T> yrow(out.data() + static_cast<std::size_t>(c) * t_out, t_out);
      const T* xrow = xv + static_cast<std::size_t>(c) * t_in;
      for (int j = 0; j < k; ++j) {
        const int off = j * d - p;
        const int lo = std::max(0, -off), hi = std::min(t_out, t_in - off);
        if (hi > lo) yrow.segment(lo, hi - lo) += wv[c * k + j] * CMapV<T>(xrow + lo + off, hi - lo);
      }
    }
  } else if (pointwise) {
    MapR<T>(out.data(), cout, t_out).noalias() =
        CMapR<T>(wv, cout, cin) * CMapR<T>(xv, cin, t_in);
  } else {
    cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(cin) * k * t_out, T(0));
    for (int c = 0; c < cin; ++c)
      for (int j = 0; j < k; ++j) {
        T* crow = cols->data() + (static_cast<std::size_t>(c) * k + j) * t_out;
        const T* xrow = xv + static_cast<std::size_t>(c) * t_in;
        for (int t = 0; t < t_out; ++t) {
          const int i = src(t, j);
          if (i >= 0) crow[t] = xrow[i];
        }
      }
    MapR<T>(out.data(), cout, t_out).noalias() =
        CMapR<T>(wv, cout, cin * k) * CMapR<T>(cols->data(), cin * k, t_out);
  }
  if (has_bias) {
    const T* bv = bias.data().data();
    for (int c = 0; c < cout; ++c)
      for (int t = 0; t < t_out; ++t) out[static_cast<std::size_t>(c) * t_out + t] += bv[c];
  }

  std::vector<NodePtr<T>> parents{x.shared(), w.shared()};
  if (has_bias) parents.push_back(bias.shared());
  auto* px = x.node();
  auto* pw = w.node();
  Node<T>* pb = has_bias ? bias.node() : nullptr;
  return make_result<T>(
      {cout, t_out}, std::move(out), std::move(parents),
      [=](Node<T>& n) {
        const T* dy = n.grad.data();
        if (pb && pb->requires_grad) {
          T* db = pb->grad_data();
          for (int c = 0; c < cout; ++c) {
            T acc = 0;
            for (int t = 0; t < t_out; ++t) acc += dy[static_cast<std::size_t>(c) * t_out + t];
            db[c] += acc;
          }
        }
        const T* xv = px->value.data();
        const T* wv = pw->value.data();
        if (depthwise) {
          T* dx = px->requires_grad ? px->grad_data() : nullptr;
          T* dw = pw->requires_grad ? pw->grad_data() : nullptr;
          for (int c = 0; c < cin; ++c) {
            const T* dyrow = dy + static_cast<std::size_t>(c) * t_out;
            const T* xrow = xv + static_cast<std::size_t>(c) * t_in;
            for (int j = 0; j < k; ++j) {
              const int off = j * d - p;
              const int lo = std::max(0, -off), hi = std::min(t_out, t_in - off);
              if (hi <= lo) continue;
              CMapV<T> g(dyrow + lo, hi - lo);
              if (dw) dw[c * k + j] += g.dot(CMapV<T>(xrow + lo + off, hi - lo));
              if (dx) MapV<T>(dx + static_cast<std::size_t>(c) * t_in + lo + off, hi - lo) += wv[c * k + j] * g;
            }
          }
          return;
        }
        CMapR<T> dY(dy, cout, t_out);
        if (pointwise) {
          if (pw->requires_grad)
            MapR<T>(pw->grad_data(), cout, cin).noalias() += dY * CMapR<T>(xv, cin, t_in).transpose();
          if (px->requires_grad)
            MapR<T>(px->grad_data(), cin, t_in).noalias() += CMapR<T>(wv, cout, cin).transpose() * dY;
          return;
        }
        CMapR<T> C(cols->data(), cin * k, t_out);
        if (pw->requires_grad)
          MapR<T>(pw->grad_data(), cout, cin * k).noalias() += dY * C.transpose();
        if (px->requires_grad) {
          MatR<T> dcols = CMapR<T>(wv, cout, cin * k).transpose() * dY;
          T* dx = px->grad_data();
          for (int c = 0; c < cin; ++c)
            for (int j = 0; j < k; ++j) {
              const T* drow = dcols.data() + (static_cast<std::size_t>(c) * k + j) * t_out;
              T* dxrow = dx + static_cast<std::size_t>(c) * t_in;
              for (int t = 0; t < t_out; ++t) {
                const int i = t * s + j * d - p;
                if (i >= 0 && i < t_in) dxrow[i] += drow[t];
              }
            }
        }
      });
}

/// Transposed convolution (overlap-add). x: [C_in,T]; w: [C_in,C_out,K].
/// Output length (T-1)*stride + K.
template <typename T>
Tensor<T> deconv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride) {
  CSER_CHECK(x.rank() == 2, "deconv1d: input must be [C,T], got ", shape_str(x.shape()));
  CSER_CHECK(w.rank() == 3, "deconv1d: weight must be [Cin,Cout,K], got ", shape_str(w.shape()));
  CSER_CHECK(stride >= 1, "deconv1d: stride must be >= 1");
  const int cin = x.dim(0), t_in = x.dim(1);
  CSER_CHECK(w.dim(0) == cin, "deconv1d: weight expects ", w.dim(0), " input channels, got ", cin);
  const int cout = w.dim(1), k = w.dim(2);
  const bool has_bias = bias.defined();
  if (has_bias)
    CSER_CHECK(static_cast<int>(bias.size()) == cout, "deconv1d: bias must have ", cout, " entries");
  const int t_out = (t_in - 1) * stride + k;

  // cols[o*K + j, t] = sum_c w[c,o,j] x[c,t]
  MatR<T> cols = CMapR<T>(w.data().data(), cin, cout * k).transpose() *
                 CMapR<T>(x.data().data(), cin, t_in);
  std::vector<T> out(static_cast<std::size_t>(cout) * t_out, T(0));
  for (int o = 0; o < cout; ++o)
    for (int j = 0; j < k; ++j) {
      const T* crow = cols.data() + (static_cast<std::size_t>(o) * k + j) * t_in;
      T* yrow = out.data() + static_cast<std::size_t>(o) * t_out;
      for (int t = 0; t < t_in; ++t) yrow[t * stride + j] += crow[t];
    }
  if (has_bias) {
    const T* bv = bias.data().data();
    for (int o = 0; o < cout; ++o)
      for (int t = 0; t < t_out; ++t) out[static_cast<std::size_t>(o) * t_out + t] += bv[o];
  }
  std::vector<NodePtr<T>> parents{x.shared(), w.shared()};
  if (has_bias) parents.push_back(bias.shared());
  auto* px = x.node();
  auto* pw = w.node();
  Node<T>* pb = has_bias ? bias.node() : nullptr;
  return make_result<T>({cout, t_out}, std::move(out), std::move(parents), [=](Node<T>& n) {
    const T* dy = n.grad.data();
    if (pb && pb->requires_grad) {
      T* db = pb->grad_data();
      for (int o = 0; o < cout; ++o) {
        T acc = 0;
        for (int t = 0; t < t_out; ++t) acc += dy[static_cast<std::size_t>(o) * t_out + t];
        db[o] += acc;
      }
    }
    MatR<T> dcols(cout * k, t_in);
    for (int o = 0; o < cout; ++o)
      for (int j = 0; j < k; ++j) {
        T* drow = dcols.data() + (static_cast<std::size_t>(o) * k + j) * t_in;
        const T* dyrow = dy + static_cast<std::size_t>(o) * t_out;
        for (int t = 0; t < t_in; ++t) drow[t] = dyrow[t * stride + j];
      }
    if (px->requires_grad)
      MapR<T>(px->grad_data(), cin, t_in).noalias() +=
          CMapR<T>(pw->value.data(), cin, cout * k) * dcols;
    if (pw->requires_grad)
      MapR<T>(pw->grad_data(), cin, cout * k).noalias() +=
          CMapR<T>(px->value.data(), cin, t_in) * dcols.transpose();
  });
}

struct Conv2dOptions {
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
};

/// 2-D cross-correlation. x: [C_in,H,W]; w: [C_out,C_in,KH,KW]; bias [C_out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Conv2dOptions opt = {}) {
  CSER_CHECK(x.rank() == 3, "conv2d: input must be [C,H,W], got ", shape_str(x.shape()));
  CSER_CHECK(w.rank() == 4, "conv2d: weight must be [Cout,Cin,KH,KW], got ", shape_str(w.shape()));
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  CSER_CHECK(w.dim(1) == cin, "conv2d: weight expects ", w.dim(1), " input channels, got ", cin);
  CSER_CHECK(static_cast<int>(bias.size()) == cout, "conv2d: bias must have ", cout, " entries");
  const int sh = opt.stride_h, sw = opt.stride_w, ph = opt.pad_h, pw_ = opt.pad_w;
  CSER_CHECK(h + 2 * ph >= kh && wd + 2 * pw_ >= kw, "conv2d: input smaller than kernel");
  const int ho = (h + 2 * ph - kh) / sh + 1;
  const int wo = (wd + 2 * pw_ - kw) / sw + 1;
  const int rows = cin * kh * kw;
  const int ncol = ho * wo;

  auto cols = std::make_shared<MatR<T>>(MatR<T>::Zero(rows, ncol));
  const T* xv = x.data().data();
  for (int c = 0; c < cin; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        T* crow = cols->data() + (static_cast<std::size_t>(c * kh + i) * kw + j) * ncol;
        for (int y = 0; y < ho; ++y) {
          const int iy = y * sh + i - ph;
          if (iy < 0 || iy >= h) continue;
          for (int z = 0; z < wo; ++z) {
            const int ix = z * sw + j - pw_;
            if (ix >= 0 && ix < wd) crow[y * wo + z] = xv[(static_cast<std::size_t>(c) * h + iy) * wd + ix];
          }
        }
      }
  std::vector<T> out(static_cast<std::size_t>(cout) * ncol);
  MapR<T> Y(out.data(), cout, ncol);
  Y.noalias() = CMapR<T>(w.data().data(), cout, rows) * (*cols);
  Y.colwise() += CMapV<T>(bias.data().data(), cout);

  auto *px = x.node(), *pwt = w.node(), *pb = bias.node();
  return make_result<T>(
      {cout, ho, wo}, std::move(out), {x.shared(), w.shared(), bias.shared()}, [=](Node<T>& n) {
        CMapR<T> dY(n.grad.data(), cout, ncol);
        if (pb->requires_grad) MapV<T>(pb->grad_data(), cout) += pinned(dY).rowwise().sum();
        if (pwt->requires_grad)
          MapR<T>(pwt->grad_data(), cout, rows).noalias() += dY * cols->transpose();
        if (!px->requires_grad) return;
        MatR<T> dcols = CMapR<T>(pwt->value.data(), cout, rows).transpose() * dY;
        T* dx = px->grad_data();
        for (int c = 0; c < cin; ++c)
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
              const T* drow = dcols.data() + (static_cast<std::size_t>(c * kh + i) * kw + j) * ncol;
              for (int y = 0; y < ho; ++y) {
                const int iy = y * sh + i - ph;
                if (iy < 0 || iy >= h) continue;
                for (int z = 0; z < wo; ++z) {
                  const int ix = z * sw + j - pw_;
                  if (ix >= 0 && ix < wd) dx[(static_cast<std::size_t>(c) * h + iy) * wd + ix] += drow[y * wo + z];
                }
              }
            }
      });
}

// --------------------------------------------------------------- losses

/// Negative SI-SDR of a 1-D estimate ([T] or [1,T]) against a fixed
/// reference. Metric arithmetic runs in double whatever T is.
template <typename T>
Tensor<T> sisnr_loss(const Tensor<T>& estimate, std::span<const double> reference) {
  CSER_CHECK(estimate.size() == reference.size(), "sisnr_loss: length mismatch (",
             estimate.size(), " vs ", reference.size(), ")");
  std::vector<double> est(estimate.data().begin(), estimate.data().end());
  auto grad = std::make_shared<std::vector<double>>();
  const double value = ::cocktailser::detail::si_sdr_impl(est, reference, grad.get());
  auto* pe = estimate.node();
  return make_result<T>({1}, {static_cast<T>(-value)}, {estimate.shared()},
                        [pe, grad](Node<T>& n) {
                          T* g = pe->grad_data();
                          const double d = static_cast<double>(n.grad[0]);
                          for (std::size_t i = 0; i < grad->size(); ++i)
                            g[i] -= static_cast<T>(d * (*grad)[i]);
                        });
}

}  // namespace cocktailser::ad
