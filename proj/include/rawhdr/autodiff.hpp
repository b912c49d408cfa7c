#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <unordered_set>

#include "rawhdr/core.hpp"

// Reverse-mode autodiff over dense tensors. Nodes record their parents and a
// backprop closure; creation order is a valid topological order because
// parents always exist before their children.

namespace rawhdr {

class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
  Tensor value;
  Tensor grad_store;
  bool requires_grad = false;
  bool grad_ready = false;
  std::int64_t id = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  Tensor& grad() {
    if (!grad_ready) {
      grad_store = Tensor(value.shape);
      grad_ready = true;
    }
    return grad_store;
  }
};

namespace detail {
inline std::int64_t next_node_id() {
  static std::atomic<std::int64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool any_requires_grad(const std::vector<Var>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}
}  // namespace detail

inline Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = detail::next_node_id();
  n->requires_grad = detail::any_requires_grad(parents);
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = detail::next_node_id();
  return n;
}

inline Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = detail::next_node_id();
  n->requires_grad = true;
  return n;
}

/// Backpropagate from a scalar root. Fills .grad() of every reachable leaf.
inline void backward(const Var& root) {
  if (root->value.size() != 1) throw ShapeError("backward: root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

  root->grad()[0] = 1.0;
  for (Node* n : order) {
    if (n->backprop && n->grad_ready) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// dense helpers

// C[n,m] (+)= A[n,k] * B[k,m]
inline void mat_mul(const double* A, const double* B, double* C, int n, int k, int m,
                    bool accumulate) {
  if (!accumulate) std::fill(C, C + static_cast<std::size_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      const double* b = B + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

// C[n,m] (+)= A[n,k] * B[m,k]^T
inline void mat_mul_nt(const double* A, const double* B, double* C, int n, int k, int m,
                       bool accumulate) {
  if (!accumulate) std::fill(C, C + static_cast<std::size_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* b = B + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] += s;
    }
  }
}

// C[k,m] (+)= A[n,k]^T * B[n,m]
inline void mat_mul_tn(const double* A, const double* B, double* C, int n, int k, int m,
                       bool accumulate) {
  if (!accumulate) std::fill(C, C + static_cast<std::size_t>(k) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    const double* b = B + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      double* c = C + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise ops

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->grad();
      for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad_store[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->grad();
      for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] += n.grad_store[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->grad();
      for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad_store[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->grad();
      for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] -= n.grad_store[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->grad();
      for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad_store[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->grad();
      for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] += n.grad_store[i] * a->value[i];
    }
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.data) v += s;
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad_store[i];
  });
}

inline Var mul_scalar(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.data) v *= s;
  return make_node(std::move(out), {a}, [a, s](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += s * n.grad_store[i];
  });
}

/// mask (h, w, 1) times x (h, w, C), mask broadcast over channels
inline Var broadcast_mul(const Var& mask, const Var& x) {
  const Tensor& m = mask->value;
  const Tensor& v = x->value;
  if (m.rank() != 3 || v.rank() != 3 || m.dim(2) != 1 || m.dim(0) != v.dim(0) ||
      m.dim(1) != v.dim(1))
    throw ShapeError("broadcast_mul: expected (h,w,1) mask and (h,w,C) input");
  const int C = v.dim(2);
  Tensor out(v.shape);
  const std::int64_t npix = static_cast<std::int64_t>(m.dim(0)) * m.dim(1);
  for (std::int64_t p = 0; p < npix; ++p) {
    const double mv = m[p];
    for (int c = 0; c < C; ++c) out[p * C + c] = mv * v[p * C + c];
  }
  return make_node(std::move(out), {mask, x}, [mask, x, npix, C](Node& n) {
    if (mask->requires_grad) {
      Tensor& gm = mask->grad();
      for (std::int64_t p = 0; p < npix; ++p) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += n.grad_store[p * C + c] * x->value[p * C + c];
        gm[p] += s;
      }
    }
    if (x->requires_grad) {
      Tensor& gx = x->grad();
      for (std::int64_t p = 0; p < npix; ++p) {
        const double mv = mask->value[p];
        for (int c = 0; c < C; ++c) gx[p * C + c] += mv * n.grad_store[p * C + c];
      }
    }
  });
}

inline Var relu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = std::max(v, 0.0);
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t i = 0; i < ga.size(); ++i)
      if (a->value[i] > 0.0) ga[i] += n.grad_store[i];
  });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

inline Var sigmoid(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = sigmoid_scalar(v);
  auto saved = std::make_shared<Tensor>(out);
  return make_node(std::move(out), {a}, [a, saved](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t i = 0; i < ga.size(); ++i) {
      const double s = (*saved)[i];
      ga[i] += n.grad_store[i] * s * (1.0 - s);
    }
  });
}

inline double softplus_scalar(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline Var softplus(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = softplus_scalar(v);
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t i = 0; i < ga.size(); ++i)
      ga[i] += n.grad_store[i] * sigmoid_scalar(a->value[i]);
  });
}

/// x * sigmoid(x)
inline Var silu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v *= sigmoid_scalar(v);
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t i = 0; i < ga.size(); ++i) {
      const double x = a->value[i];
      const double s = sigmoid_scalar(x);
      ga[i] += n.grad_store[i] * (s + x * s * (1.0 - s));
    }
  });
}

inline Var log_eps(const Var& a, double eps) {
  Tensor out = a->value;
  for (auto& v : out.data) v = std::log(v + eps);
  return make_node(std::move(out), {a}, [a, eps](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad_store[i] / (a->value[i] + eps);
  });
}

inline Var square(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v *= v;
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * a->value[i] * n.grad_store[i];
  });
}

inline Var abs_val(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = std::fabs(v);
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t i = 0; i < ga.size(); ++i) {
      const double x = a->value[i];
      if (x > 0.0)
        ga[i] += n.grad_store[i];
      else if (x < 0.0)
        ga[i] -= n.grad_store[i];
    }
  });
}

/// sign(x) * log1p(mu*|x|) / log1p(mu) — signed mu-law companding
inline Var mulaw_signed(const Var& a, double mu) {
  if (mu <= 0.0) throw ValueError("mulaw_signed: mu must be positive");
  const double denom = std::log1p(mu);
  Tensor out = a->value;
  for (auto& v : out.data) {
    const double s = (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    v = s * std::log1p(mu * std::fabs(v)) / denom;
  }
  return make_node(std::move(out), {a}, [a, mu, denom](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t i = 0; i < ga.size(); ++i) {
      const double d = mu / ((1.0 + mu * std::fabs(a->value[i])) * denom);
      ga[i] += n.grad_store[i] * d;
    }
  });
}

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (double v : a->value.data) s += v;
  return make_node(Tensor::scalar(s), {a}, [a](Node& n) {
    Tensor& ga = a->grad();
    const double g = n.grad_store[0];
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

inline Var mean_all(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.size());
  double s = 0.0;
  for (double v : a->value.data) s += v;
  return make_node(Tensor::scalar(s * inv), {a}, [a, inv](Node& n) {
    Tensor& ga = a->grad();
    const double g = n.grad_store[0] * inv;
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

// ---------------------------------------------------------------------------
// shape ops

inline Var concat_ch(const Var& a, const Var& b) {
  const Tensor& x = a->value;
  const Tensor& y = b->value;
  if (x.rank() != 3 || y.rank() != 3 || x.dim(0) != y.dim(0) || x.dim(1) != y.dim(1))
    throw ShapeError("concat_ch: spatial dims differ");
  const int ca = x.dim(2), cb = y.dim(2);
  const std::int64_t npix = static_cast<std::int64_t>(x.dim(0)) * x.dim(1);
  Tensor out({x.dim(0), x.dim(1), ca + cb});
  for (std::int64_t p = 0; p < npix; ++p) {
    for (int c = 0; c < ca; ++c) out[p * (ca + cb) + c] = x[p * ca + c];
    for (int c = 0; c < cb; ++c) out[p * (ca + cb) + ca + c] = y[p * cb + c];
  }
  return make_node(std::move(out), {a, b}, [a, b, npix, ca, cb](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->grad();
      for (std::int64_t p = 0; p < npix; ++p)
        for (int c = 0; c < ca; ++c) ga[p * ca + c] += n.grad_store[p * (ca + cb) + c];
    }
    if (b->requires_grad) {
      Tensor& gb = b->grad();
      for (std::int64_t p = 0; p < npix; ++p)
        for (int c = 0; c < cb; ++c) gb[p * cb + c] += n.grad_store[p * (ca + cb) + ca + c];
    }
  });
}

inline Var slice_ch(const Var& a, int c0, int c1) {
  const Tensor& x = a->value;
  if (x.rank() != 3 || c0 < 0 || c1 > x.dim(2) || c0 >= c1)
    throw ShapeError("slice_ch: bad channel range");
  const int C = x.dim(2), cs = c1 - c0;
  const std::int64_t npix = static_cast<std::int64_t>(x.dim(0)) * x.dim(1);
  Tensor out({x.dim(0), x.dim(1), cs});
  for (std::int64_t p = 0; p < npix; ++p)
    for (int c = 0; c < cs; ++c) out[p * cs + c] = x[p * C + c0 + c];
  return make_node(std::move(out), {a}, [a, npix, C, c0, cs](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t p = 0; p < npix; ++p)
      for (int c = 0; c < cs; ++c) ga[p * C + c0 + c] += n.grad_store[p * cs + c];
  });
}

/// Gather packed channels into a new channel order (pure permutation).
inline Var select_channels(const Var& a, const std::vector<int>& chans) {
  const Tensor& x = a->value;
  if (x.rank() != 3) throw ShapeError("select_channels: rank 3 expected");
  const int C = x.dim(2);
  const int cs = static_cast<int>(chans.size());
  for (int c : chans)
    if (c < 0 || c >= C) throw ShapeError("select_channels: index out of range");
  const std::int64_t npix = static_cast<std::int64_t>(x.dim(0)) * x.dim(1);
  Tensor out({x.dim(0), x.dim(1), cs});
  for (std::int64_t p = 0; p < npix; ++p)
    for (int c = 0; c < cs; ++c) out[p * cs + c] = x[p * C + chans[static_cast<std::size_t>(c)]];
  return make_node(std::move(out), {a}, [a, npix, C, cs, chans](Node& n) {
    Tensor& ga = a->grad();
    for (std::int64_t p = 0; p < npix; ++p)
      for (int c = 0; c < cs; ++c)
        ga[p * C + chans[static_cast<std::size_t>(c)]] += n.grad_store[p * cs + c];
  });
}

inline Var pad2d(const Var& a, int top, int bottom, int left, int right) {
  const Tensor& x = a->value;
  if (x.rank() != 3) throw ShapeError("pad2d: rank 3 expected");
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return a;
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor out({H + top + bottom, W + left + right, C});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) out.at(y + top, xx + left, c) = x.at(y, xx, c);
  return make_node(std::move(out), {a}, [a, H, W, C, top, left](Node& n) {
    Tensor& ga = a->grad();
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int c = 0; c < C; ++c) ga.at(y, xx, c) += n.grad_store.at(y + top, xx + left, c);
  });
}

/// one-pixel replicate padding on all sides
inline Var pad_replicate1(const Var& a) {
  const Tensor& x = a->value;
  if (x.rank() != 3) throw ShapeError("pad_replicate1: rank 3 expected");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor out({H + 2, W + 2, C});
  for (int y = 0; y < H + 2; ++y) {
    const int sy = std::clamp(y - 1, 0, H - 1);
    for (int xx = 0; xx < W + 2; ++xx) {
      const int sx = std::clamp(xx - 1, 0, W - 1);
      for (int c = 0; c < C; ++c) out.at(y, xx, c) = x.at(sy, sx, c);
    }
  }
  return make_node(std::move(out), {a}, [a, H, W, C](Node& n) {
    Tensor& ga = a->grad();
    for (int y = 0; y < H + 2; ++y) {
      const int sy = std::clamp(y - 1, 0, H - 1);
      for (int xx = 0; xx < W + 2; ++xx) {
        const int sx = std::clamp(xx - 1, 0, W - 1);
        for (int c = 0; c < C; ++c) ga.at(sy, sx, c) += n.grad_store.at(y, xx, c);
      }
    }
  });
}

inline Var crop2d(const Var& a, int y0, int x0, int h, int w) {
  const Tensor& x = a->value;
  if (x.rank() != 3) throw ShapeError("crop2d: rank 3 expected");
  if (y0 < 0 || x0 < 0 || y0 + h > x.dim(0) || x0 + w > x.dim(1))
    throw ShapeError("crop2d: window out of range");
  if (y0 == 0 && x0 == 0 && h == x.dim(0) && w == x.dim(1)) return a;
  const int C = x.dim(2);
  Tensor out({h, w, C});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int c = 0; c < C; ++c) out.at(y, xx, c) = x.at(y + y0, xx + x0, c);
  return make_node(std::move(out), {a}, [a, y0, x0, h, w, C](Node& n) {
    Tensor& ga = a->grad();
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int c = 0; c < C; ++c) ga.at(y + y0, xx + x0, c) += n.grad_store.at(y, xx, c);
  });
}

inline Var upsample_nearest2(const Var& a) {
  const Tensor& x = a->value;
  if (x.rank() != 3) throw ShapeError("upsample_nearest2: rank 3 expected");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor out({H * 2, W * 2, C});
  for (int y = 0; y < 2 * H; ++y)
    for (int xx = 0; xx < 2 * W; ++xx)
      for (int c = 0; c < C; ++c) out.at(y, xx, c) = x.at(y / 2, xx / 2, c);
  return make_node(std::move(out), {a}, [a, H, W, C](Node& n) {
    Tensor& ga = a->grad();
    for (int y = 0; y < 2 * H; ++y)
      for (int xx = 0; xx < 2 * W; ++xx)
        for (int c = 0; c < C; ++c) ga.at(y / 2, xx / 2, c) += n.grad_store.at(y, xx, c);
  });
}

/// keep every second pixel (top-left of each 2x2)
inline Var subsample2(const Var& a) {
  const Tensor& x = a->value;
  if (x.rank() != 3) throw ShapeError("subsample2: rank 3 expected");
  const int H = x.dim(0) / 2, W = x.dim(1) / 2, C = x.dim(2);
  if (H < 1 || W < 1) throw ShapeError("subsample2: input too small");
  Tensor out({H, W, C});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) out.at(y, xx, c) = x.at(2 * y, 2 * xx, c);
  return make_node(std::move(out), {a}, [a, H, W, C](Node& n) {
    Tensor& ga = a->grad();
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int c = 0; c < C; ++c) ga.at(2 * y, 2 * xx, c) += n.grad_store.at(y, xx, c);
  });
}

/// horizontal first difference, out(y,x) = in(y,x+1) - in(y,x)
inline Var diff_x(const Var& a) {
  const Tensor& x = a->value;
  if (x.rank() != 3 || x.dim(1) < 2) throw ShapeError("diff_x: width >= 2 expected");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor out({H, W - 1, C});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx + 1 < W; ++xx)
      for (int c = 0; c < C; ++c) out.at(y, xx, c) = x.at(y, xx + 1, c) - x.at(y, xx, c);
  return make_node(std::move(out), {a}, [a, H, W, C](Node& n) {
    Tensor& ga = a->grad();
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx + 1 < W; ++xx)
        for (int c = 0; c < C; ++c) {
          const double g = n.grad_store.at(y, xx, c);
          ga.at(y, xx + 1, c) += g;
          ga.at(y, xx, c) -= g;
        }
  });
}

inline Var diff_y(const Var& a) {
  const Tensor& x = a->value;
  if (x.rank() != 3 || x.dim(0) < 2) throw ShapeError("diff_y: height >= 2 expected");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor out({H - 1, W, C});
  for (int y = 0; y + 1 < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) out.at(y, xx, c) = x.at(y + 1, xx, c) - x.at(y, xx, c);
  return make_node(std::move(out), {a}, [a, H, W, C](Node& n) {
    Tensor& ga = a->grad();
    for (int y = 0; y + 1 < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int c = 0; c < C; ++c) {
          const double g = n.grad_store.at(y, xx, c);
          ga.at(y + 1, xx, c) += g;
          ga.at(y, xx, c) -= g;
        }
  });
}

// ---------------------------------------------------------------------------
// linear algebra ops

/// y = x·W + b over the trailing dim; x (..., Ci), W (Ci, Co), b (Co) or null
inline Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (wv.rank() != 2) throw ShapeError("linear: weight must be rank 2");
  const int ci = wv.dim(0), co = wv.dim(1);
  if (xv.rank() < 1 || xv.shape.back() != ci) throw ShapeError("linear: trailing dim mismatch");
  const int n = static_cast<int>(xv.size() / ci);
  Shape out_shape = xv.shape;
  out_shape.back() = co;
  Tensor out(out_shape);
  mat_mul(xv.data.data(), wv.data.data(), out.data.data(), n, ci, co, false);
  if (b) {
    const Tensor& bv = b->value;
    if (bv.size() != co) throw ShapeError("linear: bias size mismatch");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < co; ++j) out[static_cast<std::int64_t>(i) * co + j] += bv[j];
  }
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_node(std::move(out), std::move(parents), [x, w, b, n, ci, co](Node& nd) {
    const double* g = nd.grad_store.data.data();
    if (x->requires_grad)
      mat_mul_nt(g, w->value.data.data(), x->grad().data.data(), n, co, ci, true);
    if (w->requires_grad)
      mat_mul_tn(x->value.data.data(), g, w->grad().data.data(), n, ci, co, true);
    if (b && b->requires_grad) {
      Tensor& gb = b->grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < co; ++j) gb[j] += g[static_cast<std::int64_t>(i) * co + j];
    }
  });
}

/// batched matmul: a (B,n,k) · b (B,k,m) -> (B,n,m)
inline Var bmm(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1))
    throw ShapeError("bmm: incompatible shapes");
  const int B = av.dim(0), n = av.dim(1), k = av.dim(2), m = bv.dim(2);
  Tensor out({B, n, m});
  for (int i = 0; i < B; ++i)
    mat_mul(av.data.data() + static_cast<std::size_t>(i) * n * k,
            bv.data.data() + static_cast<std::size_t>(i) * k * m,
            out.data.data() + static_cast<std::size_t>(i) * n * m, n, k, m, false);
  return make_node(std::move(out), {a, b}, [a, b, B, n, k, m](Node& nd) {
    for (int i = 0; i < B; ++i) {
      const double* g = nd.grad_store.data.data() + static_cast<std::size_t>(i) * n * m;
      if (a->requires_grad)
        mat_mul_nt(g, b->value.data.data() + static_cast<std::size_t>(i) * k * m,
                   a->grad().data.data() + static_cast<std::size_t>(i) * n * k, n, m, k, true);
      if (b->requires_grad)
        mat_mul_tn(a->value.data.data() + static_cast<std::size_t>(i) * n * k, g,
                   b->grad().data.data() + static_cast<std::size_t>(i) * k * m, n, k, m, true);
    }
  });
}

/// batched a (B,n,k) · b (B,m,k)^T -> (B,n,m)
inline Var bmm_nt(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2))
    throw ShapeError("bmm_nt: incompatible shapes");
  const int B = av.dim(0), n = av.dim(1), k = av.dim(2), m = bv.dim(1);
  Tensor out({B, n, m});
  for (int i = 0; i < B; ++i)
    mat_mul_nt(av.data.data() + static_cast<std::size_t>(i) * n * k,
               bv.data.data() + static_cast<std::size_t>(i) * m * k,
               out.data.data() + static_cast<std::size_t>(i) * n * m, n, k, m, false);
  return make_node(std::move(out), {a, b}, [a, b, B, n, k, m](Node& nd) {
    for (int i = 0; i < B; ++i) {
      const double* g = nd.grad_store.data.data() + static_cast<std::size_t>(i) * n * m;
      if (a->requires_grad)
        mat_mul(g, b->value.data.data() + static_cast<std::size_t>(i) * m * k,
                a->grad().data.data() + static_cast<std::size_t>(i) * n * k, n, m, k, true);
      if (b->requires_grad)
        mat_mul_tn(g, a->value.data.data() + static_cast<std::size_t>(i) * n * k,
                   b->grad().data.data() + static_cast<std::size_t>(i) * m * k, n, m, k, true);
    }
  });
}

/// softmax over the last dimension
inline Var softmax_last(const Var& a) {
  const Tensor& x = a->value;
  if (x.rank() < 1) throw ShapeError("softmax_last: rank >= 1 expected");
  const int m = x.shape.back();
  const std::int64_t rows = x.size() / m;
  Tensor out(x.shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xi = x.data.data() + r * m;
    double* yi = out.data.data() + r * m;
    double mx = xi[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, xi[j]);
    double s = 0.0;
    for (int j = 0; j < m; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      s += yi[j];
    }
    const double inv = 1.0 / s;
    for (int j = 0; j < m; ++j) yi[j] *= inv;
  }
  auto saved = std::make_shared<Tensor>(out);
  return make_node(std::move(out), {a}, [a, saved, rows, m](Node& nd) {
    Tensor& ga = a->grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = saved->data.data() + r * m;
      const double* g = nd.grad_store.data.data() + r * m;
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += y[j] * g[j];
      double* gx = ga.data.data() + r * m;
      for (int j = 0; j < m; ++j) gx[j] += y[j] * (g[j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// convolutions

namespace detail {
inline void im2col(const Tensor& x, int kh, int kw, int stride, int pad, Tensor& col, int oh,
                   int ow) {
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int K = kh * kw * C;
  double* out = col.data.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* row = out + (static_cast<std::size_t>(oy) * ow + ox) * K;
      int idx = 0;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride + ky - pad;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
            const double* src = x.data.data() + (static_cast<std::size_t>(iy) * W + ix) * C;
            for (int c = 0; c < C; ++c) row[idx++] = src[c];
          } else {
            for (int c = 0; c < C; ++c) row[idx++] = 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_acc(const Tensor& col, int kh, int kw, int stride, int pad, Tensor& gx, int oh,
                       int ow) {
  const int H = gx.dim(0), W = gx.dim(1), C = gx.dim(2);
  const int K = kh * kw * C;
  const double* in = col.data.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double* row = in + (static_cast<std::size_t>(oy) * ow + ox) * K;
      int idx = 0;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride + ky - pad;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
            double* dst = gx.data.data() + (static_cast<std::size_t>(iy) * W + ix) * C;
            for (int c = 0; c < C; ++c) dst[c] += row[idx++];
          } else {
            idx += C;
          }
        }
      }
    }
  }
}
}  // namespace detail

/// 2-d convolution; x (H,W,Ci), w (kh,kw,Ci,Co), optional b (Co)
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 3 || wv.rank() != 4) throw ShapeError("conv2d: bad ranks");
  const int H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  const int kh = wv.dim(0), kw = wv.dim(1), ci = wv.dim(2), co = wv.dim(3);
  if (ci != C) throw ShapeError("conv2d: channel mismatch");
  const int oh = (H + 2 * pad - kh) / stride + 1;
  const int ow = (W + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1) throw ShapeError("conv2d: output would be empty");
  const int K = kh * kw * C;
  const int n = oh * ow;

  auto col = std::make_shared<Tensor>(Shape{n, K});
  detail::im2col(xv, kh, kw, stride, pad, *col, oh, ow);
  Tensor out({oh, ow, co});
  mat_mul(col->data.data(), wv.data.data(), out.data.data(), n, K, co, false);
  if (b) {
    const Tensor& bv = b->value;
    if (bv.size() != co) throw ShapeError("conv2d: bias size mismatch");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < co; ++j) out[static_cast<std::int64_t>(i) * co + j] += bv[j];
  }
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_node(std::move(out), std::move(parents),
                   [x, w, b, col, kh, kw, stride, pad, n, K, co, oh, ow](Node& nd) {
                     const double* g = nd.grad_store.data.data();
                     if (w->requires_grad)
                       mat_mul_tn(col->data.data(), g, w->grad().data.data(), n, K, co, true);
                     if (b && b->requires_grad) {
                       Tensor& gb = b->grad();
                       for (int i = 0; i < n; ++i)
                         for (int j = 0; j < co; ++j) gb[j] += g[static_cast<std::int64_t>(i) * co + j];
                     }
                     if (x->requires_grad) {
                       Tensor gcol({n, K});
                       mat_mul_nt(g, w->value.data.data(), gcol.data.data(), n, co, K, false);
                       detail::col2im_acc(gcol, kh, kw, stride, pad, x->grad(), oh, ow);
                     }
                   });
}

/// depthwise 3x3 convolution, stride 1, pad 1; x (H,W,C), w (3,3,C), optional b (C)
inline Var depthwise3x3(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 3 || wv.rank() != 3 || wv.dim(0) != 3 || wv.dim(1) != 3 ||
      wv.dim(2) != xv.dim(2))
    throw ShapeError("depthwise3x3: bad shapes");
  const int H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  Tensor out({H, W, C});
  for (int y = 0; y < H; ++y) {
    for (int xx = 0; xx < W; ++xx) {
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = y + ky - 1;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = xx + kx - 1;
          if (ix < 0 || ix >= W) continue;
          const double* src = xv.data.data() + (static_cast<std::size_t>(iy) * W + ix) * C;
          const double* kw_ = wv.data.data() + (static_cast<std::size_t>(ky) * 3 + kx) * C;
          double* dst = out.data.data() + (static_cast<std::size_t>(y) * W + xx) * C;
          for (int c = 0; c < C; ++c) dst[c] += src[c] * kw_[c];
        }
      }
    }
  }
  if (b) {
    const Tensor& bv = b->value;
    if (bv.size() != C) throw ShapeError("depthwise3x3: bias size mismatch");
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(H) * W; ++p)
      for (int c = 0; c < C; ++c) out[p * C + c] += bv[c];
  }
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_node(std::move(out), std::move(parents), [x, w, b, H, W, C](Node& nd) {
    const Tensor& g = nd.grad_store;
    if (x->requires_grad || w->requires_grad) {
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) {
          const double* gp = g.data.data() + (static_cast<std::size_t>(y) * W + xx) * C;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = xx + kx - 1;
              if (ix < 0 || ix >= W) continue;
              if (x->requires_grad) {
                double* gx = x->grad().data.data() + (static_cast<std::size_t>(iy) * W + ix) * C;
                const double* kw_ = w->value.data.data() + (static_cast<std::size_t>(ky) * 3 + kx) * C;
                for (int c = 0; c < C; ++c) gx[c] += gp[c] * kw_[c];
              }
              if (w->requires_grad) {
                double* gw = w->grad().data.data() + (static_cast<std::size_t>(ky) * 3 + kx) * C;
                const double* src = x->value.data.data() + (static_cast<std::size_t>(iy) * W + ix) * C;
                for (int c = 0; c < C; ++c) gw[c] += gp[c] * src[c];
              }
            }
          }
        }
      }
    }
    if (b && b->requires_grad) {
      Tensor& gb = b->grad();
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(H) * W; ++p)
        for (int c = 0; c < C; ++c) gb[c] += g[p * C + c];
    }
  });
}

/// per-token layer normalization over the channel dim, y = (x-mu)/sqrt(var+eps)*gain + offset
inline Var layer_norm_ch(const Var& x, const Var& gain, const Var& offset, double eps = 1e-5) {
  const Tensor& xv = x->value;
  if (xv.rank() < 1) throw ShapeError("layer_norm_ch: rank >= 1 expected");
  const int C = xv.shape.back();
  if (gain->value.size() != C || offset->value.size() != C)
    throw ShapeError("layer_norm_ch: gain/offset size mismatch");
  const std::int64_t n = xv.size() / C;
  Tensor out(xv.shape);
  auto xhat = std::make_shared<Tensor>(xv.shape);
  auto inv_std = std::make_shared<Tensor>(Shape{static_cast<int>(n)});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* xi = xv.data.data() + i * C;
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += xi[c];
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (xi[c] - mu) * (xi[c] - mu);
    var /= C;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    double* xh = xhat->data.data() + i * C;
    double* yo = out.data.data() + i * C;
    for (int c = 0; c < C; ++c) {
      xh[c] = (xi[c] - mu) * is;
      yo[c] = xh[c] * gain->value[c] + offset->value[c];
    }
  }
  return make_node(std::move(out), {x, gain, offset}, [x, gain, offset, xhat, inv_std, n, C](Node& nd) {
    const Tensor& g = nd.grad_store;
    if (gain->requires_grad) {
      Tensor& gg = gain->grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (int c = 0; c < C; ++c) gg[c] += g[i * C + c] * (*xhat)[i * C + c];
    }
    if (offset->requires_grad) {
      Tensor& go = offset->grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (int c = 0; c < C; ++c) go[c] += g[i * C + c];
    }
    if (x->requires_grad) {
      Tensor& gx = x->grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const double is = (*inv_std)[i];
        const double* xh = xhat->data.data() + i * C;
        double sum_gy = 0.0, sum_gyxh = 0.0;
        for (int c = 0; c < C; ++c) {
          const double gy = g[i * C + c] * gain->value[c];
          sum_gy += gy;
          sum_gyxh += gy * xh[c];
        }
        for (int c = 0; c < C; ++c) {
          const double gy = g[i * C + c] * gain->value[c];
          gx[i * C + c] += is * (gy - sum_gy / C - xh[c] * sum_gyxh / C);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// window / head reshuffles (pure permutations)

/// (H,W,C) -> (nw, ws*ws, C) with non-overlapping ws x ws windows
inline Var window_partition(const Var& a, int ws) {
  const Tensor& x = a->value;
  if (x.rank() != 3) throw ShapeError("window_partition: rank 3 expected");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (ws < 1 || H % ws != 0 || W % ws != 0)
    throw ShapeError("window_partition: dims " + shape_str(x.shape) +
                     " not divisible by window " + std::to_string(ws));
  const int wy = H / ws, wx = W / ws, nw = wy * wx, n = ws * ws;
  Tensor out({nw, n, C});
  for (int b = 0; b < nw; ++b) {
    const int oy = (b / wx) * ws, ox = (b % wx) * ws;
    for (int t = 0; t < n; ++t) {
      const int y = oy + t / ws, xx = ox + t % ws;
      for (int c = 0; c < C; ++c) out[(static_cast<std::int64_t>(b) * n + t) * C + c] = x.at(y, xx, c);
    }
  }
  return make_node(std::move(out), {a}, [a, ws, wx, nw, n, C](Node& nd) {
    Tensor& ga = a->grad();
    for (int b = 0; b < nw; ++b) {
      const int oy = (b / wx) * ws, ox = (b % wx) * ws;
      for (int t = 0; t < n; ++t) {
        const int y = oy + t / ws, xx = ox + t % ws;
        for (int c = 0; c < C; ++c)
          ga.at(y, xx, c) += nd.grad_store[(static_cast<std::int64_t>(b) * n + t) * C + c];
      }
    }
  });
}

/// inverse of window_partition
inline Var window_merge(const Var& a, int H, int W, int ws) {
  const Tensor& x = a->value;
  const int wy = H / ws, wx = W / ws, nw = wy * wx, n = ws * ws;
  if (x.rank() != 3 || x.dim(0) != nw || x.dim(1) != n)
    throw ShapeError("window_merge: shape mismatch");
  const int C = x.dim(2);
  Tensor out({H, W, C});
  for (int b = 0; b < nw; ++b) {
    const int oy = (b / wx) * ws, ox = (b % wx) * ws;
    for (int t = 0; t < n; ++t) {
      const int y = oy + t / ws, xx = ox + t % ws;
      for (int c = 0; c < C; ++c) out.at(y, xx, c) = x[(static_cast<std::int64_t>(b) * n + t) * C + c];
    }
  }
  return make_node(std::move(out), {a}, [a, ws, wx, nw, n, C](Node& nd) {
    Tensor& ga = a->grad();
    for (int b = 0; b < nw; ++b) {
      const int oy = (b / wx) * ws, ox = (b % wx) * ws;
      for (int t = 0; t < n; ++t) {
        const int y = oy + t / ws, xx = ox + t % ws;
        for (int c = 0; c < C; ++c)
          ga[(static_cast<std::int64_t>(b) * n + t) * C + c] += nd.grad_store.at(y, xx, c);
      }
    }
  });
}

/// (B, n, h*d) -> (B*h, n, d)
inline Var split_heads(const Var& a, int heads) {
  const Tensor& x = a->value;
  if (x.rank() != 3 || x.dim(2) % heads != 0) throw ShapeError("split_heads: bad shapes");
  const int B = x.dim(0), n = x.dim(1), C = x.dim(2), d = C / heads;
  Tensor out({B * heads, n, d});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int t = 0; t < n; ++t)
        for (int e = 0; e < d; ++e)
          out[((static_cast<std::int64_t>(b) * heads + h) * n + t) * d + e] =
              x[(static_cast<std::int64_t>(b) * n + t) * C + h * d + e];
  return make_node(std::move(out), {a}, [a, heads](Node& nd) {
    const Tensor& g = nd.grad_store;
    Tensor& ga = a->grad();
    const int B = a->value.dim(0), n = a->value.dim(1), C = a->value.dim(2), d = C / heads;
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h)
        for (int t = 0; t < n; ++t)
          for (int e = 0; e < d; ++e)
            ga[(static_cast<std::int64_t>(b) * n + t) * C + h * d + e] +=
                g[((static_cast<std::int64_t>(b) * heads + h) * n + t) * d + e];
  });
}

/// (B*h, n, d) -> (B, n, h*d)
inline Var merge_heads(const Var& a, int heads) {
  const Tensor& x = a->value;
  if (x.rank() != 3 || x.dim(0) % heads != 0) throw ShapeError("merge_heads: bad shapes");
  const int B = x.dim(0) / heads, n = x.dim(1), d = x.dim(2), C = heads * d;
  Tensor out({B, n, C});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int t = 0; t < n; ++t)
        for (int e = 0; e < d; ++e)
          out[(static_cast<std::int64_t>(b) * n + t) * C + h * d + e] =
              x[((static_cast<std::int64_t>(b) * heads + h) * n + t) * d + e];
  return make_node(std::move(out), {a}, [a, heads, B, n, d, C](Node& nd) {
    const Tensor& g = nd.grad_store;
    Tensor& ga = a->grad();
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h)
        for (int t = 0; t < n; ++t)
          for (int e = 0; e < d; ++e)
            ga[((static_cast<std::int64_t>(b) * heads + h) * n + t) * d + e] +=
                g[(static_cast<std::int64_t>(b) * n + t) * C + h * d + e];
  });
}

}  // namespace rawhdr
