#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "uav/core/errors.hpp"
#include "uav/core/rng.hpp"
#include "uav/core/tensor.hpp"

namespace uav {

/// Target value that cross_entropy skips (masked position).
inline constexpr int kIgnoreTarget = -1;

namespace kernels {

// C[m,n] += A[m,k] * B[k,n]. Four rows of C are updated per pass over B so
// each loaded row of B feeds four multiply-adds. Sums are carried in double
// and rounded once.
template <typename T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k, std::size_t n) {
  thread_local std::vector<double> scratch;
  scratch.resize(4 * n);
  double* __restrict acc = scratch.data();
  std::size_t i = 0;
  for (; i < m; i += 4) {
    const std::size_t rows = std::min<std::size_t>(4, m - i);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) acc[r * n + j] = c[(i + r) * n + j];
    const T* a0 = a + i * k;
    if (rows == 4) {
      double* __restrict c0 = acc;
      double* __restrict c1 = acc + n;
      double* __restrict c2 = acc + 2 * n;
      double* __restrict c3 = acc + 3 * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
        const T* __restrict brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          const double bv = brow[j];
          c0[j] += v0 * bv;
          c1[j] += v1 * bv;
          c2[j] += v2 * bv;
          c3[j] += v3 * bv;
        }
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a0[r * k + p];
          const T* __restrict brow = b + p * n;
          double* __restrict crow = acc + r * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) c[(i + r) * n + j] = static_cast<T>(acc[r * n + j]);
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* b0 = b + i * n;
    const T* b1 = b0 + n;
    const T* b2 = b1 + n;
    const T* b3 = b2 + n;
    const T* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      T* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
    }
  }
  for (; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace kernels

namespace detail {

template <std::floating_point T>
std::vector<T>* grad_target(Node<T>& self, std::size_t parent) {
  auto& p = *self.parents[parent];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

inline Shape batch_of(const Shape& s) { return Shape(s.begin(), s.end() - 2); }

}  // namespace detail

/// Matrix product over the last two dimensions. Leading batch dimensions must
/// match exactly, or one operand may be a plain matrix shared by every batch.
template <std::floating_point T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto fail = [&](const char* why) {
    return ShapeError(std::string("matmul: ") + why + " for " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw fail("operands must have rank >= 2");
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb) throw fail("inner dimensions differ");
  const Shape ab = detail::batch_of(a.shape()), bb = detail::batch_of(b.shape());
  if (!ab.empty() && !bb.empty() && ab != bb) throw fail("batch dimensions are not broadcastable");
  const Shape batch = ab.empty() ? bb : ab;
  const std::size_t nb = shape_numel(batch);
  const bool a_shared = ab.empty(), b_shared = bb.empty();

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(nb * m * n, T{0});
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  if (b_shared) {
    // Stack every batch of a into one tall matrix.
    kernels::gemm_nn(ad, bd, out.data(), (a_shared ? 1 : nb) * m, k, n);
    if (a_shared && nb > 1) {
      for (std::size_t t = 1; t < nb; ++t) std::copy_n(out.begin(), m * n, out.begin() + t * m * n);
    }
  } else {
    for (std::size_t t = 0; t < nb; ++t) {
      kernels::gemm_nn(ad + (a_shared ? 0 : t * m * k), bd + t * k * n, out.data() + t * m * n, m, k, n);
    }
  }

  auto backward = [m, k, n, nb, a_shared, b_shared](detail::Node<T>& self) {
    const auto& an = *self.parents[0];
    const auto& bn = *self.parents[1];
    const T* g = self.grad.data();
    if (auto* ga = detail::grad_target(self, 0)) {
      std::vector<T> bt(k * n);
      for (std::size_t t = 0; t < nb; ++t) {
        if (t == 0 || !b_shared) kernels::transpose(bn.data.data() + (b_shared ? 0 : t * k * n), bt.data(), k, n);
        kernels::gemm_nn(g + t * m * n, bt.data(), ga->data() + (a_shared ? 0 : t * m * k), m, n, k);
      }
    }
    if (auto* gb = detail::grad_target(self, 1)) {
      for (std::size_t t = 0; t < nb; ++t) {
        kernels::gemm_tn(an.data.data() + (a_shared ? 0 : t * m * k), g + t * m * n, gb->data() + (b_shared ? 0 : t * k * n), m, k, n);
      }
    }
  };
  return BasicTensor<T>::from_op(std::move(out_shape), std::move(out), {a, b}, std::move(backward), "matmul");
}

/// Swaps the last two dimensions.
template <std::floating_point T>
BasicTensor<T> transpose_last2(const BasicTensor<T>& a) {
  if (a.rank() < 2) throw ShapeError("transpose_last2: rank < 2 for " + shape_str(a.shape()));
  const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  const std::size_t nb = a.numel() / (r * c);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<T> out(a.numel());
  for (std::size_t t = 0; t < nb; ++t) kernels::transpose(a.data().data() + t * r * c, out.data() + t * r * c, r, c);
  auto backward = [r, c, nb](detail::Node<T>& self) {
    auto* ga = detail::grad_target(self, 0);
    std::vector<T> tmp(r * c);
    for (std::size_t t = 0; t < nb; ++t) {
      kernels::transpose(self.grad.data() + t * r * c, tmp.data(), c, r);
      for (std::size_t i = 0; i < r * c; ++i) (*ga)[t * r * c + i] += tmp[i];
    }
  };
  return BasicTensor<T>::from_op(std::move(shape), std::move(out), {a}, std::move(backward), "transpose_last2");
}

/// a + b where b's shape equals a's shape or a trailing suffix of it.
template <std::floating_point T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const bool suffix = bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin());
  if (!suffix) throw ShapeError("add: cannot broadcast " + shape_str(bs) + " onto " + shape_str(as));
  const std::size_t inner = b.numel();
  const std::size_t outer = a.numel() / inner;
  std::vector<T> out(a.data().begin(), a.data().end());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += b.data()[i];
  auto backward = [inner, outer](detail::Node<T>& self) {
    if (auto* ga = detail::grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = detail::grad_target(self, 1))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) (*gb)[i] += self.grad[o * inner + i];
  };
  return BasicTensor<T>::from_op(as, std::move(out), {a, b}, std::move(backward), "add");
}

template <std::floating_point T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto backward = [](detail::Node<T>& self) {
    const auto& ad = self.parents[0]->data;
    const auto& bd = self.parents[1]->data;
    if (auto* ga = detail::grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * bd[i];
    if (auto* gb = detail::grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i] * ad[i];
  };
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {a, b}, std::move(backward), "mul");
}

template <std::floating_point T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  auto backward = [factor](detail::Node<T>& self) {
    auto* ga = detail::grad_target(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * factor;
  };
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {a}, std::move(backward), "scale");
}

template <std::floating_point T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double acc = 0.0;
  for (const T v : a.data()) acc += v;
  auto backward = [](detail::Node<T>& self) {
    auto* ga = detail::grad_target(self, 0);
    for (auto& v : *ga) v += self.grad[0];
  };
  return BasicTensor<T>::from_op({1}, {static_cast<T>(acc)}, {a}, std::move(backward), "sum");
}

template <std::floating_point T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  return scale(sum(a), static_cast<T>(1.0 / static_cast<double>(a.numel())));
}

template <std::floating_point T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
  auto backward = [](detail::Node<T>& self) {
    auto* ga = detail::grad_target(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
  };
  return BasicTensor<T>::from_op(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()), {a}, std::move(backward),
                                 "reshape");
}

/// Per-row normalisation over the last dimension followed by gamma * x + beta.
template <std::floating_point T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, double eps = 1e-5) {
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive, got " + std::to_string(eps));
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " do not match last dimension of " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  const T* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xd[r * d + i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = xd[r * d + i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<T>(is);
    for (std::size_t i = 0; i < d; ++i) {
      const T h = static_cast<T>((xd[r * d + i] - mu) * is);
      xhat[r * d + i] = h;
      out[r * d + i] = gamma.data()[i] * h + beta.data()[i];
    }
  }
  auto backward = [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
    const auto& gam = self.parents[1]->data;
    if (auto* gx = detail::grad_target(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        double mg = 0.0, mgx = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const double g = static_cast<double>(self.grad[r * d + i]) * gam[i];
          mg += g;
          mgx += g * xhat[r * d + i];
        }
        mg /= static_cast<double>(d);
        mgx /= static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double g = static_cast<double>(self.grad[r * d + i]) * gam[i];
          (*gx)[r * d + i] += static_cast<T>(inv_std[r] * (g - mg - xhat[r * d + i] * mgx));
        }
      }
    }
    if (auto* gg = detail::grad_target(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) (*gg)[i] += self.grad[r * d + i] * xhat[r * d + i];
    if (auto* gb = detail::grad_target(self, 2))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) (*gb)[i] += self.grad[r * d + i];
  };
  return BasicTensor<T>::from_op(x.shape(), std::move(out), {x, gamma, beta}, std::move(backward), "layer_norm");
}

/// Softmax over the last dimension with max subtraction.
template <std::floating_point T>
BasicTensor<T> softmax_last(const BasicTensor<T>& x) {
  const std::size_t d = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd + r * d;
    const T mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t i = 0; i < d; ++i) z += std::exp(static_cast<double>(row[i] - mx));
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = static_cast<T>(std::exp(static_cast<double>(row[i] - mx)) / z);
  }
  auto backward = [d, rows](detail::Node<T>& self) {
    auto* gx = detail::grad_target(self, 0);
    const auto& y = self.data;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += static_cast<double>(self.grad[r * d + i]) * y[r * d + i];
      for (std::size_t i = 0; i < d; ++i) (*gx)[r * d + i] += static_cast<T>(y[r * d + i] * (self.grad[r * d + i] - dot));
    }
  };
  return BasicTensor<T>::from_op(x.shape(), std::move(out), {x}, std::move(backward), "softmax_last");
}

/// Exact (erf) Gaussian error linear unit.
template <std::floating_point T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)));
  }
  auto backward = [](detail::Node<T>& self) {
    auto* gx = detail::grad_target(self, 0);
    const auto& xd = self.parents[0]->data;
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < xd.size(); ++i) {
      const double v = xd[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*gx)[i] += static_cast<T>(self.grad[i] * (cdf + v * pdf));
    }
  };
  return BasicTensor<T>::from_op(x.shape(), std::move(out), {x}, std::move(backward), "gelu");
}

/// Inverted dropout; identity in eval mode or when p == 0.
template <std::floating_point T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Mode mode, RngState& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? T{0} : keep_scale;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  auto backward = [mask = std::move(mask)](detail::Node<T>& self) {
    auto* gx = detail::grad_target(self, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) (*gx)[i] += self.grad[i] * mask[i];
  };
  return BasicTensor<T>::from_op(x.shape(), std::move(out), {x}, std::move(backward), "dropout");
}

/// Mean over non-ignored steps of -log softmax(logits[step])[target].
/// Steps whose target is kIgnoreTarget contribute neither loss nor gradient.
template <std::floating_point T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be (steps x vocab), got " + shape_str(logits.shape()));
  const std::size_t steps = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != steps)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(steps) + " steps");
  std::size_t counted = 0;
  for (const int t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
    ++counted;
  }
  if (counted == 0) throw ValidationError("cross_entropy: every target is masked");
  std::vector<T> probs(logits.numel(), T{0});
  double total = 0.0;
  const T* ld = logits.data().data();
  for (std::size_t s = 0; s < steps; ++s) {
    if (targets[s] == kIgnoreTarget) continue;
    const T* row = ld + s * vocab;
    const T mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(static_cast<double>(row[v] - mx));
    const double lse = std::log(z) + mx;
    total += lse - row[targets[s]];
    for (std::size_t v = 0; v < vocab; ++v) probs[s * vocab + v] = static_cast<T>(std::exp(row[v] - lse));
  }
  const double inv = 1.0 / static_cast<double>(counted);
  std::vector<int> tgt(targets.begin(), targets.end());
  auto backward = [steps, vocab, inv, probs = std::move(probs), tgt = std::move(tgt)](detail::Node<T>& self) {
    auto* gl = detail::grad_target(self, 0);
    const double up = self.grad[0] * inv;
    for (std::size_t s = 0; s < steps; ++s) {
      if (tgt[s] == kIgnoreTarget) continue;
      for (std::size_t v = 0; v < vocab; ++v) {
        const double onehot = static_cast<int>(v) == tgt[s] ? 1.0 : 0.0;
        (*gl)[s * vocab + v] += static_cast<T>(up * (probs[s * vocab + v] - onehot));
      }
    }
  };
  return BasicTensor<T>::from_op({1}, {static_cast<T>(total * inv)}, {logits}, std::move(backward), "cross_entropy");
}

/// Gathers rows of `table` ([vocab, dim]) for each id.
template <std::floating_point T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab)
      throw IndexError("embedding: id " + std::to_string(ids[r]) + " outside table of " + std::to_string(vocab) + " rows");
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<int> idv(ids.begin(), ids.end());
  auto backward = [d, idv = std::move(idv)](detail::Node<T>& self) {
    auto* gt = detail::grad_target(self, 0);
    for (std::size_t r = 0; r < idv.size(); ++r)
      for (std::size_t i = 0; i < d; ++i) (*gt)[static_cast<std::size_t>(idv[r]) * d + i] += self.grad[r * d + i];
  };
  return BasicTensor<T>::from_op({ids.size(), d}, std::move(out), {table}, std::move(backward), "embedding");
}

/// Rows [begin, end) of a rank-2 tensor.
template <std::floating_point T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.dim(0))
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(a.shape()));
  const std::size_t c = a.dim(1);
  std::vector<T> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * c), a.data().begin() + static_cast<std::ptrdiff_t>(end * c));
  auto backward = [begin, c](detail::Node<T>& self) {
    auto* ga = detail::grad_target(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[begin * c + i] += self.grad[i];
  };
  return BasicTensor<T>::from_op({end - begin, c}, std::move(out), {a}, std::move(backward), "slice_rows");
}

/// Columns [begin, end) of a rank-2 tensor.
template <std::floating_point T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.dim(1))
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1), w = end - begin;
  std::vector<T> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(r * cols + begin), w, out.begin() + static_cast<std::ptrdiff_t>(r * w));
  auto backward = [rows, cols, begin, w](detail::Node<T>& self) {
    auto* ga = detail::grad_target(self, 0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < w; ++i) (*ga)[r * cols + begin + i] += self.grad[r * w + i];
  };
  return BasicTensor<T>::from_op({rows, w}, std::move(out), {a}, std::move(backward), "slice_cols");
}

/// Stacks two rank-2 tensors with equal column counts.
template <std::floating_point T>
BasicTensor<T> concat_rows(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("concat_rows: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<T> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t split = a.numel();
  auto backward = [split](detail::Node<T>& self) {
    if (auto* ga = detail::grad_target(self, 0))
      for (std::size_t i = 0; i < split; ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = detail::grad_target(self, 1))
      for (std::size_t i = split; i < self.grad.size(); ++i) (*gb)[i - split] += self.grad[i];
  };
  return BasicTensor<T>::from_op({a.dim(0) + b.dim(0), a.dim(1)}, std::move(out), {a, b}, std::move(backward), "concat_rows");
}

/// Replaces scores above the diagonal of each trailing (S x S) block with a
/// large negative constant so softmax gives them exactly zero weight.
template <std::floating_point T>
BasicTensor<T> causal_mask(const BasicTensor<T>& scores) {
  if (scores.rank() < 2 || scores.dim(scores.rank() - 1) != scores.dim(scores.rank() - 2))
    throw ShapeError("causal_mask: expected trailing square block, got " + shape_str(scores.shape()));
  const std::size_t s = scores.dim(scores.rank() - 1);
  const std::size_t nb = scores.numel() / (s * s);
  constexpr T kMasked = static_cast<T>(-1e9);
  std::vector<T> out(scores.data().begin(), scores.data().end());
  for (std::size_t t = 0; t < nb; ++t)
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = i + 1; j < s; ++j) out[t * s * s + i * s + j] = kMasked;
  auto backward = [s, nb](detail::Node<T>& self) {
    auto* ga = detail::grad_target(self, 0);
    for (std::size_t t = 0; t < nb; ++t)
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j <= i; ++j) (*ga)[t * s * s + i * s + j] += self.grad[t * s * s + i * s + j];
  };
  return BasicTensor<T>::from_op(scores.shape(), std::move(out), {scores}, std::move(backward), "causal_mask");
}

/// [S, H*dh] -> [H, S, dh]
template <std::floating_point T>
BasicTensor<T> split_heads(const BasicTensor<T>& x, std::size_t heads) {
  if (x.rank() != 2 || heads == 0 || x.dim(1) % heads != 0)
    throw ConfigError("split_heads: " + std::to_string(heads) + " heads do not divide " + shape_str(x.shape()));
  const std::size_t s = x.dim(0), d = x.dim(1), dh = d / heads;
  std::vector<T> out(x.numel());
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t r = 0; r < s; ++r)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * d + h * dh), dh,
                  out.begin() + static_cast<std::ptrdiff_t>((h * s + r) * dh));
  auto backward = [s, d, dh, heads](detail::Node<T>& self) {
    auto* gx = detail::grad_target(self, 0);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t i = 0; i < dh; ++i) (*gx)[r * d + h * dh + i] += self.grad[(h * s + r) * dh + i];
  };
  return BasicTensor<T>::from_op({heads, s, dh}, std::move(out), {x}, std::move(backward), "split_heads");
}

/// [H, S, dh] -> [S, H*dh]
template <std::floating_point T>
BasicTensor<T> merge_heads(const BasicTensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("merge_heads: expected rank 3, got " + shape_str(x.shape()));
  const std::size_t heads = x.dim(0), s = x.dim(1), dh = x.dim(2), d = heads * dh;
  std::vector<T> out(x.numel());
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t r = 0; r < s; ++r)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((h * s + r) * dh), dh,
                  out.begin() + static_cast<std::ptrdiff_t>(r * d + h * dh));
  auto backward = [s, d, dh, heads](detail::Node<T>& self) {
    auto* gx = detail::grad_target(self, 0);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t i = 0; i < dh; ++i) (*gx)[(h * s + r) * dh + i] += self.grad[r * d + h * dh + i];
  };
  return BasicTensor<T>::from_op({s, d}, std::move(out), {x}, std::move(backward), "merge_heads");
}

/// x W + b for x of shape [rows, in], W [in, out], b [out].
template <std::floating_point T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  return add(matmul(x, w), b);
}

}  // namespace uav
