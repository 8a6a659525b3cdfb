#include "coopir/grad.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "coopir/error.hpp"

namespace coopir::grad {

namespace {

std::string shape_str(const Shape& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// Output shape for an elementwise op where either side may be a scalar.
Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape == b.shape) return a.shape;
  if (a.is_scalar()) return b.shape;
  if (b.is_scalar()) return a.shape;
  throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

// Elementwise binary op. da/db give d(out)/d(a) and d(out)/d(b) at (x, y).
template <class F, class DA, class DB>
NodeId binary(Tape& t, NodeId a, NodeId b, const char* what, F f, DA da, DB db) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  const Shape shape = broadcast_shape(va, vb, what);
  const bool sa = va.size() == 1 && shape.size() != 1;
  const bool sb = vb.size() == 1 && shape.size() != 1;
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = f(va.v[sa ? 0 : i], vb.v[sb ? 0 : i]);
  return t.record(std::move(out), {a, b}, [a, b, sa, sb, da, db](const Tensor& g, Tape& tp) {
    const Tensor& xa = tp.value(a);
    const Tensor& xb = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.v[sa ? 0 : i] += g.v[i] * da(xa.v[sa ? 0 : i], xb.v[sb ? 0 : i]);
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb.v[sb ? 0 : i] += g.v[i] * db(xa.v[sa ? 0 : i], xb.v[sb ? 0 : i]);
    }
  });
}

// Elementwise unary op; d gives d(out)/d(x) from (x, out).
template <class F, class D>
NodeId unary(Tape& t, NodeId x, F f, D d) {
  const Tensor& vx = t.value(x);
  Tensor out(vx.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = f(vx.v[i]);
  return t.record(std::move(out), {x}, [x, d](const Tensor& g, Tape& tp) {
    if (!tp.requires_grad(x)) return;
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i] * d(xv.v[i]);
  });
}

void require_scalar(const Tensor& v, const char* what) {
  if (!v.is_scalar()) throw ShapeError(std::string(what) + ": expected a scalar, got " + shape_str(v.shape));
}

void require_vector(const Tensor& v, const char* what) {
  if (v.shape.w != 1 || v.shape.c != 1) {
    throw ShapeError(std::string(what) + ": expected a column vector, got " + shape_str(v.shape));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor::Tensor(Shape s, std::vector<double> values) : shape(s), v(std::move(values)) {
  if (v.size() != shape.size()) throw ShapeError("tensor value count does not match shape " + shape_str(shape));
}

Tensor Tensor::vector(std::vector<double> values) {
  const Shape s{static_cast<int>(values.size()), 1, 1};
  return Tensor(s, std::move(values));
}

Tensor Tensor::from_image(const Image& img) { return Tensor(Shape{img.height, img.width, img.channels}, img.data); }

Image Tensor::to_image() const {
  Image img(shape.h, shape.w, shape.c);
  img.data = v;
  validate(img);
  return img;
}

double Tensor::item() const {
  if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_str(shape));
  return v[0];
}

Param::Param(std::string id, Shape shape, std::vector<double> value)
    : value(std::move(value)), id_(std::move(id)), shape_(shape) {
  if (this->value.size() != shape_.size()) {
    throw ShapeError("param '" + id_ + "': value count does not match shape " + shape_str(shape_));
  }
  grad.assign(this->value.size(), 0.0);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

// ---------------------------------------------------------------------------

NodeId Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, nullptr, {}});
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::param(Param& p) {
  if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), 0.0);
  nodes_.push_back(Node{Tensor(p.shape(), p.value), true, &p, {}});
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::record(Tensor value, std::initializer_list<NodeId> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const NodeId>(inputs.begin(), inputs.size()), std::move(fn));
}

NodeId Tape::record(Tensor value, std::span<const NodeId> inputs, BackwardFn fn) {
  bool needs = false;
  for (NodeId in : inputs) {
    if (in.index >= nodes_.size()) throw ShapeError("tape: input refers to a later node");
    needs = needs || nodes_[in.index].requires_grad;
  }
  Node node{std::move(value), needs, nullptr, {}};
  if (needs) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

void Tape::replay_branches(std::vector<std::uint32_t> log) {
  branch_mode_ = BranchMode::replay;
  branches_ = std::move(log);
  branch_cursor_ = 0;
  branch_switched_ = false;
}

std::uint32_t Tape::branch(std::uint32_t natural) {
  switch (branch_mode_) {
    case BranchMode::off: return natural;
    case BranchMode::record: branches_.push_back(natural); return natural;
    case BranchMode::replay: {
      if (branch_cursor_ >= branches_.size()) throw ShapeError("branch replay: graph differs from the recorded one");
      const std::uint32_t forced = branches_[branch_cursor_++];
      branch_switched_ = branch_switched_ || forced != natural;
      return forced;
    }
  }
  return natural;
}

Tensor& Tape::grad_of(NodeId id) {
  Tensor& g = grads_.at(id.index);
  if (g.v.empty()) g = Tensor(nodes_[id.index].value.shape);
  return g;
}

void Tape::backward(NodeId loss) {
  if (!value(loss).is_scalar()) throw ShapeError("backward: loss node is not scalar");
  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.index] = Tensor::scalar(1.0);
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (grads_[i].v.empty() || !node.requires_grad) continue;
    const Tensor g = std::move(grads_[i]);
    if (node.param != nullptr) {
      for (std::size_t k = 0; k < g.size(); ++k) node.param->grad[k] += g.v[k];
    } else if (node.backward) {
      node.backward(g, *this);
    }
  }
  grads_.clear();
}

// ---------------------------------------------------------------------------
// Image primitives

NodeId conv2d_same(Tape& t, NodeId x, NodeId kernel) {
  const Tensor& vx = t.value(x);
  const Tensor& vk = t.value(kernel);
  if (vk.shape.c != 1 || vk.shape.h % 2 == 0 || vk.shape.w % 2 == 0) {
    throw ShapeError("conv2d_same: kernel must be odd-sized with one channel, got " + shape_str(vk.shape));
  }
  const int H = vx.shape.h, W = vx.shape.w, C = vx.shape.c;
  const int kh = vk.shape.h, kw = vk.shape.w;
  const int ry = kh / 2, rx = kw / 2;
  Tensor out(vx.shape);
  for (int y = 0; y < H; ++y)
    for (int i = 0; i < kh; ++i) {
      const int sy = std::clamp(y + i - ry, 0, H - 1);
      for (int j = 0; j < kw; ++j) {
        const double k = vk.v[i * kw + j];
        for (int xx = 0; xx < W; ++xx) {
          const int sx = std::clamp(xx + j - rx, 0, W - 1);
          const double* src = &vx.v[(static_cast<std::size_t>(sy) * W + sx) * C];
          double* dst = &out.v[(static_cast<std::size_t>(y) * W + xx) * C];
          for (int c = 0; c < C; ++c) dst[c] += k * src[c];
        }
      }
    }
  return t.record(std::move(out), {x, kernel}, [x, kernel](const Tensor& g, Tape& tp) {
    const Tensor& vx = tp.value(x);
    const Tensor& vk = tp.value(kernel);
    const int H = vx.shape.h, W = vx.shape.w, C = vx.shape.c;
    const int kh = vk.shape.h, kw = vk.shape.w;
    const int ry = kh / 2, rx = kw / 2;
    Tensor* gx = tp.requires_grad(x) ? &tp.grad_of(x) : nullptr;
    Tensor* gk = tp.requires_grad(kernel) ? &tp.grad_of(kernel) : nullptr;
    for (int y = 0; y < H; ++y)
      for (int i = 0; i < kh; ++i) {
        const int sy = std::clamp(y + i - ry, 0, H - 1);
        for (int j = 0; j < kw; ++j) {
          const double k = vk.v[i * kw + j];
          double kacc = 0.0;
          for (int xx = 0; xx < W; ++xx) {
            const int sx = std::clamp(xx + j - rx, 0, W - 1);
            const std::size_t src = (static_cast<std::size_t>(sy) * W + sx) * C;
            const std::size_t dst = (static_cast<std::size_t>(y) * W + xx) * C;
            for (int c = 0; c < C; ++c) {
              if (gx) gx->v[src + c] += k * g.v[dst + c];
              kacc += g.v[dst + c] * vx.v[src + c];
            }
          }
          if (gk) gk->v[i * kw + j] += kacc;
        }
      }
  });
}

NodeId affine(Tape& t, NodeId x, NodeId a, NodeId b) {
  const Tensor& vx = t.value(x);
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (!(va.is_scalar() || va.shape == vx.shape) || !(vb.is_scalar() || vb.shape == vx.shape)) {
    throw ShapeError("affine: a and b must be scalars or match x");
  }
  const bool sa = va.is_scalar(), sb = vb.is_scalar();
  Tensor out(vx.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = va.v[sa ? 0 : i] * vx.v[i] + vb.v[sb ? 0 : i];
  return t.record(std::move(out), {x, a, b}, [x, a, b, sa, sb](const Tensor& g, Tape& tp) {
    const Tensor& vx = tp.value(x);
    const Tensor& va = tp.value(a);
    if (tp.requires_grad(x)) {
      Tensor& gx = tp.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i] * va.v[sa ? 0 : i];
    }
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.v[sa ? 0 : i] += g.v[i] * vx.v[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb.v[sb ? 0 : i] += g.v[i];
    }
  });
}

NodeId power_eps(Tape& t, NodeId x, NodeId gamma) {
  const Tensor& vx = t.value(x);
  const Tensor& vg = t.value(gamma);
  require_scalar(vg, "power_eps gamma");
  const double gm = vg.v[0];
  Tensor out(vx.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double base = vx.v[i] + kPowerEps;
    if (!(base > 0.0)) throw NumericError("power_eps: base must be positive, got x = " + std::to_string(vx.v[i]));
    out.v[i] = std::pow(base, gm);
  }
  const NodeId self{t.size()};
  return t.record(std::move(out), {x, gamma}, [self, x, gamma](const Tensor& g, Tape& tp) {
    const Tensor& vx = tp.value(x);
    const Tensor& out = tp.value(self);
    const double gm = tp.value(gamma).v[0];
    if (tp.requires_grad(x)) {
      Tensor& gx = tp.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i] * gm * out.v[i] / (vx.v[i] + kPowerEps);
    }
    if (tp.requires_grad(gamma)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g.v[i] * out.v[i] * std::log(vx.v[i] + kPowerEps);
      tp.grad_of(gamma).v[0] += acc;
    }
  });
}

NodeId blend(Tape& t, NodeId x, NodeId y, NodeId alpha) {
  const Tensor& vx = t.value(x);
  const Tensor& vy = t.value(y);
  const Tensor& va = t.value(alpha);
  require_scalar(va, "blend alpha");
  if (!(vx.shape == vy.shape)) throw ShapeError("blend: shape mismatch " + shape_str(vx.shape) + " vs " + shape_str(vy.shape));
  const double s = sigmoid_scalar(va.v[0]);
  Tensor out(vx.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = s * vy.v[i] + (1.0 - s) * vx.v[i];
  return t.record(std::move(out), {x, y, alpha}, [x, y, alpha](const Tensor& g, Tape& tp) {
    const double s = sigmoid_scalar(tp.value(alpha).v[0]);
    const Tensor& vx = tp.value(x);
    const Tensor& vy = tp.value(y);
    if (tp.requires_grad(x)) {
      Tensor& gx = tp.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i] * (1.0 - s);
    }
    if (tp.requires_grad(y)) {
      Tensor& gy = tp.grad_of(y);
      for (std::size_t i = 0; i < g.size(); ++i) gy.v[i] += g.v[i] * s;
    }
    if (tp.requires_grad(alpha)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g.v[i] * (vy.v[i] - vx.v[i]);
      tp.grad_of(alpha).v[0] += acc * s * (1.0 - s);
    }
  });
}

NodeId clamp01(Tape& t, NodeId x) {
  const Tensor& vx = t.value(x);
  Tensor out(vx.shape);
  std::vector<std::uint8_t> pass(vx.size());
  for (std::size_t i = 0; i < vx.size(); ++i) {
    const double v = vx.v[i];
    const std::uint32_t b = t.branch(v <= 0.0 ? 0 : (v >= 1.0 ? 2 : 1));
    out.v[i] = b == 0 ? 0.0 : (b == 2 ? 1.0 : v);
    pass[i] = b == 1;
  }
  return t.record(std::move(out), {x}, [x, pass = std::move(pass)](const Tensor& g, Tape& tp) {
    Tensor& gx = tp.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (pass[i]) gx.v[i] += g.v[i];
  });
}

NodeId luma(Tape& t, NodeId x) {
  const Tensor& vx = t.value(x);
  if (vx.shape.c == 1) return x;
  if (vx.shape.c != 3) throw ShapeError("luma: expected 1 or 3 channels");
  Tensor out(Shape{vx.shape.h, vx.shape.w, 1});
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.v[i] = kLumaR * vx.v[3 * i] + kLumaG * vx.v[3 * i + 1] + kLumaB * vx.v[3 * i + 2];
  }
  return t.record(std::move(out), {x}, [x](const Tensor& g, Tape& tp) {
    Tensor& gx = tp.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx.v[3 * i] += kLumaR * g.v[i];
      gx.v[3 * i + 1] += kLumaG * g.v[i];
      gx.v[3 * i + 2] += kLumaB * g.v[i];
    }
  });
}

NodeId avgpool2(Tape& t, NodeId x) {
  const Tensor& vx = t.value(x);
  const int H = vx.shape.h / 2, W = vx.shape.w / 2, C = vx.shape.c;
  if (H < 1 || W < 1) throw ShapeError("avgpool2: input too small " + shape_str(vx.shape));
  const int SW = vx.shape.w;
  Tensor out(Shape{H, W, C});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) s += vx.v[((2 * y + dy) * SW + 2 * xx + dx) * C + c];
        out.v[(y * W + xx) * C + c] = 0.25 * s;
      }
  return t.record(std::move(out), {x}, [x, H, W, C, SW](const Tensor& g, Tape& tp) {
    Tensor& gx = tp.grad_of(x);
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int c = 0; c < C; ++c) {
          const double gv = 0.25 * g.v[(y * W + xx) * C + c];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) gx.v[((2 * y + dy) * SW + 2 * xx + dx) * C + c] += gv;
        }
  });
}

NodeId median3(Tape& t, NodeId x) {
  const Tensor& vx = t.value(x);
  const int H = vx.shape.h, W = vx.shape.w, C = vx.shape.c;
  Tensor out(vx.shape);
  std::vector<std::size_t> source(out.size());
  std::array<std::size_t, 9> idx{};
  std::array<std::pair<double, std::uint32_t>, 9> win{};
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) {
        std::uint32_t k = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx, ++k) {
            const int sy = std::clamp(y + dy, 0, H - 1);
            const int sx = std::clamp(xx + dx, 0, W - 1);
            idx[k] = (static_cast<std::size_t>(sy) * W + sx) * C + c;
            win[k] = {vx.v[idx[k]], k};
          }
        std::nth_element(win.begin(), win.begin() + 4, win.end());
        const std::uint32_t pick = t.branch(win[4].second);
        const std::size_t o = (static_cast<std::size_t>(y) * W + xx) * C + c;
        source[o] = idx.at(pick);
        out.v[o] = vx.v[source[o]];
      }
  return t.record(std::move(out), {x}, [x, source = std::move(source)](const Tensor& g, Tape& tp) {
    Tensor& gx = tp.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx.v[source[i]] += g.v[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

NodeId add(Tape& t, NodeId a, NodeId b) {
  return binary(
      t, a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

NodeId sub(Tape& t, NodeId a, NodeId b) {
  return binary(
      t, a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

NodeId mul(Tape& t, NodeId a, NodeId b) {
  return binary(
      t, a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

NodeId div(Tape& t, NodeId a, NodeId b) {
  return binary(
      t, a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

NodeId scale(Tape& t, NodeId x, double c) {
  return unary(t, x, [c](double v) { return c * v; }, [c](double) { return c; });
}

NodeId shift(Tape& t, NodeId x, double c) {
  return unary(t, x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

NodeId sqrt(Tape& t, NodeId x) {
  for (double v : t.value(x).v) {
    if (!(v > 0.0)) throw NumericError("sqrt: argument must be positive");
  }
  return unary(
      t, x, [](double v) { return std::sqrt(v); }, [](double v) { return 0.5 / std::sqrt(v); });
}

NodeId exp(Tape& t, NodeId x) {
  return unary(
      t, x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

NodeId tanh(Tape& t, NodeId x) {
  return unary(
      t, x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double th = std::tanh(v);
        return 1.0 - th * th;
      });
}

NodeId sigmoid(Tape& t, NodeId x) {
  return unary(t, x, sigmoid_scalar, [](double v) {
    const double s = sigmoid_scalar(v);
    return s * (1.0 - s);
  });
}

NodeId softplus(Tape& t, NodeId x) { return unary(t, x, softplus_scalar, sigmoid_scalar); }

// ---------------------------------------------------------------------------
// Reductions

NodeId mean(Tape& t, NodeId x) {
  const Tensor& vx = t.value(x);
  const double n = static_cast<double>(vx.size());
  const double s = std::accumulate(vx.v.begin(), vx.v.end(), 0.0);
  return t.record(Tensor::scalar(s / n), {x}, [x, n](const Tensor& g, Tape& tp) {
    Tensor& gx = tp.grad_of(x);
    const double d = g.v[0] / n;
    for (double& v : gx.v) v += d;
  });
}

NodeId abs_mean(Tape& t, NodeId x) {
  const Tensor& vx = t.value(x);
  const double n = static_cast<double>(vx.size());
  std::vector<std::int8_t> sign(vx.size());
  double s = 0.0;
  for (std::size_t i = 0; i < vx.size(); ++i) {
    const double v = vx.v[i];
    const std::uint32_t b = t.branch(v > 0.0 ? 1 : (v < 0.0 ? 2 : 0));
    sign[i] = b == 1 ? 1 : (b == 2 ? -1 : 0);
    s += sign[i] * v;
  }
  return t.record(Tensor::scalar(s / n), {x}, [x, n, sign = std::move(sign)](const Tensor& g, Tape& tp) {
    Tensor& gx = tp.grad_of(x);
    const double d = g.v[0] / n;
    for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += sign[i] * d;
  });
}

NodeId square_mean(Tape& t, NodeId x) {
  const Tensor& vx = t.value(x);
  const double n = static_cast<double>(vx.size());
  double s = 0.0;
  for (double v : vx.v) s += v * v;
  return t.record(Tensor::scalar(s / n), {x}, [x, n](const Tensor& g, Tape& tp) {
    const Tensor& vx = tp.value(x);
    Tensor& gx = tp.grad_of(x);
    const double d = 2.0 * g.v[0] / n;
    for (std::size_t i = 0; i < vx.size(); ++i) gx.v[i] += d * vx.v[i];
  });
}

NodeId sum(Tape& t, std::span<const NodeId> scalars) {
  double s = 0.0;
  for (NodeId id : scalars) {
    require_scalar(t.value(id), "sum");
    s += t.value(id).v[0];
  }
  std::vector<NodeId> ins(scalars.begin(), scalars.end());
  return t.record(Tensor::scalar(s), scalars, [ins](const Tensor& g, Tape& tp) {
    for (NodeId id : ins) {
      if (tp.requires_grad(id)) tp.grad_of(id).v[0] += g.v[0];
    }
  });
}

// ---------------------------------------------------------------------------
// Small-vector primitives

NodeId matvec(Tape& t, NodeId w, NodeId x) {
  const Tensor& vw = t.value(w);
  const Tensor& vx = t.value(x);
  const int rows = vw.shape.h, cols = vw.shape.w;
  if (vw.shape.c != 1 || static_cast<std::size_t>(cols) != vx.size()) {
    throw ShapeError("matvec: " + shape_str(vw.shape) + " times vector of " + std::to_string(vx.size()));
  }
  Tensor out(Shape{rows, 1, 1});
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += vw.v[r * cols + c] * vx.v[c];
    out.v[r] = s;
  }
  return t.record(std::move(out), {w, x}, [w, x, rows, cols](const Tensor& g, Tape& tp) {
    const Tensor& vw = tp.value(w);
    const Tensor& vx = tp.value(x);
    if (tp.requires_grad(w)) {
      Tensor& gw = tp.grad_of(w);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) gw.v[r * cols + c] += g.v[r] * vx.v[c];
    }
    if (tp.requires_grad(x)) {
      Tensor& gx = tp.grad_of(x);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) gx.v[c] += g.v[r] * vw.v[r * cols + c];
    }
  });
}

NodeId concat(Tape& t, std::span<const NodeId> parts) {
  std::vector<double> values;
  std::vector<NodeId> ins(parts.begin(), parts.end());
  for (NodeId id : parts) {
    const auto& v = t.value(id).v;
    values.insert(values.end(), v.begin(), v.end());
  }
  return t.record(Tensor::vector(std::move(values)), parts, [ins](const Tensor& g, Tape& tp) {
    std::size_t off = 0;
    for (NodeId id : ins) {
      const std::size_t n = tp.value(id).size();
      if (tp.requires_grad(id)) {
        Tensor& gi = tp.grad_of(id);
        for (std::size_t k = 0; k < n; ++k) gi.v[k] += g.v[off + k];
      }
      off += n;
    }
  });
}

NodeId pick(Tape& t, NodeId x, std::size_t i) {
  const Tensor& vx = t.value(x);
  if (i >= vx.size()) throw ShapeError("pick: index out of range");
  return t.record(Tensor::scalar(vx.v[i]), {x}, [x, i](const Tensor& g, Tape& tp) { tp.grad_of(x).v[i] += g.v[0]; });
}

NodeId row_mean(Tape& t, NodeId table, std::span<const int> rows) {
  const Tensor& vt = t.value(table);
  const int nrows = vt.shape.h, cols = vt.shape.w;
  for (int r : rows) {
    if (r < 0 || r >= nrows) throw ShapeError("row_mean: row index out of range");
  }
  Tensor out(Shape{cols, 1, 1});
  if (!rows.empty()) {
    for (int r : rows)
      for (int c = 0; c < cols; ++c) out.v[c] += vt.v[r * cols + c];
    for (double& v : out.v) v /= static_cast<double>(rows.size());
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {table}, [table, idx, cols](const Tensor& g, Tape& tp) {
    if (idx.empty()) return;
    Tensor& gt = tp.grad_of(table);
    const double inv = 1.0 / static_cast<double>(idx.size());
    for (int r : idx)
      for (int c = 0; c < cols; ++c) gt.v[r * cols + c] += g.v[c] * inv;
  });
}

NodeId log_softmax(Tape& t, NodeId logits) {
  const Tensor& vl = t.value(logits);
  require_vector(vl, "log_softmax");
  const double mx = *std::max_element(vl.v.begin(), vl.v.end());
  double z = 0.0;
  for (double v : vl.v) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  Tensor out(vl.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = vl.v[i] - lse;
  const NodeId self{t.size()};
  return t.record(std::move(out), {logits}, [self, logits](const Tensor& g, Tape& tp) {
    const Tensor& lp = tp.value(self);
    double gs = 0.0;
    for (double v : g.v) gs += v;
    Tensor& gl = tp.grad_of(logits);
    for (std::size_t i = 0; i < g.size(); ++i) gl.v[i] += g.v[i] - std::exp(lp.v[i]) * gs;
  });
}

NodeId kl_categorical(Tape& t, NodeId logp, const std::vector<double>& ref_logp) {
  const Tensor& vl = t.value(logp);
  if (vl.size() != ref_logp.size()) throw ShapeError("kl_categorical: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < vl.size(); ++i) kl += std::exp(vl.v[i]) * (vl.v[i] - ref_logp[i]);
  return t.record(Tensor::scalar(kl), {logp}, [logp, ref_logp](const Tensor& g, Tape& tp) {
    const Tensor& vl = tp.value(logp);
    Tensor& gl = tp.grad_of(logp);
    for (std::size_t i = 0; i < vl.size(); ++i) {
      const double p = std::exp(vl.v[i]);
      // The +1 of the exact partial is dropped: it sums to zero once routed
      // through log_softmax, and leaving it out keeps the gradient exactly 0
      // when logp equals ref_logp.
      gl.v[i] += g.v[0] * p * (vl.v[i] - ref_logp[i]);
    }
  });
}

NodeId clipped_surrogate(Tape& t, NodeId ratio, double advantage, double eps) {
  const Tensor& vr = t.value(ratio);
  require_scalar(vr, "clipped_surrogate");
  const double r = vr.v[0];
  const double lo = 1.0 - eps, hi = 1.0 + eps;
  const double unclipped = r * advantage;
  const double clipped = std::clamp(r, lo, hi) * advantage;
  // 0: unclipped term is the minimum; 1/2: clipped at the lower/upper bound
  const std::uint32_t b = t.branch(unclipped <= clipped ? 0 : (r < lo ? 1 : 2));
  const double value = b == 0 ? unclipped : (b == 1 ? lo : hi) * advantage;
  return t.record(Tensor::scalar(value), {ratio}, [ratio, advantage, b](const Tensor& g, Tape& tp) {
    if (b == 0) tp.grad_of(ratio).v[0] += g.v[0] * advantage;
  });
}

// ---------------------------------------------------------------------------

double GradCheckReport::fraction_within(double tol) const {
  if (entries.empty()) return 1.0;
  std::size_t ok = 0;
  for (const auto& e : entries) ok += e.rel_error < tol ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(entries.size());
}

GradCheckReport grad_check(const LossBuilder& build, std::span<Param* const> params, double h) {
  for (Param* p : params) p->zero_grad();
  std::vector<std::uint32_t> branches;
  {
    Tape tape;
    tape.record_branches();
    const NodeId loss = build(tape);
    branches = tape.branch_log();
    tape.backward(loss);
  }
  auto eval = [&](bool& switched) {
    Tape tape;
    tape.replay_branches(branches);
    const double v = tape.value(build(tape)).item();
    switched = switched || tape.branch_switched();
    return v;
  };
  GradCheckReport report;
  for (Param* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double orig = p->value[i];
      bool switched = false;
      p->value[i] = orig + h;
      const double fp = eval(switched);
      p->value[i] = orig - h;
      const double fm = eval(switched);
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      report.entries.push_back({p->id(), i, analytic, numeric, rel, switched});
      report.branch_switched += switched ? 1 : 0;
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  return report;
}

void Adam::step(std::span<Param* const> params) {
  for (Param* p : params) {
    Moments& st = state_[p->id()];
    if (st.m.size() != p->size()) {
      st.m.assign(p->size(), 0.0);
      st.v.assign(p->size(), 0.0);
      st.t = 0;
    }
    ++st.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double grad_norm(std::span<Param* const> params) {
  double s = 0.0;
  for (const Param* p : params)
    for (double g : p->grad) s += g * g;
  return std::sqrt(s);
}

double clip_grad_norm(std::span<Param* const> params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Param* p : params)
      for (double& g : p->grad) g *= factor;
  }
  return norm;
}

}  // namespace coopir::grad
