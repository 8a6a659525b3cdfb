#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "coopir/image.hpp"

// Reverse-mode differentiation over a closed set of image and small-vector
// primitives. A Tape is define-by-run: each primitive computes its forward
// value immediately and records an adjoint closure when any input needs a
// gradient.
namespace coopir::grad {

struct Shape {
  int h = 1;
  int w = 1;
  int c = 1;

  std::size_t size() const { return static_cast<std::size_t>(h) * w * c; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct Tensor {
  Shape shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), v(s.size(), fill) {}
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double x) { return Tensor(Shape{}, x); }
  static Tensor vector(std::vector<double> values);
  static Tensor from_image(const Image& img);
  // Validates the [0,1] range.
  Image to_image() const;

  bool is_scalar() const { return shape.size() == 1; }
  double item() const;
  std::size_t size() const { return v.size(); }
};

// Learnable parameter block. `grad` accumulates across backward passes until
// zero_grad() is called.
class Param {
 public:
  Param() = default;
  Param(std::string id, Shape shape, std::vector<double> value);

  const std::string& id() const { return id_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return value.size(); }
  void zero_grad();

  std::vector<double> value;
  std::vector<double> grad;

 private:
  std::string id_;
  Shape shape_;
};

struct NodeId {
  std::size_t index = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out, Tape& tape)>;

  NodeId constant(Tensor value);
  NodeId constant(double value) { return constant(Tensor::scalar(value)); }
  // Binds a parameter; the Param must outlive the tape.
  NodeId param(Param& p);

  const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id.index).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(loss)/d(param) into every reachable Param::grad.
  void backward(NodeId loss);

  // Primitive-author interface.
  NodeId record(Tensor value, std::initializer_list<NodeId> inputs, BackwardFn fn);
  NodeId record(Tensor value, std::span<const NodeId> inputs, BackwardFn fn);
  // Gradient buffer of an input during backward (zero-initialised on first use).
  Tensor& grad_of(NodeId id);

  // Piecewise primitives (clamp01, abs_mean, median3, clipped_surrogate) route
  // every per-element branch decision through branch(). In record mode the
  // decisions are logged; in replay mode a logged sequence is forced, so the
  // tape evaluates the smooth piece that contained the recorded point.
  enum class BranchMode { off, record, replay };
  void record_branches() { branch_mode_ = BranchMode::record; }
  void replay_branches(std::vector<std::uint32_t> log);
  std::uint32_t branch(std::uint32_t natural);
  const std::vector<std::uint32_t>& branch_log() const { return branches_; }
  // Replay only: some forced decision differed from the natural one.
  bool branch_switched() const { return branch_switched_; }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Param* param = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  BranchMode branch_mode_ = BranchMode::off;
  std::vector<std::uint32_t> branches_;
  std::size_t branch_cursor_ = 0;
  bool branch_switched_ = false;
};

// ---- image primitives ----
// Correlation with an odd kh x kw x 1 kernel applied per channel, edge-replicated.
NodeId conv2d_same(Tape& t, NodeId x, NodeId kernel);
// a*x + b; a and b are scalars or match x.
NodeId affine(Tape& t, NodeId x, NodeId a, NodeId b);
inline constexpr double kPowerEps = 1e-3;
// (x + 1e-3)^gamma with scalar gamma.
NodeId power_eps(Tape& t, NodeId x, NodeId gamma);
// sigmoid(alpha)*y + (1 - sigmoid(alpha))*x with scalar alpha.
NodeId blend(Tape& t, NodeId x, NodeId y, NodeId alpha);
// Gradient passes only where 0 < x < 1.
NodeId clamp01(Tape& t, NodeId x);
NodeId luma(Tape& t, NodeId x);
NodeId avgpool2(Tape& t, NodeId x);
// 3x3 median per channel; the gradient routes to the selected neighbour.
NodeId median3(Tape& t, NodeId x);

// ---- elementwise (either operand may be a scalar) ----
NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId div(Tape& t, NodeId a, NodeId b);
NodeId scale(Tape& t, NodeId x, double c);
NodeId shift(Tape& t, NodeId x, double c);
NodeId sqrt(Tape& t, NodeId x);
NodeId exp(Tape& t, NodeId x);
NodeId tanh(Tape& t, NodeId x);
NodeId sigmoid(Tape& t, NodeId x);
NodeId softplus(Tape& t, NodeId x);

// ---- reductions to a scalar ----
NodeId mean(Tape& t, NodeId x);
NodeId abs_mean(Tape& t, NodeId x);
NodeId square_mean(Tape& t, NodeId x);
NodeId sum(Tape& t, std::span<const NodeId> scalars);

// ---- small-vector primitives for the planning policy ----
// W has shape (rows, cols, 1); x has cols elements.
NodeId matvec(Tape& t, NodeId w, NodeId x);
NodeId concat(Tape& t, std::span<const NodeId> parts);
NodeId pick(Tape& t, NodeId x, std::size_t i);
// Mean of the given rows of a (rows, cols, 1) table; zeros for an empty list.
NodeId row_mean(Tape& t, NodeId table, std::span<const int> rows);
NodeId log_softmax(Tape& t, NodeId logits);
// Exact KL(p || ref) for log-probability vectors; ref is constant. The
// gradient is only correct when logp comes from log_softmax.
NodeId kl_categorical(Tape& t, NodeId logp, const std::vector<double>& ref_logp);
// min(r*A, clip(r, 1-eps, 1+eps)*A) for scalar ratio r.
NodeId clipped_surrogate(Tape& t, NodeId ratio, double advantage, double eps);

// ---- verification ----
struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  // The +-h window crosses a branch of a piecewise primitive (a clamp
  // saturating, a median changing source, an |x| changing sign). The
  // difference is still taken on the recorded piece.
  bool branch_switched = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t branch_switched = 0;
  std::vector<GradCheckEntry> entries;

  double fraction_within(double tol) const;
};

using LossBuilder = std::function<NodeId(Tape&)>;

// Central differences against backward(); relative error uses the
// denominator max(|analytic|, |numeric|, 1e-8). The perturbed evaluations
// replay the branch decisions of the unperturbed one. Params are restored.
GradCheckReport grad_check(const LossBuilder& build, std::span<Param* const> params, double h = 1e-4);

// ---- optimisation ----
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  // Descends along Param::grad.
  void step(std::span<Param* const> params);
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
    long long t = 0;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> state_;
};

// Rescales all gradients jointly so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Param* const> params, double max_norm);
double grad_norm(std::span<Param* const> params);

}  // namespace coopir::grad
