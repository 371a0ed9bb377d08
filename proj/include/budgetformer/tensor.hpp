#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "budgetformer/errors.hpp"

namespace budgetformer {

class Rng;

using Shape = std::vector<std::int64_t>;

std::string shape_to_string(const Shape& shape);
std::int64_t shape_size(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until ensure_grad(); same length as data after
  bool requires_grad = false;
};

// Dense row-major tensor of doubles. Copies are shallow: they share the
// payload, so a Tensor behaves like a handle (cheap to capture in backward
// closures). Gradients accumulate in place until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // i.i.d. N(0, stddev^2) entries
  static Tensor randn(const Shape& shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  const std::vector<double>& values() const { return impl_->data; }
  double value() const;  // scalar tensors only
  double at(std::int64_t flat_index) const { return impl_->data[static_cast<std::size_t>(flat_index)]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void ensure_grad();  // allocates zeroed grad storage if absent
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  double* grad_data() { return impl_->grad.data(); }
  const double* grad_data() const { return impl_->grad.data(); }
  std::vector<double> grad_values() const;  // zeros if never touched
  void zero_grad();

  // deep copy of the values, detached from the graph
  Tensor detached() const;

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Records one backward closure per op, in creation order. Creation order is
// a topological order of the graph, so running the closures in reverse is a
// valid reverse-mode sweep that visits each node exactly once.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  void record(const Tensor& output, std::function<void()> backward_fn);
  std::size_t node_count() const { return nodes_.size(); }
  // zeroes every recorded op output's grad, so each sweep starts from a
  // clean interior; leaf grads are untouched and keep accumulating
  void zero_output_grads();
  void run_backward();

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<Tensor> outputs_;
  Tape* previous_ = nullptr;
};

// Seeds d(loss)/d(loss) = 1 and sweeps the active tape in reverse. The loss
// must be a scalar recorded on the active tape. Calling twice without
// zero_grad() accumulates a second pass on top of the first.
void backward(Tensor loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor sigmoid(const Tensor& a);
// x * log(x) with the convention 0 log 0 = 0 (and zero subgradient there)
Tensor xlogx(const Tensor& a);

// ---- shape / indexing ----
Tensor reshape(const Tensor& a, const Shape& new_shape);
Tensor transpose_last2(const Tensor& a);
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& a, std::int64_t offset, std::int64_t length);
// gathers rows of a rank>=2 tensor; backward scatter-adds
Tensor select_rows(const Tensor& a, const std::vector<std::int64_t>& rows);
// table [V, D], ids flattened over `leading`; result shape leading + [D]
Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids,
                 const Shape& leading);
// out[r] = a[r, cols[r]] for a [R, C]
Tensor take_per_row(const Tensor& a, const std::vector<std::int64_t>& cols);

// ---- contractions ----
// [.., m, n] @ [n, p], or batched [.., m, n] @ [.., n, p] with equal leading dims
Tensor matmul(const Tensor& a, const Tensor& b);
// a @ b^T over the last two axes: [.., m, n] x [.., p, n] -> [.., m, p]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// ---- normalization / reductions ----
// softmax along `axis` (negative counts from the back) at the given
// temperature; max-subtracted for stability
Tensor softmax(const Tensor& a, int axis, double temperature = 1.0);
Tensor log_softmax(const Tensor& a, int axis);
// normalizes over the last axis; gain/bias are [D]
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// x [B, N, D] (or [N, D]) with 0/1 mask [B, N] (or [N]); mean over unmasked rows
Tensor masked_mean_pool(const Tensor& x, const Tensor& mask);
Tensor sum(const Tensor& a);       // -> [1]
Tensor mean(const Tensor& a);      // -> [1]
Tensor sum_last(const Tensor& a);  // reduce the last axis

// ---- broadcast helpers ----
Tensor add_bias(const Tensor& x, const Tensor& bias);      // bias [D] over last axis
Tensor scale_rows(const Tensor& x, const Tensor& scale);   // scale [B] over first axis

// inverted dropout; rate 0 is the identity
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// convenience: add_bias(matmul(x, w), b)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace budgetformer
