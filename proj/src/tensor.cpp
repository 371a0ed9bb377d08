#include "budgetformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "budgetformer/rng.hpp"

namespace budgetformer {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_size(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError("negative extent in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data.assign(static_cast<std::size_t>(shape_size(shape)), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_size(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("from_values: shape " + shape_to_string(shape) + " wants " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  for (auto& v : t.impl_->data) v = rng.normal() * stddev;
  return t;
}

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw DimensionError("dim: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("value: tensor " + shape_to_string(shape()) + " is not scalar");
  }
  return impl_->data[0];
}

void Tensor::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

std::vector<double> Tensor::grad_values() const {
  if (!has_grad()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detached() const {
  return from_values(shape(), impl_->data, false);
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
  previous_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& output, std::function<void()> backward_fn) {
  outputs_.push_back(output);
  nodes_.push_back(std::move(backward_fn));
}

void Tape::zero_output_grads() {
  for (auto& t : outputs_) t.zero_grad();
}

void Tape::run_backward() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void backward(Tensor loss) {
  if (!Tape::active()) throw ContractError("backward: no active tape");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " +
                        shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss was not recorded with gradients enabled");
  }
  Tape::active()->zero_output_grads();
  loss.ensure_grad();
  loss.grad_data()[0] += 1.0;
  Tape::active()->run_backward();
}

// ---------------------------------------------------------------------------
// op helpers

namespace {

bool trace(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

// out[i] = f(a[i]); df holds f'(a[i]) precomputed on the forward pass
Tensor unary_op(const char* /*op*/, const Tensor& a,
                const std::function<double(double)>& f,
                const std::function<double(double)>& dfda) {
  Tensor out = Tensor::zeros(a.shape(), trace({&a}));
  const double* ap = a.data();
  double* op_ = out.data();
  std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) op_[i] = f(ap[i]);
  if (out.requires_grad()) {
    std::vector<double> deriv(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) deriv[static_cast<std::size_t>(i)] = dfda(ap[i]);
    Tensor in = a;
    Tensor res = out;
    Tape::active()->record(out, [in, res, deriv]() mutable {
      if (!in.requires_grad()) return;
      res.ensure_grad();
      in.ensure_grad();
      const double* g = res.grad_data();
      double* gi = in.grad_data();
      for (std::int64_t i = 0; i < in.size(); ++i) {
        gi[i] += g[i] * deriv[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

// raw GEMM kernels; all accumulate into c
// c[m,p] += a[m,n] b[n,p]
void mm_nn(double* c, const double* a, const double* b, std::int64_t m,
           std::int64_t n, std::int64_t p) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * p;
    const double* arow = a + i * n;
    for (std::int64_t k = 0; k < n; ++k) {
      double av = arow[k];
      const double* brow = b + k * p;
      for (std::int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,p] += a[m,n] b[p,n]^T
void mm_nt(double* c, const double* a, const double* b, std::int64_t m,
           std::int64_t n, std::int64_t p) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * p;
    for (std::int64_t j = 0; j < p; ++j) {
      const double* brow = b + j * n;
      double acc = 0.0;
      for (std::int64_t k = 0; k < n; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  }
}

// c[n,p] += a[m,n]^T b[m,p]
void mm_tn(double* c, const double* a, const double* b, std::int64_t m,
           std::int64_t n, std::int64_t p) {
  for (std::int64_t k = 0; k < m; ++k) {
    const double* arow = a + k * n;
    const double* brow = b + k * p;
    for (std::int64_t i = 0; i < n; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * p;
      for (std::int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

std::int64_t leading_size(const Shape& s, std::size_t upto) {
  std::int64_t n = 1;
  for (std::size_t i = 0; i < upto; ++i) n *= s[i];
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape(), trace({&a, &b}));
  const double* ap = a.data();
  const double* bp = b.data();
  double* op_ = out.data();
  for (std::int64_t i = 0; i < a.size(); ++i) op_[i] = ap[i] + bp[i];
  if (out.requires_grad()) {
    Tensor ta = a, tb = b, res = out;
    Tape::active()->record(out, [ta, tb, res]() mutable {
      res.ensure_grad();
      const double* g = res.grad_data();
      if (ta.requires_grad()) {
        ta.ensure_grad();
        double* gi = ta.grad_data();
        for (std::int64_t i = 0; i < ta.size(); ++i) gi[i] += g[i];
      }
      if (tb.requires_grad()) {
        tb.ensure_grad();
        double* gi = tb.grad_data();
        for (std::int64_t i = 0; i < tb.size(); ++i) gi[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape(), trace({&a, &b}));
  const double* ap = a.data();
  const double* bp = b.data();
  double* op_ = out.data();
  for (std::int64_t i = 0; i < a.size(); ++i) op_[i] = ap[i] - bp[i];
  if (out.requires_grad()) {
    Tensor ta = a, tb = b, res = out;
    Tape::active()->record(out, [ta, tb, res]() mutable {
      res.ensure_grad();
      const double* g = res.grad_data();
      if (ta.requires_grad()) {
        ta.ensure_grad();
        double* gi = ta.grad_data();
        for (std::int64_t i = 0; i < ta.size(); ++i) gi[i] += g[i];
      }
      if (tb.requires_grad()) {
        tb.ensure_grad();
        double* gi = tb.grad_data();
        for (std::int64_t i = 0; i < tb.size(); ++i) gi[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape(), trace({&a, &b}));
  const double* ap = a.data();
  const double* bp = b.data();
  double* op_ = out.data();
  for (std::int64_t i = 0; i < a.size(); ++i) op_[i] = ap[i] * bp[i];
  if (out.requires_grad()) {
    Tensor ta = a, tb = b, res = out;
    Tape::active()->record(out, [ta, tb, res]() mutable {
      res.ensure_grad();
      const double* g = res.grad_data();
      if (ta.requires_grad()) {
        ta.ensure_grad();
        double* gi = ta.grad_data();
        const double* bv = tb.data();
        for (std::int64_t i = 0; i < ta.size(); ++i) gi[i] += g[i] * bv[i];
      }
      if (tb.requires_grad()) {
        tb.ensure_grad();
        double* gi = tb.grad_data();
        const double* av = ta.data();
        for (std::int64_t i = 0; i < tb.size(); ++i) gi[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op("add_scalar", a, [c](double x) { return x + c; },
                  [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_op("mul_scalar", a, [c](double x) { return x * c; },
                  [c](double) { return c; });
}

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary_op("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
  constexpr double kAlpha = 0.7978845608028653558798921198687;  // sqrt(2/pi)
  constexpr double kCubic = 0.044715;
  return unary_op(
      "gelu", a,
      [](double x) {
        double u = kAlpha * (x + kCubic * x * x * x);
        return 0.5 * x * (1.0 + std::tanh(u));
      },
      [](double x) {
        double u = kAlpha * (x + kCubic * x * x * x);
        double t = std::tanh(u);
        double du = kAlpha * (1.0 + 3.0 * kCubic * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Tensor sigmoid(const Tensor& a) {
  auto sig = [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary_op("sigmoid", a, sig, [sig](double x) {
    double y = sig(x);
    return y * (1.0 - y);
  });
}

Tensor xlogx(const Tensor& a) {
  return unary_op("xlogx", a,
                  [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; },
                  [](double x) { return x > 0.0 ? std::log(x) + 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// shape / indexing

Tensor reshape(const Tensor& a, const Shape& new_shape) {
  if (shape_size(new_shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(a.shape()) +
                         " as " + shape_to_string(new_shape));
  }
  Tensor out = Tensor::from_values(new_shape, a.values(), trace({&a}));
  if (out.requires_grad()) {
    Tensor in = a, res = out;
    Tape::active()->record(out, [in, res]() mutable {
      res.ensure_grad();
      in.ensure_grad();
      const double* g = res.grad_data();
      double* gi = in.grad_data();
      for (std::int64_t i = 0; i < in.size(); ++i) gi[i] += g[i];
    });
  }
  return out;
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() < 2) {
    throw DimensionError("transpose_last2: rank >= 2 required, got " +
                         shape_to_string(a.shape()));
  }
  std::int64_t m = a.dim(-2), n = a.dim(-1);
  std::int64_t batch = a.size() / (m * n);
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  Tensor out = Tensor::zeros(out_shape, trace({&a}));
  const double* ap = a.data();
  double* op_ = out.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    const double* as = ap + b * m * n;
    double* os = op_ + b * m * n;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) os[j * m + i] = as[i * n + j];
  }
  if (out.requires_grad()) {
    Tensor in = a, res = out;
    Tape::active()->record(out, [in, res, batch, m, n]() mutable {
      res.ensure_grad();
      in.ensure_grad();
      const double* g = res.grad_data();
      double* gi = in.grad_data();
      for (std::int64_t b = 0; b < batch; ++b) {
        const double* gs = g + b * m * n;
        double* gis = gi + b * m * n;
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j) gis[i * n + j] += gs[j * m + i];
      }
    });
  }
  return out;
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_last: no inputs");
  const Shape& first = parts[0].shape();
  std::int64_t total_last = 0;
  bool need_grad = false;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank()) {
      throw DimensionError("concat_last: rank mismatch " + shape_to_string(first) +
                           " vs " + shape_to_string(p.shape()));
    }
    for (int i = 0; i + 1 < p.rank(); ++i) {
      if (p.shape()[static_cast<std::size_t>(i)] != first[static_cast<std::size_t>(i)]) {
        throw DimensionError("concat_last: leading dims differ " +
                             shape_to_string(first) + " vs " + shape_to_string(p.shape()));
      }
    }
    total_last += p.dim(-1);
    need_grad = need_grad || (Tape::active() && p.requires_grad());
  }
  Shape out_shape = first;
  out_shape.back() = total_last;
  Tensor out = Tensor::zeros(out_shape, need_grad);
  std::int64_t rows = leading_size(out_shape, out_shape.size() - 1);
  double* op_ = out.data();
  std::int64_t col_off = 0;
  for (const Tensor& p : parts) {
    std::int64_t w = p.dim(-1);
    const double* pp = p.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy(pp + r * w, pp + (r + 1) * w, op_ + r * total_last + col_off);
    }
    col_off += w;
  }
  if (out.requires_grad()) {
    std::vector<Tensor> ins = parts;
    Tensor res = out;
    Tape::active()->record(out, [ins, res, rows, total_last]() mutable {
      res.ensure_grad();
      const double* g = res.grad_data();
      std::int64_t off = 0;
      for (Tensor& in : ins) {
        std::int64_t w = in.dim(-1);
        if (in.requires_grad()) {
          in.ensure_grad();
          double* gi = in.grad_data();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < w; ++j) gi[r * w + j] += g[r * total_last + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

Tensor slice_last(const Tensor& a, std::int64_t offset, std::int64_t length) {
  std::int64_t last = a.dim(-1);
  if (offset < 0 || length <= 0 || offset + length > last) {
    throw DimensionError("slice_last: [" + std::to_string(offset) + "," +
                         std::to_string(offset + length) + ") out of range for " +
                         shape_to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.back() = length;
  Tensor out = Tensor::zeros(out_shape, trace({&a}));
  std::int64_t rows = a.size() / last;
  const double* ap = a.data();
  double* op_ = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy(ap + r * last + offset, ap + r * last + offset + length, op_ + r * length);
  }
  if (out.requires_grad()) {
    Tensor in = a, res = out;
    Tape::active()->record(out, [in, res, rows, last, offset, length]() mutable {
      res.ensure_grad();
      in.ensure_grad();
      const double* g = res.grad_data();
      double* gi = in.grad_data();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < length; ++j) gi[r * last + offset + j] += g[r * length + j];
    });
  }
  return out;
}

Tensor select_rows(const Tensor& a, const std::vector<std::int64_t>& rows) {
  if (a.rank() < 2) {
    throw DimensionError("select_rows: rank >= 2 required, got " +
                         shape_to_string(a.shape()));
  }
  std::int64_t nrows = a.dim(0);
  std::int64_t width = a.size() / nrows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= nrows) {
      throw DataError("select_rows: index " + std::to_string(rows[i]) +
                      " out of range [0," + std::to_string(nrows) + ") at position " +
                      std::to_string(i));
    }
  }
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<std::int64_t>(rows.size());
  Tensor out = Tensor::zeros(out_shape, trace({&a}));
  const double* ap = a.data();
  double* op_ = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(ap + rows[i] * width, ap + (rows[i] + 1) * width,
              op_ + static_cast<std::int64_t>(i) * width);
  }
  if (out.requires_grad()) {
    Tensor in = a, res = out;
    std::vector<std::int64_t> idx = rows;
    Tape::active()->record(out, [in, res, idx, width]() mutable {
      res.ensure_grad();
      in.ensure_grad();
      const double* g = res.grad_data();
      double* gi = in.grad_data();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double* dst = gi + idx[i] * width;
        const double* src = g + static_cast<std::int64_t>(i) * width;
        for (std::int64_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids,
                 const Shape& leading) {
  if (shape_size(leading) != static_cast<std::int64_t>(ids.size())) {
    throw DimensionError("embedding: leading shape " + shape_to_string(leading) +
                         " does not cover " + std::to_string(ids.size()) + " ids");
  }
  Tensor flat = select_rows(table, ids);
  Shape out_shape = leading;
  out_shape.push_back(table.dim(1));
  return reshape(flat, out_shape);
}

Tensor take_per_row(const Tensor& a, const std::vector<std::int64_t>& cols) {
  if (a.rank() != 2) {
    throw DimensionError("take_per_row: rank 2 required, got " +
                         shape_to_string(a.shape()));
  }
  std::int64_t r = a.dim(0), c = a.dim(1);
  if (static_cast<std::int64_t>(cols.size()) != r) {
    throw DimensionError("take_per_row: " + std::to_string(cols.size()) +
                         " indices for " + std::to_string(r) + " rows");
  }
  for (std::int64_t i = 0; i < r; ++i) {
    if (cols[static_cast<std::size_t>(i)] < 0 || cols[static_cast<std::size_t>(i)] >= c) {
      throw DataError("take_per_row: index " +
                      std::to_string(cols[static_cast<std::size_t>(i)]) +
                      " out of range [0," + std::to_string(c) + ") at row " +
                      std::to_string(i));
    }
  }
  Tensor out = Tensor::zeros({r}, trace({&a}));
  const double* ap = a.data();
  double* op_ = out.data();
  for (std::int64_t i = 0; i < r; ++i) op_[i] = ap[i * c + cols[static_cast<std::size_t>(i)]];
  if (out.requires_grad()) {
    Tensor in = a, res = out;
    std::vector<std::int64_t> idx = cols;
    Tape::active()->record(out, [in, res, idx, c]() mutable {
      res.ensure_grad();
      in.ensure_grad();
      const double* g = res.grad_data();
      double* gi = in.grad_data();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        gi[static_cast<std::int64_t>(i) * c + idx[i]] += g[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// contractions

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: rank >= 2 required, got " +
                         shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  std::int64_t m = a.dim(-2), n = a.dim(-1);
  if (b.rank() == 2) {
    if (b.dim(0) != n) {
      throw DimensionError("matmul: shape mismatch " + shape_to_string(a.shape()) +
                           " vs " + shape_to_string(b.shape()));
    }
    std::int64_t p = b.dim(1);
    std::int64_t big_m = a.size() / n;  // fold every leading axis into rows
    Shape out_shape = a.shape();
    out_shape.back() = p;
    Tensor out = Tensor::zeros(out_shape, trace({&a, &b}));
    mm_nn(out.data(), a.data(), b.data(), big_m, n, p);
    if (out.requires_grad()) {
      Tensor ta = a, tb = b, res = out;
      Tape::active()->record(out, [ta, tb, res, big_m, n, p]() mutable {
        res.ensure_grad();
        const double* g = res.grad_data();
        if (ta.requires_grad()) {
          ta.ensure_grad();
          mm_nt(ta.grad_data(), g, tb.data(), big_m, p, n);
        }
        if (tb.requires_grad()) {
          tb.ensure_grad();
          mm_tn(tb.grad_data(), ta.data(), g, big_m, n, p);
        }
      });
    }
    return out;
  }
  // batched: equal leading dims
  if (a.rank() != b.rank()) {
    throw DimensionError("matmul: shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  for (int i = 0; i + 2 < a.rank(); ++i) {
    if (a.shape()[static_cast<std::size_t>(i)] != b.shape()[static_cast<std::size_t>(i)]) {
      throw DimensionError("matmul: shape mismatch " + shape_to_string(a.shape()) +
                           " vs " + shape_to_string(b.shape()));
    }
  }
  if (b.dim(-2) != n) {
    throw DimensionError("matmul: shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  std::int64_t p = b.dim(-1);
  std::int64_t batch = a.size() / (m * n);
  Shape out_shape = a.shape();
  out_shape.back() = p;
  Tensor out = Tensor::zeros(out_shape, trace({&a, &b}));
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    mm_nn(out.data() + bi * m * p, a.data() + bi * m * n, b.data() + bi * n * p, m, n, p);
  }
  if (out.requires_grad()) {
    Tensor ta = a, tb = b, res = out;
    Tape::active()->record(out, [ta, tb, res, batch, m, n, p]() mutable {
      res.ensure_grad();
      const double* g = res.grad_data();
      if (ta.requires_grad()) {
        ta.ensure_grad();
        for (std::int64_t bi = 0; bi < batch; ++bi)
          mm_nt(ta.grad_data() + bi * m * n, g + bi * m * p, tb.data() + bi * n * p, m, p, n);
      }
      if (tb.requires_grad()) {
        tb.ensure_grad();
        for (std::int64_t bi = 0; bi < batch; ++bi)
          mm_tn(tb.grad_data() + bi * n * p, ta.data() + bi * m * n, g + bi * m * p, m, n, p);
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != a.rank()) {
    throw DimensionError("matmul_nt: shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  for (int i = 0; i + 2 < a.rank(); ++i) {
    if (a.shape()[static_cast<std::size_t>(i)] != b.shape()[static_cast<std::size_t>(i)]) {
      throw DimensionError("matmul_nt: shape mismatch " + shape_to_string(a.shape()) +
                           " vs " + shape_to_string(b.shape()));
    }
  }
  std::int64_t m = a.dim(-2), n = a.dim(-1), p = b.dim(-2);
  if (b.dim(-1) != n) {
    throw DimensionError("matmul_nt: shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  std::int64_t batch = a.size() / (m * n);
  Shape out_shape = a.shape();
  out_shape.back() = p;
  Tensor out = Tensor::zeros(out_shape, trace({&a, &b}));
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    mm_nt(out.data() + bi * m * p, a.data() + bi * m * n, b.data() + bi * p * n, m, n, p);
  }
  if (out.requires_grad()) {
    Tensor ta = a, tb = b, res = out;
    Tape::active()->record(out, [ta, tb, res, batch, m, n, p]() mutable {
      res.ensure_grad();
      const double* g = res.grad_data();
      if (ta.requires_grad()) {
        ta.ensure_grad();
        // dA = dC @ B
        for (std::int64_t bi = 0; bi < batch; ++bi)
          mm_nn(ta.grad_data() + bi * m * n, g + bi * m * p, tb.data() + bi * p * n, m, p, n);
      }
      if (tb.requires_grad()) {
        tb.ensure_grad();
        // dB = dC^T @ A
        for (std::int64_t bi = 0; bi < batch; ++bi)
          mm_tn(tb.grad_data() + bi * p * n, g + bi * m * p, ta.data() + bi * m * n, m, p, n);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization / reductions

namespace {
struct AxisSplit {
  std::int64_t outer, lane, inner;
};
AxisSplit split_axis(const char* op, const Tensor& a, int axis) {
  int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ParameterError(std::string(op) + ": axis out of range for " +
                         shape_to_string(a.shape()));
  }
  AxisSplit s{1, a.shape()[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= a.shape()[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) s.inner *= a.shape()[static_cast<std::size_t>(i)];
  return s;
}
}  // namespace

Tensor softmax(const Tensor& a, int axis, double temperature) {
  if (!(temperature > 0.0)) {
    throw ParameterError("softmax: temperature must be > 0, got " +
                         std::to_string(temperature));
  }
  AxisSplit s = split_axis("softmax", a, axis);
  Tensor out = Tensor::zeros(a.shape(), trace({&a}));
  const double* ap = a.data();
  double* op_ = out.data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t in = 0; in < s.inner; ++in) {
      const double* x = ap + o * s.lane * s.inner + in;
      double* y = op_ + o * s.lane * s.inner + in;
      double mx = x[0];
      for (std::int64_t l = 1; l < s.lane; ++l) mx = std::max(mx, x[l * s.inner]);
      double denom = 0.0;
      for (std::int64_t l = 0; l < s.lane; ++l) {
        double e = std::exp((x[l * s.inner] - mx) / temperature);
        y[l * s.inner] = e;
        denom += e;
      }
      for (std::int64_t l = 0; l < s.lane; ++l) y[l * s.inner] /= denom;
    }
  }
  if (out.requires_grad()) {
    Tensor in_t = a, res = out;
    Tape::active()->record(out, [in_t, res, s, temperature]() mutable {
      res.ensure_grad();
      in_t.ensure_grad();
      const double* g = res.grad_data();
      const double* y = res.data();
      double* gi = in_t.grad_data();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
          std::int64_t base = o * s.lane * s.inner + in;
          double dot = 0.0;
          for (std::int64_t l = 0; l < s.lane; ++l)
            dot += g[base + l * s.inner] * y[base + l * s.inner];
          for (std::int64_t l = 0; l < s.lane; ++l) {
            gi[base + l * s.inner] +=
                y[base + l * s.inner] * (g[base + l * s.inner] - dot) / temperature;
          }
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& a, int axis) {
  AxisSplit s = split_axis("log_softmax", a, axis);
  Tensor out = Tensor::zeros(a.shape(), trace({&a}));
  const double* ap = a.data();
  double* op_ = out.data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t in = 0; in < s.inner; ++in) {
      const double* x = ap + o * s.lane * s.inner + in;
      double* y = op_ + o * s.lane * s.inner + in;
      double mx = x[0];
      for (std::int64_t l = 1; l < s.lane; ++l) mx = std::max(mx, x[l * s.inner]);
      double denom = 0.0;
      for (std::int64_t l = 0; l < s.lane; ++l) denom += std::exp(x[l * s.inner] - mx);
      double lse = mx + std::log(denom);
      for (std::int64_t l = 0; l < s.lane; ++l) y[l * s.inner] = x[l * s.inner] - lse;
    }
  }
  if (out.requires_grad()) {
    Tensor in_t = a, res = out;
    Tape::active()->record(out, [in_t, res, s]() mutable {
      res.ensure_grad();
      in_t.ensure_grad();
      const double* g = res.grad_data();
      const double* y = res.data();
      double* gi = in_t.grad_data();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
          std::int64_t base = o * s.lane * s.inner + in;
          double gsum = 0.0;
          for (std::int64_t l = 0; l < s.lane; ++l) gsum += g[base + l * s.inner];
          for (std::int64_t l = 0; l < s.lane; ++l) {
            gi[base + l * s.inner] +=
                g[base + l * s.inner] - std::exp(y[base + l * s.inner]) * gsum;
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  std::int64_t d = x.dim(-1);
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d) {
    throw DimensionError("layer_norm: params " + shape_to_string(gain.shape()) + "/" +
                         shape_to_string(bias.shape()) + " do not match last dim of " +
                         shape_to_string(x.shape()));
  }
  std::int64_t rows = x.size() / d;
  Tensor out = Tensor::zeros(x.shape(), trace({&x, &gain, &bias}));
  std::vector<double> norm(static_cast<std::size_t>(rows * d));
  std::vector<double> rstd(static_cast<std::size_t>(rows));
  const double* xp = x.data();
  const double* gp = gain.data();
  const double* bp = bias.data();
  double* op_ = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xp + r * d;
    double mu = 0.0;
    for (std::int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double rs = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t j = 0; j < d; ++j) {
      double nv = (xr[j] - mu) * rs;
      norm[static_cast<std::size_t>(r * d + j)] = nv;
      op_[r * d + j] = nv * gp[j] + bp[j];
    }
  }
  if (out.requires_grad()) {
    Tensor tx = x, tg = gain, tb = bias, res = out;
    Tape::active()->record(out, [tx, tg, tb, res, norm, rstd, rows, d]() mutable {
      res.ensure_grad();
      const double* g = res.grad_data();
      const double* gp2 = tg.data();
      if (tg.requires_grad()) {
        tg.ensure_grad();
        double* gg = tg.grad_data();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < d; ++j)
            gg[j] += g[r * d + j] * norm[static_cast<std::size_t>(r * d + j)];
      }
      if (tb.requires_grad()) {
        tb.ensure_grad();
        double* gb = tb.grad_data();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (tx.requires_grad()) {
        tx.ensure_grad();
        double* gx = tx.grad_data();
        for (std::int64_t r = 0; r < rows; ++r) {
          // dy = dout * gain; dx = rstd * (dy - mean(dy) - norm * mean(dy * norm))
          double mean_dy = 0.0, mean_dyn = 0.0;
          for (std::int64_t j = 0; j < d; ++j) {
            double dy = g[r * d + j] * gp2[j];
            mean_dy += dy;
            mean_dyn += dy * norm[static_cast<std::size_t>(r * d + j)];
          }
          mean_dy /= static_cast<double>(d);
          mean_dyn /= static_cast<double>(d);
          double rs = rstd[static_cast<std::size_t>(r)];
          for (std::int64_t j = 0; j < d; ++j) {
            double dy = g[r * d + j] * gp2[j];
            gx[r * d + j] +=
                rs * (dy - mean_dy - norm[static_cast<std::size_t>(r * d + j)] * mean_dyn);
          }
        }
      }
    });
  }
  return out;
}

Tensor masked_mean_pool(const Tensor& x, const Tensor& mask) {
  std::int64_t b, n, d;
  if (x.rank() == 3 && mask.rank() == 2) {
    b = x.dim(0);
    n = x.dim(1);
    d = x.dim(2);
    if (mask.dim(0) != b || mask.dim(1) != n) {
      throw DimensionError("masked_mean_pool: mask " + shape_to_string(mask.shape()) +
                           " does not match " + shape_to_string(x.shape()));
    }
  } else if (x.rank() == 2 && mask.rank() == 1) {
    b = 1;
    n = x.dim(0);
    d = x.dim(1);
    if (mask.dim(0) != n) {
      throw DimensionError("masked_mean_pool: mask " + shape_to_string(mask.shape()) +
                           " does not match " + shape_to_string(x.shape()));
    }
  } else {
    throw DimensionError("masked_mean_pool: want [B,N,D]+[B,N] or [N,D]+[N], got " +
                         shape_to_string(x.shape()) + " and " + shape_to_string(mask.shape()));
  }
  Shape out_shape = (x.rank() == 3) ? Shape{b, d} : Shape{d};
  Tensor out = Tensor::zeros(out_shape, trace({&x}));
  std::vector<double> counts(static_cast<std::size_t>(b), 0.0);
  const double* xp = x.data();
  const double* mp = mask.data();
  double* op_ = out.data();
  for (std::int64_t bi = 0; bi < b; ++bi) {
    double cnt = 0.0;
    for (std::int64_t i = 0; i < n; ++i) cnt += (mp[bi * n + i] != 0.0) ? 1.0 : 0.0;
    if (cnt == 0.0) {
      throw DegenerateInputError("masked_mean_pool: all-zero mask in row " +
                                 std::to_string(bi));
    }
    counts[static_cast<std::size_t>(bi)] = cnt;
    for (std::int64_t i = 0; i < n; ++i) {
      if (mp[bi * n + i] == 0.0) continue;
      const double* row = xp + (bi * n + i) * d;
      double* orow = op_ + bi * d;
      for (std::int64_t j = 0; j < d; ++j) orow[j] += row[j];
    }
    double* orow = op_ + bi * d;
    for (std::int64_t j = 0; j < d; ++j) orow[j] /= cnt;
  }
  if (out.requires_grad()) {
    Tensor tx = x, tm = mask, res = out;
    Tape::active()->record(out, [tx, tm, res, counts, b, n, d]() mutable {
      res.ensure_grad();
      tx.ensure_grad();
      const double* g = res.grad_data();
      const double* mp2 = tm.data();
      double* gx = tx.grad_data();
      for (std::int64_t bi = 0; bi < b; ++bi) {
        double inv = 1.0 / counts[static_cast<std::size_t>(bi)];
        for (std::int64_t i = 0; i < n; ++i) {
          if (mp2[bi * n + i] == 0.0) continue;
          const double* grow = g + bi * d;
          double* gxr = gx + (bi * n + i) * d;
          for (std::int64_t j = 0; j < d; ++j) gxr[j] += grow[j] * inv;
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::zeros({1}, trace({&a}));
  const double* ap = a.data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += ap[i];
  out.data()[0] = acc;
  if (out.requires_grad()) {
    Tensor in = a, res = out;
    Tape::active()->record(out, [in, res]() mutable {
      res.ensure_grad();
      in.ensure_grad();
      double g = res.grad_data()[0];
      double* gi = in.grad_data();
      for (std::int64_t i = 0; i < in.size(); ++i) gi[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_last(const Tensor& a) {
  if (a.rank() < 2) {
    throw DimensionError("sum_last: rank >= 2 required, got " +
                         shape_to_string(a.shape()));
  }
  std::int64_t last = a.dim(-1);
  std::int64_t rows = a.size() / last;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor out = Tensor::zeros(out_shape, trace({&a}));
  const double* ap = a.data();
  double* op_ = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < last; ++j) acc += ap[r * last + j];
    op_[r] = acc;
  }
  if (out.requires_grad()) {
    Tensor in = a, res = out;
    Tape::active()->record(out, [in, res, rows, last]() mutable {
      res.ensure_grad();
      in.ensure_grad();
      const double* g = res.grad_data();
      double* gi = in.grad_data();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < last; ++j) gi[r * last + j] += g[r];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// broadcast helpers

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  std::int64_t d = x.dim(-1);
  if (bias.rank() != 1 || bias.dim(0) != d) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) +
                         " does not match last dim of " + shape_to_string(x.shape()));
  }
  std::int64_t rows = x.size() / d;
  Tensor out = Tensor::zeros(x.shape(), trace({&x, &bias}));
  const double* xp = x.data();
  const double* bp = bias.data();
  double* op_ = out.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < d; ++j) op_[r * d + j] = xp[r * d + j] + bp[j];
  if (out.requires_grad()) {
    Tensor tx = x, tb = bias, res = out;
    Tape::active()->record(out, [tx, tb, res, rows, d]() mutable {
      res.ensure_grad();
      const double* g = res.grad_data();
      if (tx.requires_grad()) {
        tx.ensure_grad();
        double* gx = tx.grad_data();
        for (std::int64_t i = 0; i < tx.size(); ++i) gx[i] += g[i];
      }
      if (tb.requires_grad()) {
        tb.ensure_grad();
        double* gb = tb.grad_data();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& scale) {
  if (x.rank() < 1 || scale.rank() != 1 || scale.dim(0) != x.dim(0)) {
    throw DimensionError("scale_rows: scale " + shape_to_string(scale.shape()) +
                         " does not match first dim of " + shape_to_string(x.shape()));
  }
  std::int64_t b = x.dim(0);
  std::int64_t width = x.size() / b;
  Tensor out = Tensor::zeros(x.shape(), trace({&x, &scale}));
  const double* xp = x.data();
  const double* sp = scale.data();
  double* op_ = out.data();
  for (std::int64_t bi = 0; bi < b; ++bi) {
    double s = sp[bi];
    for (std::int64_t j = 0; j < width; ++j) op_[bi * width + j] = xp[bi * width + j] * s;
  }
  if (out.requires_grad()) {
    Tensor tx = x, ts = scale, res = out;
    Tape::active()->record(out, [tx, ts, res, b, width]() mutable {
      res.ensure_grad();
      const double* g = res.grad_data();
      if (tx.requires_grad()) {
        tx.ensure_grad();
        double* gx = tx.grad_data();
        const double* sp2 = ts.data();
        for (std::int64_t bi = 0; bi < b; ++bi)
          for (std::int64_t j = 0; j < width; ++j)
            gx[bi * width + j] += g[bi * width + j] * sp2[bi];
      }
      if (ts.requires_grad()) {
        ts.ensure_grad();
        double* gs = ts.grad_data();
        const double* xp2 = tx.data();
        for (std::int64_t bi = 0; bi < b; ++bi) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < width; ++j)
            acc += g[bi * width + j] * xp2[bi * width + j];
          gs[bi] += acc;
        }
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ParameterError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  double keep = 1.0 - rate;
  std::vector<double> mask(static_cast<std::size_t>(x.size()));
  for (auto& m : mask) m = (rng.uniform() < keep) ? 1.0 / keep : 0.0;
  Tensor out = Tensor::zeros(x.shape(), trace({&x}));
  const double* xp = x.data();
  double* op_ = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) op_[i] = xp[i] * mask[static_cast<std::size_t>(i)];
  if (out.requires_grad()) {
    Tensor in = x, res = out;
    Tape::active()->record(out, [in, res, mask]() mutable {
      res.ensure_grad();
      in.ensure_grad();
      const double* g = res.grad_data();
      double* gi = in.grad_data();
      for (std::int64_t i = 0; i < in.size(); ++i)
        gi[i] += g[i] * mask[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace budgetformer
