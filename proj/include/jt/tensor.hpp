// jt/tensor.hpp
//
// Minimal dense tensor type with reverse-mode automatic differentiation.
// Values are 64-bit floats in row-major order, backed by Eigen. The graph
// is define-by-run: every op records its inputs and a backward closure,
// backward() traverses the recorded graph in reverse execution order and
// then frees it.

#pragma once

#include <Eigen/Dense>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "jt/common.hpp"

namespace jt {

using Shape = std::vector<int>;
using Vec = Eigen::VectorXd;
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatRM>;
using CMapMat = Eigen::Map<const MatRM>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
  Shape shape;
  Vec value;
  Vec grad;               // allocated lazily; same length as value when present
  bool requires_grad = false;
  bool grad_ready = false;  // grad buffer allocated and zeroed/accumulated

  // Graph record: parents this node was computed from and the closure that
  // pushes this node's grad into theirs. Cleared when backward() frees the
  // graph.
  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backward_fn;
  bool consumed = false;  // set on the backward root after the pass

  void ensure_grad() {
    if (!grad_ready) {
      grad = Vec::Zero(value.size());
      grad_ready = true;
    }
  }
};

// Value-semantic handle to a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from_vector(const Shape& shape, const std::vector<double>& data,
                            bool requires_grad = false);
  static Tensor from_eigen(const Shape& shape, const Vec& data,
                           bool requires_grad = false);
  // i.i.d. normal(0, std) entries
  static Tensor randn(const Shape& shape, double std, Rng& rng,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  long numel() const { return impl_->value.size(); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  bool requires_grad() const { return impl_->requires_grad; }

  Vec& value() { return impl_->value; }
  const Vec& value() const { return impl_->value; }
  Vec& grad() { return impl_->grad; }
  const Vec& grad() const { return impl_->grad; }
  bool has_grad() const { return impl_->grad_ready; }
  // Materializes an all-zero grad when none was accumulated (a parameter
  // untouched by the current loss still takes part in the optimizer step).
  void ensure_grad() { impl_->ensure_grad(); }
  void zero_grad() {
    impl_->grad_ready = false;
    impl_->grad.resize(0);
  }

  double scalar() const {
    JT_CHECK(numel() == 1, "scalar() on tensor of shape " << shape_str(shape()));
    return impl_->value[0];
  }

  // 2D views (row-major)
  MapMat mat() {
    JT_CHECK(ndim() == 2, "mat() on tensor of shape " << shape_str(shape()));
    return MapMat(impl_->value.data(), dim(0), dim(1));
  }
  CMapMat mat() const {
    JT_CHECK(ndim() == 2, "mat() on tensor of shape " << shape_str(shape()));
    return CMapMat(impl_->value.data(), dim(0), dim(1));
  }
  MapMat grad_mat() {
    JT_CHECK(ndim() == 2 && has_grad(), "grad_mat() without grad");
    return MapMat(impl_->grad.data(), dim(0), dim(1));
  }

  TensorImplPtr impl() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// Builds a graph node. `backward_fn` receives the node and must add into
// parents' grads (parents have grads allocated before the call).
Tensor make_node(Shape shape, Vec value, std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward_fn);

// --- Reverse pass ------------------------------------------------------

// Accumulates grads into every reachable tensor that requires_grad or has
// parents, in exact reverse execution order, then frees the graph records.
// `loss` must be scalar; a second call on the same root throws.
void backward(const Tensor& loss);

// --- Elementary ops ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);            // same shape
Tensor sub(const Tensor& a, const Tensor& b);            // same shape
Tensor mul(const Tensor& a, const Tensor& b);            // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_bias(const Tensor& x, const Tensor& bias);    // x: R×C, bias: C
Tensor transpose(const Tensor& x);                       // 2D
Tensor concat_cols(const std::vector<Tensor>& xs);       // 2D, same rows
Tensor concat_rows(const std::vector<Tensor>& xs);       // 2D, same cols
Tensor slice_rows(const Tensor& x, int start, int len);  // 2D contiguous
Tensor slice_cols(const Tensor& x, int start, int len);  // 2D contiguous
Tensor select_rows(const Tensor& x, const std::vector<int>& idx);  // gather
Tensor sum(const Tensor& x);                             // -> scalar
Tensor gelu(const Tensor& x);                            // exact erf form
Tensor softmax(const Tensor& x);                         // rows of a 2D tensor
Tensor log_softmax(const Tensor& x);                     // rows of a 2D tensor
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);                    // per row of 2D x
Tensor dropout(const Tensor& x, double p, bool train, Rng& rng);
Tensor cosine_similarity(const Tensor& u, const Tensor& v,
                         double eps = 1e-8);             // -> scalar
// -log softmax(logits)[target]; logits is 1D or a single row/col 2D tensor
Tensor cross_entropy_from_logits(const Tensor& logits, int target);
// Rows of x whose index is in `idx` are replaced by `embedding` (a 1×C or
// length-C tensor); other rows pass through.
Tensor mask_rows(const Tensor& x, const Tensor& embedding,
                 const std::vector<int>& idx);
// Row lookup by id: out[i] = table[ids[i]].
Tensor embedding_select(const Tensor& table, const std::vector<int>& ids);
// L2-normalize each row, with an epsilon guard on the norm.
Tensor normalize_rows(const Tensor& x, double eps = 1e-8);

enum class ConvPad { None, Symmetric };

// 1D convolution. input: C_in×T, weight: C_out×(C_in/groups)×K, optional
// bias of length C_out (pass an undefined Tensor to skip).
// ConvPad::Symmetric pads K/2 on both sides and trims one trailing output
// frame when K is even, so stride-1 output length equals T.
Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int groups, ConvPad pad = ConvPad::None);

// Output length of an unpadded 1D convolution.
inline int conv1d_out_len(int t, int k, int stride) {
  JT_CHECK(t >= k, "conv1d: input length " << t << " < kernel " << k);
  return (t - k) / stride + 1;
}

}  // namespace jt
