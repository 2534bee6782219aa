// jt/tensor.cpp

#include "jt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace jt {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->value = Vec::Zero(shape_numel(shape));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  t.value().setConstant(v);
  return t;
}

Tensor Tensor::from_vector(const Shape& shape, const std::vector<double>& data,
                           bool requires_grad) {
  JT_CHECK(static_cast<long>(data.size()) == shape_numel(shape),
           "from_vector: " << data.size() << " values for shape "
                           << shape_str(shape));
  Tensor t = zeros(shape, requires_grad);
  for (size_t i = 0; i < data.size(); ++i) t.value()[static_cast<long>(i)] = data[i];
  return t;
}

Tensor Tensor::from_eigen(const Shape& shape, const Vec& data,
                          bool requires_grad) {
  JT_CHECK(data.size() == shape_numel(shape),
           "from_eigen: " << data.size() << " values for shape "
                          << shape_str(shape));
  Tensor t = zeros(shape, requires_grad);
  t.value() = data;
  return t;
}

Tensor Tensor::randn(const Shape& shape, double std, Rng& rng,
                     bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  for (long i = 0; i < t.numel(); ++i) t.value()[i] = std * rng.normal();
  return t;
}

Tensor make_node(Shape shape, Vec value, std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward_fn) {
  JT_CHECK(value.size() == shape_numel(shape),
           "make_node: value size " << value.size() << " vs shape "
                                    << shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(value);
  bool any_grad = false;
  for (const Tensor& p : parents) {
    if (p.requires_grad() || !p.impl()->parents.empty()) any_grad = true;
  }
  if (any_grad) {
    impl->requires_grad = false;  // only leaves carry requires_grad
    for (Tensor& p : parents) impl->parents.push_back(p.impl());
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(impl);
}

void backward(const Tensor& loss) {
  JT_CHECK(loss.numel() == 1, "backward: loss must be scalar, got shape "
                                  << shape_str(loss.shape()));
  TensorImpl* root = loss.impl().get();
  JT_CHECK(!root->consumed, "backward: graph already consumed; rebuild it");
  root->consumed = true;

  // Iterative post-order DFS; topo order has parents before children, so
  // reversing it gives exact reverse execution order for reachable nodes.
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (TensorImpl* n : topo) n->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  // Free the graph: drop parent links and closures so no nodes leak across
  // iterations. Leaf tensors (parameters) keep their accumulated grads.
  for (TensorImpl* n : topo) {
    n->parents.clear();
    n->backward_fn = nullptr;
    if (!n->requires_grad && n != root) {
      n->grad.resize(0);
      n->grad_ready = false;
    }
  }
}

// ---------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  JT_CHECK(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
           "matmul: incompatible shapes " << shape_str(a.shape()) << " and "
                                          << shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Vec out(static_cast<long>(m) * n);
  MapMat(out.data(), m, n) = a.mat() * b.mat();
  auto ai = a.impl(), bi = b.impl();
  return make_node({m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](TensorImpl& self) {
    CMapMat dC(self.grad.data(), m, n);
    if (ai->grad_ready)
      MapMat(ai->grad.data(), m, k) += dC * CMapMat(bi->value.data(), k, n).transpose();
    if (bi->grad_ready)
      MapMat(bi->grad.data(), k, n) += CMapMat(ai->value.data(), m, k).transpose() * dC;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  JT_CHECK(a.shape() == b.shape(), "add: shape mismatch "
                                       << shape_str(a.shape()) << " vs "
                                       << shape_str(b.shape()));
  auto ai = a.impl(), bi = b.impl();
  return make_node(a.shape(), a.value() + b.value(), {a, b},
                   [ai, bi](TensorImpl& self) {
                     if (ai->grad_ready) ai->grad += self.grad;
                     if (bi->grad_ready) bi->grad += self.grad;
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  JT_CHECK(a.shape() == b.shape(), "sub: shape mismatch "
                                       << shape_str(a.shape()) << " vs "
                                       << shape_str(b.shape()));
  auto ai = a.impl(), bi = b.impl();
  return make_node(a.shape(), a.value() - b.value(), {a, b},
                   [ai, bi](TensorImpl& self) {
                     if (ai->grad_ready) ai->grad += self.grad;
                     if (bi->grad_ready) bi->grad -= self.grad;
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  JT_CHECK(a.shape() == b.shape(), "mul: shape mismatch "
                                       << shape_str(a.shape()) << " vs "
                                       << shape_str(b.shape()));
  auto ai = a.impl(), bi = b.impl();
  return make_node(a.shape(), a.value().cwiseProduct(b.value()), {a, b},
                   [ai, bi](TensorImpl& self) {
                     if (ai->grad_ready)
                       ai->grad += self.grad.cwiseProduct(bi->value);
                     if (bi->grad_ready)
                       bi->grad += self.grad.cwiseProduct(ai->value);
                   });
}

Tensor scale(const Tensor& a, double c) {
  auto ai = a.impl();
  return make_node(a.shape(), a.value() * c, {a}, [ai, c](TensorImpl& self) {
    if (ai->grad_ready) ai->grad += self.grad * c;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  JT_CHECK(x.ndim() == 2 && bias.numel() == x.dim(1),
           "add_bias: x " << shape_str(x.shape()) << " bias "
                          << shape_str(bias.shape()));
  const int r = x.dim(0), c = x.dim(1);
  Vec out = x.value();
  MapMat(out.data(), r, c).rowwise() += bias.value().transpose();
  auto xi = x.impl(), bi = bias.impl();
  return make_node(x.shape(), std::move(out), {x, bias},
                   [xi, bi, r, c](TensorImpl& self) {
                     if (xi->grad_ready) xi->grad += self.grad;
                     if (bi->grad_ready)
                       bi->grad += CMapMat(self.grad.data(), r, c)
                                       .colwise()
                                       .sum()
                                       .transpose();
                   });
}

Tensor transpose(const Tensor& x) {
  JT_CHECK(x.ndim() == 2, "transpose: need 2D, got " << shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  Vec out(x.numel());
  MapMat(out.data(), c, r) = x.mat().transpose();
  auto xi = x.impl();
  return make_node({c, r}, std::move(out), {x}, [xi, r, c](TensorImpl& self) {
    if (xi->grad_ready)
      MapMat(xi->grad.data(), r, c) += CMapMat(self.grad.data(), c, r).transpose();
  });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  JT_CHECK(!xs.empty(), "concat_cols: empty list");
  const int r = xs[0].dim(0);
  int c = 0;
  for (const Tensor& x : xs) {
    JT_CHECK(x.ndim() == 2 && x.dim(0) == r,
             "concat_cols: row mismatch " << shape_str(x.shape()));
    c += x.dim(1);
  }
  Vec out(static_cast<long>(r) * c);
  MapMat o(out.data(), r, c);
  int col = 0;
  for (const Tensor& x : xs) {
    o.middleCols(col, x.dim(1)) = x.mat();
    col += x.dim(1);
  }
  std::vector<TensorImplPtr> impls;
  std::vector<int> widths;
  for (const Tensor& x : xs) {
    impls.push_back(x.impl());
    widths.push_back(x.dim(1));
  }
  return make_node({r, c}, std::move(out), xs,
                   [impls, widths, r, c](TensorImpl& self) {
                     CMapMat g(self.grad.data(), r, c);
                     int col = 0;
                     for (size_t i = 0; i < impls.size(); ++i) {
                       if (impls[i]->grad_ready)
                         MapMat(impls[i]->grad.data(), r, widths[i]) +=
                             g.middleCols(col, widths[i]);
                       col += widths[i];
                     }
                   });
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  JT_CHECK(!xs.empty(), "concat_rows: empty list");
  const int c = xs[0].dim(1);
  int r = 0;
  for (const Tensor& x : xs) {
    JT_CHECK(x.ndim() == 2 && x.dim(1) == c,
             "concat_rows: col mismatch " << shape_str(x.shape()));
    r += x.dim(0);
  }
  Vec out(static_cast<long>(r) * c);
  MapMat o(out.data(), r, c);
  int row = 0;
  for (const Tensor& x : xs) {
    o.middleRows(row, x.dim(0)) = x.mat();
    row += x.dim(0);
  }
  std::vector<TensorImplPtr> impls;
  std::vector<int> heights;
  for (const Tensor& x : xs) {
    impls.push_back(x.impl());
    heights.push_back(x.dim(0));
  }
  return make_node({r, c}, std::move(out), xs,
                   [impls, heights, r, c](TensorImpl& self) {
                     CMapMat g(self.grad.data(), r, c);
                     int row = 0;
                     for (size_t i = 0; i < impls.size(); ++i) {
                       if (impls[i]->grad_ready)
                         MapMat(impls[i]->grad.data(), heights[i], c) +=
                             g.middleRows(row, heights[i]);
                       row += heights[i];
                     }
                   });
}

Tensor slice_rows(const Tensor& x, int start, int len) {
  JT_CHECK(x.ndim() == 2 && start >= 0 && len >= 1 && start + len <= x.dim(0),
           "slice_rows: [" << start << "," << start + len << ") of "
                           << shape_str(x.shape()));
  const int c = x.dim(1);
  Vec out(static_cast<long>(len) * c);
  MapMat(out.data(), len, c) = x.mat().middleRows(start, len);
  auto xi = x.impl();
  const int r = x.dim(0);
  return make_node({len, c}, std::move(out), {x},
                   [xi, start, len, r, c](TensorImpl& self) {
                     if (xi->grad_ready)
                       MapMat(xi->grad.data(), r, c).middleRows(start, len) +=
                           CMapMat(self.grad.data(), len, c);
                   });
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  JT_CHECK(x.ndim() == 2 && start >= 0 && len >= 1 && start + len <= x.dim(1),
           "slice_cols: [" << start << "," << start + len << ") of "
                           << shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  Vec out(static_cast<long>(r) * len);
  MapMat(out.data(), r, len) = x.mat().middleCols(start, len);
  auto xi = x.impl();
  return make_node({r, len}, std::move(out), {x},
                   [xi, start, len, r, c](TensorImpl& self) {
                     if (xi->grad_ready)
                       MapMat(xi->grad.data(), r, c).middleCols(start, len) +=
                           CMapMat(self.grad.data(), r, len);
                   });
}

Tensor select_rows(const Tensor& x, const std::vector<int>& idx) {
  JT_CHECK(x.ndim() == 2, "select_rows: need 2D, got " << shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  for (int i : idx)
    JT_CHECK(i >= 0 && i < r, "select_rows: index " << i << " out of [0," << r << ")");
  const int n = static_cast<int>(idx.size());
  Vec out(static_cast<long>(n) * c);
  MapMat o(out.data(), n, c);
  for (int i = 0; i < n; ++i) o.row(i) = x.mat().row(idx[static_cast<size_t>(i)]);
  auto xi = x.impl();
  return make_node({n, c}, std::move(out), {x},
                   [xi, idx, r, c, n](TensorImpl& self) {
                     if (!xi->grad_ready) return;
                     MapMat gx(xi->grad.data(), r, c);
                     CMapMat g(self.grad.data(), n, c);
                     for (int i = 0; i < n; ++i)
                       gx.row(idx[static_cast<size_t>(i)]) += g.row(i);
                   });
}

Tensor embedding_select(const Tensor& table, const std::vector<int>& ids) {
  return select_rows(table, ids);
}

Tensor sum(const Tensor& x) {
  auto xi = x.impl();
  Vec out(1);
  out[0] = x.value().sum();
  return make_node({1}, std::move(out), {x}, [xi](TensorImpl& self) {
    if (xi->grad_ready) xi->grad.array() += self.grad[0];
  });
}

Tensor gelu(const Tensor& x) {
  static const double inv_sqrt2 = 0.7071067811865476;
  static const double inv_sqrt2pi = 0.3989422804014327;
  Vec out(x.numel());
  for (long i = 0; i < x.numel(); ++i) {
    double v = x.value()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  auto xi = x.impl();
  return make_node(x.shape(), std::move(out), {x}, [xi](TensorImpl& self) {
    if (!xi->grad_ready) return;
    for (long i = 0; i < self.value.size(); ++i) {
      double v = xi->value[i];
      double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      double d = phi + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      xi->grad[i] += self.grad[i] * d;
    }
  });
}

namespace {
// Shared row-wise softmax forward with max subtraction.
MatRM softmax_rows(CMapMat x) {
  MatRM out(x.rows(), x.cols());
  for (long r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}
}  // namespace

Tensor softmax(const Tensor& x) {
  JT_CHECK(x.ndim() == 2, "softmax: need 2D, got " << shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  Vec out(x.numel());
  MapMat(out.data(), r, c) = softmax_rows(x.mat());
  auto xi = x.impl();
  return make_node(x.shape(), std::move(out), {x}, [xi, r, c](TensorImpl& self) {
    if (!xi->grad_ready) return;
    CMapMat y(self.value.data(), r, c);
    CMapMat dy(self.grad.data(), r, c);
    MapMat dx(xi->grad.data(), r, c);
    for (long i = 0; i < r; ++i) {
      double dot = y.row(i).dot(dy.row(i));
      dx.row(i) += y.row(i).cwiseProduct(dy.row(i)) - dot * y.row(i);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  JT_CHECK(x.ndim() == 2, "log_softmax: need 2D, got " << shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  Vec out(x.numel());
  MapMat o(out.data(), r, c);
  CMapMat in = x.mat();
  for (long i = 0; i < r; ++i) {
    double m = in.row(i).maxCoeff();
    double lse = m + std::log((in.row(i).array() - m).exp().sum());
    o.row(i) = in.row(i).array() - lse;
  }
  auto xi = x.impl();
  return make_node(x.shape(), std::move(out), {x}, [xi, r, c](TensorImpl& self) {
    if (!xi->grad_ready) return;
    CMapMat y(self.value.data(), r, c);
    CMapMat dy(self.grad.data(), r, c);
    MapMat dx(xi->grad.data(), r, c);
    for (long i = 0; i < r; ++i) {
      double s = dy.row(i).sum();
      dx.row(i) += dy.row(i) - s * y.row(i).array().exp().matrix();
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  JT_CHECK(x.ndim() == 2 && gain.numel() == x.dim(1) && bias.numel() == x.dim(1),
           "layer_norm: x " << shape_str(x.shape()) << " gain "
                            << shape_str(gain.shape()));
  const int r = x.dim(0), c = x.dim(1);
  Vec out(x.numel());
  MapMat o(out.data(), r, c);
  CMapMat in = x.mat();
  Vec means(r), istds(r);
  for (long i = 0; i < r; ++i) {
    double mean = in.row(i).mean();
    double var = (in.row(i).array() - mean).square().mean();
    double istd = 1.0 / std::sqrt(var + eps);
    means[i] = mean;
    istds[i] = istd;
    o.row(i) = ((in.row(i).array() - mean) * istd) *
                   gain.value().transpose().array() +
               bias.value().transpose().array();
  }
  auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  return make_node(
      x.shape(), std::move(out), {x, gain, bias},
      [xi, gi, bi, r, c, means, istds](TensorImpl& self) {
        CMapMat in(xi->value.data(), r, c);
        CMapMat dy(self.grad.data(), r, c);
        for (long i = 0; i < r; ++i) {
          Eigen::RowVectorXd xhat =
              ((in.row(i).array() - means[i]) * istds[i]).matrix();
          Eigen::RowVectorXd dxhat =
              dy.row(i).cwiseProduct(gi->value.transpose());
          if (gi->grad_ready)
            gi->grad += dy.row(i).cwiseProduct(xhat).transpose();
          if (bi->grad_ready) bi->grad += dy.row(i).transpose();
          if (xi->grad_ready) {
            double m1 = dxhat.mean();
            double m2 = dxhat.cwiseProduct(xhat).mean();
            MapMat(xi->grad.data(), r, c).row(i) +=
                ((dxhat.array() - m1 - xhat.array() * m2) * istds[i]).matrix();
          }
        }
      });
}

Tensor dropout(const Tensor& x, double p, bool train, Rng& rng) {
  JT_CHECK(p >= 0.0 && p < 1.0, "dropout: p=" << p << " out of [0,1)");
  if (!train || p == 0.0) return x;  // eval mode is the identity map
  const double keep = 1.0 - p;
  Vec mask(x.numel());
  for (long i = 0; i < x.numel(); ++i)
    mask[i] = (rng.uniform() < p) ? 0.0 : 1.0 / keep;  // inverted dropout
  auto xi = x.impl();
  return make_node(x.shape(), x.value().cwiseProduct(mask), {x},
                   [xi, mask](TensorImpl& self) {
                     if (xi->grad_ready)
                       xi->grad += self.grad.cwiseProduct(mask);
                   });
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v, double eps) {
  JT_CHECK(u.numel() == v.numel(), "cosine_similarity: size mismatch "
                                       << u.numel() << " vs " << v.numel());
  const Vec& a = u.value();
  const Vec& b = v.value();
  double na = std::max(a.norm(), eps);
  double nb = std::max(b.norm(), eps);
  double dot = a.dot(b);
  double cosv = dot / (na * nb);
  Vec out(1);
  out[0] = cosv;
  auto ui = u.impl(), vi = v.impl();
  return make_node({1}, std::move(out), {u, v},
                   [ui, vi, na, nb, dot](TensorImpl& self) {
                     double g = self.grad[0];
                     if (ui->grad_ready)
                       ui->grad += g * (vi->value / (na * nb) -
                                        dot / (na * na * na * nb) * ui->value);
                     if (vi->grad_ready)
                       vi->grad += g * (ui->value / (na * nb) -
                                        dot / (na * nb * nb * nb) * vi->value);
                   });
}

Tensor cross_entropy_from_logits(const Tensor& logits, int target) {
  const long n = logits.numel();
  JT_CHECK(logits.ndim() == 1 || logits.dim(0) == 1 || logits.dim(1) == 1,
           "cross_entropy_from_logits: need a vector, got "
               << shape_str(logits.shape()));
  JT_CHECK(target >= 0 && target < n,
           "cross_entropy_from_logits: target " << target << " out of [0," << n << ")");
  const Vec& z = logits.value();
  double m = z.maxCoeff();
  double lse = m + std::log((z.array() - m).exp().sum());
  Vec out(1);
  out[0] = lse - z[target];
  auto li = logits.impl();
  return make_node({1}, std::move(out), {logits},
                   [li, target, lse](TensorImpl& self) {
                     if (!li->grad_ready) return;
                     double g = self.grad[0];
                     li->grad += g * (li->value.array() - lse).exp().matrix();
                     li->grad[target] -= g;
                   });
}

Tensor mask_rows(const Tensor& x, const Tensor& embedding,
                 const std::vector<int>& idx) {
  JT_CHECK(x.ndim() == 2 && embedding.numel() == x.dim(1),
           "mask_rows: x " << shape_str(x.shape()) << " embedding "
                           << shape_str(embedding.shape()));
  const int r = x.dim(0), c = x.dim(1);
  for (int i : idx)
    JT_CHECK(i >= 0 && i < r, "mask_rows: index " << i << " out of [0," << r << ")");
  Vec out = x.value();
  MapMat o(out.data(), r, c);
  for (int i : idx) o.row(i) = embedding.value().transpose();
  auto xi = x.impl(), ei = embedding.impl();
  return make_node({r, c}, std::move(out), {x, embedding},
                   [xi, ei, idx, r, c](TensorImpl& self) {
                     CMapMat g(self.grad.data(), r, c);
                     if (xi->grad_ready) {
                       MapMat gx(xi->grad.data(), r, c);
                       std::vector<char> masked(static_cast<size_t>(r), 0);
                       for (int i : idx) masked[static_cast<size_t>(i)] = 1;
                       for (int i = 0; i < r; ++i)
                         if (!masked[static_cast<size_t>(i)]) gx.row(i) += g.row(i);
                     }
                     if (ei->grad_ready)
                       for (int i : idx) ei->grad += g.row(i).transpose();
                   });
}

Tensor normalize_rows(const Tensor& x, double eps) {
  JT_CHECK(x.ndim() == 2, "normalize_rows: need 2D, got " << shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  Vec out(x.numel());
  MapMat o(out.data(), r, c);
  CMapMat in = x.mat();
  Vec norms(r);
  for (long i = 0; i < r; ++i) {
    norms[i] = std::max(in.row(i).norm(), eps);
    o.row(i) = in.row(i) / norms[i];
  }
  auto xi = x.impl();
  return make_node(x.shape(), std::move(out), {x},
                   [xi, r, c, norms](TensorImpl& self) {
                     if (!xi->grad_ready) return;
                     CMapMat y(self.value.data(), r, c);
                     CMapMat dy(self.grad.data(), r, c);
                     MapMat dx(xi->grad.data(), r, c);
                     for (long i = 0; i < r; ++i) {
                       double dot = y.row(i).dot(dy.row(i));
                       dx.row(i) += (dy.row(i) - dot * y.row(i)) / norms[i];
                     }
                   });
}

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int groups, ConvPad pad) {
  JT_CHECK(input.ndim() == 2 && weight.ndim() == 3,
           "conv1d: input " << shape_str(input.shape()) << " weight "
                            << shape_str(weight.shape()));
  JT_CHECK(stride >= 1 && groups >= 1, "conv1d: stride/groups must be positive");
  const int c_in = input.dim(0);
  const int t_in = input.dim(1);
  const int c_out = weight.dim(0);
  const int c_in_g = weight.dim(1);
  const int k = weight.dim(2);
  JT_CHECK(c_in % groups == 0 && c_out % groups == 0,
           "conv1d: channels " << c_in << "/" << c_out
                               << " not divisible by groups " << groups);
  JT_CHECK(c_in_g == c_in / groups,
           "conv1d: weight expects " << c_in_g << " in-channels per group, input has "
                                     << c_in / groups);
  if (bias.defined())
    JT_CHECK(bias.numel() == c_out, "conv1d: bias size " << bias.numel()
                                                         << " vs C_out " << c_out);

  int pad_l = 0, trim = 0;
  if (pad == ConvPad::Symmetric) {
    pad_l = k / 2;
    trim = (k % 2 == 0) ? 1 : 0;  // even kernel overshoots by one frame
  }
  const int t_padded = t_in + 2 * pad_l;
  JT_CHECK(t_padded >= k,
           "conv1d: input length " << t_in << " shorter than kernel " << k);
  const int t_out = (t_padded - k) / stride + 1 - trim;
  JT_CHECK(t_out >= 1, "conv1d: empty output");

  CMapMat in = input.mat();
  const double* w = weight.value().data();
  Vec out = Vec::Zero(static_cast<long>(c_out) * t_out);
  MapMat o(out.data(), c_out, t_out);
  const int cout_g = c_out / groups;
  for (int co = 0; co < c_out; ++co) {
    const int g = co / cout_g;
    for (int t = 0; t < t_out; ++t) {
      double acc = bias.defined() ? bias.value()[co] : 0.0;
      const int t0 = t * stride - pad_l;
      for (int ci = 0; ci < c_in_g; ++ci) {
        const double* wrow = w + (static_cast<long>(co) * c_in_g + ci) * k;
        const int in_ch = g * c_in_g + ci;
        for (int kk = 0; kk < k; ++kk) {
          const int ti = t0 + kk;
          if (ti >= 0 && ti < t_in) acc += wrow[kk] * in(in_ch, ti);
        }
      }
      o(co, t) = acc;
    }
  }

  auto ii = input.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> parents = {input, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_node(
      {c_out, t_out}, std::move(out), parents,
      [ii, wi, bi, c_in, t_in, c_out, c_in_g, k, stride, pad_l, t_out,
       cout_g](TensorImpl& self) {
        CMapMat g(self.grad.data(), c_out, t_out);
        CMapMat in(ii->value.data(), c_in, t_in);
        const double* w = wi->value.data();
        for (int co = 0; co < c_out; ++co) {
          const int grp = co / cout_g;
          for (int t = 0; t < t_out; ++t) {
            const double gv = g(co, t);
            if (gv == 0.0) continue;
            const int t0 = t * stride - pad_l;
            if (bi && bi->grad_ready) bi->grad[co] += gv;
            for (int ci = 0; ci < c_in_g; ++ci) {
              const long widx = (static_cast<long>(co) * c_in_g + ci) * k;
              const int in_ch = grp * c_in_g + ci;
              for (int kk = 0; kk < k; ++kk) {
                const int ti = t0 + kk;
                if (ti < 0 || ti >= t_in) continue;
                if (wi->grad_ready) wi->grad[widx + kk] += gv * in(in_ch, ti);
                if (ii->grad_ready)
                  MapMat(ii->grad.data(), c_in, t_in)(in_ch, ti) +=
                      gv * w[widx + kk];
              }
            }
          }
        }
      });
}

}  // namespace jt
