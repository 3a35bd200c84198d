#include "pixforge/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace pixforge::ad {

namespace {

thread_local bool g_grad_enabled = true;

using BackwardFn = std::function<void(Node&)>;

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

bool wants_grad(const Node& n) { return n.requires_grad; }

Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::vector<std::shared_ptr<Node>> parents, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = g_grad_enabled &&
               std::any_of(parents.begin(), parents.end(),
                           [](const auto& p) { return p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_mismatch(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// For every flat index of `out`, the flat index of the broadcast operand.
std::vector<std::size_t> broadcast_index(const Shape& from, const Shape& out) {
  std::size_t n = numel_of(out);
  std::vector<std::size_t> idx(n);
  if (from == out) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  std::size_t rank = out.size();
  std::size_t offset = rank - from.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > offset;) {
    std::size_t d = from[i - offset];
    stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  std::vector<std::size_t> coord(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t j = 0;
    for (std::size_t i = 0; i < rank; ++i) j += coord[i] * stride[i];
    idx[flat] = j;
    for (std::size_t i = rank; i-- > 0;) {
      if (++coord[i] < out[i]) break;
      coord[i] = 0;
    }
  }
  return idx;
}

// value(x, y) and the two partials d/dx, d/dy.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  Shape out = broadcast_shape(op, a.shape(), b.shape());
  auto ia = broadcast_index(a.shape(), out);
  auto ib = broadcast_index(b.shape(), out);
  std::size_t n = ia.size();
  std::vector<double> v(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) v[i] = f(av[ia[i]], bv[ib[i]]);
  return make_result(std::move(out), std::move(v), op, {a.node_ptr(), b.node_ptr()},
                     [ia = std::move(ia), ib = std::move(ib), da, db](Node& self) {
                       Node& pa = parent(self, 0);
                       Node& pb = parent(self, 1);
                       if (wants_grad(pa)) pa.ensure_grad();
                       if (wants_grad(pb)) pb.ensure_grad();
                       for (std::size_t i = 0; i < ia.size(); ++i) {
                         double x = pa.value[ia[i]];
                         double y = pb.value[ib[i]];
                         double g = self.grad[i];
                         if (pa.requires_grad) pa.grad[ia[i]] += g * da(x, y, self.value[i]);
                         if (pb.requires_grad) pb.grad[ib[i]] += g * db(x, y, self.value[i]);
                       }
                     });
}

// f(x) and its derivative given (x, f(x)).
template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D d) {
  auto av = a.data();
  std::vector<double> v(av.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[i]);
  return make_result(a.shape(), std::move(v), op, {a.node_ptr()}, [d](Node& self) {
    Node& p = parent(self, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * d(p.value[i], self.value[i]);
  });
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != values.size())
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(numel_of(shape)) + " values, got " +
                     std::to_string(values.size()));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = numel_of(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return node_->value[0];
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::assign(std::span<const double> values) {
  if (!is_leaf()) throw std::logic_error("assign: only leaf tensors may be mutated");
  if (values.size() != numel())
    throw ShapeError("assign: expected " + std::to_string(numel()) + " values, got " +
                     std::to_string(values.size()));
  std::copy(values.begin(), values.end(), node_->value.begin());
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw std::logic_error("mutable_data: only leaf tensors may be mutated");
  return node_->value;
}

Tensor Tensor::detach(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

// Ties split the gradient evenly, as torch does.
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      "minimum", a, b, [](double x, double y) { return std::min(x, y); },
      [](double x, double y, double) { return x < y ? 1.0 : (x == y ? 0.5 : 0.0); },
      [](double x, double y, double) { return y < x ? 1.0 : (x == y ? 0.5 : 0.0); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      "maximum", a, b, [](double x, double y) { return std::max(x, y); },
      [](double x, double y, double) { return x > y ? 1.0 : (x == y ? 0.5 : 0.0); },
      [](double x, double y, double) { return y > x ? 1.0 : (x == y ? 0.5 : 0.0); });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      "add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor silu(const Tensor& a) {
  return unary(
      "silu", a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lower bound exceeds upper bound");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  auto av = a.data();
  double s = std::accumulate(av.begin(), av.end(), 0.0);
  return make_result({}, {s}, "sum", {a.node_ptr()}, [](Node& self) {
    Node& p = parent(self, 0);
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_last(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("sum_last: scalar input");
  Shape out = a.shape();
  std::size_t inner = out.back();
  out.back() = 1;
  std::size_t rows = a.numel() / std::max<std::size_t>(inner, 1);
  auto av = a.data();
  std::vector<double> v(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < inner; ++c) v[r] += av[r * inner + c];
  return make_result(std::move(out), std::move(v), "sum_last", {a.node_ptr()},
                     [inner](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t r = 0; r < self.grad.size(); ++r)
                         for (std::size_t c = 0; c < inner; ++c) p.grad[r * inner + c] += self.grad[r];
                     });
}

Tensor mean_last(const Tensor& a) {
  if (a.rank() == 0 || a.shape().back() == 0) throw ShapeError("mean_last: empty trailing axis");
  return scale(sum_last(a), 1.0 / static_cast<double>(a.shape().back()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_mismatch("matmul", a.shape(), b.shape());
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> v(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      double x = av[i * k + l];
      if (x == 0.0) continue;
      const double* brow = &bv[l * n];
      double* orow = &v[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  return make_result({m, n}, std::move(v), "matmul", {a.node_ptr(), b.node_ptr()},
                     [m, k, n](Node& self) {
                       Node& pa = parent(self, 0);
                       Node& pb = parent(self, 1);
                       const auto& g = self.grad;
                       if (pa.requires_grad) {
                         pa.ensure_grad();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t l = 0; l < k; ++l) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * pb.value[l * n + j];
                             pa.grad[i * k + l] += s;
                           }
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t l = 0; l < k; ++l) {
                             double x = pa.value[i * k + l];
                             if (x == 0.0) continue;
                             for (std::size_t j = 0; j < n; ++j) pb.grad[l * n + j] += x * g[i * n + j];
                           }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<std::size_t> idx(r * c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < r; ++j) idx[i * r + j] = j * c + i;
  return take(a, std::move(idx), {c, r});
}

Tensor softmax_last(const Tensor& a, const std::vector<bool>& allowed) {
  if (a.rank() == 0) throw ShapeError("softmax_last: scalar input");
  std::size_t inner = a.shape().back();
  if (!allowed.empty() && allowed.size() != inner)
    throw ShapeError("softmax_last: mask of length " + std::to_string(allowed.size()) +
                     " for trailing extent " + std::to_string(inner));
  auto ok = [&](std::size_t c) { return allowed.empty() || allowed[c]; };
  if (inner == 0 || (!allowed.empty() && std::none_of(allowed.begin(), allowed.end(), [](bool b) { return b; })))
    throw ShapeError("softmax_last: no admissible entries");
  std::size_t rows = a.numel() / inner;
  auto av = a.data();
  std::vector<double> v(a.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * inner];
    double* y = &v[r * inner];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < inner; ++c)
      if (ok(c)) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < inner; ++c)
      if (ok(c)) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < inner; ++c) y[c] /= z;
  }
  return make_result(a.shape(), std::move(v), "softmax_last", {a.node_ptr()}, [inner](Node& self) {
    Node& p = parent(self, 0);
    p.ensure_grad();
    std::size_t rows = self.value.size() / inner;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = &self.value[r * inner];
      const double* g = &self.grad[r * inner];
      double dot = 0.0;
      for (std::size_t c = 0; c < inner; ++c) dot += y[c] * g[c];
      for (std::size_t c = 0; c < inner; ++c) p.grad[r * inner + c] += y[c] * (g[c] - dot);
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) shape_mismatch("reshape", a.shape(), shape);
  std::vector<double> v(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(v), "reshape", {a.node_ptr()}, [](Node& self) {
    Node& p = parent(self, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin > end || end > a.shape().back())
    throw ShapeError("slice_last: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside shape " + to_string(a.shape()));
  std::size_t inner = a.shape().back();
  std::size_t width = end - begin;
  std::size_t rows = inner ? a.numel() / inner : 0;
  std::vector<std::size_t> idx;
  idx.reserve(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = begin; c < end; ++c) idx.push_back(r * inner + c);
  Shape out = a.shape();
  out.back() = width;
  return take(a, std::move(idx), std::move(out));
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  if (lead.empty()) throw ShapeError("concat_last: scalar input");
  lead.pop_back();
  std::size_t rows = numel_of(lead);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.empty()) throw ShapeError("concat_last: scalar input");
    std::size_t w = s.back();
    s.pop_back();
    if (s != lead) shape_mismatch("concat_last", parts[0].shape(), p.shape());
    widths.push_back(w);
    total += w;
    nodes.push_back(p.node_ptr());
  }
  std::vector<double> v(rows * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) v[r * total + col + c] = pv[r * widths[k] + c];
    col += widths[k];
  }
  Shape out = lead;
  out.push_back(total);
  return make_result(std::move(out), std::move(v), "concat_last", std::move(nodes),
                     [widths, rows, total](Node& self) {
                       std::size_t col = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         Node& p = parent(self, k);
                         if (p.requires_grad) {
                           p.ensure_grad();
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < widths[k]; ++c)
                               p.grad[r * widths[k] + c] += self.grad[r * total + col + c];
                         }
                         col += widths[k];
                       }
                     });
}

Tensor take(const Tensor& a, std::vector<std::size_t> index, Shape shape) {
  if (numel_of(shape) != index.size())
    throw ShapeError("take: " + std::to_string(index.size()) + " indices for shape " + to_string(shape));
  auto av = a.data();
  std::vector<double> v(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= av.size())
      throw ShapeError("take: index " + std::to_string(index[i]) + " outside shape " + to_string(a.shape()));
    v[i] = av[index[i]];
  }
  return make_result(std::move(shape), std::move(v), "take", {a.node_ptr()},
                     [index = std::move(index)](Node& self) {
                       Node& p = parent(self, 0);
                       p.ensure_grad();
                       for (std::size_t i = 0; i < index.size(); ++i) p.grad[index[i]] += self.grad[i];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_rank("gather_rows", table, 2);
  std::size_t width = table.dim(1);
  std::vector<std::size_t> idx;
  idx.reserve(rows.size() * width);
  for (std::size_t r : rows) {
    if (r >= table.dim(0))
      throw ShapeError("gather_rows: row " + std::to_string(r) + " outside table " + to_string(table.shape()));
    for (std::size_t c = 0; c < width; ++c) idx.push_back(r * width + c);
  }
  return take(table, std::move(idx), {rows.size(), width});
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) shape_mismatch("cosine_similarity", a.shape(), b.shape());
  Tensor fa = reshape(a, {a.numel()});
  Tensor fb = reshape(b, {b.numel()});
  Tensor dot = sum(mul(fa, fb));
  Tensor norms = mul(sqrt(sum(square(fa))), sqrt(sum(square(fb))));
  return div(dot, norms);
}

Tensor reparameterize(const Tensor& mean, double stddev, const Tensor& noise) {
  if (mean.shape() != noise.shape()) shape_mismatch("reparameterize", mean.shape(), noise.shape());
  return add(mean, scale(noise, stddev));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->parents.empty()) n->grad.assign(n->value.size(), 0.0);
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
  for (Node* n : order) {
    if (n->parents.empty()) continue;
    n->backward = nullptr;
    n->parents.clear();
    n->requires_grad = false;
  }
}

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t k = mix64(seed);
  for (std::uint64_t p : path) k = mix64(k ^ mix64(p + 0x632be59bd9b4e019ULL));
  return k;
}

std::uint64_t CounterRng::bits(std::uint64_t counter) const { return mix64(key_ ^ mix64(counter)); }

double CounterRng::uniform(std::uint64_t counter) const {
  return (static_cast<double>(bits(counter) >> 11) + 1.0) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t index) const {
  double u1 = uniform(2 * index);
  double u2 = uniform(2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> CounterRng::normals(std::size_t count) const {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = normal(i);
  return out;
}

std::size_t CounterRng::next_index(std::size_t bound) {
  if (bound == 0) throw std::invalid_argument("next_index: empty range");
  return static_cast<std::size_t>(next_bits() % bound);
}

}  // namespace pixforge::ad
