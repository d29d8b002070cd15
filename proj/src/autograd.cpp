#include "srttt/autograd.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace srttt {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::vector<std::shared_ptr<Node>> g_tape;

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

void check_shape_valid(const std::vector<int>& shape) {
  for (int d : shape) {
    if (d <= 0) throw std::runtime_error("tensor dims must be positive, got " + shape_str(shape));
  }
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                           " vs " + shape_str(b.shape));
}

#ifndef NDEBUG
void debug_check_finite(const char* op, const Tensor& t) {
  for (double v : *t.data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value in tensor of shape " +
                               shape_str(t.shape));
    }
  }
}
#define SRTTT_CHECK_FINITE(op, t) debug_check_finite(op, t)
#else
#define SRTTT_CHECK_FINITE(op, t) (void)0
#endif

bool track(const Tensor& t) { return g_grad_enabled && t.requires_grad; }

// Attaches a recorded node to out. parent_nodes: nodes of tracked inputs that
// themselves came from ops; leaf inputs contribute no edge (their grad buffers
// are captured directly by the backprop closure).
void record(Tensor& out, std::initializer_list<const Tensor*> inputs,
            std::function<void()> backprop) {
  auto node = std::make_shared<Node>();
  for (const Tensor* in : inputs) {
    if (in->node) node->parents.push_back(in->node);
  }
  node->out_grad = out.grad;
  node->backprop = std::move(backprop);
  out.node = node;
  g_tape.push_back(std::move(node));
}

// Accumulation helper: grad may be absent when the input does not require it.
inline std::shared_ptr<std::vector<double>> grad_of(const Tensor& t) {
  return t.requires_grad ? t.grad : nullptr;
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  check_shape_valid(shape);
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(shape_numel(t.shape), 0.0);
  t.requires_grad = requires_grad;
  if (requires_grad) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data->begin(), t.data->end(), v);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return full({1}, v, requires_grad);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  check_shape_valid(shape);
  if (shape_numel(shape) != values.size()) {
    throw std::runtime_error("from: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
  }
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad = requires_grad;
  if (requires_grad) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
  return t;
}

double Tensor::value() const {
  if (!is_scalar()) throw std::runtime_error("value(): tensor is not scalar, shape " + shape_str(shape));
  return (*data)[0];
}

Tensor Tensor::detached_copy() const {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(*data);
  return t;
}

void Tensor::fill_(double v) { std::fill(data->begin(), data->end(), v); }

void Tensor::zero_grad_() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

// ---- grad mode & tape --------------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

void tape_clear() {
  for (auto& n : g_tape) {
    n->parents.clear();
    n->backprop = nullptr;
  }
  g_tape.clear();
}

size_t tape_size() { return g_tape.size(); }

void tape_record(std::shared_ptr<Node> node) { g_tape.push_back(std::move(node)); }

// ---- primitives ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
    shape_error("matmul", a, b);
  }
  SRTTT_CHECK_FINITE("matmul", a);
  SRTTT_CHECK_FINITE("matmul", b);
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n}, track(a) || track(b));
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  double* po = out.data->data();
  for (int i = 0; i < m; ++i) {
    for (int t = 0; t < k; ++t) {
      const double av = pa[i * k + t];
      const double* bro = pb + t * n;
      double* oro = po + i * n;
      for (int j = 0; j < n; ++j) oro[j] += av * bro[j];
    }
  }
  if (out.requires_grad) {
    auto ad = a.data, bd = b.data, og = out.grad;
    auto ag = grad_of(a), bg = grad_of(b);
    record(out, {&a, &b}, [ad, bd, ag, bg, og, m, k, n]() {
      const double* g = og->data();
      if (ag) {
        double* da = ag->data();
        const double* pb2 = bd->data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            if (gv == 0.0) continue;
            const double* bro = pb2 + j;
            for (int t = 0; t < k; ++t) da[i * k + t] += gv * bro[t * n];
          }
      }
      if (bg) {
        double* db = bg->data();
        const double* pa2 = ad->data();
        for (int t = 0; t < k; ++t)
          for (int i = 0; i < m; ++i) {
            const double av = pa2[i * k + t];
            if (av == 0.0) continue;
            const double* gro = g + i * n;
            double* dro = db + t * n;
            for (int j = 0; j < n; ++j) dro[j] += av * gro[j];
          }
      }
    });
  }
  return out;
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  if (w.shape.size() != 2 || x.shape.size() != 1 || w.shape[1] != x.shape[0]) {
    shape_error("matvec", w, x);
  }
  SRTTT_CHECK_FINITE("matvec", w);
  SRTTT_CHECK_FINITE("matvec", x);
  const int m = w.shape[0], n = w.shape[1];
  Tensor out = Tensor::zeros({m}, track(w) || track(x));
  const double* pw = w.data->data();
  const double* px = x.data->data();
  double* po = out.data->data();
  for (int i = 0; i < m; ++i) {
    const double* row = pw + i * n;
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += row[j] * px[j];
    po[i] = acc;
  }
  if (out.requires_grad) {
    auto wd = w.data, xd = x.data, og = out.grad;
    auto wg = grad_of(w), xg = grad_of(x);
    record(out, {&w, &x}, [wd, xd, wg, xg, og, m, n]() {
      const double* g = og->data();
      if (wg) {
        double* dw = wg->data();
        const double* px2 = xd->data();
        for (int i = 0; i < m; ++i) {
          const double gv = g[i];
          if (gv == 0.0) continue;
          double* dro = dw + i * n;
          for (int j = 0; j < n; ++j) dro[j] += gv * px2[j];
        }
      }
      if (xg) {
        double* dx = xg->data();
        const double* pw2 = wd->data();
        for (int i = 0; i < m; ++i) {
          const double gv = g[i];
          if (gv == 0.0) continue;
          const double* row = pw2 + i * n;
          for (int j = 0; j < n; ++j) dx[j] += gv * row[j];
        }
      }
    });
  }
  return out;
}

Tensor vecmat(const Tensor& x, const Tensor& w) {
  if (x.shape.size() != 1 || w.shape.size() != 2 || x.shape[0] != w.shape[0]) {
    shape_error("vecmat", x, w);
  }
  SRTTT_CHECK_FINITE("vecmat", x);
  SRTTT_CHECK_FINITE("vecmat", w);
  const int m = w.shape[0], n = w.shape[1];
  Tensor out = Tensor::zeros({n}, track(x) || track(w));
  const double* px = x.data->data();
  const double* pw = w.data->data();
  double* po = out.data->data();
  for (int i = 0; i < m; ++i) {
    const double xv = px[i];
    if (xv == 0.0) continue;
    const double* row = pw + i * n;
    for (int j = 0; j < n; ++j) po[j] += xv * row[j];
  }
  if (out.requires_grad) {
    auto xd = x.data, wd = w.data, og = out.grad;
    auto xg = grad_of(x), wg = grad_of(w);
    record(out, {&x, &w}, [xd, wd, xg, wg, og, m, n]() {
      const double* g = og->data();
      if (xg) {
        double* dx = xg->data();
        const double* pw2 = wd->data();
        for (int i = 0; i < m; ++i) {
          const double* row = pw2 + i * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += g[j] * row[j];
          dx[i] += acc;
        }
      }
      if (wg) {
        double* dw = wg->data();
        const double* px2 = xd->data();
        for (int i = 0; i < m; ++i) {
          const double xv = px2[i];
          if (xv == 0.0) continue;
          double* dro = dw + i * n;
          for (int j = 0; j < n; ++j) dro[j] += xv * g[j];
        }
      }
    });
  }
  return out;
}

Tensor outer(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 1 || b.shape.size() != 1) shape_error("outer", a, b);
  SRTTT_CHECK_FINITE("outer", a);
  SRTTT_CHECK_FINITE("outer", b);
  const int m = a.shape[0], n = b.shape[0];
  Tensor out = Tensor::zeros({m, n}, track(a) || track(b));
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  double* po = out.data->data();
  for (int i = 0; i < m; ++i) {
    const double av = pa[i];
    double* row = po + i * n;
    for (int j = 0; j < n; ++j) row[j] = av * pb[j];
  }
  if (out.requires_grad) {
    auto ad = a.data, bd = b.data, og = out.grad;
    auto ag = grad_of(a), bg = grad_of(b);
    record(out, {&a, &b}, [ad, bd, ag, bg, og, m, n]() {
      const double* g = og->data();
      if (ag) {
        double* da = ag->data();
        const double* pb2 = bd->data();
        for (int i = 0; i < m; ++i) {
          const double* gro = g + i * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += gro[j] * pb2[j];
          da[i] += acc;
        }
      }
      if (bg) {
        double* db = bg->data();
        const double* pa2 = ad->data();
        for (int i = 0; i < m; ++i) {
          const double av = pa2[i];
          if (av == 0.0) continue;
          const double* gro = g + i * n;
          for (int j = 0; j < n; ++j) db[j] += av * gro[j];
        }
      }
    });
  }
  return out;
}

namespace {

Tensor binary_pointwise(const char* name, const Tensor& a, const Tensor& b,
                        double (*fwd)(double, double),
                        void (*bwd)(double, double, double, double*, double*)) {
  if (a.shape != b.shape) shape_error(name, a, b);
  SRTTT_CHECK_FINITE(name, a);
  SRTTT_CHECK_FINITE(name, b);
  Tensor out = Tensor::zeros(a.shape, track(a) || track(b));
  const size_t n = out.numel();
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  double* po = out.data->data();
  for (size_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  if (out.requires_grad) {
    auto ad = a.data, bd = b.data, og = out.grad;
    auto ag = grad_of(a), bg = grad_of(b);
    record(out, {&a, &b}, [ad, bd, ag, bg, og, n, bwd]() {
      const double* g = og->data();
      const double* pa2 = ad->data();
      const double* pb2 = bd->data();
      double* da = ag ? ag->data() : nullptr;
      double* db = bg ? bg->data() : nullptr;
      for (size_t i = 0; i < n; ++i) {
        bwd(g[i], pa2[i], pb2[i], da ? da + i : nullptr, db ? db + i : nullptr);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_pointwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double* da, double* db) {
        if (da) *da += g;
        if (db) *db += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_pointwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double* da, double* db) {
        if (da) *da += g;
        if (db) *db -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_pointwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* da, double* db) {
        if (da) *da += g * y;
        if (db) *db += g * x;
      });
}

Tensor scale(const Tensor& a, double s) {
  SRTTT_CHECK_FINITE("scale", a);
  Tensor out = Tensor::zeros(a.shape, track(a));
  const size_t n = out.numel();
  const double* pa = a.data->data();
  double* po = out.data->data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  if (out.requires_grad) {
    auto og = out.grad;
    auto ag = grad_of(a);
    record(out, {&a}, [ag, og, n, s]() {
      const double* g = og->data();
      double* da = ag->data();
      for (size_t i = 0; i < n; ++i) da[i] += g[i] * s;
    });
  }
  return out;
}

Tensor smul(const Tensor& s, const Tensor& x) {
  if (!s.is_scalar()) {
    throw std::runtime_error("smul: scalar operand has shape " + shape_str(s.shape));
  }
  SRTTT_CHECK_FINITE("smul", s);
  SRTTT_CHECK_FINITE("smul", x);
  const double sv = (*s.data)[0];
  Tensor out = Tensor::zeros(x.shape, track(s) || track(x));
  const size_t n = out.numel();
  const double* px = x.data->data();
  double* po = out.data->data();
  for (size_t i = 0; i < n; ++i) po[i] = sv * px[i];
  if (out.requires_grad) {
    auto sd = s.data, xd = x.data, og = out.grad;
    auto sg = grad_of(s), xg = grad_of(x);
    record(out, {&s, &x}, [sd, xd, sg, xg, og, n]() {
      const double* g = og->data();
      const double* px2 = xd->data();
      const double sv2 = (*sd)[0];
      if (sg) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += g[i] * px2[i];
        (*sg)[0] += acc;
      }
      if (xg) {
        double* dx = xg->data();
        for (size_t i = 0; i < n; ++i) dx[i] += sv2 * g[i];
      }
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.shape.empty() || x.shape.size() > 2) {
    throw std::runtime_error("softmax: expected 1-D or 2-D input, got " + shape_str(x.shape));
  }
  SRTTT_CHECK_FINITE("softmax", x);
  const int cols = x.shape.back();
  const int rows = static_cast<int>(x.numel()) / cols;
  Tensor out = Tensor::zeros(x.shape, track(x));
  const double* px = x.data->data();
  double* po = out.data->data();
  for (int r = 0; r < rows; ++r) {
    const double* xr = px + r * cols;
    double* orow = po + r * cols;
    double mx = xr[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      sum += orow[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < cols; ++j) orow[j] *= inv;
  }
  if (out.requires_grad) {
    auto od = out.data, og = out.grad;
    auto xg = grad_of(x);
    record(out, {&x}, [od, xg, og, rows, cols]() {
      const double* g = og->data();
      const double* y = od->data();
      double* dx = xg->data();
      for (int r = 0; r < rows; ++r) {
        const double* yr = y + r * cols;
        const double* gr = g + r * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += gr[j] * yr[j];
        double* dr = dx + r * cols;
        for (int j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.shape.size() != 1) {
    throw std::runtime_error("layer_norm: expected 1-D input, got " + shape_str(x.shape));
  }
  if (gain.shape != x.shape) shape_error("layer_norm gain", x, gain);
  if (bias.shape != x.shape) shape_error("layer_norm bias", x, bias);
  SRTTT_CHECK_FINITE("layer_norm", x);
  const int n = x.shape[0];
  Tensor out = Tensor::zeros(x.shape, track(x) || track(gain) || track(bias));
  const double* px = x.data->data();
  const double* pg = gain.data->data();
  const double* pb = bias.data->data();
  double mu = 0.0;
  for (int i = 0; i < n; ++i) mu += px[i];
  mu /= n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = px[i] - mu;
    var += d * d;
  }
  var /= n;
  const double inv_std = 1.0 / std::sqrt(var + eps);
  // keep normalized values for backward
  auto xhat = std::make_shared<std::vector<double>>(n);
  double* po = out.data->data();
  for (int i = 0; i < n; ++i) {
    (*xhat)[i] = (px[i] - mu) * inv_std;
    po[i] = pg[i] * (*xhat)[i] + pb[i];
  }
  if (out.requires_grad) {
    auto gd = gain.data, og = out.grad;
    auto xg = grad_of(x), gg = grad_of(gain), bg = grad_of(bias);
    record(out, {&x, &gain, &bias}, [gd, xhat, xg, gg, bg, og, n, inv_std]() {
      const double* g = og->data();
      const double* xh = xhat->data();
      if (gg) {
        double* dgn = gg->data();
        for (int i = 0; i < n; ++i) dgn[i] += g[i] * xh[i];
      }
      if (bg) {
        double* dbs = bg->data();
        for (int i = 0; i < n; ++i) dbs[i] += g[i];
      }
      if (xg) {
        const double* pg2 = gd->data();
        double sum_dh = 0.0, sum_dh_xh = 0.0;
        for (int i = 0; i < n; ++i) {
          const double dh = g[i] * pg2[i];
          sum_dh += dh;
          sum_dh_xh += dh * xh[i];
        }
        const double m1 = sum_dh / n, m2 = sum_dh_xh / n;
        double* dx = xg->data();
        for (int i = 0; i < n; ++i) {
          const double dh = g[i] * pg2[i];
          dx[i] += inv_std * (dh - m1 - xh[i] * m2);
        }
      }
    });
  }
  return out;
}

Tensor embedding_row(const Tensor& table, int id) {
  if (table.shape.size() != 2) {
    throw std::runtime_error("embedding: table must be 2-D, got " + shape_str(table.shape));
  }
  if (id < 0 || id >= table.shape[0]) {
    throw std::runtime_error("embedding: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(table.shape[0]) + ")");
  }
  const int d = table.shape[1];
  Tensor out = Tensor::zeros({d}, track(table));
  std::memcpy(out.data->data(), table.data->data() + static_cast<size_t>(id) * d,
              sizeof(double) * d);
  if (out.requires_grad) {
    auto tg = grad_of(table);
    auto og = out.grad;
    record(out, {&table}, [tg, og, id, d]() {
      const double* g = og->data();
      double* dt = tg->data() + static_cast<size_t>(id) * d;
      for (int i = 0; i < d; ++i) dt[i] += g[i];
    });
  }
  return out;
}

Tensor squared_l2(const Tensor& x) {
  SRTTT_CHECK_FINITE("squared_l2", x);
  const size_t n = x.numel();
  const double* px = x.data->data();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += px[i] * px[i];
  Tensor out = Tensor::from({1}, {acc}, track(x));
  if (out.requires_grad) {
    auto xd = x.data, og = out.grad;
    auto xg = grad_of(x);
    record(out, {&x}, [xd, xg, og, n]() {
      const double g = (*og)[0];
      const double* px2 = xd->data();
      double* dx = xg->data();
      for (size_t i = 0; i < n; ++i) dx[i] += 2.0 * g * px2[i];
    });
  }
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, int target) {
  if (logits.shape.size() != 1) {
    throw std::runtime_error("cross_entropy: logits must be 1-D, got " + shape_str(logits.shape));
  }
  if (target < 0 || target >= logits.shape[0]) {
    throw std::runtime_error("cross_entropy: target " + std::to_string(target) +
                             " out of range [0," + std::to_string(logits.shape[0]) + ")");
  }
  SRTTT_CHECK_FINITE("cross_entropy", logits);
  const int v = logits.shape[0];
  const double* pz = logits.data->data();
  double mx = pz[0];
  for (int i = 1; i < v; ++i) mx = std::max(mx, pz[i]);
  double sum = 0.0;
  for (int i = 0; i < v; ++i) sum += std::exp(pz[i] - mx);
  const double loss = std::log(sum) + mx - pz[target];
  Tensor out = Tensor::from({1}, {loss}, track(logits));
  if (out.requires_grad) {
    auto zd = logits.data, og = out.grad;
    auto zg = grad_of(logits);
    record(out, {&logits}, [zd, zg, og, v, target, mx, sum]() {
      const double g = (*og)[0];
      const double* pz2 = zd->data();
      double* dz = zg->data();
      const double inv = 1.0 / sum;
      for (int i = 0; i < v; ++i) {
        double p = std::exp(pz2[i] - mx) * inv;
        if (i == target) p -= 1.0;
        dz[i] += g * p;
      }
    });
  }
  return out;
}

Tensor mean_stack(std::span<const Tensor> scalars) {
  if (scalars.empty()) throw std::runtime_error("mean_stack: empty input");
  bool rg = false;
  double acc = 0.0;
  for (const Tensor& s : scalars) {
    if (!s.is_scalar()) {
      throw std::runtime_error("mean_stack: non-scalar element of shape " + shape_str(s.shape));
    }
    acc += (*s.data)[0];
    rg = rg || track(s);
  }
  const size_t n = scalars.size();
  Tensor out = Tensor::from({1}, {acc / static_cast<double>(n)}, rg);
  if (out.requires_grad) {
    std::vector<std::shared_ptr<std::vector<double>>> grads;
    grads.reserve(n);
    auto node = std::make_shared<Node>();
    for (const Tensor& s : scalars) {
      grads.push_back(grad_of(s));
      if (s.node) node->parents.push_back(s.node);
    }
    auto og = out.grad;
    node->out_grad = og;
    node->backprop = [grads = std::move(grads), og, n]() {
      const double g = (*og)[0] / static_cast<double>(n);
      for (auto& gr : grads) {
        if (gr) (*gr)[0] += g;
      }
    };
    out.node = node;
    g_tape.push_back(std::move(node));
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::runtime_error("concat: empty input");
  bool rg = false;
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.shape.size() != 1) {
      throw std::runtime_error("concat: expected 1-D parts, got " + shape_str(p.shape));
    }
    total += p.shape[0];
    rg = rg || track(p);
  }
  Tensor out = Tensor::zeros({total}, rg);
  double* po = out.data->data();
  int off = 0;
  for (const Tensor& p : parts) {
    std::memcpy(po + off, p.data->data(), sizeof(double) * p.shape[0]);
    off += p.shape[0];
  }
  if (out.requires_grad) {
    struct Piece {
      std::shared_ptr<std::vector<double>> grad;
      int off, len;
    };
    std::vector<Piece> pieces;
    auto node = std::make_shared<Node>();
    off = 0;
    for (const Tensor& p : parts) {
      pieces.push_back({grad_of(p), off, p.shape[0]});
      off += p.shape[0];
      if (p.node) node->parents.push_back(p.node);
    }
    auto og = out.grad;
    node->out_grad = og;
    node->backprop = [pieces = std::move(pieces), og]() {
      const double* g = og->data();
      for (const auto& pc : pieces) {
        if (!pc.grad) continue;
        double* d = pc.grad->data();
        for (int i = 0; i < pc.len; ++i) d[i] += g[pc.off + i];
      }
    };
    out.node = node;
    g_tape.push_back(std::move(node));
  }
  return out;
}

Tensor slice(const Tensor& x, int start, int len) {
  if (x.shape.size() != 1) {
    throw std::runtime_error("slice: expected 1-D input, got " + shape_str(x.shape));
  }
  if (start < 0 || len <= 0 || start + len > x.shape[0]) {
    throw std::runtime_error("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of " + shape_str(x.shape));
  }
  Tensor out = Tensor::zeros({len}, track(x));
  std::memcpy(out.data->data(), x.data->data() + start, sizeof(double) * len);
  if (out.requires_grad) {
    auto xg = grad_of(x);
    auto og = out.grad;
    record(out, {&x}, [xg, og, start, len]() {
      const double* g = og->data();
      double* dx = xg->data() + start;
      for (int i = 0; i < len; ++i) dx[i] += g[i];
    });
  }
  return out;
}

Tensor rope(const Tensor& x, int position, double base, int rot_dims) {
  if (x.shape.size() != 1) {
    throw std::runtime_error("rope: expected 1-D input, got " + shape_str(x.shape));
  }
  const int d = x.shape[0];
  if (rot_dims < 0) rot_dims = d;
  if (d % 2 != 0 || rot_dims % 2 != 0) {
    throw std::runtime_error("rope: head dim and rotated span must be even, got " +
                             std::to_string(d) + "/" + std::to_string(rot_dims));
  }
  if (rot_dims > d) throw std::runtime_error("rope: rotated span exceeds head dim");
  if (position < 0) throw std::runtime_error("rope: negative position");
  SRTTT_CHECK_FINITE("rope", x);
  Tensor out = Tensor::zeros({d}, track(x));
  const double* px = x.data->data();
  double* po = out.data->data();
  // angles cached per pair; rotation of pair (2i, 2i+1) by pos / base^(2i/rot_dims)
  auto cs = std::make_shared<std::vector<double>>(rot_dims);
  for (int i = 0; i < rot_dims / 2; ++i) {
    const double theta = position * std::pow(base, -2.0 * i / rot_dims);
    const double c = std::cos(theta), s = std::sin(theta);
    (*cs)[2 * i] = c;
    (*cs)[2 * i + 1] = s;
    po[2 * i] = px[2 * i] * c - px[2 * i + 1] * s;
    po[2 * i + 1] = px[2 * i] * s + px[2 * i + 1] * c;
  }
  for (int j = rot_dims; j < d; ++j) po[j] = px[j];
  if (out.requires_grad) {
    auto xg = grad_of(x);
    auto og = out.grad;
    record(out, {&x}, [xg, og, cs, d, rot_dims]() {
      const double* g = og->data();
      double* dx = xg->data();
      for (int i = 0; i < rot_dims / 2; ++i) {
        const double c = (*cs)[2 * i], s = (*cs)[2 * i + 1];
        // transpose of the rotation = rotation by -theta
        dx[2 * i] += g[2 * i] * c + g[2 * i + 1] * s;
        dx[2 * i + 1] += -g[2 * i] * s + g[2 * i + 1] * c;
      }
      for (int j = rot_dims; j < d; ++j) dx[j] += g[j];
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  SRTTT_CHECK_FINITE("gelu", x);
  const size_t n = x.numel();
  Tensor out = Tensor::zeros(x.shape, track(x));
  const double* px = x.data->data();
  double* po = out.data->data();
  for (size_t i = 0; i < n; ++i) {
    po[i] = px[i] * 0.5 * (1.0 + std::erf(px[i] * kInvSqrt2));
  }
  if (out.requires_grad) {
    auto xd = x.data, og = out.grad;
    auto xg = grad_of(x);
    record(out, {&x}, [xd, xg, og, n]() {
      const double* g = og->data();
      const double* px2 = xd->data();
      double* dx = xg->data();
      for (size_t i = 0; i < n; ++i) {
        const double v = px2[i];
        const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        dx[i] += g[i] * (phi + v * pdf);
      }
    });
  }
  return out;
}

Tensor clamp_gate(const Tensor& x, double hi) {
  if (hi <= 0.0) throw std::runtime_error("clamp_gate: upper bound must be positive");
  SRTTT_CHECK_FINITE("clamp_gate", x);
  const size_t n = x.numel();
  Tensor out = Tensor::zeros(x.shape, track(x));
  const double* px = x.data->data();
  double* po = out.data->data();
  for (size_t i = 0; i < n; ++i) po[i] = std::clamp(px[i], 0.0, hi);
  if (out.requires_grad) {
    auto xd = x.data, og = out.grad;
    auto xg = grad_of(x);
    record(out, {&x}, [xd, xg, og, n, hi]() {
      const double* g = og->data();
      const double* px2 = xd->data();
      double* dx = xg->data();
      for (size_t i = 0; i < n; ++i) {
        if (px2[i] > 0.0 && px2[i] < hi) dx[i] += g[i];
      }
    });
  }
  return out;
}

// ---- backward -----------------------------------------------------------------

void backward(Tensor& loss) {
  if (!loss.defined()) throw std::runtime_error("backward: undefined loss");
  if (!loss.is_scalar()) {
    throw std::runtime_error("backward: loss must be scalar, got " + shape_str(loss.shape));
  }
  if (!loss.node) {
    if (loss.requires_grad) {
      // a requires-grad leaf is its own trivial graph
      (*loss.grad)[0] += 1.0;
      return;
    }
    throw std::runtime_error("backward: loss is detached from any graph");
  }

  // iterative postorder DFS, then execute loss->leaves
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node.get(), 0);
  seen.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  // interior grads are pass-local; leaf grads accumulate across calls
  for (Node* n : topo) {
    if (n->out_grad) std::fill(n->out_grad->begin(), n->out_grad->end(), 0.0);
  }
  (*loss.node->out_grad)[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop();
  }
}

// ---- grad_check -----------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn,
                           const Tensor& point, double tol, double step) {
  GradCheckReport report;
  const size_t n = point.numel();

  tape_clear();
  Tensor x = point.detached_copy();
  x.requires_grad = true;
  x.grad = std::make_shared<std::vector<double>>(n, 0.0);
  Tensor y = fn(x);
  if (!y.is_scalar()) {
    tape_clear();
    throw std::runtime_error("grad_check: fn output must be scalar, got " + shape_str(y.shape));
  }
  backward(y);
  std::vector<double> analytic = *x.grad;
  tape_clear();

  Tensor probe = point.detached_copy();
  double max_err = 0.0;
  {
    NoGradGuard ng;
    for (size_t i = 0; i < n; ++i) {
      const double orig = (*probe.data)[i];
      (*probe.data)[i] = orig + step;
      const double fp = fn(probe).value();
      (*probe.data)[i] = orig - step;
      const double fm = fn(probe).value();
      (*probe.data)[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      const double err = std::abs(analytic[i] - numeric) / denom;
      if (err > max_err) {
        max_err = err;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.max_rel_err = max_err;
  report.pass = max_err < tol;
  return report;
}

// ---- serialization ----------------------------------------------------------------

namespace {

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (sizeof(T) > 1) {
    if (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw std::runtime_error("tensor read: truncated stream");
  if constexpr (sizeof(T) > 1) {
    if (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  write_le<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
  for (int d : t.shape) write_le<int64_t>(os, d);
  for (double v : *t.data) write_le<double>(os, v);
}

Tensor read_tensor(std::istream& is) {
  const uint32_t ndim = read_le<uint32_t>(is);
  if (ndim > 4) throw std::runtime_error("tensor read: implausible rank " + std::to_string(ndim));
  std::vector<int> shape(ndim);
  size_t n = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    const int64_t d = read_le<int64_t>(is);
    if (d <= 0 || d > (1 << 30)) throw std::runtime_error("tensor read: bad dim");
    shape[i] = static_cast<int>(d);
    n *= static_cast<size_t>(d);
  }
  std::vector<double> values(n);
  for (size_t i = 0; i < n; ++i) values[i] = read_le<double>(is);
  return Tensor::from(std::move(shape), std::move(values));
}

}  // namespace srttt
