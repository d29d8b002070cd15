#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace srttt {

// Reverse-mode autodiff over dense float64 tensors (1-D / 2-D, row-major).
// The tape is thread_local and rebuilt per forward pass: ops record a Node
// while grad mode is on and any input requires grad; backward() walks the
// graph from a scalar loss and accumulates into leaf grads. tape_clear()
// severs all parent links recorded since the last clear, so deep per-token
// chains never unwind recursively.

struct Node;

struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
  std::shared_ptr<Node> node;                 // set iff produced by a recorded op
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);

  bool defined() const { return static_cast<bool>(data); }
  size_t numel() const { return data ? data->size() : 0; }
  bool is_scalar() const { return shape.empty() || (shape.size() == 1 && shape[0] == 1); }
  int dim(size_t i) const { return shape[i]; }
  double value() const;                       // scalar contents
  double operator[](size_t i) const { return (*data)[i]; }

  Tensor detached_copy() const;               // deep copy, no grad, no node
  void fill_(double v);
  void zero_grad_();
};

struct Node {
  std::vector<std::shared_ptr<Node>> parents;       // recorded input nodes
  std::shared_ptr<std::vector<double>> out_grad;    // aliases the output's grad
  std::function<void()> backprop;                   // reads out_grad, writes input grads
};

// ---- grad mode & tape ------------------------------------------------------

bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
 private:
  bool prev_;
};

void tape_clear();
size_t tape_size();
// Registers a hand-built node (custom fused ops) on the thread-local tape.
void tape_record(std::shared_ptr<Node> node);

// ---- primitives ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);        // [m,k]x[k,n] -> [m,n]
Tensor matvec(const Tensor& w, const Tensor& x);        // [m,n]x[n] -> [m]
Tensor vecmat(const Tensor& x, const Tensor& w);        // [m]x[m,n] -> [n]
Tensor outer(const Tensor& a, const Tensor& b);         // [m],[n] -> [m,n]
Tensor add(const Tensor& a, const Tensor& b);           // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);           // elementwise
Tensor scale(const Tensor& a, double s);
Tensor smul(const Tensor& s, const Tensor& x);          // scalar tensor * tensor
Tensor softmax_lastdim(const Tensor& x);                // rows sum to 1
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);                   // 1-D x over its axis
Tensor embedding_row(const Tensor& table, int id);      // [V,d] -> [d]
Tensor squared_l2(const Tensor& x);                     // sum of squares -> scalar
Tensor cross_entropy_logits(const Tensor& logits, int target);  // -log softmax[t]
Tensor mean_stack(std::span<const Tensor> scalars);     // mean of scalar tensors
Tensor concat(std::span<const Tensor> parts);           // 1-D concat
Tensor slice(const Tensor& x, int start, int len);      // 1-D contiguous slice
// Pairwise rotation of feature pairs (2i,2i+1) by pos / base^(2i/rot_dims)
// over the first rot_dims dims (default: the whole vector); the remainder
// passes through untouched.
Tensor rope(const Tensor& x, int position, double base, int rot_dims = -1);
Tensor gelu(const Tensor& x);                           // exact erf form
Tensor clamp_gate(const Tensor& x, double hi);          // clamp(x, 0, hi)

// ---- backward & verification ------------------------------------------------

// Populates leaf grads with d(loss)/d(leaf). Repeated calls accumulate.
// Throws if loss is non-scalar, or has neither a recorded node nor
// requires_grad (detached from any graph).
void backward(Tensor& loss);

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool pass = false;
};

// Central finite differences vs analytic gradient of a scalar-valued fn at
// point. fn must be smooth at point (kinks such as |x| at 0 are out of
// contract and will report spurious error). Clears the tape.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn,
                           const Tensor& point, double tol, double step = 1e-6);

// ---- serialization -----------------------------------------------------------

// Little-endian binary record: u32 ndim, i64 dims..., f64 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

std::string shape_str(const std::vector<int>& shape);

}  // namespace srttt
