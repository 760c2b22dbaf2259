#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rmfn/tensor.hpp"

namespace rmfn::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; invalid once the tape dies.
struct Value {
  Tape* tape = nullptr;
  int32_t id = -1;
};

enum class Conv2DMode { kZeroPad, kCircular };

// Records an eagerly evaluated computation and replays it in reverse for
// gradients. One tape per loss evaluation; nodes are immutable once written,
// so identical programs yield bit-identical values and gradients.
class Tape {
 public:
  Value input(Tensor v, bool requires_grad = true);
  Value constant(Tensor v) { return input(std::move(v), false); }

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value div(Value a, Value b);
  Value scale(Value a, double c);
  Value add_scalar(Value a, double c);
  Value matmul(Value a, Value b, bool trans_a = false, bool trans_b = false);
  // x [N,d] times w [m,d] transposed, plus row-broadcast bias [m].
  Value linear(Value x, Value w, Value bias);
  Value sin(Value a);
  Value cos(Value a);
  Value sqrt(Value a);
  Value square(Value a);
  Value sum(Value a);
  Value mean(Value a);
  Value reshape(Value a, std::vector<int64_t> shape);
  Value stop_gradient(Value a);
  Value gather_rows(Value a, std::vector<int64_t> rows);
  Value conv2d(Value image, Value kernel, Conv2DMode mode = Conv2DMode::kZeroPad);

  // Seeds d(root)/d(root) = 1; root must be scalar.
  void backward(Value root);
  // Vector-Jacobian product with an explicit seed of v's shape.
  void backward(Value v, const Tensor& seed);

  const Tensor& value(Value v) const;
  // Accumulated gradient; zeros if the node never received one.
  Tensor grad(Value v) const;
  // True iff the last backward actually reached this node. Distinguishes a
  // genuine zero gradient from a node outside the differentiated graph.
  bool has_grad(Value v) const;
  bool requires_grad(Value v) const;

  // Forward NaN/Inf checking ("non-finite value produced by ...").
  void set_check_finite(bool on) { check_finite_ = on; }

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    bool requires_grad = false;
    const char* op = "input";
    std::function<void(Tape&, const Tensor&)> backprop;  // empty for leaves
  };

  Value emit(Tensor val, bool req, const char* op,
             std::function<void(Tape&, const Tensor&)> backprop);
  Tensor& grad_buffer(int32_t id);
  const Node& node(Value v) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool check_finite_ = true;

  friend struct GradAccess;
};

// Named parameter collection. Frozen leaves never receive optimizer updates
// and are skipped by gradient checks.
struct Param {
  Tensor value;
  bool trainable = true;
};

class ParamSet {
 public:
  void add(const std::string& name, Tensor value, bool trainable = true);
  bool has(const std::string& name) const { return items_.count(name) > 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;

  std::map<std::string, Param>& items() { return items_; }
  const std::map<std::string, Param>& items() const { return items_; }

 private:
  std::map<std::string, Param> items_;  // ordered: deterministic iteration
};

// A differentiable program: binds leaves by name and returns a scalar loss.
using Program = std::function<Value(Tape&, const std::map<std::string, Value>&)>;

struct EvalResult {
  double value = 0.0;
  std::map<std::string, Tensor> grads;  // trainable leaves only
};

// Forward + reverse pass. Errors if the program output is not scalar.
EvalResult evaluate_with_gradients(const Program& f, const ParamSet& params);

// Central differences, default step 1e-5, trainable leaves only.
std::map<std::string, Tensor> finite_difference_gradient(const Program& f,
                                                         const ParamSet& params,
                                                         double step = 1e-5);

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  std::string worst_key;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Relative error |a-b| / max(1e-8, |a|+|b|) per entry; pass iff max <= rel_tol.
GradCheckReport grad_check(const Program& f, const ParamSet& params,
                           double rel_tol = 1e-4, double fd_step = 1e-5);

}  // namespace rmfn::ad
