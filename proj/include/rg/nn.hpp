#ifndef RG_NN_HPP_
#define RG_NN_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace rg::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<int> shape);
  static Tensor vec(std::vector<double> values);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int numel() const;
  bool finite() const;
  double item() const;  // requires numel() == 1
};

int shape_numel(const std::vector<int>& shape);

/// Trainable tensor plus its gradient accumulator and Adam state.
struct Param {
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
  std::int64_t steps = 0;
};

struct ParameterSet {
  std::map<std::string, Param> params;  // ordered: iteration must be deterministic
  std::uint64_t version = 0;            // bumped by every adam_step

  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  Param& add(const std::string& name, Tensor value);
  void zero_grads();
  std::size_t total_size() const;
};

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second-moment update with bias correction over every parameter,
/// consuming Param.grad. Throws on a non-finite gradient, naming the tensor.
void adam_step(ParameterSet& ps, const AdamConfig& cfg);

struct ValueRef {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse id
/// order is a topological order for the backward sweep.
class Tape {
 public:
  ValueRef leaf(Tensor value, bool requires_grad = false);
  ValueRef constant(Tensor value) { return leaf(std::move(value), false); }

  ValueRef affine(ValueRef W, ValueRef b, ValueRef x);
  ValueRef conv2d(ValueRef W, ValueRef b, ValueRef x, int stride);
  ValueRef leaky_relu(ValueRef x, double slope = 0.2);
  ValueRef tanh_act(ValueRef x);
  ValueRef sigmoid_act(ValueRef x);
  ValueRef log_sigmoid(ValueRef x);
  ValueRef neg(ValueRef x);
  ValueRef add(ValueRef a, ValueRef b);
  ValueRef sub(ValueRef a, ValueRef b);
  ValueRef mul(ValueRef a, ValueRef b);
  ValueRef scale(ValueRef x, double c);
  ValueRef square(ValueRef x);
  ValueRef sum_all(ValueRef x);
  ValueRef mean_all(ValueRef x);
  ValueRef concat(const std::vector<ValueRef>& parts);
  ValueRef flatten(ValueRef x);
  ValueRef stack_rows(const std::vector<ValueRef>& rows);  // n x {d} -> {n, d}
  ValueRef mean_rows(ValueRef x);                          // {n, d} -> {d}
  ValueRef sub_row_broadcast(ValueRef x, ValueRef v);      // {n, d} - {d}
  ValueRef rotate_rows(ValueRef x, double theta);          // {n, 2}

  /// Mean of scalar refs, in vector order.
  ValueRef mean_refs(const std::vector<ValueRef>& refs);

  /// Escape hatch for fused ops: the backward callback receives the tape and
  /// the new node id and must accumulate into the inputs' grads itself.
  ValueRef custom(Tensor value, bool requires_grad,
                  std::function<void(Tape&, int)> backward);

  void backward(ValueRef root);  // root must be scalar; seeds d(root) = 1

  const Tensor& value(ValueRef r) const;
  const Tensor& grad(ValueRef r) const;
  bool requires_grad(ValueRef r) const;
  Tensor& grad_mut(ValueRef r);
  const Tensor& value_at(int id) const;
  Tensor& grad_at(int id);
  bool requires_at(int id) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&, int)> back;
  };
  int push(Tensor value, bool needs_grad, std::function<void(Tape&, int)> back);
  std::vector<Node> nodes_;
};

/// Binds Param tensors to tape leaves, one leaf per Param per tape, and
/// harvests their gradients back after a backward sweep. A non-trainable
/// binder creates constant leaves (frozen parameters).
class Binder {
 public:
  explicit Binder(Tape& tape, bool trainable = true) : tape_(&tape), trainable_(trainable) {}
  ValueRef use(ParameterSet& ps, const std::string& name);
  void accumulate_grads();

 private:
  Tape* tape_;
  bool trainable_;
  std::vector<std::pair<Param*, int>> bound_;
  std::map<Param*, int> index_;
};

enum class Act { None, LeakyRelu, Tanh, Sigmoid };

struct DenseLayer {
  int in = 0;
  int out = 0;
  Act act = Act::None;
};

struct Conv2dLayer {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;
  int stride = 2;
  Act act = Act::None;
};

struct FlattenLayer {};

using Layer = std::variant<DenseLayer, Conv2dLayer, FlattenLayer>;

/// Sequential stack description. Shapes are validated against the input
/// when the network is instantiated or run.
struct NetworkSpec {
  std::vector<Layer> layers;
  std::vector<int> input_shape;

  std::vector<int> output_shape() const;  // throws on incompatible layers
};

NetworkSpec mlp_spec(int in, const std::vector<int>& hidden, int out, Act hidden_act,
                     Act out_act);

/// Parameter names are "<prefix>.l<i>.W" / ".b". Weights U(-s, s) with
/// s = sqrt(1 / fan_in), biases zero.
void init_params(const NetworkSpec& spec, const std::string& prefix, std::mt19937_64& rng,
                 ParameterSet& ps);

ValueRef run_network(Tape& tape, Binder& binder, ParameterSet& ps, const std::string& prefix,
                     const NetworkSpec& spec, ValueRef input);

ValueRef apply_act(Tape& tape, ValueRef x, Act act);

/// One forward evaluation with enough state for an exact backward sweep.
/// backward() accumulates parameter gradients into the ParameterSet and
/// returns the input gradient; it throws if the parameters were updated
/// after the forward (stale tape).
class ForwardPass {
 public:
  ForwardPass(const NetworkSpec& spec, ParameterSet& ps, std::string prefix,
              const Tensor& input);
  const Tensor& output() const;
  Tensor backward(const Tensor& output_grad);

 private:
  Tape tape_;
  Binder binder_;
  ValueRef input_;
  ValueRef output_;
  ParameterSet* ps_;
  std::uint64_t version_;
};

nlohmann::json parameter_set_to_json(const ParameterSet& ps);
ParameterSet parameter_set_from_json(const nlohmann::json& j);

}  // namespace rg::nn

#endif  // RG_NN_HPP_
