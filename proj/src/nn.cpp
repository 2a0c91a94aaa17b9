#include "rg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace rg::nn {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

}  // namespace

int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  t.data.assign(shape_numel(shape), 0.0);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::vec(std::vector<double> values) {
  Tensor t;
  t.shape = {static_cast<int>(values.size())};
  t.data = std::move(values);
  return t;
}

int Tensor::numel() const { return shape_numel(shape); }

bool Tensor::finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
  return data[0];
}

Param& ParameterSet::at(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

const Param& ParameterSet::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

Param& ParameterSet::add(const std::string& name, Tensor value) {
  if (params.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  Param p;
  p.grad = Tensor::zeros(value.shape);
  p.m = Tensor::zeros(value.shape);
  p.v = Tensor::zeros(value.shape);
  p.value = std::move(value);
  return params.emplace(name, std::move(p)).first->second;
}

void ParameterSet::zero_grads() {
  for (auto& [name, p] : params) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

std::size_t ParameterSet::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += p.value.data.size();
  return n;
}

void adam_step(ParameterSet& ps, const AdamConfig& cfg) {
  for (const auto& [name, p] : ps.params) {
    if (!p.grad.finite())
      throw std::runtime_error("adam_step: non-finite gradient for parameter " + name);
  }
  for (auto& [name, p] : ps.params) {
    p.steps += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.steps));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.steps));
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      double g = p.grad.data[i];
      p.m.data[i] = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g;
      p.v.data[i] = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = p.m.data[i] / bc1;
      double vhat = p.v.data[i] / bc2;
      p.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  ps.version += 1;
}

int Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node node;
  node.needs_grad = needs_grad;
  if (needs_grad) node.grad = Tensor::zeros(value.shape);
  node.value = std::move(value);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

ValueRef Tape::leaf(Tensor value, bool requires_grad) {
  return {push(std::move(value), requires_grad, nullptr)};
}

const Tensor& Tape::value(ValueRef r) const { return nodes_[r.id].value; }
const Tensor& Tape::grad(ValueRef r) const { return nodes_[r.id].grad; }
bool Tape::requires_grad(ValueRef r) const { return nodes_[r.id].needs_grad; }
Tensor& Tape::grad_mut(ValueRef r) { return nodes_[r.id].grad; }
const Tensor& Tape::value_at(int id) const { return nodes_[id].value; }
Tensor& Tape::grad_at(int id) { return nodes_[id].grad; }
bool Tape::requires_at(int id) const { return nodes_[id].needs_grad; }

ValueRef Tape::custom(Tensor value, bool requires_grad,
                      std::function<void(Tape&, int)> backward) {
  return {push(std::move(value), requires_grad, std::move(backward))};
}

void Tape::backward(ValueRef root) {
  Node& r = nodes_[root.id];
  if (r.value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!r.needs_grad) return;
  r.grad.data[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.back && n.needs_grad) n.back(*this, id);
  }
}

ValueRef Tape::affine(ValueRef W, ValueRef b, ValueRef x) {
  const Tensor& w = nodes_[W.id].value;
  const Tensor& bias = nodes_[b.id].value;
  const Tensor& in = nodes_[x.id].value;
  if (w.shape.size() != 2 || in.shape.size() != 1 || w.shape[1] != in.shape[0] ||
      bias.shape.size() != 1 || bias.shape[0] != w.shape[0])
    throw std::invalid_argument("affine: shape mismatch");
  const int out_dim = w.shape[0], in_dim = w.shape[1];
  Tensor out = Tensor::zeros({out_dim});
  for (int o = 0; o < out_dim; ++o) {
    double acc = bias.data[o];
    const double* wrow = &w.data[o * in_dim];
    for (int i = 0; i < in_dim; ++i) acc += wrow[i] * in.data[i];
    out.data[o] = acc;
  }
  bool req = nodes_[W.id].needs_grad || nodes_[b.id].needs_grad || nodes_[x.id].needs_grad;
  int wi = W.id, bi = b.id, xi = x.id;
  return {push(std::move(out), req, [wi, bi, xi, out_dim, in_dim](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& w = t.nodes_[wi].value;
            const Tensor& in = t.nodes_[xi].value;
            if (t.nodes_[wi].needs_grad) {
              Tensor& gw = t.nodes_[wi].grad;
              for (int o = 0; o < out_dim; ++o) {
                double go = g.data[o];
                double* grow = &gw.data[o * in_dim];
                for (int i = 0; i < in_dim; ++i) grow[i] += go * in.data[i];
              }
            }
            if (t.nodes_[bi].needs_grad) {
              Tensor& gb = t.nodes_[bi].grad;
              for (int o = 0; o < out_dim; ++o) gb.data[o] += g.data[o];
            }
            if (t.nodes_[xi].needs_grad) {
              Tensor& gx = t.nodes_[xi].grad;
              for (int o = 0; o < out_dim; ++o) {
                double go = g.data[o];
                const double* wrow = &w.data[o * in_dim];
                for (int i = 0; i < in_dim; ++i) gx.data[i] += go * wrow[i];
              }
            }
          })};
}

ValueRef Tape::conv2d(ValueRef W, ValueRef b, ValueRef x, int stride) {
  const Tensor& w = nodes_[W.id].value;
  const Tensor& bias = nodes_[b.id].value;
  const Tensor& in = nodes_[x.id].value;
  if (w.shape.size() != 4 || in.shape.size() != 3 || w.shape[1] != in.shape[0])
    throw std::invalid_argument("conv2d: shape mismatch");
  const int oc = w.shape[0], ic = w.shape[1], k = w.shape[2];
  const int h = in.shape[1], wd = in.shape[2];
  if (h < k || wd < k) throw std::invalid_argument("conv2d: input smaller than kernel");
  const int oh = (h - k) / stride + 1, ow = (wd - k) / stride + 1;

  Tensor out = Tensor::zeros({oc, oh, ow});
  for (int o = 0; o < oc; ++o) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        double acc = bias.data[o];
        for (int c = 0; c < ic; ++c) {
          const double* xc = &in.data[c * h * wd];
          const double* wc = &w.data[((o * ic) + c) * k * k];
          for (int u = 0; u < k; ++u) {
            const double* xrow = &xc[(i * stride + u) * wd + j * stride];
            const double* wrow = &wc[u * k];
            for (int v = 0; v < k; ++v) acc += wrow[v] * xrow[v];
          }
        }
        out.data[(o * oh + i) * ow + j] = acc;
      }
    }
  }
  bool req = nodes_[W.id].needs_grad || nodes_[b.id].needs_grad || nodes_[x.id].needs_grad;
  int wi = W.id, bi = b.id, xi = x.id;
  return {push(std::move(out), req, [wi, bi, xi, oc, ic, k, h, wd, oh, ow, stride](Tape& t,
                                                                                   int self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& w = t.nodes_[wi].value;
            const Tensor& in = t.nodes_[xi].value;
            const bool need_w = t.nodes_[wi].needs_grad;
            const bool need_b = t.nodes_[bi].needs_grad;
            const bool need_x = t.nodes_[xi].needs_grad;
            for (int o = 0; o < oc; ++o) {
              for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j) {
                  double go = g.data[(o * oh + i) * ow + j];
                  if (go == 0.0) continue;
                  if (need_b) t.nodes_[bi].grad.data[o] += go;
                  for (int c = 0; c < ic; ++c) {
                    const double* xc = &in.data[c * h * wd];
                    const int wbase = ((o * ic) + c) * k * k;
                    for (int u = 0; u < k; ++u) {
                      const int xrow = (i * stride + u) * wd + j * stride;
                      for (int v = 0; v < k; ++v) {
                        if (need_w) t.nodes_[wi].grad.data[wbase + u * k + v] += go * xc[xrow + v];
                        if (need_x)
                          t.nodes_[xi].grad.data[c * h * wd + xrow + v] +=
                              go * w.data[wbase + u * k + v];
                      }
                    }
                  }
                }
              }
            }
          })};
}

ValueRef Tape::leaky_relu(ValueRef x, double slope) {
  const Tensor& in = nodes_[x.id].value;
  Tensor out = in;
  for (auto& v : out.data) v = v > 0.0 ? v : slope * v;
  int xi = x.id;
  return {push(std::move(out), nodes_[x.id].needs_grad, [xi, slope](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& in = t.nodes_[xi].value;
            Tensor& gx = t.nodes_[xi].grad;
            for (std::size_t i = 0; i < g.data.size(); ++i)
              gx.data[i] += g.data[i] * (in.data[i] > 0.0 ? 1.0 : slope);
          })};
}

ValueRef Tape::tanh_act(ValueRef x) {
  const Tensor& in = nodes_[x.id].value;
  Tensor out = in;
  for (auto& v : out.data) v = std::tanh(v);
  int xi = x.id;
  return {push(std::move(out), nodes_[x.id].needs_grad, [xi](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& y = t.nodes_[self].value;
            Tensor& gx = t.nodes_[xi].grad;
            for (std::size_t i = 0; i < g.data.size(); ++i)
              gx.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
          })};
}

ValueRef Tape::sigmoid_act(ValueRef x) {
  const Tensor& in = nodes_[x.id].value;
  Tensor out = in;
  for (auto& v : out.data) v = stable_sigmoid(v);
  int xi = x.id;
  return {push(std::move(out), nodes_[x.id].needs_grad, [xi](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& y = t.nodes_[self].value;
            Tensor& gx = t.nodes_[xi].grad;
            for (std::size_t i = 0; i < g.data.size(); ++i)
              gx.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
          })};
}

ValueRef Tape::log_sigmoid(ValueRef x) {
  const Tensor& in = nodes_[x.id].value;
  Tensor out = in;
  for (auto& v : out.data) v = -softplus(-v);
  int xi = x.id;
  return {push(std::move(out), nodes_[x.id].needs_grad, [xi](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& in = t.nodes_[xi].value;
            Tensor& gx = t.nodes_[xi].grad;
            for (std::size_t i = 0; i < g.data.size(); ++i)
              gx.data[i] += g.data[i] * stable_sigmoid(-in.data[i]);
          })};
}

ValueRef Tape::neg(ValueRef x) { return scale(x, -1.0); }

ValueRef Tape::add(ValueRef a, ValueRef b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  if (ta.shape != tb.shape) throw std::invalid_argument("add: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  bool req = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  int ai = a.id, bi = b.id;
  return {push(std::move(out), req, [ai, bi](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.nodes_[ai].needs_grad)
              for (std::size_t i = 0; i < g.data.size(); ++i) t.nodes_[ai].grad.data[i] += g.data[i];
            if (t.nodes_[bi].needs_grad)
              for (std::size_t i = 0; i < g.data.size(); ++i) t.nodes_[bi].grad.data[i] += g.data[i];
          })};
}

ValueRef Tape::sub(ValueRef a, ValueRef b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  if (ta.shape != tb.shape) throw std::invalid_argument("sub: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
  bool req = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  int ai = a.id, bi = b.id;
  return {push(std::move(out), req, [ai, bi](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.nodes_[ai].needs_grad)
              for (std::size_t i = 0; i < g.data.size(); ++i) t.nodes_[ai].grad.data[i] += g.data[i];
            if (t.nodes_[bi].needs_grad)
              for (std::size_t i = 0; i < g.data.size(); ++i) t.nodes_[bi].grad.data[i] -= g.data[i];
          })};
}

ValueRef Tape::mul(ValueRef a, ValueRef b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  if (ta.shape != tb.shape) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
  bool req = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  int ai = a.id, bi = b.id;
  return {push(std::move(out), req, [ai, bi](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& va = t.nodes_[ai].value;
            const Tensor& vb = t.nodes_[bi].value;
            if (t.nodes_[ai].needs_grad)
              for (std::size_t i = 0; i < g.data.size(); ++i)
                t.nodes_[ai].grad.data[i] += g.data[i] * vb.data[i];
            if (t.nodes_[bi].needs_grad)
              for (std::size_t i = 0; i < g.data.size(); ++i)
                t.nodes_[bi].grad.data[i] += g.data[i] * va.data[i];
          })};
}

ValueRef Tape::scale(ValueRef x, double c) {
  Tensor out = nodes_[x.id].value;
  for (auto& v : out.data) v *= c;
  int xi = x.id;
  return {push(std::move(out), nodes_[x.id].needs_grad, [xi, c](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            const Tensor& g = t.nodes_[self].grad;
            Tensor& gx = t.nodes_[xi].grad;
            for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += c * g.data[i];
          })};
}

ValueRef Tape::square(ValueRef x) {
  Tensor out = nodes_[x.id].value;
  for (auto& v : out.data) v *= v;
  int xi = x.id;
  return {push(std::move(out), nodes_[x.id].needs_grad, [xi](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& in = t.nodes_[xi].value;
            Tensor& gx = t.nodes_[xi].grad;
            for (std::size_t i = 0; i < g.data.size(); ++i)
              gx.data[i] += 2.0 * in.data[i] * g.data[i];
          })};
}

ValueRef Tape::sum_all(ValueRef x) {
  const Tensor& in = nodes_[x.id].value;
  double acc = 0.0;
  for (double v : in.data) acc += v;
  int xi = x.id;
  return {push(Tensor::scalar(acc), nodes_[x.id].needs_grad, [xi](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            double g = t.nodes_[self].grad.data[0];
            Tensor& gx = t.nodes_[xi].grad;
            for (auto& v : gx.data) v += g;
          })};
}

ValueRef Tape::mean_all(ValueRef x) {
  const Tensor& in = nodes_[x.id].value;
  double acc = 0.0;
  for (double v : in.data) acc += v;
  const double n = static_cast<double>(in.data.size());
  int xi = x.id;
  return {push(Tensor::scalar(acc / n), nodes_[x.id].needs_grad, [xi, n](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            double g = t.nodes_[self].grad.data[0] / n;
            Tensor& gx = t.nodes_[xi].grad;
            for (auto& v : gx.data) v += g;
          })};
}

ValueRef Tape::concat(const std::vector<ValueRef>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  std::vector<double> data;
  std::vector<int> ids;
  std::vector<int> sizes;
  bool req = false;
  for (auto r : parts) {
    const Tensor& t = nodes_[r.id].value;
    if (t.shape.size() != 1) throw std::invalid_argument("concat: inputs must be 1-D");
    data.insert(data.end(), t.data.begin(), t.data.end());
    ids.push_back(r.id);
    sizes.push_back(t.numel());
    req = req || nodes_[r.id].needs_grad;
  }
  return {push(Tensor::vec(std::move(data)), req, [ids, sizes](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            std::size_t off = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
              if (t.nodes_[ids[k]].needs_grad) {
                Tensor& gx = t.nodes_[ids[k]].grad;
                for (int i = 0; i < sizes[k]; ++i) gx.data[i] += g.data[off + i];
              }
              off += sizes[k];
            }
          })};
}

ValueRef Tape::flatten(ValueRef x) {
  const Tensor& in = nodes_[x.id].value;
  Tensor out;
  out.shape = {in.numel()};
  out.data = in.data;
  int xi = x.id;
  return {push(std::move(out), nodes_[x.id].needs_grad, [xi](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            const Tensor& g = t.nodes_[self].grad;
            Tensor& gx = t.nodes_[xi].grad;
            for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
          })};
}

ValueRef Tape::stack_rows(const std::vector<ValueRef>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  const int d = nodes_[rows[0].id].value.numel();
  std::vector<double> data;
  std::vector<int> ids;
  bool req = false;
  for (auto r : rows) {
    const Tensor& t = nodes_[r.id].value;
    if (t.numel() != d) throw std::invalid_argument("stack_rows: ragged rows");
    data.insert(data.end(), t.data.begin(), t.data.end());
    ids.push_back(r.id);
    req = req || nodes_[r.id].needs_grad;
  }
  Tensor out({static_cast<int>(rows.size()), d}, std::move(data));
  return {push(std::move(out), req, [ids, d](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            for (std::size_t k = 0; k < ids.size(); ++k) {
              if (!t.nodes_[ids[k]].needs_grad) continue;
              Tensor& gx = t.nodes_[ids[k]].grad;
              for (int i = 0; i < d; ++i) gx.data[i] += g.data[k * d + i];
            }
          })};
}

ValueRef Tape::mean_rows(ValueRef x) {
  const Tensor& in = nodes_[x.id].value;
  if (in.shape.size() != 2) throw std::invalid_argument("mean_rows: need a 2-D input");
  const int n = in.shape[0], d = in.shape[1];
  Tensor out = Tensor::zeros({d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data[j] += in.data[i * d + j];
  for (auto& v : out.data) v /= n;
  int xi = x.id;
  return {push(std::move(out), nodes_[x.id].needs_grad, [xi, n, d](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            const Tensor& g = t.nodes_[self].grad;
            Tensor& gx = t.nodes_[xi].grad;
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < d; ++j) gx.data[i * d + j] += g.data[j] / n;
          })};
}

ValueRef Tape::sub_row_broadcast(ValueRef x, ValueRef v) {
  const Tensor& in = nodes_[x.id].value;
  const Tensor& row = nodes_[v.id].value;
  if (in.shape.size() != 2 || row.numel() != in.shape[1])
    throw std::invalid_argument("sub_row_broadcast: shape mismatch");
  const int n = in.shape[0], d = in.shape[1];
  Tensor out = in;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data[i * d + j] -= row.data[j];
  bool req = nodes_[x.id].needs_grad || nodes_[v.id].needs_grad;
  int xi = x.id, vi = v.id;
  return {push(std::move(out), req, [xi, vi, n, d](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.nodes_[xi].needs_grad) {
              Tensor& gx = t.nodes_[xi].grad;
              for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
            }
            if (t.nodes_[vi].needs_grad) {
              Tensor& gv = t.nodes_[vi].grad;
              for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) gv.data[j] -= g.data[i * d + j];
            }
          })};
}

ValueRef Tape::rotate_rows(ValueRef x, double theta) {
  const Tensor& in = nodes_[x.id].value;
  if (in.shape.size() != 2 || in.shape[1] != 2)
    throw std::invalid_argument("rotate_rows: need an {n, 2} input");
  const int n = in.shape[0];
  const double c = std::cos(theta), s = std::sin(theta);
  Tensor out = in;
  for (int i = 0; i < n; ++i) {
    double px = in.data[i * 2], py = in.data[i * 2 + 1];
    out.data[i * 2] = c * px - s * py;
    out.data[i * 2 + 1] = s * px + c * py;
  }
  int xi = x.id;
  return {push(std::move(out), nodes_[x.id].needs_grad, [xi, n, c, s](Tape& t, int self) {
            if (!t.nodes_[xi].needs_grad) return;
            const Tensor& g = t.nodes_[self].grad;
            Tensor& gx = t.nodes_[xi].grad;
            for (int i = 0; i < n; ++i) {
              double gx0 = g.data[i * 2], gy0 = g.data[i * 2 + 1];
              gx.data[i * 2] += c * gx0 + s * gy0;       // U^T
              gx.data[i * 2 + 1] += -s * gx0 + c * gy0;
            }
          })};
}

ValueRef Tape::mean_refs(const std::vector<ValueRef>& refs) {
  if (refs.empty()) return leaf(Tensor::scalar(0.0), false);
  ValueRef acc = refs[0];
  for (std::size_t i = 1; i < refs.size(); ++i) acc = add(acc, refs[i]);
  return scale(acc, 1.0 / static_cast<double>(refs.size()));
}

ValueRef Binder::use(ParameterSet& ps, const std::string& name) {
  Param& p = ps.at(name);
  auto it = index_.find(&p);
  if (it != index_.end()) return {it->second};
  ValueRef ref = tape_->leaf(p.value, trainable_);
  index_.emplace(&p, ref.id);
  bound_.emplace_back(&p, ref.id);
  return ref;
}

void Binder::accumulate_grads() {
  if (!trainable_) return;
  for (auto& [param, id] : bound_) {
    const Tensor& g = tape_->grad_at(id);
    for (std::size_t i = 0; i < g.data.size(); ++i) param->grad.data[i] += g.data[i];
  }
}

std::vector<int> NetworkSpec::output_shape() const {
  std::vector<int> shape = input_shape;
  for (const auto& layer : layers) {
    if (std::holds_alternative<DenseLayer>(layer)) {
      const auto& d = std::get<DenseLayer>(layer);
      if (shape.size() != 1 || shape[0] != d.in)
        throw std::invalid_argument("NetworkSpec: dense layer input mismatch");
      shape = {d.out};
    } else if (std::holds_alternative<Conv2dLayer>(layer)) {
      const auto& c = std::get<Conv2dLayer>(layer);
      if (shape.size() != 3 || shape[0] != c.in_ch || shape[1] < c.kernel || shape[2] < c.kernel)
        throw std::invalid_argument("NetworkSpec: conv layer input mismatch");
      shape = {c.out_ch, (shape[1] - c.kernel) / c.stride + 1,
               (shape[2] - c.kernel) / c.stride + 1};
    } else {
      shape = {shape_numel(shape)};
    }
  }
  return shape;
}

NetworkSpec mlp_spec(int in, const std::vector<int>& hidden, int out, Act hidden_act,
                     Act out_act) {
  NetworkSpec spec;
  spec.input_shape = {in};
  int prev = in;
  for (int h : hidden) {
    spec.layers.push_back(DenseLayer{prev, h, hidden_act});
    prev = h;
  }
  spec.layers.push_back(DenseLayer{prev, out, out_act});
  return spec;
}

void init_params(const NetworkSpec& spec, const std::string& prefix, std::mt19937_64& rng,
                 ParameterSet& ps) {
  spec.output_shape();  // validates
  int li = 0;
  for (const auto& layer : spec.layers) {
    std::string base = prefix + ".l" + std::to_string(li++);
    if (std::holds_alternative<DenseLayer>(layer)) {
      const auto& d = std::get<DenseLayer>(layer);
      double s = std::sqrt(1.0 / d.in);
      std::uniform_real_distribution<double> u(-s, s);
      Tensor w = Tensor::zeros({d.out, d.in});
      for (auto& v : w.data) v = u(rng);
      ps.add(base + ".W", std::move(w));
      ps.add(base + ".b", Tensor::zeros({d.out}));
    } else if (std::holds_alternative<Conv2dLayer>(layer)) {
      const auto& c = std::get<Conv2dLayer>(layer);
      double s = std::sqrt(1.0 / (c.in_ch * c.kernel * c.kernel));
      std::uniform_real_distribution<double> u(-s, s);
      Tensor w = Tensor::zeros({c.out_ch, c.in_ch, c.kernel, c.kernel});
      for (auto& v : w.data) v = u(rng);
      ps.add(base + ".W", std::move(w));
      ps.add(base + ".b", Tensor::zeros({c.out_ch}));
    }
  }
}

ValueRef apply_act(Tape& tape, ValueRef x, Act act) {
  switch (act) {
    case Act::None: return x;
    case Act::LeakyRelu: return tape.leaky_relu(x, 0.2);
    case Act::Tanh: return tape.tanh_act(x);
    case Act::Sigmoid: return tape.sigmoid_act(x);
  }
  return x;
}

ValueRef run_network(Tape& tape, Binder& binder, ParameterSet& ps, const std::string& prefix,
                     const NetworkSpec& spec, ValueRef input) {
  if (tape.value(input).shape != spec.input_shape)
    throw std::invalid_argument("run_network: input shape mismatch for " + prefix);
  ValueRef x = input;
  int li = 0;
  for (const auto& layer : spec.layers) {
    std::string base = prefix + ".l" + std::to_string(li++);
    if (std::holds_alternative<DenseLayer>(layer)) {
      const auto& d = std::get<DenseLayer>(layer);
      x = tape.affine(binder.use(ps, base + ".W"), binder.use(ps, base + ".b"), x);
      x = apply_act(tape, x, d.act);
    } else if (std::holds_alternative<Conv2dLayer>(layer)) {
      const auto& c = std::get<Conv2dLayer>(layer);
      x = tape.conv2d(binder.use(ps, base + ".W"), binder.use(ps, base + ".b"), x, c.stride);
      x = apply_act(tape, x, c.act);
    } else {
      x = tape.flatten(x);
    }
  }
  return x;
}

ForwardPass::ForwardPass(const NetworkSpec& spec, ParameterSet& ps, std::string prefix,
                         const Tensor& input)
    : binder_(tape_), ps_(&ps), version_(ps.version) {
  input_ = tape_.leaf(input, true);
  output_ = run_network(tape_, binder_, ps, prefix, spec, input_);
}

const Tensor& ForwardPass::output() const { return tape_.value(output_); }

Tensor ForwardPass::backward(const Tensor& output_grad) {
  if (ps_->version != version_)
    throw std::runtime_error("ForwardPass::backward: parameters updated since forward (stale tape)");
  if (output_grad.shape != tape_.value(output_).shape)
    throw std::invalid_argument("ForwardPass::backward: gradient shape mismatch");
  // Seed through a synthetic scalar so arbitrary output shapes work.
  ValueRef seed = tape_.sum_all(tape_.mul(output_, tape_.constant(output_grad)));
  tape_.backward(seed);
  binder_.accumulate_grads();
  return tape_.grad(input_);
}

nlohmann::json parameter_set_to_json(const ParameterSet& ps) {
  nlohmann::json j;
  j["version"] = ps.version;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, p] : ps.params) {
    params[name] = {{"shape", p.value.shape},
                    {"data", p.value.data},
                    {"m", p.m.data},
                    {"v", p.v.data},
                    {"steps", p.steps}};
  }
  j["params"] = std::move(params);
  return j;
}

ParameterSet parameter_set_from_json(const nlohmann::json& j) {
  ParameterSet ps;
  ps.version = j.at("version").get<std::uint64_t>();
  for (const auto& [name, pj] : j.at("params").items()) {
    Tensor value(pj.at("shape").get<std::vector<int>>(),
                 pj.at("data").get<std::vector<double>>());
    if (value.numel() != static_cast<int>(value.data.size()))
      throw std::runtime_error("parameter_set_from_json: bad tensor for " + name);
    Param& p = ps.add(name, std::move(value));
    p.m.data = pj.at("m").get<std::vector<double>>();
    p.v.data = pj.at("v").get<std::vector<double>>();
    p.steps = pj.at("steps").get<std::int64_t>();
    if (p.m.data.size() != p.value.data.size() || p.v.data.size() != p.value.data.size())
      throw std::runtime_error("parameter_set_from_json: bad optimizer state for " + name);
  }
  return ps;
}

}  // namespace rg::nn
