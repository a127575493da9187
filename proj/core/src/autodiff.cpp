#include "evowarn/autodiff.hpp"

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <stdexcept>

namespace evowarn {

namespace {

using EigenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenMatrix>;
using ConstMatMap = Eigen::Map<const EigenMatrix>;

ConstMatMap as_matrix(const Tensor& t, int rows, int cols) {
  return ConstMatMap(t.data(), rows, cols);
}
MatMap as_matrix(Tensor& t, int rows, int cols) { return MatMap(t.data(), rows, cols); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Tape::Node& Tape::at(Var v) {
  require(v.id >= 0 && v.id < node_count(), "invalid tape variable");
  return nodes_[v.id];
}
const Tape::Node& Tape::at(Var v) const {
  require(v.id >= 0 && v.id < node_count(), "invalid tape variable");
  return nodes_[v.id];
}

Var Tape::push(Tensor value, std::vector<int> parents, BackwardFn fn, bool leaf) {
  assert(value.all_finite());
  Node node;
  node.value = std::move(value);
  node.parents = std::move(parents);
  node.backward = std::move(fn);
  node.is_leaf = leaf;
  nodes_.push_back(std::move(node));
  return Var{node_count() - 1};
}

Var Tape::leaf(Tensor value) { return push(std::move(value), {}, nullptr, true); }

const Tensor& Tape::value(Var v) const { return at(v).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = at(v);
  if (!n.is_leaf && n.value.empty() && n.grad.empty())
    throw std::logic_error("gradient storage of interior nodes is released after backward");
  if (n.grad.empty()) return Tensor::zeros_like(n.value);
  return n.grad;
}

Var Tape::add(Var a, Var b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  require(va.same_shape(vb), "add: shape mismatch");
  Tensor out = va;
  for (long i = 0; i < out.size(); ++i) out[i] += vb[i];
  return push(std::move(out), {a.id, b.id}, [](const BackwardContext& ctx) {
    for (long i = 0; i < ctx.grad.size(); ++i) {
      (*ctx.parent_grads[0])[i] += ctx.grad[i];
      (*ctx.parent_grads[1])[i] += ctx.grad[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  require(va.same_shape(vb), "mul: shape mismatch");
  Tensor out = va;
  for (long i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return push(std::move(out), {a.id, b.id}, [](const BackwardContext& ctx) {
    const Tensor& va = *ctx.parent_values[0];
    const Tensor& vb = *ctx.parent_values[1];
    for (long i = 0; i < ctx.grad.size(); ++i) {
      (*ctx.parent_grads[0])[i] += ctx.grad[i] * vb[i];
      (*ctx.parent_grads[1])[i] += ctx.grad[i] * va[i];
    }
  });
}

Var Tape::sigmoid(Var a) {
  Tensor out = at(a).value;
  for (long i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(out[i]);
  return push(std::move(out), {a.id}, [](const BackwardContext& ctx) {
    for (long i = 0; i < ctx.grad.size(); ++i) {
      double s = ctx.value[i];
      (*ctx.parent_grads[0])[i] += ctx.grad[i] * s * (1.0 - s);
    }
  });
}

Var Tape::tanh(Var a) {
  Tensor out = at(a).value;
  for (long i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return push(std::move(out), {a.id}, [](const BackwardContext& ctx) {
    for (long i = 0; i < ctx.grad.size(); ++i) {
      double y = ctx.value[i];
      (*ctx.parent_grads[0])[i] += ctx.grad[i] * (1.0 - y * y);
    }
  });
}

Var Tape::softmax(Var a, int axis) {
  const Tensor& va = at(a).value;
  int rank = va.rank();
  require(rank >= 1, "softmax: rank must be >= 1");
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "softmax: axis out of range");

  // View the tensor as (outer, n, inner) around the softmax axis.
  long n = va.dim(axis);
  long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= va.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= va.dim(i);

  Tensor out = va;
  for (long o = 0; o < outer; ++o) {
    for (long in = 0; in < inner; ++in) {
      double* base = out.data() + o * n * inner + in;
      double mx = base[0];
      for (long i = 1; i < n; ++i) mx = std::max(mx, base[i * inner]);
      double sum = 0.0;
      for (long i = 0; i < n; ++i) {
        double e = std::exp(base[i * inner] - mx);
        base[i * inner] = e;
        sum += e;
      }
      for (long i = 0; i < n; ++i) base[i * inner] /= sum;
    }
  }
  return push(std::move(out), {a.id},
              [n, outer, inner](const BackwardContext& ctx) {
                Tensor& gx = *ctx.parent_grads[0];
                for (long o = 0; o < outer; ++o) {
                  for (long in = 0; in < inner; ++in) {
                    long off = o * n * inner + in;
                    double dot = 0.0;
                    for (long i = 0; i < n; ++i)
                      dot += ctx.grad[off + i * inner] * ctx.value[off + i * inner];
                    for (long i = 0; i < n; ++i) {
                      long idx = off + i * inner;
                      gx[idx] += ctx.value[idx] * (ctx.grad[idx] - dot);
                    }
                  }
                }
              });
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  require(va.rank() == 2 && vb.rank() == 2, "matmul: operands must be 2-D");
  require(va.dim(1) == vb.dim(0), "matmul: inner dimensions differ");
  int m = va.dim(0), k = va.dim(1), p = vb.dim(1);
  Tensor out({m, p});
  as_matrix(out, m, p).noalias() = as_matrix(va, m, k) * as_matrix(vb, k, p);
  return push(std::move(out), {a.id, b.id}, [m, k, p](const BackwardContext& ctx) {
    auto g = as_matrix(ctx.grad, m, p);
    auto va = as_matrix(*ctx.parent_values[0], m, k);
    auto vb = as_matrix(*ctx.parent_values[1], k, p);
    as_matrix(*ctx.parent_grads[0], m, k).noalias() += g * vb.transpose();
    as_matrix(*ctx.parent_grads[1], k, p).noalias() += va.transpose() * g;
  });
}

Var Tape::scale(Var a, double c) {
  Tensor out = at(a).value;
  for (long i = 0; i < out.size(); ++i) out[i] *= c;
  return push(std::move(out), {a.id}, [c](const BackwardContext& ctx) {
    for (long i = 0; i < ctx.grad.size(); ++i) (*ctx.parent_grads[0])[i] += c * ctx.grad[i];
  });
}

Var Tape::add_bias(Var a, Var bias) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(bias).value;
  require(vb.rank() == 1, "add_bias: bias must be rank 1");
  require(va.rank() >= 1 && va.dim(va.rank() - 1) == vb.dim(0),
          "add_bias: last axis must match bias length");
  long width = vb.dim(0);
  long rows = va.size() / width;
  Tensor out = va;
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < width; ++j) out[r * width + j] += vb[j];
  return push(std::move(out), {a.id, bias.id}, [rows, width](const BackwardContext& ctx) {
    Tensor& ga = *ctx.parent_grads[0];
    Tensor& gb = *ctx.parent_grads[1];
    for (long r = 0; r < rows; ++r)
      for (long j = 0; j < width; ++j) {
        ga[r * width + j] += ctx.grad[r * width + j];
        gb[j] += ctx.grad[r * width + j];
      }
  });
}

Var Tape::transpose(Var a) {
  const Tensor& va = at(a).value;
  require(va.rank() == 2, "transpose: operand must be 2-D");
  int m = va.dim(0), n = va.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = va.at(i, j);
  return push(std::move(out), {a.id}, [m, n](const BackwardContext& ctx) {
    Tensor& ga = *ctx.parent_grads[0];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<long>(i) * n + j] += ctx.grad[static_cast<long>(j) * m + i];
  });
}

Var Tape::reshape(Var a, std::vector<int> shape) {
  Tensor out = at(a).value.reshaped(std::move(shape));
  return push(std::move(out), {a.id}, [](const BackwardContext& ctx) {
    Tensor& ga = *ctx.parent_grads[0];
    for (long i = 0; i < ctx.grad.size(); ++i) ga[i] += ctx.grad[i];
  });
}

Var Tape::concat_last(std::span<const Var> parts) {
  require(!parts.empty(), "concat_last: no operands");
  const Tensor& first = at(parts[0]).value;
  int rank = first.rank();
  require(rank == 1 || rank == 2, "concat_last: rank must be 1 or 2");
  long rows = rank == 2 ? first.dim(0) : 1;
  long total = 0;
  std::vector<long> widths;
  std::vector<int> parents;
  for (Var p : parts) {
    const Tensor& v = at(p).value;
    require(v.rank() == rank, "concat_last: rank mismatch");
    require(rank == 1 || v.dim(0) == rows, "concat_last: row count mismatch");
    widths.push_back(v.dim(rank - 1));
    total += widths.back();
    parents.push_back(p.id);
  }
  Tensor out(rank == 2 ? std::vector<int>{static_cast<int>(rows), static_cast<int>(total)}
                       : std::vector<int>{static_cast<int>(total)});
  long col = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& v = at(parts[pi]).value;
    for (long r = 0; r < rows; ++r)
      for (long j = 0; j < widths[pi]; ++j) out[r * total + col + j] = v[r * widths[pi] + j];
    col += widths[pi];
  }
  return push(std::move(out), std::move(parents),
              [rows, total, widths](const BackwardContext& ctx) {
                long col = 0;
                for (std::size_t pi = 0; pi < widths.size(); ++pi) {
                  Tensor& gp = *ctx.parent_grads[pi];
                  for (long r = 0; r < rows; ++r)
                    for (long j = 0; j < widths[pi]; ++j)
                      gp[r * widths[pi] + j] += ctx.grad[r * total + col + j];
                  col += widths[pi];
                }
              });
}

Var Tape::slice_time(Var seq, int t) {
  const Tensor& v = at(seq).value;
  require(v.rank() == 3, "slice_time: operand must be 3-D");
  int b = v.dim(0), T = v.dim(1), f = v.dim(2);
  require(t >= 0 && t < T, "slice_time: index out of range");
  Tensor out({b, f});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < f; ++j) out.at(i, j) = v.at(i, t, j);
  return push(std::move(out), {seq.id}, [b, T, f, t](const BackwardContext& ctx) {
    Tensor& gp = *ctx.parent_grads[0];
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < f; ++j)
        gp[(static_cast<long>(i) * T + t) * f + j] += ctx.grad[static_cast<long>(i) * f + j];
  });
}

Var Tape::stack_time(std::span<const Var> steps) {
  require(!steps.empty(), "stack_time: no operands");
  const Tensor& first = at(steps[0]).value;
  require(first.rank() == 2, "stack_time: operands must be 2-D");
  int b = first.dim(0), f = first.dim(1);
  int T = static_cast<int>(steps.size());
  std::vector<int> parents;
  Tensor out({b, T, f});
  for (int t = 0; t < T; ++t) {
    const Tensor& v = at(steps[t]).value;
    require(v.dim(0) == b && v.dim(1) == f, "stack_time: shape mismatch");
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < f; ++j) out.at(i, t, j) = v.at(i, j);
    parents.push_back(steps[t].id);
  }
  return push(std::move(out), std::move(parents), [b, T, f](const BackwardContext& ctx) {
    for (int t = 0; t < T; ++t) {
      Tensor& gp = *ctx.parent_grads[t];
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < f; ++j)
          gp[static_cast<long>(i) * f + j] += ctx.grad[(static_cast<long>(i) * T + t) * f + j];
    }
  });
}

Var Tape::slice_rows(Var a, int begin, int count) {
  const Tensor& v = at(a).value;
  require(v.rank() == 2, "slice_rows: operand must be 2-D");
  require(begin >= 0 && count >= 1 && begin + count <= v.dim(0), "slice_rows: range out of bounds");
  int cols = v.dim(1);
  Tensor out({count, cols});
  for (int r = 0; r < count; ++r)
    for (int j = 0; j < cols; ++j) out.at(r, j) = v.at(begin + r, j);
  return push(std::move(out), {a.id}, [begin, count, cols](const BackwardContext& ctx) {
    Tensor& gp = *ctx.parent_grads[0];
    for (int r = 0; r < count; ++r)
      for (int j = 0; j < cols; ++j)
        gp[static_cast<long>(begin + r) * cols + j] += ctx.grad[static_cast<long>(r) * cols + j];
  });
}

Var Tape::bmm(Var a, Var b) {
  const Tensor& va = at(a).value;
  const Tensor& vb = at(b).value;
  require(va.rank() == 3 && vb.rank() == 3, "bmm: operands must be 3-D");
  require(va.dim(0) == vb.dim(0), "bmm: batch sizes differ");
  require(va.dim(2) == vb.dim(1), "bmm: inner dimensions differ");
  int bs = va.dim(0), m = va.dim(1), k = va.dim(2), p = vb.dim(2);
  Tensor out({bs, m, p});
  for (int i = 0; i < bs; ++i) {
    ConstMatMap ma(va.data() + static_cast<long>(i) * m * k, m, k);
    ConstMatMap mb(vb.data() + static_cast<long>(i) * k * p, k, p);
    MatMap(out.data() + static_cast<long>(i) * m * p, m, p).noalias() = ma * mb;
  }
  return push(std::move(out), {a.id, b.id}, [bs, m, k, p](const BackwardContext& ctx) {
    for (int i = 0; i < bs; ++i) {
      ConstMatMap g(ctx.grad.data() + static_cast<long>(i) * m * p, m, p);
      ConstMatMap ma(ctx.parent_values[0]->data() + static_cast<long>(i) * m * k, m, k);
      ConstMatMap mb(ctx.parent_values[1]->data() + static_cast<long>(i) * k * p, k, p);
      MatMap(ctx.parent_grads[0]->data() + static_cast<long>(i) * m * k, m, k).noalias() +=
          g * mb.transpose();
      MatMap(ctx.parent_grads[1]->data() + static_cast<long>(i) * k * p, k, p).noalias() +=
          ma.transpose() * g;
    }
  });
}

Var Tape::transpose_last2(Var a) {
  const Tensor& v = at(a).value;
  require(v.rank() == 3, "transpose_last2: operand must be 3-D");
  int b = v.dim(0), m = v.dim(1), k = v.dim(2);
  Tensor out({b, k, m});
  for (int i = 0; i < b; ++i)
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < k; ++c) out.at(i, c, r) = v.at(i, r, c);
  return push(std::move(out), {a.id}, [b, m, k](const BackwardContext& ctx) {
    Tensor& gp = *ctx.parent_grads[0];
    for (int i = 0; i < b; ++i)
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < k; ++c)
          gp[(static_cast<long>(i) * m + r) * k + c] += ctx.grad[(static_cast<long>(i) * k + c) * m + r];
  });
}

Var Tape::mean_time(Var seq) {
  const Tensor& v = at(seq).value;
  require(v.rank() == 3, "mean_time: operand must be 3-D");
  int b = v.dim(0), T = v.dim(1), f = v.dim(2);
  Tensor out({b, f});
  for (int i = 0; i < b; ++i)
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < f; ++j) out.at(i, j) += v.at(i, t, j);
  for (long i = 0; i < out.size(); ++i) out[i] /= T;
  return push(std::move(out), {seq.id}, [b, T, f](const BackwardContext& ctx) {
    Tensor& gp = *ctx.parent_grads[0];
    for (int i = 0; i < b; ++i)
      for (int t = 0; t < T; ++t)
        for (int j = 0; j < f; ++j)
          gp[(static_cast<long>(i) * T + t) * f + j] += ctx.grad[static_cast<long>(i) * f + j] / T;
  });
}

Var Tape::sum_all(Var a) {
  const Tensor& v = at(a).value;
  double s = 0.0;
  for (long i = 0; i < v.size(); ++i) s += v[i];
  return push(Tensor::scalar(s), {a.id}, [](const BackwardContext& ctx) {
    Tensor& gp = *ctx.parent_grads[0];
    for (long i = 0; i < gp.size(); ++i) gp[i] += ctx.grad[0];
  });
}

Var Tape::custom(std::vector<Var> parents, Tensor value, BackwardFn fn) {
  std::vector<int> ids;
  ids.reserve(parents.size());
  for (Var p : parents) {
    at(p);  // validate
    ids.push_back(p.id);
  }
  return push(std::move(value), std::move(ids), std::move(fn));
}

void Tape::backward(Var loss) {
  Node& top = at(loss);
  require(top.value.size() == 1, "backward: loss must be scalar");
  top.grad = Tensor(top.value.shape());
  top.grad[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& node = nodes_[i];
    if (node.grad.empty()) continue;  // not an ancestor of the loss
    if (node.backward) {
      std::vector<const Tensor*> pvals;
      std::vector<Tensor*> pgrads;
      pvals.reserve(node.parents.size());
      pgrads.reserve(node.parents.size());
      for (int p : node.parents) {
        Node& parent = nodes_[p];
        if (parent.grad.empty()) parent.grad = Tensor::zeros_like(parent.value);
        pvals.push_back(&parent.value);
        pgrads.push_back(&parent.grad);
      }
      BackwardContext ctx{node.value, node.grad, pvals, pgrads};
      node.backward(ctx);
    }
    if (!node.is_leaf) {
      node.value = Tensor();
      node.grad = Tensor();
    }
  }
}

double check_gradients_multi(const std::function<Var(Tape&, std::span<const Var>)>& f,
                             std::span<const Tensor> inputs, double eps) {
  // Analytic gradients.
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& x : inputs) vars.push_back(tape.leaf(x));
    Var out = f(tape, vars);
    if (tape.value(out).size() != 1)
      throw std::invalid_argument("check_gradients: f must be scalar-valued");
    tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }

  auto eval = [&](std::span<const Tensor> xs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const Tensor& x : xs) vars.push_back(tape.leaf(x));
    return tape.value(f(tape, vars))[0];
  };

  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  double max_rel = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (long i = 0; i < probe[k].size(); ++i) {
      double orig = probe[k][i];
      probe[k][i] = orig + eps;
      double up = eval(probe);
      probe[k][i] = orig - eps;
      double down = eval(probe);
      probe[k][i] = orig;
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[k][i];
      double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

double check_gradients(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
  return check_gradients_multi(
      [&f](Tape& tape, std::span<const Var> vars) { return f(tape, vars[0]); },
      std::span<const Tensor>(&x, 1), eps);
}

}  // namespace evowarn
