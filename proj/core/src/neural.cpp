#include "evowarn/neural.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "evowarn/util.hpp"
#include <nlohmann/json.hpp>

namespace evowarn {

namespace {

using EigenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenMatrix>;
using ConstMatMap = Eigen::Map<const EigenMatrix>;

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Promotes (T, F) to (1, T, F) so sequence ops can assume a batch axis.
Var promote_seq(Tape& tape, Var v, bool& was_2d) {
  const Tensor& t = tape.value(v);
  was_2d = t.rank() == 2;
  if (!was_2d) return v;
  return tape.reshape(v, {1, t.dim(0), t.dim(1)});
}

Var demote_seq(Tape& tape, Var v, bool was_2d) {
  if (!was_2d) return v;
  const Tensor& t = tape.value(v);
  return tape.reshape(v, {t.dim(1), t.dim(2)});
}

}  // namespace

// ---------------------------------------------------------------------------
// LSTM

namespace {

// Fused LSTM step: value is [h | c] (b, 2*hidden); 11 parents in the order
// x, h_prev, c_prev, w_f, w_i, w_o, w_c, b_f, b_i, b_o, b_c.
Var lstm_cell_packed(Tape& tape, Var x, Var h_prev, Var c_prev, const LstmCellVars& p) {
  const Tensor& xv = tape.value(x);
  const Tensor& hv = tape.value(h_prev);
  const Tensor& cv = tape.value(c_prev);
  const Tensor& wf = tape.value(p.w_forget);
  require(xv.rank() == 2 && hv.rank() == 2 && cv.rank() == 2, "lstm_cell: inputs must be 2-D");
  const int b = xv.dim(0);
  const int in = xv.dim(1);
  const int hidden = hv.dim(1);
  require(hv.dim(0) == b && cv.dim(0) == b && cv.dim(1) == hidden, "lstm_cell: state shape mismatch");
  for (Var w : {p.w_forget, p.w_input, p.w_output, p.w_candidate}) {
    const Tensor& t = tape.value(w);
    require(t.rank() == 2 && t.dim(0) == hidden && t.dim(1) == hidden + in,
            "lstm_cell: weight must be (hidden, hidden+input)");
  }
  for (Var bias : {p.b_forget, p.b_input, p.b_output, p.b_candidate}) {
    const Tensor& t = tape.value(bias);
    require(t.rank() == 1 && t.dim(0) == hidden, "lstm_cell: bias must be (hidden)");
  }
  (void)wf;

  const int cols = hidden + in;
  // hx = [h_prev, x]
  Tensor hx({b, cols});
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < hidden; ++j) hx.at(i, j) = hv.at(i, j);
    for (int j = 0; j < in; ++j) hx.at(i, hidden + j) = xv.at(i, j);
  }

  auto gate_preact = [&](Var w, Var bias) {
    const Tensor& wv = tape.value(w);
    const Tensor& bvec = tape.value(bias);
    Tensor z({b, hidden});
    MatMap(z.data(), b, hidden).noalias() =
        ConstMatMap(hx.data(), b, cols) * ConstMatMap(wv.data(), hidden, cols).transpose();
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < hidden; ++j) z.at(i, j) += bvec[j];
    return z;
  };

  Tensor f = gate_preact(p.w_forget, p.b_forget);
  Tensor ig = gate_preact(p.w_input, p.b_input);
  Tensor o = gate_preact(p.w_output, p.b_output);
  Tensor cand = gate_preact(p.w_candidate, p.b_candidate);
  for (long i = 0; i < f.size(); ++i) {
    f[i] = stable_sigmoid(f[i]);
    ig[i] = stable_sigmoid(ig[i]);
    o[i] = stable_sigmoid(o[i]);
    cand[i] = std::tanh(cand[i]);
  }

  Tensor packed({b, 2 * hidden});
  Tensor tanh_c({b, hidden});
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < hidden; ++j) {
      double c_new = f.at(i, j) * cv.at(i, j) + ig.at(i, j) * cand.at(i, j);
      double tc = std::tanh(c_new);
      tanh_c.at(i, j) = tc;
      packed.at(i, j) = o.at(i, j) * tc;           // h
      packed.at(i, hidden + j) = c_new;            // c
    }
  }

  auto backward = [b, in, hidden, cols, hx = std::move(hx), f = std::move(f), ig = std::move(ig),
                   o = std::move(o), cand = std::move(cand),
                   tanh_c = std::move(tanh_c)](const Tape::BackwardContext& ctx) {
    const Tensor& c_prev = *ctx.parent_values[2];
    // Gate pre-activation gradients.
    Tensor dzf({b, hidden}), dzi({b, hidden}), dzo({b, hidden}), dzc({b, hidden});
    Tensor& gc_prev = *ctx.parent_grads[2];
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < hidden; ++j) {
        double gh = ctx.grad.at(i, j);
        double gc = ctx.grad.at(i, hidden + j);
        double tc = tanh_c.at(i, j);
        double dc = gc + gh * o.at(i, j) * (1.0 - tc * tc);
        double fo = f.at(i, j), io = ig.at(i, j), oo = o.at(i, j), ca = cand.at(i, j);
        dzf.at(i, j) = dc * c_prev.at(i, j) * fo * (1.0 - fo);
        dzi.at(i, j) = dc * ca * io * (1.0 - io);
        dzo.at(i, j) = gh * tc * oo * (1.0 - oo);
        dzc.at(i, j) = dc * io * (1.0 - ca * ca);
        gc_prev.at(i, j) += dc * fo;
      }
    }
    // Weight/bias/input gradients; dhx accumulates across the four gates.
    Tensor dhx({b, cols});
    auto mh = MatMap(dhx.data(), b, cols);
    const Tensor* dz[4] = {&dzf, &dzi, &dzo, &dzc};
    for (int g = 0; g < 4; ++g) {
      const Tensor& wv = *ctx.parent_values[3 + g];
      Tensor& gw = *ctx.parent_grads[3 + g];
      Tensor& gb = *ctx.parent_grads[7 + g];
      ConstMatMap mdz(dz[g]->data(), b, hidden);
      MatMap(gw.data(), hidden, cols).noalias() += mdz.transpose() * ConstMatMap(hx.data(), b, cols);
      mh.noalias() += mdz * ConstMatMap(wv.data(), hidden, cols);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < hidden; ++j) gb[j] += dz[g]->at(i, j);
    }
    Tensor& gh_prev = *ctx.parent_grads[1];
    Tensor& gx = *ctx.parent_grads[0];
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < hidden; ++j) gh_prev.at(i, j) += dhx.at(i, j);
      for (int j = 0; j < in; ++j) gx.at(i, j) += dhx.at(i, hidden + j);
    }
  };

  return tape.custom({x, h_prev, c_prev, p.w_forget, p.w_input, p.w_output, p.w_candidate,
                      p.b_forget, p.b_input, p.b_output, p.b_candidate},
                     std::move(packed), std::move(backward));
}

}  // namespace

std::pair<Var, Var> lstm_cell(Tape& tape, Var x, Var h_prev, Var c_prev,
                              const LstmCellVars& params) {
  Var packed = lstm_cell_packed(tape, x, h_prev, c_prev, params);
  int hidden = tape.value(h_prev).dim(1);
  int b = tape.value(h_prev).dim(0);
  Var flat = tape.reshape(packed, {b * 2, hidden});
  (void)flat;
  // Split [h | c] columns.
  const Tensor& pv = tape.value(packed);
  (void)pv;
  Var as3 = tape.reshape(packed, {b, 2, hidden});
  Var h = tape.slice_time(as3, 0);
  Var c = tape.slice_time(as3, 1);
  return {h, c};
}

Var lstm_layer(Tape& tape, Var sequence, const LstmCellVars& params, int hidden_size) {
  bool was_2d = false;
  Var seq = promote_seq(tape, sequence, was_2d);
  const Tensor& sv = tape.value(seq);
  require(sv.rank() == 3, "lstm_layer: sequence must be (b,T,F) or (T,F)");
  int b = sv.dim(0), T = sv.dim(1);
  require(T >= 1, "lstm_layer: empty sequence");
  Var h = tape.leaf(Tensor({b, hidden_size}));
  Var c = tape.leaf(Tensor({b, hidden_size}));
  std::vector<Var> hs;
  hs.reserve(T);
  for (int t = 0; t < T; ++t) {
    Var x_t = tape.slice_time(seq, t);
    auto [h_next, c_next] = lstm_cell(tape, x_t, h, c, params);
    h = h_next;
    c = c_next;
    hs.push_back(h);
  }
  Var out = tape.stack_time(hs);
  return demote_seq(tape, out, was_2d);
}

// ---------------------------------------------------------------------------
// Convolution

Var conv1d(Tape& tape, Var sequence, Var kernels, Var bias, int stride) {
  bool was_2d = false;
  Var seq = promote_seq(tape, sequence, was_2d);
  const Tensor& xv = tape.value(seq);
  const Tensor& kv = tape.value(kernels);
  const Tensor& bv = tape.value(bias);
  require(xv.rank() == 3, "conv1d: input must be (b,T,C) or (T,C)");
  require(kv.rank() == 3, "conv1d: kernels must be (out,in,k)");
  require(stride >= 1, "conv1d: stride must be >= 1");
  const int b = xv.dim(0), T = xv.dim(1), cin = xv.dim(2);
  const int cout = kv.dim(0), k = kv.dim(2);
  require(kv.dim(1) == cin, "conv1d: kernel in-channels mismatch");
  require(bv.rank() == 1 && bv.dim(0) == cout, "conv1d: bias must be (out)");
  require(k <= T, "conv1d: kernel longer than sequence");
  const int tout = (T - k) / stride + 1;
  const int patch = cin * k;

  auto fill_patches = [T, cin, k, stride, tout, patch](const double* x, double* P) {
    for (int tp = 0; tp < tout; ++tp)
      for (int c = 0; c < cin; ++c)
        for (int tau = 0; tau < k; ++tau)
          P[tp * patch + c * k + tau] = x[(tp * stride + tau) * cin + c];
    (void)T;
  };

  Tensor out({b, tout, cout});
  std::vector<double> P(static_cast<std::size_t>(tout) * patch);
  for (int i = 0; i < b; ++i) {
    fill_patches(xv.data() + static_cast<long>(i) * T * cin, P.data());
    MatMap(out.data() + static_cast<long>(i) * tout * cout, tout, cout).noalias() =
        ConstMatMap(P.data(), tout, patch) * ConstMatMap(kv.data(), cout, patch).transpose();
  }
  for (int i = 0; i < b; ++i)
    for (int tp = 0; tp < tout; ++tp)
      for (int c = 0; c < cout; ++c) out.at(i, tp, c) += bv[c];

  auto backward = [b, T, cin, cout, k, stride, tout, patch,
                   fill_patches](const Tape::BackwardContext& ctx) {
    const Tensor& xv = *ctx.parent_values[0];
    const Tensor& kv = *ctx.parent_values[1];
    Tensor& gx = *ctx.parent_grads[0];
    Tensor& gk = *ctx.parent_grads[1];
    Tensor& gb = *ctx.parent_grads[2];
    std::vector<double> P(static_cast<std::size_t>(tout) * patch);
    std::vector<double> gP(static_cast<std::size_t>(tout) * patch);
    for (int i = 0; i < b; ++i) {
      const double* xrow = xv.data() + static_cast<long>(i) * T * cin;
      ConstMatMap G(ctx.grad.data() + static_cast<long>(i) * tout * cout, tout, cout);
      fill_patches(xrow, P.data());
      MatMap(gk.data(), cout, patch).noalias() += G.transpose() * ConstMatMap(P.data(), tout, patch);
      MatMap(gP.data(), tout, patch).noalias() = G * ConstMatMap(kv.data(), cout, patch);
      double* gxrow = gx.data() + static_cast<long>(i) * T * cin;
      for (int tp = 0; tp < tout; ++tp)
        for (int c = 0; c < cin; ++c)
          for (int tau = 0; tau < k; ++tau)
            gxrow[(tp * stride + tau) * cin + c] += gP[tp * patch + c * k + tau];
      for (int tp = 0; tp < tout; ++tp)
        for (int c = 0; c < cout; ++c) gb[c] += G(tp, c);
    }
  };

  Var out_var = tape.custom({seq, kernels, bias}, std::move(out), std::move(backward));
  return demote_seq(tape, out_var, was_2d);
}

Var conv2d(Tape& tape, Var image, Var kernels, Var bias, int stride) {
  const Tensor& xv = tape.value(image);
  const Tensor& kv = tape.value(kernels);
  const Tensor& bv = tape.value(bias);
  require(xv.rank() == 4, "conv2d: input must be (b,H,W,in)");
  require(kv.rank() == 4, "conv2d: kernels must be (out,in,kh,kw)");
  require(stride >= 1, "conv2d: stride must be >= 1");
  const int b = xv.dim(0), H = xv.dim(1), W = xv.dim(2), cin = xv.dim(3);
  const int cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  require(kv.dim(1) == cin, "conv2d: kernel in-channels mismatch");
  require(bv.rank() == 1 && bv.dim(0) == cout, "conv2d: bias must be (out)");
  require(kh <= H && kw <= W, "conv2d: kernel larger than input");
  const int hout = (H - kh) / stride + 1;
  const int wout = (W - kw) / stride + 1;
  const int npos = hout * wout;
  const int patch = cin * kh * kw;

  auto fill_patches = [=](const double* x, double* P) {
    for (int hp = 0; hp < hout; ++hp)
      for (int wp = 0; wp < wout; ++wp) {
        double* row = P + (hp * wout + wp) * patch;
        for (int c = 0; c < cin; ++c)
          for (int r = 0; r < kh; ++r)
            for (int s = 0; s < kw; ++s)
              row[(c * kh + r) * kw + s] =
                  x[((hp * stride + r) * W + (wp * stride + s)) * cin + c];
      }
  };

  Tensor out({b, hout, wout, cout});
  std::vector<double> P(static_cast<std::size_t>(npos) * patch);
  for (int i = 0; i < b; ++i) {
    fill_patches(xv.data() + static_cast<long>(i) * H * W * cin, P.data());
    MatMap(out.data() + static_cast<long>(i) * npos * cout, npos, cout).noalias() =
        ConstMatMap(P.data(), npos, patch) * ConstMatMap(kv.data(), cout, patch).transpose();
  }
  for (int i = 0; i < b; ++i)
    for (int p = 0; p < npos; ++p)
      for (int c = 0; c < cout; ++c) out[(static_cast<long>(i) * npos + p) * cout + c] += bv[c];

  auto backward = [=](const Tape::BackwardContext& ctx) {
    const Tensor& xv = *ctx.parent_values[0];
    const Tensor& kv = *ctx.parent_values[1];
    Tensor& gx = *ctx.parent_grads[0];
    Tensor& gk = *ctx.parent_grads[1];
    Tensor& gb = *ctx.parent_grads[2];
    std::vector<double> P(static_cast<std::size_t>(npos) * patch);
    std::vector<double> gP(static_cast<std::size_t>(npos) * patch);
    for (int i = 0; i < b; ++i) {
      const double* xrow = xv.data() + static_cast<long>(i) * H * W * cin;
      ConstMatMap G(ctx.grad.data() + static_cast<long>(i) * npos * cout, npos, cout);
      fill_patches(xrow, P.data());
      MatMap(gk.data(), cout, patch).noalias() += G.transpose() * ConstMatMap(P.data(), npos, patch);
      MatMap(gP.data(), npos, patch).noalias() = G * ConstMatMap(kv.data(), cout, patch);
      double* gxrow = gx.data() + static_cast<long>(i) * H * W * cin;
      for (int hp = 0; hp < hout; ++hp)
        for (int wp = 0; wp < wout; ++wp) {
          const double* row = gP.data() + (hp * wout + wp) * patch;
          for (int c = 0; c < cin; ++c)
            for (int r = 0; r < kh; ++r)
              for (int s = 0; s < kw; ++s)
                gxrow[((hp * stride + r) * W + (wp * stride + s)) * cin + c] +=
                    row[(c * kh + r) * kw + s];
        }
      for (int p = 0; p < npos; ++p)
        for (int c = 0; c < cout; ++c) gb[c] += G(p, c);
    }
  };

  return tape.custom({image, kernels, bias}, std::move(out), std::move(backward));
}

// ---------------------------------------------------------------------------
// Pooling

Var maxpool_time(Tape& tape, Var sequence, int window, int stride) {
  bool was_2d = false;
  Var seq = promote_seq(tape, sequence, was_2d);
  const Tensor& xv = tape.value(seq);
  require(xv.rank() == 3, "maxpool: input must be (b,T,C) or (T,C)");
  require(window >= 1 && stride >= 1, "maxpool: window and stride must be >= 1");
  const int b = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
  require(window <= T, "maxpool: window larger than sequence");
  const int tout = (T - window) / stride + 1;

  Tensor out({b, tout, C});
  std::vector<int> argmax(static_cast<std::size_t>(b) * tout * C);
  for (int i = 0; i < b; ++i)
    for (int tp = 0; tp < tout; ++tp)
      for (int c = 0; c < C; ++c) {
        int best_t = tp * stride;
        double best = xv.at(i, best_t, c);
        for (int tau = 1; tau < window; ++tau) {
          double v = xv.at(i, tp * stride + tau, c);
          if (v > best) {  // ties keep the first index
            best = v;
            best_t = tp * stride + tau;
          }
        }
        out.at(i, tp, c) = best;
        argmax[(static_cast<std::size_t>(i) * tout + tp) * C + c] = best_t;
      }

  auto backward = [b, T, C, tout, argmax = std::move(argmax)](const Tape::BackwardContext& ctx) {
    Tensor& gx = *ctx.parent_grads[0];
    for (int i = 0; i < b; ++i)
      for (int tp = 0; tp < tout; ++tp)
        for (int c = 0; c < C; ++c) {
          int t = argmax[(static_cast<std::size_t>(i) * tout + tp) * C + c];
          gx[(static_cast<long>(i) * T + t) * C + c] +=
              ctx.grad[(static_cast<long>(i) * tout + tp) * C + c];
        }
  };

  Var out_var = tape.custom({seq}, std::move(out), std::move(backward));
  return demote_seq(tape, out_var, was_2d);
}

Var global_maxpool_time(Tape& tape, Var sequence) {
  const Tensor& xv = tape.value(sequence);
  int T = xv.rank() == 3 ? xv.dim(1) : xv.dim(0);
  Var pooled = maxpool_time(tape, sequence, T, 1);
  const Tensor& pv = tape.value(pooled);
  if (pv.rank() == 3) return tape.reshape(pooled, {pv.dim(0), pv.dim(2)});
  return tape.reshape(pooled, {pv.dim(1)});
}

// ---------------------------------------------------------------------------
// Attention and friends

Var self_attention(Tape& tape, Var x, Var w_query, Var w_key, Var w_value) {
  bool was_2d = false;
  Var x3 = promote_seq(tape, x, was_2d);
  const Tensor& xv = tape.value(x3);
  require(xv.rank() == 3, "self_attention: input must be (b,T,d) or (T,d)");
  const int b = xv.dim(0), T = xv.dim(1), d = xv.dim(2);
  for (Var w : {w_query, w_key, w_value}) {
    const Tensor& t = tape.value(w);
    require(t.rank() == 2 && t.dim(0) == d && t.dim(1) == d, "self_attention: weights must be (d,d)");
  }
  Var flat = tape.reshape(x3, {b * T, d});
  // Scaling the query by 1/sqrt(d) is the same as scaling the scores.
  Var q = tape.reshape(tape.scale(tape.matmul(flat, w_query), 1.0 / std::sqrt(double(d))),
                       {b, T, d});
  Var k = tape.reshape(tape.matmul(flat, w_key), {b, T, d});
  Var v = tape.reshape(tape.matmul(flat, w_value), {b, T, d});
  Var scores = tape.bmm(q, tape.transpose_last2(k));
  Var attn = tape.softmax(scores, -1);
  Var out = tape.bmm(attn, v);
  return demote_seq(tape, out, was_2d);
}

Var layer_norm(Tape& tape, Var x, Var gain, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& gv = tape.value(gain);
  const Tensor& bv = tape.value(bias);
  require(xv.rank() >= 1, "layer_norm: rank must be >= 1");
  const int d = xv.dim(xv.rank() - 1);
  require(gv.rank() == 1 && gv.dim(0) == d, "layer_norm: gain must match last axis");
  require(bv.rank() == 1 && bv.dim(0) == d, "layer_norm: bias must match last axis");
  const long rows = xv.size() / d;
  constexpr double kEps = 1e-5;

  Tensor out(xv.shape());
  std::vector<double> means(rows), inv_stds(rows);
  for (long r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    double inv = 1.0 / std::sqrt(var + kEps);
    means[r] = mean;
    inv_stds[r] = inv;
    for (int j = 0; j < d; ++j)
      out[r * d + j] = (row[j] - mean) * inv * gv[j] + bv[j];
  }

  auto backward = [rows, d, means = std::move(means),
                   inv_stds = std::move(inv_stds)](const Tape::BackwardContext& ctx) {
    const Tensor& xv = *ctx.parent_values[0];
    const Tensor& gv = *ctx.parent_values[1];
    Tensor& gx = *ctx.parent_grads[0];
    Tensor& ggain = *ctx.parent_grads[1];
    Tensor& gbias = *ctx.parent_grads[2];
    for (long r = 0; r < rows; ++r) {
      const double* row = xv.data() + r * d;
      const double* g = ctx.grad.data() + r * d;
      double mean = means[r], inv = inv_stds[r];
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int j = 0; j < d; ++j) {
        double xhat = (row[j] - mean) * inv;
        double dxhat = g[j] * gv[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        ggain[j] += g[j] * xhat;
        gbias[j] += g[j];
      }
      for (int j = 0; j < d; ++j) {
        double xhat = (row[j] - mean) * inv;
        double dxhat = g[j] * gv[j];
        gx[r * d + j] += inv * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d);
      }
    }
  };

  return tape.custom({x, gain, bias}, std::move(out), std::move(backward));
}

Var positional_rows(Tape& tape, Var table, int count) {
  const Tensor& tv = tape.value(table);
  require(tv.rank() == 2, "positional_rows: table must be (max_positions, d)");
  require(count >= 1 && count <= tv.dim(0), "positional_rows: position index out of range");
  return tape.slice_rows(table, 0, count);
}

Var add_positional(Tape& tape, Var x, Var rows) {
  const Tensor& xv = tape.value(x);
  const Tensor& rv = tape.value(rows);
  require(xv.rank() == 3, "add_positional: input must be (b,T,d)");
  require(rv.rank() == 2 && rv.dim(0) == xv.dim(1) && rv.dim(1) == xv.dim(2),
          "add_positional: rows must be (T,d)");
  const int b = xv.dim(0), T = xv.dim(1), d = xv.dim(2);
  Tensor out = xv;
  for (int i = 0; i < b; ++i)
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < d; ++j) out.at(i, t, j) += rv.at(t, j);
  auto backward = [b, T, d](const Tape::BackwardContext& ctx) {
    Tensor& gx = *ctx.parent_grads[0];
    Tensor& gr = *ctx.parent_grads[1];
    for (int i = 0; i < b; ++i)
      for (int t = 0; t < T; ++t)
        for (int j = 0; j < d; ++j) {
          double g = ctx.grad[(static_cast<long>(i) * T + t) * d + j];
          gx[(static_cast<long>(i) * T + t) * d + j] += g;
          gr[static_cast<long>(t) * d + j] += g;
        }
  };
  return tape.custom({x, rows}, std::move(out), std::move(backward));
}

Var fully_connected(Tape& tape, Var x, Var weight, Var bias, Activation activation) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  require(xv.rank() == 2, "fully_connected: input must be (b,in)");
  require(wv.rank() == 2 && wv.dim(0) == xv.dim(1), "fully_connected: weight must be (in,out)");
  Var y = tape.add_bias(tape.matmul(x, weight), bias);
  switch (activation) {
    case Activation::Identity: return y;
    case Activation::Sigmoid: return tape.sigmoid(y);
    case Activation::Tanh: return tape.tanh(y);
  }
  throw std::logic_error("unknown activation");
}

// ---------------------------------------------------------------------------
// Model assembly

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::SeqLstm: return "seq-lstm";
    case ModelKind::CnnSeqLstm: return "cnn-seq-lstm";
    case ModelKind::CnnLstm: return "cnn-lstm";
    case ModelKind::TextCnn: return "text-cnn";
    case ModelKind::Transformer: return "transformer";
  }
  throw std::logic_error("unknown model kind");
}

ModelKind model_kind_from_string(const std::string& name) {
  for (ModelKind k : all_model_kinds())
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown model kind: " + name);
}

std::vector<ModelKind> all_model_kinds() {
  return {ModelKind::SeqLstm, ModelKind::CnnSeqLstm, ModelKind::CnnLstm, ModelKind::TextCnn,
          ModelKind::Transformer};
}

namespace {

class ParamBuilder {
 public:
  explicit ParamBuilder(std::uint64_t seed) : rng_(seed) {}

  void uniform(const std::string& name, std::vector<int> shape, long fan_in) {
    double a = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t[i] = uniform_real(rng_, -a, a);
    params_.emplace_back(name, std::move(t));
  }

  void constant(const std::string& name, std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t[i] = value;
    params_.emplace_back(name, std::move(t));
  }

  void lstm(const std::string& prefix, int input, int hidden) {
    long fan_in = hidden + input;
    uniform(prefix + ".w_forget", {hidden, hidden + input}, fan_in);
    uniform(prefix + ".w_input", {hidden, hidden + input}, fan_in);
    uniform(prefix + ".w_output", {hidden, hidden + input}, fan_in);
    uniform(prefix + ".w_candidate", {hidden, hidden + input}, fan_in);
    // Forget gate starts open; the other biases start at zero.
    constant(prefix + ".b_forget", {hidden}, 1.0);
    constant(prefix + ".b_input", {hidden}, 0.0);
    constant(prefix + ".b_output", {hidden}, 0.0);
    constant(prefix + ".b_candidate", {hidden}, 0.0);
  }

  std::vector<std::pair<std::string, Tensor>> take() { return std::move(params_); }

 private:
  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

void validate_spec(const ModelSpec& spec) {
  if (spec.ws < 1) throw std::invalid_argument("ModelSpec: ws must be >= 1");
  if (spec.input_channels < 1) throw std::invalid_argument("ModelSpec: input_channels must be >= 1");
  if (spec.hidden_size < 1) throw std::invalid_argument("ModelSpec: hidden_size must be >= 1");
  auto pooled_len = [&spec](int len) {
    if (len < spec.pool_window) return 0;
    return (len - spec.pool_window) / spec.pool_stride + 1;
  };
  switch (spec.kind) {
    case ModelKind::SeqLstm:
      break;
    case ModelKind::CnnSeqLstm:
    case ModelKind::CnnLstm: {
      if (spec.conv_kernel > spec.ws)
        throw std::invalid_argument("ModelSpec: conv kernel longer than window");
      if (pooled_len(spec.ws - spec.conv_kernel + 1) < 1)
        throw std::invalid_argument("ModelSpec: window too short for conv+pool");
      break;
    }
    case ModelKind::TextCnn: {
      if (spec.textcnn_kernels.empty())
        throw std::invalid_argument("ModelSpec: text-cnn needs kernel sizes");
      for (int k : spec.textcnn_kernels)
        if (k < 1 || k > spec.ws)
          throw std::invalid_argument("ModelSpec: text-cnn kernel does not fit the window");
      break;
    }
    case ModelKind::Transformer:
      if (spec.encoder_layers < 1)
        throw std::invalid_argument("ModelSpec: transformer needs >= 1 encoder layer");
      if (spec.model_dim < 1 || spec.ffn_dim < 1)
        throw std::invalid_argument("ModelSpec: transformer dims must be >= 1");
      break;
  }
}

}  // namespace

Model Model::build(const ModelSpec& spec) {
  validate_spec(spec);
  ParamBuilder pb(spec.seed);
  const int in = spec.input_channels;
  const int hid = spec.hidden_size;
  switch (spec.kind) {
    case ModelKind::SeqLstm:
      pb.lstm("lstm1", in, hid);
      pb.lstm("lstm2", hid, hid);
      pb.uniform("head.weight", {hid, 2}, hid);
      pb.constant("head.bias", {2}, 0.0);
      break;
    case ModelKind::CnnSeqLstm:
      pb.uniform("conv.kernels", {spec.conv_channels, in, spec.conv_kernel},
                 static_cast<long>(in) * spec.conv_kernel);
      pb.constant("conv.bias", {spec.conv_channels}, 0.0);
      pb.lstm("lstm1", spec.conv_channels, hid);
      pb.lstm("lstm2", hid, hid);
      pb.uniform("head.weight", {hid, 2}, hid);
      pb.constant("head.bias", {2}, 0.0);
      break;
    case ModelKind::CnnLstm:
      pb.uniform("conv.kernels", {spec.conv_channels, 1, spec.conv_kernel, in},
                 static_cast<long>(spec.conv_kernel) * in);
      pb.constant("conv.bias", {spec.conv_channels}, 0.0);
      pb.lstm("lstm1", spec.conv_channels, hid);
      pb.lstm("lstm2", hid, hid);
      pb.uniform("head.weight", {hid, 2}, hid);
      pb.constant("head.bias", {2}, 0.0);
      break;
    case ModelKind::TextCnn: {
      for (int k : spec.textcnn_kernels) {
        std::string prefix = "conv" + std::to_string(k);
        pb.uniform(prefix + ".kernels", {spec.conv_channels, in, k}, static_cast<long>(in) * k);
        pb.constant(prefix + ".bias", {spec.conv_channels}, 0.0);
      }
      int cat = spec.conv_channels * static_cast<int>(spec.textcnn_kernels.size());
      pb.uniform("head.weight", {cat, 2}, cat);
      pb.constant("head.bias", {2}, 0.0);
      break;
    }
    case ModelKind::Transformer: {
      const int d = spec.model_dim;
      pb.uniform("proj.weight", {in, d}, in);
      pb.constant("proj.bias", {d}, 0.0);
      pb.uniform("pos.table", {spec.ws, d}, d);
      for (int l = 0; l < spec.encoder_layers; ++l) {
        std::string prefix = "enc" + std::to_string(l);
        pb.uniform(prefix + ".attn.wq", {d, d}, d);
        pb.uniform(prefix + ".attn.wk", {d, d}, d);
        pb.uniform(prefix + ".attn.wv", {d, d}, d);
        pb.constant(prefix + ".ln1.gain", {d}, 1.0);
        pb.constant(prefix + ".ln1.bias", {d}, 0.0);
        pb.uniform(prefix + ".ffn.w1", {d, spec.ffn_dim}, d);
        pb.constant(prefix + ".ffn.b1", {spec.ffn_dim}, 0.0);
        pb.uniform(prefix + ".ffn.w2", {spec.ffn_dim, d}, spec.ffn_dim);
        pb.constant(prefix + ".ffn.b2", {d}, 0.0);
        pb.constant(prefix + ".ln2.gain", {d}, 1.0);
        pb.constant(prefix + ".ln2.bias", {d}, 0.0);
      }
      pb.uniform("head.weight", {d, 2}, d);
      pb.constant("head.bias", {2}, 0.0);
      break;
    }
  }
  Model model;
  model.spec_ = spec;
  model.params_ = pb.take();
  return model;
}

Model::Bound Model::bind(Tape& tape, const Tensor& batch) const {
  if (batch.rank() != 3 || batch.dim(1) != spec_.ws || batch.dim(2) != spec_.input_channels)
    throw std::invalid_argument("forward: batch must be (b, ws, channels) matching the spec");
  const int b = batch.dim(0);

  Bound bound;
  std::unordered_map<std::string, Var> vars;
  bound.params.reserve(params_.size());
  for (const auto& [name, tensor] : params_) {
    Var v = tape.leaf(tensor);
    bound.params.push_back(v);
    vars.emplace(name, v);
  }
  auto p = [&vars](const std::string& name) { return vars.at(name); };

  Var x = tape.leaf(batch);
  const int hid = spec_.hidden_size;

  auto lstm_vars = [&p](const std::string& prefix) {
    return LstmCellVars{p(prefix + ".w_forget"), p(prefix + ".w_input"),
                        p(prefix + ".w_output"), p(prefix + ".w_candidate"),
                        p(prefix + ".b_forget"), p(prefix + ".b_input"),
                        p(prefix + ".b_output"), p(prefix + ".b_candidate")};
  };
  auto lstm_head = [&](Var seq) {
    Var l1 = lstm_layer(tape, seq, lstm_vars("lstm1"), hid);
    Var l2 = lstm_layer(tape, l1, lstm_vars("lstm2"), hid);
    Var last = tape.slice_time(l2, tape.value(l2).dim(1) - 1);
    return fully_connected(tape, last, p("head.weight"), p("head.bias"), Activation::Identity);
  };

  switch (spec_.kind) {
    case ModelKind::SeqLstm:
      bound.logits = lstm_head(x);
      break;
    case ModelKind::CnnSeqLstm: {
      Var c = conv1d(tape, x, p("conv.kernels"), p("conv.bias"));
      Var pooled = maxpool_time(tape, c, spec_.pool_window, spec_.pool_stride);
      bound.logits = lstm_head(pooled);
      break;
    }
    case ModelKind::CnnLstm: {
      Var img = tape.reshape(x, {b, spec_.ws, spec_.input_channels, 1});
      Var c = conv2d(tape, img, p("conv.kernels"), p("conv.bias"));
      const Tensor& cv = tape.value(c);
      Var seq = tape.reshape(c, {b, cv.dim(1) * cv.dim(2), cv.dim(3)});
      Var pooled = maxpool_time(tape, seq, spec_.pool_window, spec_.pool_stride);
      bound.logits = lstm_head(pooled);
      break;
    }
    case ModelKind::TextCnn: {
      std::vector<Var> pooled;
      for (int k : spec_.textcnn_kernels) {
        std::string prefix = "conv" + std::to_string(k);
        Var c = conv1d(tape, x, p(prefix + ".kernels"), p(prefix + ".bias"));
        pooled.push_back(global_maxpool_time(tape, c));
      }
      Var cat = tape.concat_last(pooled);
      bound.logits =
          fully_connected(tape, cat, p("head.weight"), p("head.bias"), Activation::Identity);
      break;
    }
    case ModelKind::Transformer: {
      const int d = spec_.model_dim;
      Var flat = tape.reshape(x, {b * spec_.ws, spec_.input_channels});
      Var proj = fully_connected(tape, flat, p("proj.weight"), p("proj.bias"), Activation::Identity);
      Var h = tape.reshape(proj, {b, spec_.ws, d});
      Var pos = positional_rows(tape, p("pos.table"), spec_.ws);
      h = add_positional(tape, h, pos);
      for (int l = 0; l < spec_.encoder_layers; ++l) {
        std::string prefix = "enc" + std::to_string(l);
        Var attn = self_attention(tape, h, p(prefix + ".attn.wq"), p(prefix + ".attn.wk"),
                                  p(prefix + ".attn.wv"));
        h = layer_norm(tape, tape.add(h, attn), p(prefix + ".ln1.gain"), p(prefix + ".ln1.bias"));
        Var hf = tape.reshape(h, {b * spec_.ws, d});
        Var f1 = fully_connected(tape, hf, p(prefix + ".ffn.w1"), p(prefix + ".ffn.b1"),
                                 Activation::Tanh);
        Var f2 = fully_connected(tape, f1, p(prefix + ".ffn.w2"), p(prefix + ".ffn.b2"),
                                 Activation::Identity);
        Var ff = tape.reshape(f2, {b, spec_.ws, d});
        h = layer_norm(tape, tape.add(h, ff), p(prefix + ".ln2.gain"), p(prefix + ".ln2.bias"));
      }
      Var pooledv = tape.mean_time(h);
      bound.logits =
          fully_connected(tape, pooledv, p("head.weight"), p("head.bias"), Activation::Identity);
      break;
    }
  }
  return bound;
}

Tensor Model::logits(const Tensor& batch) const {
  Tape tape;
  Bound bound = bind(tape, batch);
  return tape.value(bound.logits);
}

namespace {
using Json = nlohmann::ordered_json;

Json spec_to_json(const ModelSpec& s) {
  return Json{{"kind", to_string(s.kind)},
              {"ws", s.ws},
              {"input_channels", s.input_channels},
              {"hidden_size", s.hidden_size},
              {"conv_channels", s.conv_channels},
              {"conv_kernel", s.conv_kernel},
              {"textcnn_kernels", s.textcnn_kernels},
              {"pool_window", s.pool_window},
              {"pool_stride", s.pool_stride},
              {"encoder_layers", s.encoder_layers},
              {"model_dim", s.model_dim},
              {"ffn_dim", s.ffn_dim},
              {"seed", s.seed}};
}

ModelSpec spec_from_json(const Json& j) {
  ModelSpec s;
  s.kind = model_kind_from_string(j.at("kind").get<std::string>());
  s.ws = j.at("ws").get<int>();
  s.input_channels = j.at("input_channels").get<int>();
  s.hidden_size = j.at("hidden_size").get<int>();
  s.conv_channels = j.at("conv_channels").get<int>();
  s.conv_kernel = j.at("conv_kernel").get<int>();
  s.textcnn_kernels = j.at("textcnn_kernels").get<std::vector<int>>();
  s.pool_window = j.at("pool_window").get<int>();
  s.pool_stride = j.at("pool_stride").get<int>();
  s.encoder_layers = j.at("encoder_layers").get<int>();
  s.model_dim = j.at("model_dim").get<int>();
  s.ffn_dim = j.at("ffn_dim").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}
}  // namespace

void Model::save(const std::filesystem::path& path) const {
  Json j;
  j["format_version"] = 1;
  j["spec"] = spec_to_json(spec_);
  Json params = Json::array();
  for (const auto& [name, tensor] : params_) {
    params.push_back(Json{{"name", name}, {"shape", tensor.shape()}, {"values", tensor.values()}});
  }
  j["parameters"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump() << "\n";
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  Json j = Json::parse(in);
  if (j.at("format_version").get<int>() != 1)
    throw std::runtime_error("unsupported model format version");
  ModelSpec spec = spec_from_json(j.at("spec"));
  Model model = Model::build(spec);  // establishes the expected layout
  const Json& params = j.at("parameters");
  if (params.size() != model.params_.size())
    throw std::runtime_error("model snapshot parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Json& pj = params[i];
    auto& [name, tensor] = model.params_[i];
    if (pj.at("name").get<std::string>() != name)
      throw std::runtime_error("model snapshot parameter order mismatch at " + name);
    Tensor loaded(pj.at("shape").get<std::vector<int>>(),
                  pj.at("values").get<std::vector<double>>());
    if (!loaded.same_shape(tensor))
      throw std::runtime_error("model snapshot shape mismatch at " + name);
    tensor = std::move(loaded);
  }
  return model;
}

}  // namespace evowarn
