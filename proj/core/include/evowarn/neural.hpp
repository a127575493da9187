#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "evowarn/autodiff.hpp"
#include "evowarn/tensor.hpp"

namespace evowarn {

enum class Activation { Identity, Sigmoid, Tanh };

// ---------------------------------------------------------------------------
// Layer operations. Sequence inputs are (batch, time, features); the
// unbatched (time, features) form is accepted too and returns the same rank.

struct LstmCellVars {
  Var w_forget, w_input, w_output, w_candidate;  // each (hidden, hidden+input)
  Var b_forget, b_input, b_output, b_candidate;  // each (hidden)
};

// One LSTM step. x is (b, input), h_prev/c_prev are (b, hidden).
// Gates: g = sigmoid(W [h_prev, x] + b); candidate uses tanh.
// c = f o c_prev + i o candidate; h = o o tanh(c).
std::pair<Var, Var> lstm_cell(Tape& tape, Var x, Var h_prev, Var c_prev,
                              const LstmCellVars& params);

// Scans lstm_cell over time from zero initial state, emitting every hidden
// state: (b, T, input) -> (b, T, hidden).
Var lstm_layer(Tape& tape, Var sequence, const LstmCellVars& params, int hidden_size);

// Valid cross-correlation along time with full channel mixing:
// (b, T, in_ch) x kernels (out_ch, in_ch, k) -> (b, T', out_ch),
// T' = (T-k)/stride + 1.
Var conv1d(Tape& tape, Var sequence, Var kernels, Var bias, int stride = 1);

// Valid 2-D cross-correlation over the (time x channel) plane:
// (b, H, W, in_ch) x kernels (out_ch, in_ch, kh, kw) -> (b, H', W', out_ch).
Var conv2d(Tape& tape, Var image, Var kernels, Var bias, int stride = 1);

// Per-channel max over time windows; gradient routes to the first argmax.
Var maxpool_time(Tape& tape, Var sequence, int window, int stride);
Var global_maxpool_time(Tape& tape, Var sequence);  // window = T

// softmax((X Wq)(X Wk)^T / sqrt(d)) X Wv, single head. X is (b, T, d) or (T, d).
Var self_attention(Tape& tape, Var x, Var w_query, Var w_key, Var w_value);

// Standardizes each position vector (variance epsilon 1e-5), then applies
// the learned per-feature gain and bias.
Var layer_norm(Tape& tape, Var x, Var gain, Var bias);

// First `count` rows of the learnable position table; gradients reach only
// those rows.
Var positional_rows(Tape& tape, Var table, int count);

// Adds per-position rows (T, d) to every batch element of (b, T, d).
Var add_positional(Tape& tape, Var x, Var rows);

// activation(x W + b) with W stored (in, out).
Var fully_connected(Tape& tape, Var x, Var weight, Var bias, Activation activation);

// ---------------------------------------------------------------------------
// Model assembly.

enum class ModelKind { SeqLstm, CnnSeqLstm, CnnLstm, TextCnn, Transformer };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);
std::vector<ModelKind> all_model_kinds();

struct ModelSpec {
  ModelKind kind = ModelKind::SeqLstm;
  int ws = 30;
  int input_channels = 5;
  int hidden_size = 64;
  int conv_channels = 32;
  int conv_kernel = 3;  // conv1d time extent; conv2d footprint is conv_kernel x input_channels
  std::vector<int> textcnn_kernels = {3, 4, 5};
  int pool_window = 2;
  int pool_stride = 2;
  int encoder_layers = 3;
  int model_dim = 64;
  int ffn_dim = 128;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// A model is its spec plus named parameter tensors in a fixed order.
class Model {
 public:
  static Model build(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }

  struct Bound {
    std::vector<Var> params;  // aligned with parameters()
    Var logits;               // (b, 2)
  };
  // Registers every parameter as a tape leaf and wires the architecture on
  // the given batch (b, ws, 5).
  Bound bind(Tape& tape, const Tensor& batch) const;

  // Forward convenience on a throwaway tape.
  Tensor logits(const Tensor& batch) const;

  // JSON snapshot (spec echo + parameters); exact round-trip.
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

 private:
  ModelSpec spec_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace evowarn
