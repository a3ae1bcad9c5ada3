#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dtkd/autodiff.hpp"
#include "dtkd/rng.hpp"
#include "dtkd/tensor.hpp"

namespace dtkd {

enum class LayerKind { conv2d, linear, relu, maxpool2d, dropout, flatten, residual_block };

std::string_view to_string(LayerKind kind);

struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

struct LayerHyper {
  std::size_t in = 0;   // channels (conv) or features (linear)
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 2;  // maxpool
  double dropout_p = 0.0;
};

/// One layer of a sequential network.
///
/// conv2d owns weight [out, in, k, k] and bias [out]; linear owns weight
/// [in, out] and bias [out] so that y = x·W + b. A residual block computes
/// x + F(x) where F is the `inner` sequence.
struct Layer {
  LayerKind kind = LayerKind::relu;
  std::vector<Parameter> params;
  LayerHyper hyper;
  std::vector<Layer> inner;

  static Layer conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                      std::size_t padding = 0);
  static Layer linear(std::size_t in, std::size_t out);
  static Layer relu();
  static Layer maxpool2d(std::size_t window = 2);
  static Layer dropout(double p);
  static Layer flatten();
  static Layer residual_block(std::vector<Layer> inner);

  std::size_t parameter_count() const;
};

/// Parameters of one conv filter: in_channels * kh * kw weights plus a bias.
constexpr std::size_t conv_filter_parameter_count(std::size_t in_channels, std::size_t kh, std::size_t kw) {
  return in_channels * kh * kw + 1;
}

enum class Mode { train, eval };

/// Sequential network with a backbone/head split. Layers at indices
/// >= head_boundary form the classification head.
struct Model {
  std::string name;
  std::vector<Layer> layers;
  std::size_t head_boundary = 0;

  std::size_t num_classes() const;
  std::size_t parameter_count() const;
  std::size_t trainable_parameter_count() const;
  std::size_t head_parameter_count() const;

  /// Visits parameters in a fixed depth-first order with dotted path names.
  void for_each_parameter(const std::function<void(const std::string&, Parameter&, bool in_head)>& fn);
  void for_each_parameter(const std::function<void(const std::string&, const Parameter&, bool in_head)>& fn) const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation of one layer's parameters.
void init_layer(Layer& layer, SplitMix64& rng);
void init_model(Model& model, std::uint64_t seed);

/// Desk-scale student: conv(3->8)/relu/pool, residual(8), conv(8->16)/relu/pool,
/// flatten, dropout(0.2), linear head. Input images are 3 x size x size with size % 4 == 0.
Model build_student(std::size_t num_classes, std::size_t input_size = 32, std::uint64_t seed = 0);

/// Teacher: doubled widths and an extra residual block after the second conv stage.
Model build_teacher(std::size_t num_classes, std::size_t input_size = 32, std::uint64_t seed = 0);

/// Swaps the final linear layer for a freshly initialised one with new_num_classes
/// outputs. Backbone parameters are copied bitwise; the new head is trainable.
Model replace_head(const Model& model, std::size_t new_num_classes, std::uint64_t seed);

/// Marks every backbone parameter frozen (or trainable again when frozen == false).
Model freeze_backbone(Model model, bool frozen = true);

/// FNV-1a over the raw bytes of the selected parameters.
enum class ParamScope { all, backbone, head };
std::uint64_t checksum(const Model& model, ParamScope scope = ParamScope::all);

// --- forward passes -------------------------------------------------------

/// Untaped eval-mode forward (dropout is the identity). Thread-safe for a const model.
Tensor forward(const Model& model, const Tensor& input);
Tensor forward_layer(const Layer& layer, const Tensor& input);

struct ParamBinding {
  Parameter* param;
  Var var;
};

/// Taped forward. Every parameter becomes a leaf that requires a gradient
/// unless it is frozen; bindings (if given) receive the parameter/leaf pairs.
Var forward(Model& model, const Var& input, Mode mode, SplitMix64& rng, std::vector<ParamBinding>* bindings = nullptr);
Var forward_layer(Layer& layer, const Var& input, Mode mode, SplitMix64& rng, std::vector<ParamBinding>* bindings);

/// x + F(x) over an explicit inner sequence.
Var residual_block_forward(const Var& x, std::vector<Layer>& inner, Mode mode, SplitMix64& rng,
                           std::vector<ParamBinding>* bindings = nullptr);

/// Copies each binding's gradient from `grads` into its parameter's grad buffer.
void store_gradients(const std::vector<ParamBinding>& bindings, const Gradients& grads);

// --- checkpoints ----------------------------------------------------------

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Binary layout: "DTKD", u32 version, u32 count, then per tensor
/// u16 name length, UTF-8 name, u8 rank, u64 dims, f64 values (all little-endian).
void write_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const std::string& path);
std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensors(const std::vector<std::uint8_t>& bytes);

constexpr std::uint32_t kCheckpointVersion = 1;

/// A model checkpoint stores its parameters plus meta.* tensors describing
/// the architecture, head boundary, frozen flags and name.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace dtkd
