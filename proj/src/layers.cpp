#include "dtkd/layers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dtkd/kernels.hpp"

namespace dtkd {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::residual_block: return "residual_block";
  }
  return "unknown";
}

Layer Layer::conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding) {
  Layer l;
  l.kind = LayerKind::conv2d;
  l.hyper.in = in;
  l.hyper.out = out;
  l.hyper.kernel = kernel;
  l.hyper.stride = stride;
  l.hyper.padding = padding;
  l.params.push_back({"weight", Tensor(Shape{out, in, kernel, kernel}), false});
  l.params.push_back({"bias", Tensor(Shape{out}), false});
  return l;
}

Layer Layer::linear(std::size_t in, std::size_t out) {
  Layer l;
  l.kind = LayerKind::linear;
  l.hyper.in = in;
  l.hyper.out = out;
  l.params.push_back({"weight", Tensor(Shape{in, out}), false});
  l.params.push_back({"bias", Tensor(Shape{out}), false});
  return l;
}

Layer Layer::relu() { return Layer{}; }

Layer Layer::maxpool2d(std::size_t window) {
  Layer l;
  l.kind = LayerKind::maxpool2d;
  l.hyper.window = window;
  return l;
}

Layer Layer::dropout(double p) {
  require(p >= 0.0 && p < 1.0, ErrorKind::InvalidProbability, "dropout probability must lie in [0, 1)");
  Layer l;
  l.kind = LayerKind::dropout;
  l.hyper.dropout_p = p;
  return l;
}

Layer Layer::flatten() {
  Layer l;
  l.kind = LayerKind::flatten;
  return l;
}

Layer Layer::residual_block(std::vector<Layer> inner) {
  Layer l;
  l.kind = LayerKind::residual_block;
  l.inner = std::move(inner);
  return l;
}

std::size_t Layer::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  for (const auto& l : inner) n += l.parameter_count();
  return n;
}

std::size_t Model::num_classes() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->kind == LayerKind::linear) return it->hyper.out;
  return 0;
}

namespace {

template <typename LayerT, typename ParamT, typename Fn>
void visit_layer(LayerT& layer, const std::string& prefix, bool in_head, Fn& fn) {
  for (auto& p : layer.params) fn(prefix + p.name, static_cast<ParamT&>(p), in_head);
  for (std::size_t i = 0; i < layer.inner.size(); ++i)
    visit_layer<LayerT, ParamT>(layer.inner[i], prefix + "inner." + std::to_string(i) + ".", in_head, fn);
}

}  // namespace

void Model::for_each_parameter(const std::function<void(const std::string&, Parameter&, bool)>& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    visit_layer<Layer, Parameter>(layers[i], "layers." + std::to_string(i) + ".", i >= head_boundary, fn);
}

void Model::for_each_parameter(const std::function<void(const std::string&, const Parameter&, bool)>& fn) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    visit_layer<const Layer, const Parameter>(layers[i], "layers." + std::to_string(i) + ".", i >= head_boundary, fn);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

std::size_t Model::trainable_parameter_count() const {
  std::size_t n = 0;
  for_each_parameter([&n](const std::string&, const Parameter& p, bool) {
    if (!p.frozen) n += p.value.numel();
  });
  return n;
}

std::size_t Model::head_parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = head_boundary; i < layers.size(); ++i) n += layers[i].parameter_count();
  return n;
}

void init_layer(Layer& layer, SplitMix64& rng) {
  std::size_t fan_in = 0;
  if (layer.kind == LayerKind::conv2d) fan_in = layer.hyper.in * layer.hyper.kernel * layer.hyper.kernel;
  if (layer.kind == LayerKind::linear) fan_in = layer.hyper.in;
  if (fan_in > 0) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& p : layer.params)
      for (double& v : p.value.data()) v = rng.uniform(-bound, bound);
  }
  for (auto& l : layer.inner) init_layer(l, rng);
}

void init_model(Model& model, std::uint64_t seed) {
  SplitMix64 rng = make_stream(seed, 0, StreamOp::param_init);
  for (auto& l : model.layers) init_layer(l, rng);
}

namespace {

Model build_backbone_model(std::string name, std::size_t num_classes, std::size_t input_size, std::size_t width,
                           bool extra_block, std::uint64_t seed) {
  require(num_classes >= 2, ErrorKind::InvalidConfig, "a classifier needs at least two classes");
  require(input_size >= 4 && input_size % 4 == 0, ErrorKind::OddDimension,
          "input size must be a positive multiple of 4, got " + std::to_string(input_size));
  auto block = [](std::size_t c) {
    std::vector<Layer> inner;
    inner.push_back(Layer::conv2d(c, c, 3, 1, 1));
    inner.push_back(Layer::relu());
    inner.push_back(Layer::conv2d(c, c, 3, 1, 1));
    return Layer::residual_block(std::move(inner));
  };
  Model m;
  m.name = std::move(name);
  m.layers.push_back(Layer::conv2d(3, width, 3, 1, 1));
  m.layers.push_back(Layer::relu());
  m.layers.push_back(Layer::maxpool2d(2));
  m.layers.push_back(block(width));
  m.layers.push_back(Layer::conv2d(width, 2 * width, 3, 1, 1));
  m.layers.push_back(Layer::relu());
  m.layers.push_back(Layer::maxpool2d(2));
  if (extra_block) m.layers.push_back(block(2 * width));
  m.layers.push_back(Layer::flatten());
  m.layers.push_back(Layer::dropout(0.2));
  const std::size_t side = input_size / 4;
  m.head_boundary = m.layers.size();
  m.layers.push_back(Layer::linear(2 * width * side * side, num_classes));
  init_model(m, seed);
  return m;
}

}  // namespace

Model build_student(std::size_t num_classes, std::size_t input_size, std::uint64_t seed) {
  return build_backbone_model("student", num_classes, input_size, 8, false, seed);
}

Model build_teacher(std::size_t num_classes, std::size_t input_size, std::uint64_t seed) {
  return build_backbone_model("teacher", num_classes, input_size, 16, true, seed);
}

Model replace_head(const Model& model, std::size_t new_num_classes, std::uint64_t seed) {
  require(model.head_boundary < model.layers.size(), ErrorKind::HeadMismatch, "model has no head layers");
  require(new_num_classes >= 1, ErrorKind::InvalidConfig, "head needs at least one output");
  Model out = model;
  const Layer& old_head = out.layers.back();
  require(old_head.kind == LayerKind::linear, ErrorKind::HeadMismatch, "final layer is not a linear head");
  Layer head = Layer::linear(old_head.hyper.in, new_num_classes);
  SplitMix64 rng = make_stream(seed, new_num_classes, StreamOp::head_init);
  init_layer(head, rng);
  out.layers.back() = std::move(head);
  return out;
}

Model freeze_backbone(Model model, bool frozen) {
  model.for_each_parameter([frozen](const std::string&, Parameter& p, bool in_head) {
    if (!in_head) p.frozen = frozen;
  });
  return model;
}

std::uint64_t checksum(const Model& model, ParamScope scope) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  model.for_each_parameter([&h, scope](const std::string&, const Parameter& p, bool in_head) {
    if (scope == ParamScope::backbone && in_head) return;
    if (scope == ParamScope::head && !in_head) return;
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.raw());
    for (std::size_t i = 0; i < p.value.numel() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

// --- untaped forward ------------------------------------------------------

Tensor forward_layer(const Layer& layer, const Tensor& input) {
  switch (layer.kind) {
    case LayerKind::conv2d:
      return kernels::conv2d_forward(input, layer.params[0].value, &layer.params[1].value, layer.hyper.stride,
                                     layer.hyper.padding);
    case LayerKind::linear: {
      require(input.rank() == 2, ErrorKind::ShapeMismatch, "linear expects [N,features]");
      Tensor out = kernels::matmul(input, layer.params[0].value);
      const std::size_t cols = out.dim(1);
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] += layer.params[1].value[i % cols];
      return out;
    }
    case LayerKind::relu: {
      Tensor out = input;
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case LayerKind::maxpool2d: return kernels::maxpool2d_forward(input, layer.hyper.window).output;
    case LayerKind::dropout: return input;
    case LayerKind::flatten: return input.reshape(Shape{input.dim(0), input.numel() / input.dim(0)});
    case LayerKind::residual_block: {
      Tensor h = input;
      for (const auto& l : layer.inner) h = forward_layer(l, h);
      require(h.shape() == input.shape(), ErrorKind::ShapeMismatch, "residual branch changes the shape");
      for (std::size_t i = 0; i < h.numel(); ++i) h[i] += input[i];
      return h;
    }
  }
  fail(ErrorKind::DomainError, "unknown layer kind");
}

Tensor forward(const Model& model, const Tensor& input) {
  Tensor h = input;
  for (const auto& l : model.layers) h = forward_layer(l, h);
  return h;
}

// --- taped forward --------------------------------------------------------

namespace {
Var bind(Parameter& p, Tape& tape, std::vector<ParamBinding>* bindings) {
  Tensor v = p.value;
  v.clear_grad();
  v.set_requires_grad(!p.frozen);
  Var var = tape.leaf(std::move(v));
  if (bindings) bindings->push_back({&p, var});
  return var;
}
}  // namespace

Var residual_block_forward(const Var& x, std::vector<Layer>& inner, Mode mode, SplitMix64& rng,
                           std::vector<ParamBinding>* bindings) {
  Var h = x;
  for (auto& l : inner) h = forward_layer(l, h, mode, rng, bindings);
  require(h.shape() == x.shape(), ErrorKind::ShapeMismatch, "residual branch changes the shape");
  return add(x, h);
}

Var forward_layer(Layer& layer, const Var& input, Mode mode, SplitMix64& rng, std::vector<ParamBinding>* bindings) {
  Tape& tape = input.tape();
  switch (layer.kind) {
    case LayerKind::conv2d: {
      Var w = bind(layer.params[0], tape, bindings);
      Var b = bind(layer.params[1], tape, bindings);
      return conv2d(input, w, b, layer.hyper.stride, layer.hyper.padding);
    }
    case LayerKind::linear: {
      Var w = bind(layer.params[0], tape, bindings);
      Var b = bind(layer.params[1], tape, bindings);
      return add_bias(matmul(input, w), b);
    }
    case LayerKind::relu: return relu(input);
    case LayerKind::maxpool2d: return maxpool2d(input, layer.hyper.window);
    case LayerKind::dropout: return dropout(input, layer.hyper.dropout_p, mode == Mode::train, rng);
    case LayerKind::flatten: {
      const Shape& s = input.shape();
      return reshape(input, Shape{s[0], shape_numel(s) / s[0]});
    }
    case LayerKind::residual_block: return residual_block_forward(input, layer.inner, mode, rng, bindings);
  }
  fail(ErrorKind::DomainError, "unknown layer kind");
}

Var forward(Model& model, const Var& input, Mode mode, SplitMix64& rng, std::vector<ParamBinding>* bindings) {
  Var h = input;
  for (auto& l : model.layers) h = forward_layer(l, h, mode, rng, bindings);
  return h;
}

void store_gradients(const std::vector<ParamBinding>& bindings, const Gradients& grads) {
  for (const auto& b : bindings) {
    if (b.param->frozen) continue;
    b.param->value.set_grad(grads.of(b.var).values());
  }
}

// --- checkpoints ----------------------------------------------------------

namespace {

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    // Host is assumed little-endian or converted here.
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    bytes.insert(bytes.end(), buf, buf + sizeof(T));
  }
  std::vector<std::uint8_t> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  template <typename T>
  T get() {
    require(pos_ + sizeof(T) <= bytes_.size(), ErrorKind::TruncatedFile, "checkpoint ends unexpectedly");
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  std::string get_string(std::size_t n) {
    require(pos_ + n <= bytes_.size(), ErrorKind::TruncatedFile, "checkpoint ends unexpectedly");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors) {
  ByteWriter w;
  for (char c : std::string_view("DTKD")) w.put(static_cast<std::uint8_t>(c));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    require(t.name.size() <= 0xFFFF, ErrorKind::FormatError, "tensor name too long");
    require(t.tensor.rank() <= 0xFF, ErrorKind::FormatError, "tensor rank too large");
    w.put(static_cast<std::uint16_t>(t.name.size()));
    for (char c : t.name) w.put(static_cast<std::uint8_t>(c));
    w.put(static_cast<std::uint8_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape()) w.put(static_cast<std::uint64_t>(d));
    for (double v : t.tensor.data()) w.put(v);
  }
  return std::move(w.bytes);
}

std::vector<NamedTensor> decode_tensors(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  require(bytes.size() >= 12, ErrorKind::TruncatedFile, "checkpoint shorter than its header");
  require(r.get_string(4) == "DTKD", ErrorKind::FormatError, "bad checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::FormatError,
          "unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_string(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    require(rank > 0, ErrorKind::FormatError, "tensor '" + t.name + "' has rank 0");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>());
      require(d > 0, ErrorKind::FormatError, "tensor '" + t.name + "' has a zero dimension");
      numel *= d;
    }
    require(numel <= bytes.size() / sizeof(double), ErrorKind::TruncatedFile, "tensor '" + t.name + "' is truncated");
    std::vector<double> data(numel);
    for (auto& v : data) v = r.get<double>();
    t.tensor = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(t));
  }
  require(r.done(), ErrorKind::FormatError, "trailing bytes after the last tensor");
  return out;
}

void write_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  const auto bytes = encode_tensors(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorKind::IoError, "write failed for " + path);
}

std::vector<NamedTensor> read_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensors(bytes);
}

namespace {

constexpr std::size_t kSpecFields = 9;

void encode_layer(const Layer& l, std::vector<double>& spec) {
  spec.push_back(static_cast<double>(l.kind));
  spec.push_back(static_cast<double>(l.hyper.in));
  spec.push_back(static_cast<double>(l.hyper.out));
  spec.push_back(static_cast<double>(l.hyper.kernel));
  spec.push_back(static_cast<double>(l.hyper.stride));
  spec.push_back(static_cast<double>(l.hyper.padding));
  spec.push_back(static_cast<double>(l.hyper.window));
  spec.push_back(l.hyper.dropout_p);
  spec.push_back(static_cast<double>(l.inner.size()));
  for (const auto& in : l.inner) encode_layer(in, spec);
}

Layer decode_layer(const std::vector<double>& spec, std::size_t& pos) {
  require(pos + kSpecFields <= spec.size(), ErrorKind::FormatError, "truncated architecture description");
  const auto field = [&](std::size_t k) { return static_cast<std::size_t>(spec[pos + k]); };
  const auto kind = static_cast<LayerKind>(field(0));
  Layer l;
  switch (kind) {
    case LayerKind::conv2d: l = Layer::conv2d(field(1), field(2), field(3), field(4), field(5)); break;
    case LayerKind::linear: l = Layer::linear(field(1), field(2)); break;
    case LayerKind::relu: l = Layer::relu(); break;
    case LayerKind::maxpool2d: l = Layer::maxpool2d(field(6)); break;
    case LayerKind::dropout: l = Layer::dropout(spec[pos + 7]); break;
    case LayerKind::flatten: l = Layer::flatten(); break;
    case LayerKind::residual_block: l = Layer::residual_block({}); break;
    default: fail(ErrorKind::FormatError, "unknown layer kind in checkpoint");
  }
  const std::size_t n_inner = field(8);
  pos += kSpecFields;
  for (std::size_t i = 0; i < n_inner; ++i) l.inner.push_back(decode_layer(spec, pos));
  return l;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  std::vector<NamedTensor> tensors;
  std::vector<double> spec;
  for (const auto& l : model.layers) encode_layer(l, spec);
  tensors.push_back({"meta.spec", Tensor(Shape{spec.size()}, spec)});
  tensors.push_back({"meta.layer_count", Tensor::scalar(static_cast<double>(model.layers.size()))});
  tensors.push_back({"meta.head_boundary", Tensor::scalar(static_cast<double>(model.head_boundary))});
  if (!model.name.empty()) {
    std::vector<double> chars(model.name.begin(), model.name.end());
    tensors.push_back({"meta.name", Tensor(Shape{chars.size()}, chars)});
  }
  std::vector<double> frozen;
  model.for_each_parameter([&](const std::string& name, const Parameter& p, bool) {
    Tensor v = p.value;
    v.clear_grad();
    tensors.push_back({name, std::move(v)});
    frozen.push_back(p.frozen ? 1.0 : 0.0);
  });
  if (!frozen.empty()) tensors.push_back({"meta.frozen", Tensor(Shape{frozen.size()}, frozen)});
  write_tensors(path, tensors);
}

Model load_checkpoint(const std::string& path) {
  const auto tensors = read_tensors(path);
  auto find = [&](const std::string& name) -> const Tensor* {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  };
  const Tensor* spec = find("meta.spec");
  const Tensor* count = find("meta.layer_count");
  const Tensor* boundary = find("meta.head_boundary");
  require(spec && count && boundary, ErrorKind::FormatError, path + " is not a model checkpoint");
  Model m;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(count->item()); ++i) m.layers.push_back(decode_layer(spec->values(), pos));
  m.head_boundary = static_cast<std::size_t>(boundary->item());
  if (const Tensor* name = find("meta.name"))
    for (double c : name->data()) m.name.push_back(static_cast<char>(c));
  const Tensor* frozen = find("meta.frozen");
  std::size_t k = 0;
  m.for_each_parameter([&](const std::string& name, Parameter& p, bool) {
    const Tensor* t = find(name);
    require(t != nullptr, ErrorKind::FormatError, "checkpoint lacks parameter " + name);
    require(t->shape() == p.value.shape(), ErrorKind::ShapeMismatch, "checkpoint parameter " + name + " has wrong shape");
    p.value = *t;
    p.frozen = frozen && k < frozen->numel() && (*frozen)[k] != 0.0;
    ++k;
  });
  return m;
}

}  // namespace dtkd
