#include "experiment_config.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace dtkd::cli {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  fail(ErrorKind::InvalidConfig, "key '" + std::string(key) + "': cannot read '" + std::string(value) + "' as " +
                                     std::string(expected));
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view v) {
  std::vector<T> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_number<T>(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

template <typename E, std::size_t N>
E parse_enum(std::string_view key, std::string_view v, const E (&options)[N]) {
  for (E e : options)
    if (to_string(e) == v) return e;
  std::string expected;
  for (E e : options) expected += (expected.empty() ? "" : "|") + std::string(to_string(e));
  bad_value(key, v, expected);
}

constexpr DatasetKind kDatasets[] = {DatasetKind::shapes, DatasetKind::cifar10, DatasetKind::idx};
constexpr Normalization kNormalizations[] = {Normalization::none, Normalization::cifar, Normalization::train};
constexpr CorruptionKind kImageCorruptions[] = {CorruptionKind::center_black, CorruptionKind::quarter_black};
constexpr GameOutput kOutputs[] = {GameOutput::logits, GameOutput::softmax};

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// Access is a generic lambda returning a reference into the config; it is
// instantiated for both const and mutable configs.
template <typename Access>
Field double_field(std::string key, Access access) {
  return {key, [key, access](ExperimentConfig& c, std::string_view v) { access(c) = parse_number<double>(key, v); },
          [access](const ExperimentConfig& c) { return format_double(access(c)); }};
}

template <typename T, typename Access>
Field integer_field(std::string key, Access access) {
  return {key, [key, access](ExperimentConfig& c, std::string_view v) { access(c) = parse_number<T>(key, v); },
          [access](const ExperimentConfig& c) { return std::to_string(access(c)); }};
}

template <typename Access>
Field string_field(std::string key, Access access) {
  return {key, [access](ExperimentConfig& c, std::string_view v) { access(c) = std::string(v); },
          [access](const ExperimentConfig& c) { return access(c); }};
}

template <typename T, typename Access>
Field list_field(std::string key, Access access) {
  return {key, [key, access](ExperimentConfig& c, std::string_view v) { access(c) = parse_list<T>(key, v); },
          [access](const ExperimentConfig& c) { return format_list(access(c)); }};
}

template <typename E, std::size_t N, typename Access>
Field enum_field(std::string key, const E (&options)[N], Access access) {
  return {key, [key, &options, access](ExperimentConfig& c, std::string_view v) { access(c) = parse_enum(key, v, options); },
          [access](const ExperimentConfig& c) { return std::string(to_string(access(c))); }};
}

#define DTKD_FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(enum_field("dataset", kDatasets, DTKD_FIELD(dataset)));
    f.push_back(string_field("train_data", DTKD_FIELD(train_data)));
    f.push_back(string_field("train_labels", DTKD_FIELD(train_labels)));
    f.push_back(string_field("val_data", DTKD_FIELD(val_data)));
    f.push_back(string_field("val_labels", DTKD_FIELD(val_labels)));
    f.push_back(list_field<std::size_t>("source_classes", DTKD_FIELD(source_classes)));
    f.push_back(list_field<std::size_t>("target_classes", DTKD_FIELD(target_classes)));
    f.push_back(integer_field<std::size_t>("image_size", DTKD_FIELD(image_size)));
    f.push_back(enum_field("normalization", kNormalizations, DTKD_FIELD(normalization)));
    f.push_back(integer_field<std::size_t>("shapes_train_per_class", DTKD_FIELD(shapes_train_per_class)));
    f.push_back(integer_field<std::size_t>("shapes_val_per_class", DTKD_FIELD(shapes_val_per_class)));
    f.push_back(double_field("shapes_noise", DTKD_FIELD(shapes_noise)));
    f.push_back(integer_field<std::uint64_t>("data_seed", DTKD_FIELD(data_seed)));
    f.push_back(double_field("train_fraction", DTKD_FIELD(train_fraction)));
    f.push_back(double_field("label_noise_fraction", DTKD_FIELD(label_noise_fraction)));
    f.push_back(double_field("image_noise_train_fraction", DTKD_FIELD(image_noise_train_fraction)));
    f.push_back(enum_field("corruption", kImageCorruptions, DTKD_FIELD(corruption)));
    f.push_back(integer_field<std::size_t>("center_min", DTKD_FIELD(center_min)));
    f.push_back(integer_field<std::size_t>("center_max", DTKD_FIELD(center_max)));
    f.push_back(double_field("learning_rate", DTKD_FIELD(training.learning_rate)));
    f.push_back(double_field("momentum", DTKD_FIELD(training.momentum)));
    f.push_back(double_field("weight_decay", DTKD_FIELD(training.weight_decay)));
    f.push_back(integer_field<std::size_t>("batch_size", DTKD_FIELD(training.batch_size)));
    f.push_back(integer_field<std::size_t>("max_epochs", DTKD_FIELD(training.max_epochs)));
    f.push_back(integer_field<std::size_t>("lr_patience", DTKD_FIELD(training.lr_patience)));
    f.push_back(double_field("lr_factor", DTKD_FIELD(training.lr_factor)));
    f.push_back(integer_field<std::size_t>("early_stop_patience", DTKD_FIELD(training.early_stop_patience)));
    f.push_back(double_field("flip_prob", DTKD_FIELD(training.flip_prob)));
    f.push_back(integer_field<std::size_t>("threads", DTKD_FIELD(training.threads)));
    f.push_back(integer_field<std::size_t>("pretrain_max_epochs", DTKD_FIELD(pretrain_max_epochs)));
    f.push_back(double_field("temperature", DTKD_FIELD(distillation.temperature)));
    f.push_back(double_field("alpha", DTKD_FIELD(distillation.alpha)));
    f.push_back({"freeze_backbone",
                 [](ExperimentConfig& c, std::string_view v) { c.freeze_backbone = parse_bool("freeze_backbone", v); },
                 [](const ExperimentConfig& c) { return std::string(c.freeze_backbone ? "true" : "false"); }});
    f.push_back({"grid",
                 [](ExperimentConfig& c, std::string_view v) {
                   const auto x = v.find('x');
                   if (x == std::string_view::npos) bad_value("grid", v, "RxC");
                   c.grid_rows = parse_number<std::size_t>("grid", v.substr(0, x));
                   c.grid_cols = parse_number<std::size_t>("grid", v.substr(x + 1));
                 },
                 [](const ExperimentConfig& c) {
                   return std::to_string(c.grid_rows) + "x" + std::to_string(c.grid_cols);
                 }});
    f.push_back(integer_field<std::size_t>("background_size", DTKD_FIELD(background_size)));
    f.push_back(enum_field("game_output", kOutputs, DTKD_FIELD(game_output)));
    f.push_back(list_field<std::uint64_t>("seeds", DTKD_FIELD(seeds)));
    f.push_back(string_field("out", DTKD_FIELD(out)));
    f.push_back(string_field("run_name", DTKD_FIELD(run_name)));
    return f;
  }();
  return table;
}

#undef DTKD_FIELD

const Field& field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  fail(ErrorKind::InvalidConfig, "unknown config key '" + std::string(key) + "'");
}

void require_fraction(double v, std::string_view name, bool allow_zero = true) {
  require(std::isfinite(v) && (allow_zero ? v >= 0.0 : v > 0.0) && v <= 1.0, ErrorKind::InvalidConfig,
          std::string(name) + " must lie in " + (allow_zero ? "[0, 1]" : "(0, 1]"));
}

void require_path(const std::string& path, std::string_view key) {
  require(std::filesystem::exists(path), ErrorKind::InvalidConfig,
          "key '" + std::string(key) + "': path does not exist: " + path);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::shapes: return "shapes";
    case DatasetKind::cifar10: return "cifar10";
    case DatasetKind::idx: return "idx";
  }
  return "unknown";
}

std::string_view to_string(Normalization n) {
  switch (n) {
    case Normalization::none: return "none";
    case Normalization::cifar: return "cifar";
    case Normalization::train: return "train";
  }
  return "unknown";
}

std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::center_black: return "center_black";
    case CorruptionKind::quarter_black: return "quarter_black";
    case CorruptionKind::label_noise: return "label_noise";
  }
  return "unknown";
}

void ExperimentConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, trim(value)); }

std::string ExperimentConfig::get(std::string_view key) const { return field(key).get(*this); }

void ExperimentConfig::validate() const {
  training.validate();
  distillation.validate();
  require(!seeds.empty(), ErrorKind::InvalidConfig, "seeds must not be empty");
  require(std::set(seeds.begin(), seeds.end()).size() == seeds.size(), ErrorKind::InvalidConfig,
          "seeds must be distinct");
  require_fraction(train_fraction, "train_fraction", false);
  require_fraction(label_noise_fraction, "label_noise_fraction");
  require_fraction(image_noise_train_fraction, "image_noise_train_fraction");
  require(image_size > 0 && image_size % 4 == 0, ErrorKind::InvalidConfig, "image_size must be a positive multiple of 4");
  require(center_min <= center_max || center_max == 0, ErrorKind::InvalidConfig, "center_min exceeds center_max");
  require(center_max <= image_size && center_min <= image_size, ErrorKind::InvalidConfig,
          "center square cannot exceed image_size");
  require(source_classes.size() >= 2 && target_classes.size() >= 2, ErrorKind::InvalidConfig,
          "source_classes and target_classes need at least two classes each");
  for (const auto* group : {&source_classes, &target_classes})
    require(std::set(group->begin(), group->end()).size() == group->size(), ErrorKind::InvalidConfig,
            "class lists must not repeat a class");
  if (dataset == DatasetKind::shapes) {
    for (const auto* group : {&source_classes, &target_classes})
      for (std::size_t c : *group)
        require(c < kShapeCount, ErrorKind::InvalidConfig, "shape class " + std::to_string(c) + " does not exist");
    require(shapes_train_per_class > 0 && shapes_val_per_class > 0, ErrorKind::InvalidConfig,
            "shape counts must be positive");
  } else {
    require(!train_data.empty() && !val_data.empty(), ErrorKind::InvalidConfig,
            "train_data and val_data are required for file datasets");
    if (dataset == DatasetKind::idx)
      require(!train_labels.empty() && !val_labels.empty(), ErrorKind::InvalidConfig,
              "train_labels and val_labels are required for idx datasets");
  }
  for (const auto& [path, key] : {std::pair{&train_data, "train_data"}, std::pair{&train_labels, "train_labels"},
                                  std::pair{&val_data, "val_data"}, std::pair{&val_labels, "val_labels"}})
    if (!path->empty()) require_path(*path, key);
  require(grid_rows > 0 && grid_cols > 0 && grid_rows * grid_cols <= kMaxPlayers, ErrorKind::InvalidConfig,
          "grid must have between 1 and " + std::to_string(kMaxPlayers) + " cells");
  require(grid_rows <= image_size && grid_cols <= image_size, ErrorKind::InvalidConfig, "grid finer than the image");
  require(background_size > 0, ErrorKind::InvalidConfig, "background_size must be positive");
  require(pretrain_max_epochs > 0, ErrorKind::InvalidConfig, "pretrain_max_epochs must be positive");
  require(!run_name.empty() && run_name.find('/') == std::string::npos, ErrorKind::InvalidConfig,
          "run_name must be a non-empty single path component");
  require(!out.empty(), ErrorKind::InvalidConfig, "out must not be empty");
}

CorruptionSpec ExperimentConfig::corruption_spec(std::uint64_t seed) const {
  CorruptionSpec spec;
  spec.kind = corruption;
  spec.apply_fraction = image_noise_train_fraction;
  spec.max_side = center_max ? center_max : image_size;
  spec.min_side = center_min ? center_min
                             : static_cast<std::size_t>(std::llround(static_cast<double>(image_size) * 200.0 / 224.0));
  spec.min_side = std::min(spec.min_side, spec.max_side);
  spec.seed = seed;
  return spec;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

ExperimentConfig parse_config(std::string_view text, bool validate) {
  ExperimentConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorKind::InvalidConfig,
            "line " + std::to_string(line_no) + ": expected key = value");
    const std::string_view key = trim(line.substr(0, eq));
    require(seen.insert(std::string(key)).second, ErrorKind::InvalidConfig,
            "line " + std::to_string(line_no) + ": key '" + std::string(key) + "' assigned twice");
    cfg.set(key, line.substr(eq + 1));
  }
  if (validate) cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path, bool validate) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), validate);
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace dtkd::cli
