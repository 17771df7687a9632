#include "aslpar/model.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "aslpar/ops.hpp"
#include "aslpar/rng.hpp"
#include "aslpar/tensor_io.hpp"

namespace aslpar {
namespace {

template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("patch.weight", p.patch_weight);
  fn("patch.bias", p.patch_bias);
  fn("positional", p.positional);
  fn("text.table", p.attribute_table);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layer" + std::to_string(i) + ".";
    fn(pre + "ln1.gain", l.ln1_gain);
    fn(pre + "ln1.bias", l.ln1_bias);
    fn(pre + "qkv.weight", l.qkv_weight);
    fn(pre + "qkv.bias", l.qkv_bias);
    fn(pre + "out.weight", l.out_weight);
    fn(pre + "out.bias", l.out_bias);
    fn(pre + "ln2.gain", l.ln2_gain);
    fn(pre + "ln2.bias", l.ln2_bias);
    fn(pre + "mlp_in.weight", l.mlp_in_weight);
    fn(pre + "mlp_in.bias", l.mlp_in_bias);
    fn(pre + "mlp_out.weight", l.mlp_out_weight);
    fn(pre + "mlp_out.bias", l.mlp_out_bias);
  }
  fn("head.weight", p.head_weight);
  fn("head.bias", p.head_bias);
}

std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& c) {
  const std::size_t d = c.embed_dim;
  std::vector<std::pair<std::string, Shape>> out = {
      {"patch.weight", Shape{c.patch_features(), d}},
      {"patch.bias", Shape{d}},
      {"positional", Shape{c.token_count(), d}},
      {"text.table", Shape{c.attribute_count, d}},
  };
  for (std::size_t i = 0; i < c.fusion_layers; ++i) {
    const std::string pre = "layer" + std::to_string(i) + ".";
    out.emplace_back(pre + "ln1.gain", Shape{d});
    out.emplace_back(pre + "ln1.bias", Shape{d});
    out.emplace_back(pre + "qkv.weight", Shape{d, 3 * d});
    out.emplace_back(pre + "qkv.bias", Shape{3 * d});
    out.emplace_back(pre + "out.weight", Shape{d, d});
    out.emplace_back(pre + "out.bias", Shape{d});
    out.emplace_back(pre + "ln2.gain", Shape{d});
    out.emplace_back(pre + "ln2.bias", Shape{d});
    out.emplace_back(pre + "mlp_in.weight", Shape{d, c.mlp_hidden});
    out.emplace_back(pre + "mlp_in.bias", Shape{c.mlp_hidden});
    out.emplace_back(pre + "mlp_out.weight", Shape{c.mlp_hidden, d});
    out.emplace_back(pre + "mlp_out.bias", Shape{d});
  }
  out.emplace_back("head.weight", Shape{c.attribute_count, d});
  out.emplace_back("head.bias", Shape{c.attribute_count});
  return out;
}

ModelParams empty_params(const ModelConfig& config) {
  ModelParams p;
  p.layers.resize(config.fusion_layers);
  return p;
}

Tensor normal_tensor(Shape shape, float stddev, Rng& rng) {
  std::normal_distribution<float> dist(0.0F, stddev);
  Tensor t(shape);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (image_height == 0 || image_width == 0 || channels == 0) fail("image dimensions must be positive");
  if (patch_size == 0) fail("patch_size must be positive");
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    fail("patch_size " + std::to_string(patch_size) + " must divide image " + std::to_string(image_height) + "x" +
         std::to_string(image_width));
  }
  if (embed_dim == 0 || attention_heads == 0 || embed_dim % attention_heads != 0) {
    fail("attention_heads must divide embed_dim");
  }
  if (mlp_hidden == 0) fail("mlp_hidden must be positive");
  if (attribute_count == 0) fail("attribute_count must be positive");
  if (!(aggregator_temperature > 0.0F)) fail("aggregator_temperature must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"image_height", image_height},
          {"image_width", image_width},
          {"channels", channels},
          {"patch_size", patch_size},
          {"embed_dim", embed_dim},
          {"fusion_layers", fusion_layers},
          {"attention_heads", attention_heads},
          {"mlp_hidden", mlp_hidden},
          {"attribute_count", attribute_count},
          {"aggregator_temperature", aggregator_temperature}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "image_height") c.image_height = value.get<std::size_t>();
    else if (key == "image_width") c.image_width = value.get<std::size_t>();
    else if (key == "channels") c.channels = value.get<std::size_t>();
    else if (key == "patch_size") c.patch_size = value.get<std::size_t>();
    else if (key == "embed_dim") c.embed_dim = value.get<std::size_t>();
    else if (key == "fusion_layers") c.fusion_layers = value.get<std::size_t>();
    else if (key == "attention_heads") c.attention_heads = value.get<std::size_t>();
    else if (key == "mlp_hidden") c.mlp_hidden = value.get<std::size_t>();
    else if (key == "attribute_count") c.attribute_count = value.get<std::size_t>();
    else if (key == "aggregator_temperature") c.aggregator_temperature = value.get<float>();
    else throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) { visit_params(*this, fn); }

void ModelParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_params(*this, fn);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(derive_seed(seed, Stream::kInit));
  ModelParams p = empty_params(config);
  const auto layout = param_layout(config);
  std::size_t at = 0;
  p.for_each([&](const std::string& name, Tensor& t) {
    const Shape shape = layout[at++].second;
    const bool is_bias = name.ends_with(".bias");
    if (name.ends_with(".gain")) {
      t = Tensor(shape, 1.0F);
    } else if (is_bias) {
      t = Tensor(shape);
    } else if (name == "positional") {
      t = normal_tensor(shape, 0.1F, rng);
    } else if (name == "text.table") {
      t = normal_tensor(shape, 1.0F, rng);
    } else if (name == "head.weight") {
      t = normal_tensor(shape, 0.1F, rng);
    } else {
      const float fan = static_cast<float>(shape[0] + shape[1]);
      t = normal_tensor(shape, std::sqrt(2.0F / fan), rng);
    }
  });
  return p;
}

Shape expected_shape(const std::string& name, const ModelConfig& config) {
  for (const auto& [n, s] : param_layout(config)) {
    if (n == name) return s;
  }
  throw std::invalid_argument("unknown parameter '" + name + "'");
}

void validate_params(const ModelParams& params, const ModelConfig& config) {
  if (params.layers.size() != config.fusion_layers) {
    throw DimensionError("params hold " + std::to_string(params.layers.size()) + " fusion layers, config expects " +
                         std::to_string(config.fusion_layers));
  }
  const auto layout = param_layout(config);
  std::size_t at = 0;
  params.for_each([&](const std::string& name, const Tensor& t) {
    const Shape& want = layout[at++].second;
    if (!(t.shape() == want)) {
      throw DimensionError("parameter " + name + " has shape " + t.shape().str() + ", expected " + want.str());
    }
    if (!t.all_finite()) throw std::domain_error("parameter " + name + " contains non-finite values");
  });
}

std::vector<NodeId> ModelVars::ids() const {
  std::vector<NodeId> out = {patch_weight.id, patch_bias.id, positional.id, attribute_table.id};
  for (const auto& l : layers) {
    for (Var v : {l.ln1_gain, l.ln1_bias, l.qkv_weight, l.qkv_bias, l.out_weight, l.out_bias, l.ln2_gain, l.ln2_bias,
                  l.mlp_in_weight, l.mlp_in_bias, l.mlp_out_weight, l.mlp_out_bias}) {
      out.push_back(v.id);
    }
  }
  out.push_back(head_weight.id);
  out.push_back(head_bias.id);
  return out;
}

ModelVars bind_params(Graph& g, const ModelParams& p, bool trainable) {
  auto bind = [&](const Tensor& t) { return trainable ? g.parameter(t) : g.input(t); };
  ModelVars v;
  v.patch_weight = bind(p.patch_weight);
  v.patch_bias = bind(p.patch_bias);
  v.positional = bind(p.positional);
  v.attribute_table = bind(p.attribute_table);
  for (const auto& l : p.layers) {
    LayerVars lv;
    lv.ln1_gain = bind(l.ln1_gain);
    lv.ln1_bias = bind(l.ln1_bias);
    lv.qkv_weight = bind(l.qkv_weight);
    lv.qkv_bias = bind(l.qkv_bias);
    lv.out_weight = bind(l.out_weight);
    lv.out_bias = bind(l.out_bias);
    lv.ln2_gain = bind(l.ln2_gain);
    lv.ln2_bias = bind(l.ln2_bias);
    lv.mlp_in_weight = bind(l.mlp_in_weight);
    lv.mlp_in_bias = bind(l.mlp_in_bias);
    lv.mlp_out_weight = bind(l.mlp_out_weight);
    lv.mlp_out_bias = bind(l.mlp_out_bias);
    v.layers.push_back(lv);
  }
  v.head_weight = bind(p.head_weight);
  v.head_bias = bind(p.head_bias);
  return v;
}

ForwardOutput values_of(const ForwardVars& v) {
  return {v.image_tokens.value(), v.text_tokens.value(), v.fused_image.value(),
          v.fused_text.value(),   v.probs.value(),       v.gl_scores.value()};
}

Var patch_embed(Var image, const ModelVars& vars, const ModelConfig& config) {
  if (!(image.shape() == config.image_shape())) {
    throw DimensionError("patch_embed: image " + image.shape().str() + " does not match config " +
                         config.image_shape().str());
  }
  Var patches = ops::patchify(image, config.patch_size);
  Var projected = ops::add_row_bias(ops::matmul(patches, vars.patch_weight), vars.patch_bias);
  return ops::add(projected, vars.positional);
}

Var text_embed(const AttributeSchema& schema, const ModelVars& vars, const ModelConfig& config,
               std::optional<Var> prompt_offsets) {
  if (schema.size() != config.attribute_count) {
    throw DimensionError("text_embed: schema has " + std::to_string(schema.size()) + " attributes, model expects " +
                         std::to_string(config.attribute_count));
  }
  std::vector<std::size_t> idx(schema.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Var text = ops::embedding(vars.attribute_table, idx);
  if (prompt_offsets) text = ops::add(text, *prompt_offsets);
  return text;
}

namespace {

Var fusion_layer(Var x, const LayerVars& l, std::size_t heads) {
  Var h = ops::layer_norm(x, l.ln1_gain, l.ln1_bias);
  Var qkv = ops::add_row_bias(ops::matmul(h, l.qkv_weight), l.qkv_bias);
  Var attn = ops::multi_head_attention(qkv, heads);
  x = ops::add(x, ops::add_row_bias(ops::matmul(attn, l.out_weight), l.out_bias));
  h = ops::layer_norm(x, l.ln2_gain, l.ln2_bias);
  h = ops::relu(ops::add_row_bias(ops::matmul(h, l.mlp_in_weight), l.mlp_in_bias));
  return ops::add(x, ops::add_row_bias(ops::matmul(h, l.mlp_out_weight), l.mlp_out_bias));
}

}  // namespace

std::pair<Var, Var> fuse(Var image_tokens, Var text_tokens, const ModelVars& vars, const ModelConfig& config) {
  if (vars.layers.empty()) return {image_tokens, text_tokens};
  const std::size_t t = image_tokens.shape()[0];
  const std::size_t n = text_tokens.shape()[0];
  Var x = ops::concat_rows(image_tokens, text_tokens);
  for (const auto& layer : vars.layers) x = fusion_layer(x, layer, config.attention_heads);
  return {ops::slice_rows(x, 0, t), ops::slice_rows(x, t, n)};
}

Var predict(Var fused_text, const ModelVars& vars) {
  Var logits = ops::add(ops::sum_last_axis(ops::mul(fused_text, vars.head_weight)), vars.head_bias);
  return ops::clamp(ops::sigmoid(logits), kProbFloor, 1.0F - kProbFloor);
}

Var aggregate_gl(Var image_tokens, Var text_tokens, float temperature) {
  if (!(temperature > 0.0F)) throw std::invalid_argument("aggregate_gl: temperature must be positive");
  Var img_unit = ops::normalize_rows(image_tokens);
  Var text_unit = ops::normalize_rows(text_tokens);
  Var sims = ops::matmul(text_unit, ops::transpose(img_unit));  // [N x T]
  Var weights = ops::softmax(ops::scale(sims, 1.0F / temperature), 1);
  Var pooled = ops::matmul(weights, image_tokens);  // [N x d]
  Var raw = ops::row_dot(ops::normalize_rows(pooled), text_unit);
  return ops::clamp(ops::affine(raw, 0.5F, 0.5F), kProbFloor, 1.0F - kProbFloor);
}

ForwardVars forward(Var image, const Model& model, const ModelVars& vars, std::optional<Var> prompt_offsets) {
  ForwardVars out;
  out.image_tokens = patch_embed(image, vars, model.config);
  out.text_tokens = text_embed(model.schema, vars, model.config, prompt_offsets);
  std::tie(out.fused_image, out.fused_text) = fuse(out.image_tokens, out.text_tokens, vars, model.config);
  out.probs = predict(out.fused_text, vars);
  out.gl_scores = aggregate_gl(out.image_tokens, out.text_tokens, model.config.aggregator_temperature);
  return out;
}

ForwardOutput infer(const Model& model, const Tensor& image, const Tensor* prompt_offsets) {
  Graph g;
  ModelVars vars = bind_params(g, model.params, false);
  Var img = g.input(image);
  std::optional<Var> prompt;
  if (prompt_offsets != nullptr) prompt = g.input(*prompt_offsets);
  return values_of(forward(img, model, vars, prompt));
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  validate_params(model.params, model.config);
  std::filesystem::create_directories(dir);
  model.params.for_each([&](const std::string& name, const Tensor& t) { save_tensor(t, dir / (name + ".dtsr")); });
  model.schema.save(dir / "schema.json");
  nlohmann::json cfg = model.config.to_json();
  nlohmann::json doc = {{"model", cfg}, {"schema", "schema.json"}};
  write_text_file(dir / "config.json", doc.dump(2) + "\n");
}

Model load_checkpoint(const std::filesystem::path& dir) {
  const auto doc = nlohmann::json::parse(read_text_file(dir / "config.json"));
  Model model;
  model.config = ModelConfig::from_json(doc.at("model"));
  model.schema = AttributeSchema::load(dir / doc.at("schema").get<std::string>());
  if (model.schema.size() != model.config.attribute_count) {
    throw DimensionError(dir.string() + ": schema has " + std::to_string(model.schema.size()) +
                         " attributes, config expects " + std::to_string(model.config.attribute_count));
  }
  model.params = empty_params(model.config);
  model.params.for_each([&](const std::string& name, Tensor& t) { t = load_tensor(dir / (name + ".dtsr")); });
  validate_params(model.params, model.config);
  return model;
}

std::uint64_t hash_params(const ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  params.for_each([&](const std::string& name, const Tensor& t) {
    h = fnv1a64(reinterpret_cast<const std::uint8_t*>(name.data()), name.size(), h);
    const auto bytes = encode_tensor(t);
    h = fnv1a64(bytes.data(), bytes.size(), h);
  });
  return h;
}

}  // namespace aslpar
