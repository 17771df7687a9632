#include "aslpar/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "aslpar/rng.hpp"
#include "aslpar/tensor_io.hpp"

namespace aslpar {
namespace {

using Rgb = std::array<float, 3>;

std::size_t frac_row(std::size_t height, double f) {
  return static_cast<std::size_t>(std::lround(static_cast<double>(height) * f));
}

std::size_t half_width(std::size_t width, double f) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(width) * f)));
}

struct Canvas {
  Tensor& img;
  std::size_t h, w;

  void fill(long r0, long r1, long c0, long c1, const Rgb& color) {
    for (long r = std::max(0L, r0); r < std::min<long>(static_cast<long>(h), r1); ++r) {
      for (long c = std::max(0L, c0); c < std::min<long>(static_cast<long>(w), c1); ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          img[(ch * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(c)] = color[ch];
        }
      }
    }
  }
};

struct Sample {
  Tensor image;
  LabelVector labels;
};

Sample render(const SyntheticConfig& cfg, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_int_distribution<int> pick3(0, 2), pick2(0, 1), jitter(-1, 1);
  std::uniform_real_distribution<float> bg(0.3F, 0.7F);
  std::uniform_real_distribution<float> tint(-0.2F * cfg.contrast, 0.2F * cfg.contrast);
  std::normal_distribution<float> noise(0.0F, 1.0F);

  const bool wide = pick2(rng) == 1;
  const int hat = pick3(rng), torso = pick3(rng), legs = pick3(rng), shoes = pick2(rng);

  LabelVector y(12, 0);
  y[0] = wide ? 1 : 0;
  y[1 + static_cast<std::size_t>(hat)] = 1;
  y[4 + static_cast<std::size_t>(torso)] = 1;
  y[7 + static_cast<std::size_t>(legs)] = 1;
  y[10 + static_cast<std::size_t>(shoes)] = 1;

  const std::size_t h = cfg.image_height, w = cfg.image_width;
  Tensor img(Shape{3, h, w});
  Canvas canvas{img, h, w};
  const Rgb base{bg(rng), bg(rng), bg(rng)};
  canvas.fill(0, static_cast<long>(h), 0, static_cast<long>(w), base);

  const float c = cfg.contrast;
  auto shade = [&](Rgb col) {
    for (float& v : col) v += tint(rng);
    return col;
  };
  const Rgb hats[3] = {{0.5F + c, 0.5F - c / 2, 0.5F - c / 2}, {0.5F - c / 2, 0.5F - c / 2, 0.5F + c},
                       {0.5F - c / 2, 0.5F + c, 0.5F - c / 2}};
  const Rgb torsos[3] = {{0.5F + c, 0.5F, 0.5F}, {0.5F, 0.5F + c, 0.5F}, {0.5F, 0.5F, 0.5F + c}};
  const Rgb dark{0.5F - c, 0.5F - c, 0.5F - c}, light{0.5F + c, 0.5F + c, 0.5F + c};
  const Rgb stripe_a{0.5F + c, 0.5F - c, 0.5F + c}, stripe_b{0.5F, 0.5F - c, 0.5F};

  const long dy = jitter(rng), dx = jitter(rng);
  const long cx = static_cast<long>(w / 2) + dx;
  const BodyLayout lay = body_layout(h);
  auto rows = [&](std::size_t r) { return static_cast<long>(r) + dy; };
  auto span_fill = [&](std::size_t r0, std::size_t r1, std::size_t hw, const Rgb& col) {
    canvas.fill(rows(r0), rows(r1), cx - static_cast<long>(hw), cx + static_cast<long>(hw), col);
  };

  span_fill(lay.head_begin, lay.head_end, half_width(w, 0.15), shade(hats[hat]));
  span_fill(lay.torso_begin, lay.torso_end, half_width(w, wide ? 0.34 : 0.22), shade(torsos[torso]));
  if (legs == 2) {
    const Rgb a = shade(stripe_a), b = shade(stripe_b);
    for (std::size_t r = lay.legs_begin; r < lay.legs_end; ++r) {
      span_fill(r, r + 1, half_width(w, 0.2), ((r - lay.legs_begin) / 2) % 2 == 0 ? a : b);
    }
  } else {
    span_fill(lay.legs_begin, lay.legs_end, half_width(w, 0.2), shade(legs == 0 ? dark : light));
  }
  span_fill(lay.feet_begin, lay.feet_end, half_width(w, 0.25), shade(shoes == 0 ? dark : light));

  if (cfg.noise_sigma > 0.0F) {
    for (float& v : img.data()) v += cfg.noise_sigma * noise(rng);
  }
  for (float& v : img.data()) v = std::clamp(v, 0.0F, 1.0F);
  return {std::move(img), std::move(y)};
}

Dataset render_split(const SyntheticConfig& cfg, std::size_t count, std::uint64_t split_tag) {
  Dataset d;
  d.schema = AttributeSchema::pedestrian_default();
  const std::uint64_t split_seed = derive_seed(derive_seed(cfg.seed, Stream::kData), split_tag);
  for (std::size_t i = 0; i < count; ++i) {
    Sample s = render(cfg, derive_seed(split_seed, i));
    d.images.push_back(std::move(s.image));
    d.labels.push_back(std::move(s.labels));
  }
  return d;
}

}  // namespace

void Dataset::validate() const {
  if (images.size() != labels.size()) throw std::invalid_argument("dataset: image/label count mismatch");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i].shape() == images.front().shape())) {
      throw DimensionError("dataset: image " + std::to_string(i) + " has shape " + images[i].shape().str());
    }
    validate_labels(labels[i], schema);
  }
}

void SyntheticConfig::validate() const {
  if (train_count == 0 && test_count == 0) throw std::invalid_argument("synthetic config: no samples requested");
  if (image_height < 16 || image_width < 8) throw std::invalid_argument("synthetic config: image must be at least 16x8");
  if (!(noise_sigma >= 0.0F)) throw std::invalid_argument("synthetic config: noise_sigma must be non-negative");
  if (!(contrast > 0.0F && contrast < 0.5F)) throw std::invalid_argument("synthetic config: contrast must be in (0, 0.5)");
}

nlohmann::json SyntheticConfig::to_json() const {
  return {{"train_count", train_count}, {"test_count", test_count}, {"image_height", image_height},
          {"image_width", image_width}, {"seed", seed},             {"noise_sigma", noise_sigma},
          {"contrast", contrast}};
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "train_count") c.train_count = value.get<std::size_t>();
    else if (key == "test_count") c.test_count = value.get<std::size_t>();
    else if (key == "image_height") c.image_height = value.get<std::size_t>();
    else if (key == "image_width") c.image_width = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "noise_sigma") c.noise_sigma = value.get<float>();
    else if (key == "contrast") c.contrast = value.get<float>();
    else throw std::invalid_argument("synthetic config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

BodyLayout body_layout(std::size_t height) {
  return {frac_row(height, 0.04), frac_row(height, 0.21), frac_row(height, 0.21), frac_row(height, 0.55),
          frac_row(height, 0.55), frac_row(height, 0.85), frac_row(height, 0.85), frac_row(height, 0.96)};
}

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  return {render_split(cfg, cfg.train_count, 1), render_split(cfg, cfg.test_count, 2)};
}

void write_manifest(const Dataset& data, const std::string& split, const std::filesystem::path& out_dir,
                    const std::string& schema_file) {
  data.validate();
  std::filesystem::create_directories(out_dir / split);
  nlohmann::json records = nlohmann::json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.dtsr", i);
    const std::string rel = split + "/" + name;
    save_tensor(data.images[i], out_dir / rel);
    std::vector<int> bits(data.labels[i].begin(), data.labels[i].end());
    records.push_back({{"image", rel}, {"labels", bits}});
  }
  nlohmann::json doc = {{"split", split}, {"schema", schema_file}, {"records", records}};
  write_text_file(out_dir / (split + ".json"), doc.dump(1) + "\n");
}

DatasetFiles write_dataset(const SyntheticData& data, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  data.train.schema.save(out_dir / "schema.json");
  write_manifest(data.train, "train", out_dir);
  write_manifest(data.test, "test", out_dir);
  return {out_dir / "schema.json", out_dir / "train.json", out_dir / "test.json"};
}

Dataset load_manifest(const std::filesystem::path& manifest) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(manifest.string() + ": " + e.what());
  }
  const auto root = manifest.parent_path();
  Dataset d;
  d.schema = AttributeSchema::load(root / doc.at("schema").get<std::string>());
  for (const auto& rec : doc.at("records")) {
    const auto path = root / rec.at("image").get<std::string>();
    if (!std::filesystem::exists(path)) throw std::runtime_error(manifest.string() + ": missing image file " + path.string());
    LabelVector y;
    for (int b : rec.at("labels").get<std::vector<int>>()) {
      if (b != 0 && b != 1) throw std::invalid_argument(path.string() + ": labels must be 0 or 1");
      y.push_back(static_cast<std::uint8_t>(b));
    }
    if (y.size() != d.schema.size()) {
      throw std::invalid_argument(path.string() + ": " + std::to_string(y.size()) + " labels, schema has " +
                                  std::to_string(d.schema.size()));
    }
    Tensor img = load_tensor(path);
    if (!d.images.empty() && !(img.shape() == d.images.front().shape())) {
      throw DimensionError(path.string() + ": shape " + img.shape().str() + " differs from " +
                           d.images.front().shape().str());
    }
    d.images.push_back(std::move(img));
    d.labels.push_back(std::move(y));
  }
  if (d.images.empty()) throw std::invalid_argument(manifest.string() + ": no records");
  return d;
}

std::vector<std::uint8_t> encode_noise_ppm(const Tensor& noise, float amplification,
                                           const std::optional<CanvasPlacement>& placement) {
  if (!(amplification > 0.0F)) throw std::invalid_argument("export_noise_image: amplification must be positive");
  if (noise.rank() != 3 || noise.dim(0) != 3) throw DimensionError("export_noise_image: expected [3 x H x W], got " + noise.shape().str());
  const std::size_t nh = noise.dim(1), nw = noise.dim(2);
  CanvasPlacement at = placement.value_or(CanvasPlacement{nh, nw, 0, 0});
  if (at.row0 + nh > at.height || at.col0 + nw > at.width) {
    throw DimensionError("export_noise_image: block does not fit its canvas");
  }
  const std::string header = "P6\n" + std::to_string(at.width) + " " + std::to_string(at.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t r = 0; r < at.height; ++r) {
    for (std::size_t c = 0; c < at.width; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        float v = 0.0F;
        if (r >= at.row0 && r < at.row0 + nh && c >= at.col0 && c < at.col0 + nw) {
          v = noise[(ch * nh + (r - at.row0)) * nw + (c - at.col0)];
        }
        const float px = std::clamp(0.5F + amplification * v, 0.0F, 1.0F);
        out.push_back(static_cast<std::uint8_t>(std::floor(px * 255.0F + 0.5F)));
      }
    }
  }
  return out;
}

void export_noise_image(const Tensor& noise, float amplification, const std::filesystem::path& path,
                        const std::optional<CanvasPlacement>& placement) {
  write_file_bytes(path, encode_noise_ppm(noise, amplification, placement));
}

}  // namespace aslpar
