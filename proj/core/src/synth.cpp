#include "couplenet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "couplenet/rng.hpp"

namespace couplenet {

std::string to_string(ShapeClass c) {
  return std::string(kShapeClassNames[static_cast<std::size_t>(c)]);
}

ShapeClass parse_shape_class(std::string_view s) {
  for (std::size_t i = 0; i < kNumShapeClasses; ++i) {
    if (kShapeClassNames[i] == s) return static_cast<ShapeClass>(i);
  }
  throw std::invalid_argument("unknown shape class '" + std::string(s) + "'");
}

void SceneConfig::validate() const {
  if (min_size < 16 || max_size < min_size) {
    throw std::invalid_argument("scene: need 16 <= min_size <= max_size");
  }
  if (min_objects < 0 || max_objects < min_objects) {
    throw std::invalid_argument("scene: need 0 <= min_objects <= max_objects");
  }
  if (occlusion_prob < 0.0 || occlusion_prob > 1.0 || truncation_prob < 0.0 ||
      truncation_prob > 1.0) {
    throw std::invalid_argument("scene: probabilities must lie in [0, 1]");
  }
  if (noise_level < 0.0) throw std::invalid_argument("scene: noise_level must be >= 0");
  if (min_object_size < 4 || max_object_size < min_object_size) {
    throw std::invalid_argument("scene: need 4 <= min_object_size <= max_object_size");
  }
}

namespace {

constexpr double kMinTruncation = 0.2;
constexpr double kMaxTruncation = 0.6;
constexpr double kMinOcclusion = 0.2;
constexpr double kMaxOcclusion = 0.5;
constexpr int kPlacementAttempts = 20;

Box sample_box(Rng& rng, ShapeClass cls, const SceneConfig& cfg, double w, double h) {
  double bw = 0.0;
  double bh = 0.0;
  if (cls == ShapeClass::frame) {
    bw = rng.uniform(0.45, 0.85) * w;
    bh = rng.uniform(0.3, 0.6) * h;
  } else {
    const double hi = std::max<double>(cfg.min_object_size,
                                       std::min<double>(cfg.max_object_size, 0.6 * std::min(w, h)));
    bw = bh = rng.uniform(cfg.min_object_size, hi);
  }
  const double x1 = rng.uniform(0.0, w - bw);
  const double y1 = rng.uniform(0.0, h - bh);
  return {x1, y1, x1 + bw, y1 + bh};
}

// Pushes a fraction t of the box extent past one image border.
Box truncate_box(const Box& b, int side, double t, double w, double h) {
  const double bw = b.width();
  const double bh = b.height();
  switch (side) {
    case 0: return {-t * bw, b.y1, -t * bw + bw, b.y2};
    case 1: return {w - (1.0 - t) * bw, b.y1, w + t * bw, b.y2};
    case 2: return {b.x1, -t * bh, b.x2, -t * bh + bh};
    default: return {b.x1, h - (1.0 - t) * bh, b.x2, h + t * bh};
  }
}

// Full-height (or full-width) band covering fraction f of the visible box.
Box make_occluder(Rng& rng, const Box& vis, double f) {
  if (rng.below(2) == 0) {
    const double bw = f * vis.width();
    const double x1 = rng.uniform(vis.x1, vis.x2 - bw);
    return {x1, vis.y1, x1 + bw, vis.y2};
  }
  const double bh = f * vis.height();
  const double y1 = rng.uniform(vis.y1, vis.y2 - bh);
  return {vis.x1, y1, vis.x2, y1 + bh};
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  Scene s;
  s.image_w = cfg.min_size + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_size - cfg.min_size + 1)));
  s.image_h = cfg.min_size + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_size - cfg.min_size + 1)));
  s.noise_seed = rng.next_u64();
  const double w = s.image_w;
  const double h = s.image_h;
  const int count = rng.range(cfg.min_objects, cfg.max_objects);

  for (int i = 0; i < count; ++i) {
    const auto cls = static_cast<ShapeClass>(rng.below(kNumShapeClasses));
    const bool truncate = rng.bernoulli(cfg.truncation_prob);
    const bool occlude = rng.bernoulli(cfg.occlusion_prob);
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      SceneObject obj;
      obj.cls = cls;
      obj.box = sample_box(rng, cls, cfg, w, h);
      if (truncate) {
        obj.truncation = rng.uniform(kMinTruncation, kMaxTruncation);
        obj.box = truncate_box(obj.box, static_cast<int>(rng.below(4)), obj.truncation, w, h);
      }
      const Box vis = obj.visible_box(w, h);
      const bool overlaps = std::any_of(s.objects.begin(), s.objects.end(), [&](const SceneObject& o) {
        return compute_iou(o.visible_box(w, h), vis) > cfg.max_overlap_iou;
      });
      if (overlaps) continue;
      if (occlude) obj.occluders.push_back(make_occluder(rng, vis, rng.uniform(kMinOcclusion, kMaxOcclusion)));
      s.objects.push_back(std::move(obj));
      break;
    }
  }
  return s;
}

Scene scale_scene(const Scene& scene, double f) {
  Scene s = scene;
  s.image_w = std::max(1, static_cast<int>(std::lround(scene.image_w * f)));
  s.image_h = std::max(1, static_cast<int>(std::lround(scene.image_h * f)));
  auto scale = [f](Box& b) {
    b.x1 *= f;
    b.y1 *= f;
    b.x2 *= f;
    b.y2 *= f;
  };
  for (auto& o : s.objects) {
    scale(o.box);
    for (auto& occ : o.occluders) scale(occ);
  }
  return s;
}

namespace {

constexpr double kSquareIntensity = 0.85;
constexpr double kDiskIntensity = 0.55;
constexpr double kTriangleIntensity = 0.75;
constexpr double kFrameIntensity = 0.65;

bool inside_shape(ShapeClass cls, const Box& b, double px, double py) {
  if (px < b.x1 || px >= b.x2 || py < b.y1 || py >= b.y2) return false;
  const double w = b.width();
  const double h = b.height();
  switch (cls) {
    case ShapeClass::square_outline: {
      const double t = std::max(2.0, 0.15 * std::min(w, h));
      return px < b.x1 + t || px >= b.x2 - t || py < b.y1 + t || py >= b.y2 - t;
    }
    case ShapeClass::frame: {
      const double t = std::max(1.5, 0.05 * std::min(w, h));
      return px < b.x1 + t || px >= b.x2 - t || py < b.y1 + t || py >= b.y2 - t;
    }
    case ShapeClass::disk: {
      const double dx = (px - 0.5 * (b.x1 + b.x2)) / (0.5 * w);
      const double dy = (py - 0.5 * (b.y1 + b.y2)) / (0.5 * h);
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeClass::triangle: {
      const double cx = 0.5 * (b.x1 + b.x2);
      return std::abs(px - cx) <= 0.5 * w * (py - b.y1) / h;
    }
  }
  return false;
}

double shape_intensity(ShapeClass cls) {
  switch (cls) {
    case ShapeClass::square_outline: return kSquareIntensity;
    case ShapeClass::disk: return kDiskIntensity;
    case ShapeClass::triangle: return kTriangleIntensity;
    case ShapeClass::frame: return kFrameIntensity;
  }
  return 0.0;
}

template <class Fn>
void for_pixels(const Box& b, int w, int h, Fn&& fn) {
  const int x0 = std::max(0, static_cast<int>(std::floor(b.x1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.y1)));
  const int x1 = std::min(w, static_cast<int>(std::ceil(b.x2)));
  const int y1 = std::min(h, static_cast<int>(std::ceil(b.y2)));
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) fn(x, y, x + 0.5, y + 0.5);
  }
}

}  // namespace

Tensor rasterize(const Scene& scene, double noise_level) {
  if (scene.image_w <= 0 || scene.image_h <= 0) {
    throw std::invalid_argument("rasterize: image extent must be positive");
  }
  const int w = scene.image_w;
  const int h = scene.image_h;
  Tensor img(Shape{1, 1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
             kBackgroundIntensity);
  double* px = img.plane(0, 0);
  for (const SceneObject& o : scene.objects) {
    const double v = shape_intensity(o.cls);
    for_pixels(o.box, w, h, [&](int x, int y, double cx, double cy) {
      if (inside_shape(o.cls, o.box, cx, cy)) px[y * w + x] = v;
    });
    for (const Box& occ : o.occluders) {
      for_pixels(occ, w, h, [&](int x, int y, double cx, double cy) {
        if (cx < occ.x1 || cx >= occ.x2 || cy < occ.y1 || cy >= occ.y2) return;
        // checkerboard clutter, 2-pixel cells
        px[y * w + x] = ((x / 2 + y / 2) % 2 == 0) ? 0.3 : 0.5;
      });
    }
  }
  if (noise_level > 0.0) {
    Rng rng(scene.noise_seed);
    for (double& v : img.data()) v = std::clamp(v + rng.normal(0.0, noise_level), 0.0, 1.0);
  }
  return img;
}

Dataset generate_dataset(const DatasetConfig& config) {
  config.scene.validate();
  Dataset d;
  d.config = config;
  const Rng root(config.seed);
  d.train.reserve(config.train_size);
  d.test.reserve(config.test_size);
  for (std::size_t i = 0; i < config.train_size + config.test_size; ++i) {
    Rng r = root.split(i);
    Scene s = generate_scene(r.next_u64(), config.scene);
    (i < config.train_size ? d.train : d.test).push_back(std::move(s));
  }
  return d;
}

std::string encode_pgm(const Tensor& image) {
  const Shape& s = image.shape();
  std::string out = "P5\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  const double* p = image.plane(0, 0);
  for (std::size_t i = 0; i < s.h * s.w; ++i) {
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(p[i], 0.0, 1.0) * 255.0))));
  }
  return out;
}

std::string encode_ppm(int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3) {
    throw std::invalid_argument("encode_ppm: buffer size does not match image extent");
  }
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  return out;
}

Tensor decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9' && pos - start < 9) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      ++pos;
    }
    if (pos == start) throw std::invalid_argument("pgm: malformed header");
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw std::invalid_argument("pgm: expected binary P5 magic");
  pos = 2;
  const std::size_t w = number();
  const std::size_t h = number();
  const std::size_t maxval = number();
  if (w == 0 || h == 0) throw std::invalid_argument("pgm: empty image");
  if (maxval == 0 || maxval > 255) throw std::invalid_argument("pgm: only 8-bit images are supported");
  if (pos >= bytes.size()) throw std::invalid_argument("pgm: missing pixel data");
  ++pos;  // single whitespace byte after maxval
  if (bytes.size() - pos < w * h) throw std::invalid_argument("pgm: truncated pixel data");
  Tensor t(Shape{1, 1, h, w});
  double* out = t.plane(0, 0);
  for (std::size_t i = 0; i < w * h; ++i) {
    out[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
  }
  return t;
}

}  // namespace couplenet
