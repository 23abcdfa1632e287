#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "couplenet/boxes.hpp"
#include "couplenet/tensor.hpp"

namespace couplenet {

/// Object classes of the synthetic dataset. Detection label = index + 1
/// (0 is background).
enum class ShapeClass { square_outline = 0, disk = 1, triangle = 2, frame = 3 };

inline constexpr std::size_t kNumShapeClasses = 4;
inline constexpr std::array<std::string_view, kNumShapeClasses> kShapeClassNames = {
    "square-outline", "disk", "triangle", "frame"};

std::string to_string(ShapeClass c);
ShapeClass parse_shape_class(std::string_view s);

struct SceneObject {
  ShapeClass cls = ShapeClass::disk;
  Box box;                      ///< full object extent, may cross the image border
  std::vector<Box> occluders;   ///< drawn on top of the object
  double truncation = 0.0;      ///< fraction of the extent pushed outside the image

  /// Ground-truth box: the object extent clipped to the image.
  [[nodiscard]] Box visible_box(double image_w, double image_h) const {
    return clip_box(box, image_w, image_h);
  }
  [[nodiscard]] std::size_t label() const { return static_cast<std::size_t>(cls) + 1; }

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  int image_w = 0;
  int image_h = 0;
  std::uint64_t noise_seed = 0;
  std::vector<SceneObject> objects;

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Generation parameters of one scene.
struct SceneConfig {
  int min_size = 48;
  int max_size = 96;
  int min_objects = 1;
  int max_objects = 4;
  double occlusion_prob = 0.5;
  double truncation_prob = 0.2;
  double noise_level = 0.06;
  int min_object_size = 14;
  int max_object_size = 40;
  double max_overlap_iou = 0.3;

  void validate() const;
  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

Scene generate_scene(std::uint64_t seed, const SceneConfig& config);

/// Same scene with every coordinate multiplied by `factor` (image size rounded).
Scene scale_scene(const Scene& scene, double factor);

/// Background intensity of rendered images.
inline constexpr double kBackgroundIntensity = 0.1;

/// Renders a (1, 1, H, W) grayscale image in [0, 1]. Noise is Gaussian with
/// standard deviation noise_level, seeded from scene.noise_seed.
Tensor rasterize(const Scene& scene, double noise_level);

struct DatasetConfig {
  std::uint64_t seed = 7;
  std::size_t train_size = 500;
  std::size_t test_size = 200;
  SceneConfig scene;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Scene> train;
  std::vector<Scene> test;
};

/// Scene i (train first, then test) is generated from Rng(seed).split(i).
Dataset generate_dataset(const DatasetConfig& config);

/// Binary PGM (P5) / PPM (P6) encoders for inspection output.
std::string encode_pgm(const Tensor& image);
std::string encode_ppm(int width, int height, const std::vector<std::uint8_t>& rgb);

/// Reads a binary PGM (P5, maxval <= 255, '#' comments allowed in the header)
/// into a (1, 1, H, W) tensor scaled to [0, 1]. Throws std::invalid_argument
/// on malformed input.
Tensor decode_pgm(std::string_view bytes);

}  // namespace couplenet
