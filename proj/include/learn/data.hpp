#ifndef LEARN_DATA_HPP
#define LEARN_DATA_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "learn/random.hpp"
#include "learn/tensor.hpp"

namespace learn {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class OccluderType { white, noise, texture, object };
inline constexpr std::array<OccluderType, 4> kOccluderTypes{
    OccluderType::white, OccluderType::noise, OccluderType::texture,
    OccluderType::object};

/// Table code: w, n, t, o.
char occluder_code(OccluderType type);
std::string_view occluder_name(OccluderType type);
/// Accepts the name or the one-letter code.
OccluderType parse_occluder(std::string_view text);

enum class OcclusionLevel { L0, L1, L2, L3 };
inline constexpr std::array<OcclusionLevel, 3> kOccludedLevels{
    OcclusionLevel::L1, OcclusionLevel::L2, OcclusionLevel::L3};

std::string_view level_name(OcclusionLevel level);
OcclusionLevel parse_level(std::string_view text);

/// L0 = 0, L1 = (0.2, 0.4], L2 = (0.4, 0.6], L3 = (0.6, 0.8]. Coverage in
/// (0, 0.2] reports as L1 and (0.8, 1] as L3.
OcclusionLevel classify_level(double coverage);
/// True for coverage outside every band, reported under the nearest one.
bool outside_level_bands(double coverage);
/// Half-open band (lo, hi]; L0 is (0, 0].
std::pair<double, double> level_band(OcclusionLevel level);

inline constexpr double kCoverageTolerance = 0.02;

struct LabeledImage {
  Tensor pixels;  // [C,H,W] in [0,1]
  std::size_t label = 0;
  std::uint64_t sample_id = 0;
};

struct OccludedImage {
  Tensor pixels;
  std::uint64_t source = 0;
  Mask mask;
  double coverage = 0.0;
  OccluderType type = OccluderType::white;
};

double mask_coverage(const Mask& mask);

// -- Shapes ------------------------------------------------------------------

/// Shape families rendered as dataset classes, in label order.
std::span<const std::string_view> dataset_shape_families();
/// Silhouette families used for object occluders; disjoint from the above.
std::span<const std::string_view> occluder_object_families();

struct ImageSpec {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
};

/// Deterministic rendering of one dataset sample from its seed.
Tensor render_shape_image(std::size_t label, std::uint64_t seed,
                          const ImageSpec& spec);

// -- Occluders ---------------------------------------------------------------

/// Random appearance of one occluder, independent of its size.
struct OccluderParams {
  OccluderType type = OccluderType::white;
  std::size_t family = 0;  // object silhouette family
  double rotation = 0.0;
  std::array<double, 3> harmonics{};
  std::array<double, 3> phases{};
  double notch_angle = 0.0;
  double intensity_a = 1.0;
  double intensity_b = 0.0;
  double gradient_angle = 0.0;
  double period = 4.0;
  double phase = 0.0;
  bool checker = false;
  std::uint64_t noise_seed = 0;
};

struct Occluder {
  Tensor patch;  // [C,h,w]
  Mask mask;     // [h,w]
};

OccluderParams draw_occluder_params(OccluderType type, Rng& rng);
Occluder render_occluder(const OccluderParams& params, std::size_t height,
                         std::size_t width, std::size_t channels = 1);
Mask occluder_mask(const OccluderParams& params, std::size_t height,
                   std::size_t width);
Occluder make_occluder(OccluderType type, std::size_t height, std::size_t width,
                       Rng& rng, std::size_t channels = 1);

/// Pastes occluders at random positions (clipped at the borders), sizing them
/// until the occluded fraction of the whole image is within
/// kCoverageTolerance of the target. Target 0 returns an untouched copy.
OccludedImage apply_occlusion(const LabeledImage& image, double target_coverage,
                              OccluderType type, Rng& rng);

}  // namespace learn

#endif  // LEARN_DATA_HPP
