#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <queue>
#include <stdexcept>
#include <string>

#include "learn/data.hpp"

namespace learn {

namespace {

constexpr double kPi = std::numbers::pi;

constexpr std::array<std::string_view, 6> kShapeFamilies{
    "disk", "square", "triangle", "cross", "ring", "bar"};
constexpr std::array<std::string_view, 3> kObjectFamilies{"star", "blob",
                                                          "kidney"};

Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

// Point-in-shape tests in shape-local coordinates scaled by the shape radius.
bool inside_class_shape(std::size_t label, double u, double v) {
  switch (label) {
    case 0:
      return u * u + v * v <= 1.0;
    case 1:
      return std::max(std::abs(u), std::abs(v)) <= 0.8;
    case 2: {
      // Equilateral, circumradius 1.05, inradius half of that.
      for (int k = 0; k < 3; ++k) {
        const double a = -kPi / 2.0 + 2.0 * kPi * k / 3.0;
        if (u * std::cos(a) + v * std::sin(a) > 0.525) return false;
      }
      return true;
    }
    case 3:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) ||
             (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case 4: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    }
    case 5:
      return std::abs(u) <= 1.0 && std::abs(v) <= 0.35;
    default:
      throw std::out_of_range("no shape family for label " +
                              std::to_string(label));
  }
}

// Outline of an object occluder in [-1, 1]^2, with per-pixel tests free of
// trigonometry.
class Silhouette {
 public:
  explicit Silhouette(const OccluderParams& p) : family_(p.family) {
    switch (family_) {
      case 0:  // five-point star
        for (int k = 0; k < 10; ++k) {
          const double r = 0.95 * ((k % 2 == 0) ? 1.0 : 0.5);
          const double a = p.rotation + k * kPi / 5.0;
          star_[k] = {r * std::cos(a), r * std::sin(a)};
        }
        break;
      case 1:  // harmonic blob
        for (int j = 0; j < 3; ++j) {
          blob_[j] = {p.harmonics[j] * std::cos(p.phases[j]),
                      p.harmonics[j] * std::sin(p.phases[j])};
        }
        break;
      case 2:  // kidney: disk with an off-centre notch
        notch_ = {0.8 * std::cos(p.notch_angle), 0.8 * std::sin(p.notch_angle)};
        break;
      default:
        throw std::out_of_range("unknown object family");
    }
  }

  bool contains(double u, double v) const {
    switch (family_) {
      case 0: {
        bool in = false;
        for (std::size_t i = 0, j = star_.size() - 1; i < star_.size(); j = i++) {
          const auto [xi, yi] = star_[i];
          const auto [xj, yj] = star_[j];
          if ((yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi) {
            in = !in;
          }
        }
        return in;
      }
      case 1: {
        const double r = std::sqrt(u * u + v * v);
        if (r == 0.0) return true;
        // (c + is)^n gives cos(n phi), sin(n phi).
        const std::complex<double> z(u / r, v / r);
        std::complex<double> zn = z * z;
        double rad = 0.62;
        for (const auto& [ca, sa] : blob_) {
          rad += zn.real() * ca - zn.imag() * sa;
          zn *= z;
        }
        return r <= rad;
      }
      default: {
        const double du = u - notch_.first, dv = v - notch_.second;
        return u * u + v * v <= 0.95 * 0.95 && du * du + dv * dv > 0.45 * 0.45;
      }
    }
  }

 private:
  std::size_t family_;
  std::array<std::pair<double, double>, 10> star_{};
  std::array<std::pair<double, double>, 3> blob_{};
  std::pair<double, double> notch_{};
};

// Keeps the largest 4-connected component.
void keep_largest_component(Mask& mask) {
  const auto h = mask.rows(), w = mask.cols();
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> comp =
      Eigen::ArrayXXi::Constant(h, w, -1);
  const auto total = static_cast<std::size_t>(mask.count());
  int best = -1;
  std::size_t best_size = 0;
  int next = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      if (!mask(y, x) || comp(y, x) >= 0) continue;
      std::size_t size = 0;
      stack.assign(1, {y, x});
      comp(y, x) = next;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        ++size;
        const std::array<std::pair<Eigen::Index, Eigen::Index>, 4> nbrs{
            {{cy - 1, cx}, {cy + 1, cx}, {cy, cx - 1}, {cy, cx + 1}}};
        for (auto [ny, nx] : nbrs) {
          if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
          if (!mask(ny, nx) || comp(ny, nx) >= 0) continue;
          comp(ny, nx) = next;
          stack.emplace_back(ny, nx);
        }
      }
      if (size == total) return;  // already connected
      if (size > best_size) {
        best_size = size;
        best = next;
      }
      ++next;
    }
  }
  if (next > 1) mask = comp == best;
}

}  // namespace

char occluder_code(OccluderType type) {
  switch (type) {
    case OccluderType::white: return 'w';
    case OccluderType::noise: return 'n';
    case OccluderType::texture: return 't';
    case OccluderType::object: return 'o';
  }
  return '?';
}

std::string_view occluder_name(OccluderType type) {
  switch (type) {
    case OccluderType::white: return "white";
    case OccluderType::noise: return "noise";
    case OccluderType::texture: return "texture";
    case OccluderType::object: return "object";
  }
  return "?";
}

OccluderType parse_occluder(std::string_view text) {
  for (auto t : kOccluderTypes) {
    if (text == occluder_name(t) ||
        (text.size() == 1 && text[0] == occluder_code(t))) {
      return t;
    }
  }
  throw std::invalid_argument("unknown occluder type '" + std::string(text) +
                              "' (expected white, noise, texture or object)");
}

std::string_view level_name(OcclusionLevel level) {
  switch (level) {
    case OcclusionLevel::L0: return "L0";
    case OcclusionLevel::L1: return "L1";
    case OcclusionLevel::L2: return "L2";
    case OcclusionLevel::L3: return "L3";
  }
  return "?";
}

OcclusionLevel parse_level(std::string_view text) {
  for (auto l : {OcclusionLevel::L0, OcclusionLevel::L1, OcclusionLevel::L2,
                 OcclusionLevel::L3}) {
    if (text == level_name(l)) return l;
  }
  throw std::invalid_argument("unknown occlusion level '" + std::string(text) +
                              "'");
}

OcclusionLevel classify_level(double coverage) {
  if (coverage <= 0.0) return OcclusionLevel::L0;
  if (coverage <= 0.40) return OcclusionLevel::L1;
  if (coverage <= 0.60) return OcclusionLevel::L2;
  return OcclusionLevel::L3;
}

bool outside_level_bands(double coverage) {
  return (coverage > 0.0 && coverage <= 0.20) || coverage > 0.80;
}

std::pair<double, double> level_band(OcclusionLevel level) {
  switch (level) {
    case OcclusionLevel::L0: return {0.0, 0.0};
    case OcclusionLevel::L1: return {0.20, 0.40};
    case OcclusionLevel::L2: return {0.40, 0.60};
    case OcclusionLevel::L3: return {0.60, 0.80};
  }
  return {0.0, 0.0};
}

double mask_coverage(const Mask& mask) {
  if (mask.size() == 0) return 0.0;
  return static_cast<double>(mask.count()) / static_cast<double>(mask.size());
}

std::span<const std::string_view> dataset_shape_families() {
  return kShapeFamilies;
}

std::span<const std::string_view> occluder_object_families() {
  return kObjectFamilies;
}

Tensor render_shape_image(std::size_t label, std::uint64_t seed,
                          const ImageSpec& spec) {
  if (label >= kShapeFamilies.size()) {
    throw std::out_of_range("no shape family for label " +
                            std::to_string(label));
  }
  Rng rng(seed);
  const double h = static_cast<double>(spec.height);
  const double w = static_cast<double>(spec.width);
  const double side = std::min(h, w);

  const double bg = rng.uniform(0.0, 0.3);
  const double bg_amp = rng.uniform(0.0, 0.15);
  const double bg_dir = rng.uniform(0.0, 2.0 * kPi);
  Eigen::ArrayXXd canvas(idx(spec.height), idx(spec.width));
  for (Eigen::Index y = 0; y < canvas.rows(); ++y) {
    for (Eigen::Index x = 0; x < canvas.cols(); ++x) {
      const double t = (x * std::cos(bg_dir) + y * std::sin(bg_dir)) / side;
      canvas(y, x) = bg + bg_amp * (t - 0.5);
    }
  }

  // Clutter: short strokes and dots.
  const auto clutter = 2 + rng.below(3);
  for (std::uint64_t i = 0; i < clutter; ++i) {
    const double value = rng.uniform(0.1, 0.6);
    const double x0 = rng.uniform(0.0, w), y0 = rng.uniform(0.0, h);
    if (rng.bernoulli(0.5)) {
      const double len = rng.uniform(4.0, 10.0);
      const double a = rng.uniform(0.0, 2.0 * kPi);
      for (double s = 0.0; s <= len; s += 0.5) {
        const auto px = static_cast<Eigen::Index>(x0 + s * std::cos(a));
        const auto py = static_cast<Eigen::Index>(y0 + s * std::sin(a));
        if (px >= 0 && py >= 0 && px < canvas.cols() && py < canvas.rows()) {
          canvas(py, px) = value;
        }
      }
    } else {
      const double rad = rng.uniform(1.0, 1.8);
      for (Eigen::Index y = 0; y < canvas.rows(); ++y) {
        for (Eigen::Index x = 0; x < canvas.cols(); ++x) {
          if (std::hypot(x + 0.5 - x0, y + 0.5 - y0) <= rad) canvas(y, x) = value;
        }
      }
    }
  }

  const double cx = w * (0.5 + rng.uniform(-0.05, 0.05));
  const double cy = h * (0.5 + rng.uniform(-0.05, 0.05));
  const double radius = side * rng.uniform(0.40, 0.46);
  const double rot = rng.uniform(0.0, 2.0 * kPi);
  const double fill = rng.uniform(0.55, 1.0);
  const double c = std::cos(rot), s = std::sin(rot);
  for (Eigen::Index y = 0; y < canvas.rows(); ++y) {
    for (Eigen::Index x = 0; x < canvas.cols(); ++x) {
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double dx = x + 0.25 + 0.5 * sx - cx;
          const double dy = y + 0.25 + 0.5 * sy - cy;
          const double u = (c * dx + s * dy) / radius;
          const double v = (-s * dx + c * dy) / radius;
          hits += inside_class_shape(label, u, v) ? 1 : 0;
        }
      }
      const double alpha = hits / 4.0;
      canvas(y, x) = (1.0 - alpha) * canvas(y, x) + alpha * fill;
    }
  }

  Tensor image(Shape{spec.channels, spec.height, spec.width});
  const auto plane = spec.height * spec.width;
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double px = canvas(idx(i / spec.width), idx(i % spec.width)) +
                        0.02 * rng.normal();
      image[ch * plane + i] = std::clamp(px, 0.0, 1.0);
    }
  }
  return image;
}

OccluderParams draw_occluder_params(OccluderType type, Rng& rng) {
  OccluderParams p;
  p.type = type;
  p.family = static_cast<std::size_t>(rng.below(kObjectFamilies.size()));
  p.rotation = rng.uniform(0.0, 2.0 * kPi);
  for (int j = 0; j < 3; ++j) {
    p.harmonics[j] = rng.uniform(0.0, 0.1);
    p.phases[j] = rng.uniform(0.0, 2.0 * kPi);
  }
  p.notch_angle = rng.uniform(0.0, 2.0 * kPi);
  p.intensity_a = rng.uniform();
  p.intensity_b = std::fmod(p.intensity_a + rng.uniform(0.35, 0.65), 1.0);
  p.gradient_angle = rng.uniform(0.0, 2.0 * kPi);
  p.period = rng.uniform(3.0, 8.0);
  p.phase = rng.uniform(0.0, p.period);
  p.checker = rng.bernoulli(0.5);
  p.noise_seed = rng.bits();
  return p;
}

namespace {

// Object silhouettes are rasterized once on a fine grid and resampled, so
// sizing searches do not re-evaluate the outline per candidate size.
constexpr Eigen::Index kSilhouetteGrid = 128;

Mask silhouette_bitmap(const OccluderParams& params) {
  Mask grid(kSilhouetteGrid, kSilhouetteGrid);
  const Silhouette outline(params);
  const double n = static_cast<double>(kSilhouetteGrid);
  for (Eigen::Index y = 0; y < grid.rows(); ++y) {
    for (Eigen::Index x = 0; x < grid.cols(); ++x) {
      grid(y, x) = outline.contains(2.0 * (x + 0.5) / n - 1.0,
                                   2.0 * (y + 0.5) / n - 1.0);
    }
  }
  return grid;
}

Mask resample_silhouette(const Mask& grid, std::size_t height, std::size_t width) {
  Mask mask(idx(height), idx(width));
  for (Eigen::Index y = 0; y < mask.rows(); ++y) {
    const auto gy = static_cast<Eigen::Index>((y + 0.5) * kSilhouetteGrid /
                                              static_cast<double>(height));
    for (Eigen::Index x = 0; x < mask.cols(); ++x) {
      const auto gx = static_cast<Eigen::Index>((x + 0.5) * kSilhouetteGrid /
                                                static_cast<double>(width));
      mask(y, x) = grid(gy, gx);
    }
  }
  keep_largest_component(mask);
  return mask;
}

Mask sized_mask(const OccluderParams& params, const Mask* grid,
                std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) {
    throw std::invalid_argument("occluder dimensions must be positive");
  }
  if (params.type != OccluderType::object) {
    return Mask::Constant(idx(height), idx(width), true);
  }
  return grid ? resample_silhouette(*grid, height, width)
              : resample_silhouette(silhouette_bitmap(params), height, width);
}

}  // namespace

Mask occluder_mask(const OccluderParams& params, std::size_t height,
                   std::size_t width) {
  return sized_mask(params, nullptr, height, width);
}

Occluder render_occluder(const OccluderParams& params, std::size_t height,
                         std::size_t width, std::size_t channels) {
  Occluder occ{Tensor(Shape{channels, height, width}),
               occluder_mask(params, height, width)};
  const auto plane = height * width;
  Rng noise(params.noise_seed);
  const double ct = std::cos(params.rotation), st = std::sin(params.rotation);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double value = 1.0;
        switch (params.type) {
          case OccluderType::white:
            break;
          case OccluderType::noise:
            value = noise.uniform();
            break;
          case OccluderType::texture: {
            const double a = (ct * x + st * y + params.phase) / params.period;
            const double b = (-st * x + ct * y + params.phase) / params.period;
            auto parity = static_cast<long>(std::floor(a));
            if (params.checker) parity += static_cast<long>(std::floor(b));
            value = (parity % 2 == 0) ? params.intensity_a : params.intensity_b;
            break;
          }
          case OccluderType::object: {
            const double t =
                (std::cos(params.gradient_angle) * (x + 0.5) / width +
                 std::sin(params.gradient_angle) * (y + 0.5) / height) - 0.5;
            value = std::clamp(params.intensity_a + 0.3 * t +
                                   0.05 * (noise.uniform() - 0.5),
                               0.0, 1.0);
            break;
          }
        }
        occ.patch[ch * plane + y * width + x] = value;
      }
    }
  }
  return occ;
}

Occluder make_occluder(OccluderType type, std::size_t height, std::size_t width,
                       Rng& rng, std::size_t channels) {
  const auto params = draw_occluder_params(type, rng);
  return render_occluder(params, height, width, channels);
}

namespace {

struct Placement {
  std::size_t h = 0, w = 0;
  long top = 0, left = 0;
};

Placement place(double cy, double cx, std::size_t h, std::size_t w) {
  return {h, w, std::lround(cy - h / 2.0), std::lround(cx - w / 2.0)};
}

// Union of an existing mask with a placed occluder mask, clipped.
template <typename Fn>
void for_each_covered(const Mask& patch_mask, const Placement& pl,
                      Eigen::Index rows, Eigen::Index cols, Fn&& fn) {
  for (Eigen::Index y = 0; y < patch_mask.rows(); ++y) {
    const long iy = pl.top + y;
    if (iy < 0 || iy >= rows) continue;
    for (Eigen::Index x = 0; x < patch_mask.cols(); ++x) {
      const long ix = pl.left + x;
      if (ix < 0 || ix >= cols || !patch_mask(y, x)) continue;
      fn(static_cast<Eigen::Index>(iy), static_cast<Eigen::Index>(ix), y, x);
    }
  }
}

}  // namespace

OccludedImage apply_occlusion(const LabeledImage& image, double target_coverage,
                              OccluderType type, Rng& rng) {
  if (!(target_coverage >= 0.0 && target_coverage <= 0.9)) {
    throw std::invalid_argument("target coverage " +
                                std::to_string(target_coverage) +
                                " outside [0, 0.9]");
  }
  const auto channels = image.pixels.dim(0);
  const auto rows = image.pixels.dim(1);
  const auto cols = image.pixels.dim(2);
  OccludedImage out;
  out.pixels = image.pixels.clone();
  out.source = image.sample_id;
  out.type = type;
  out.mask = Mask::Constant(idx(rows), idx(cols), false);
  if (target_coverage == 0.0) return out;

  const double total = static_cast<double>(rows * cols);
  const double max_side = 2.5 * static_cast<double>(std::max(rows, cols));
  constexpr int kMaxPatches = 8;

  for (int patch = 0; patch < kMaxPatches; ++patch) {
    const double current = mask_coverage(out.mask);
    if (std::abs(current - target_coverage) <= kCoverageTolerance) break;
    if (current > target_coverage) break;

    const auto params = draw_occluder_params(type, rng);
    const Mask grid = type == OccluderType::object ? silhouette_bitmap(params) : Mask();
    const double aspect = std::sqrt(rng.uniform(0.6, 1.6));
    const double cy = rng.uniform(0.0, static_cast<double>(rows));
    const double cx = rng.uniform(0.0, static_cast<double>(cols));

    std::map<std::pair<std::size_t, std::size_t>, double> seen;
    auto coverage_with = [&](std::size_t h, std::size_t w) {
      auto [it, fresh] = seen.try_emplace({h, w}, 0.0);
      if (!fresh) return it->second;
      const auto pl = place(cy, cx, h, w);
      Mask merged = out.mask;
      for_each_covered(sized_mask(params, &grid, h, w), pl, idx(rows), idx(cols),
                       [&](auto iy, auto ix, auto, auto) { merged(iy, ix) = true; });
      it->second = static_cast<double>(merged.count()) / total;
      return it->second;
    };
    auto dims = [&](double t) {
      return std::pair<std::size_t, std::size_t>{
          std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(t * aspect))),
          std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(t / aspect)))};
    };

    // Smallest scale reaching the target, then a local search over (h, w).
    double lo = 1.0, hi = max_side;
    for (int it = 0; it < 24; ++it) {
      const double mid = 0.5 * (lo + hi);
      auto [h, w] = dims(mid);
      (coverage_with(h, w) >= target_coverage ? hi : lo) = mid;
    }
    auto [h0, w0] = dims(hi);
    std::size_t best_h = h0, best_w = w0;
    double best_err = std::abs(coverage_with(h0, w0) - target_coverage);
    std::size_t under_h = 0, under_w = 0;
    double under_cov = -1.0;
    for (long dh = -3; dh <= 3; ++dh) {
      for (long dw = -3; dw <= 3; ++dw) {
        const long h = static_cast<long>(h0) + dh, w = static_cast<long>(w0) + dw;
        if (h < 1 || w < 1) continue;
        const double cov = coverage_with(static_cast<std::size_t>(h),
                                         static_cast<std::size_t>(w));
        const double err = std::abs(cov - target_coverage);
        if (err < best_err) {
          best_err = err;
          best_h = static_cast<std::size_t>(h);
          best_w = static_cast<std::size_t>(w);
        }
        if (cov < target_coverage && cov > under_cov) {
          under_cov = cov;
          under_h = static_cast<std::size_t>(h);
          under_w = static_cast<std::size_t>(w);
        }
      }
    }
    if (best_err > kCoverageTolerance && under_cov > current) {
      // Stay under the target and top up with another occluder.
      best_h = under_h;
      best_w = under_w;
    } else if (best_err > kCoverageTolerance) {
      continue;
    }

    const auto occ = render_occluder(params, best_h, best_w, channels);
    const auto pl = place(cy, cx, best_h, best_w);
    const auto plane_in = rows * cols;
    const auto plane_patch = best_h * best_w;
    for_each_covered(occ.mask, pl, idx(rows), idx(cols),
                     [&](auto iy, auto ix, auto py, auto px) {
                       out.mask(iy, ix) = true;
                       for (std::size_t ch = 0; ch < channels; ++ch) {
                         out.pixels[ch * plane_in + iy * cols + ix] =
                             occ.patch[ch * plane_patch + py * best_w + px];
                       }
                     });
  }
  out.coverage = mask_coverage(out.mask);
  return out;
}

}  // namespace learn
