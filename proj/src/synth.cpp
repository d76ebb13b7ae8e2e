#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "rvuda/cloud_io.hpp"
#include "rvuda/error.hpp"

namespace rvuda {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kNoHit = std::numeric_limits<double>::infinity();

struct Ray {
  double dx, dy, dz;
};

double hit_ground(const SceneLayout& layout, const Ray& ray) {
  if (!layout.has_ground || ray.dz >= 0.0 || layout.ground_z >= 0.0) return kNoHit;
  const double t = layout.ground_z / ray.dz;
  const double x = t * ray.dx;
  const double y = t * ray.dy;
  if (std::abs(x) > layout.ground_half_extent || std::abs(y) > layout.ground_half_extent) return kNoHit;
  return t;
}

double hit_box(const Box& box, const Ray& ray) {
  const double dir[3] = {ray.dx, ray.dy, ray.dz};
  double t_near = 0.0;
  double t_far = kNoHit;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (0.0 < box.min[a] || 0.0 > box.max[a]) return kNoHit;
      continue;
    }
    double t0 = box.min[a] / dir[a];
    double t1 = box.max[a] / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return kNoHit;
  }
  return t_near > 0.0 ? t_near : kNoHit;
}

double hit_cylinder(const Cylinder& cyl, const Ray& ray) {
  double best = kNoHit;
  const double a = ray.dx * ray.dx + ray.dy * ray.dy;
  if (a > 1e-15) {
    const double b = -2.0 * (ray.dx * cyl.cx + ray.dy * cyl.cy);
    const double c = cyl.cx * cyl.cx + cyl.cy * cyl.cy - cyl.radius * cyl.radius;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        const double z = t * ray.dz;
        if (t > 0.0 && z >= cyl.z_min && z <= cyl.z_max) best = std::min(best, t);
      }
    }
  }
  // End caps.
  if (std::abs(ray.dz) > 1e-15) {
    for (double zc : {cyl.z_min, cyl.z_max}) {
      const double t = zc / ray.dz;
      if (t <= 0.0) continue;
      const double ex = t * ray.dx - cyl.cx;
      const double ey = t * ray.dy - cyl.cy;
      if (ex * ex + ey * ey <= cyl.radius * cyl.radius) best = std::min(best, t);
    }
  }
  return best;
}

bool boxes_overlap(const Box& a, const Box& b, double margin) {
  for (int k = 0; k < 2; ++k) {
    if (a.max[k] + margin < b.min[k] || b.max[k] + margin < a.min[k]) return false;
  }
  return true;
}

}  // namespace

void SceneSpec::validate() const {
  if (beam_count < 2) throw Error(Errc::invalid_argument, "beam_count must be >= 2");
  if (azimuth_steps < 1) throw Error(Errc::invalid_argument, "azimuth_steps must be >= 1");
  if (!(fov_up_deg > fov_down_deg)) throw Error(Errc::invalid_argument, "fov_up_deg must exceed fov_down_deg");
  if (!(max_range > 0.0)) throw Error(Errc::invalid_argument, "max_range must be positive");
  if (range_jitter_sigma < 0.0) throw Error(Errc::invalid_argument, "range_jitter_sigma must be >= 0");
}

double beam_elevation(const SceneSpec& spec, int index) {
  const double down = spec.fov_down_deg * kDegToRad;
  const double up = spec.fov_up_deg * kDegToRad;
  return down + (up - down) * static_cast<double>(index) / static_cast<double>(spec.beam_count - 1);
}

double azimuth_angle(const SceneSpec& spec, int index) {
  return std::numbers::pi - 2.0 * std::numbers::pi * (static_cast<double>(index) + 0.5) /
                                static_cast<double>(spec.azimuth_steps);
}

PointCloud synth_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<float> intensity_dist(0.0f, 1.0f);
  std::normal_distribution<double> jitter_dist(0.0, spec.range_jitter_sigma > 0.0 ? spec.range_jitter_sigma : 1.0);

  std::vector<double> cos_az(spec.azimuth_steps), sin_az(spec.azimuth_steps);
  for (int k = 0; k < spec.azimuth_steps; ++k) {
    const double az = azimuth_angle(spec, k);
    cos_az[k] = std::cos(az);
    sin_az[k] = std::sin(az);
  }

  PointCloud cloud;
  cloud.labels.emplace();
  const SceneLayout& layout = spec.layout;
  for (int b = 0; b < spec.beam_count; ++b) {
    const double el = beam_elevation(spec, b);
    const double ce = std::cos(el);
    const double se = std::sin(el);
    for (int k = 0; k < spec.azimuth_steps; ++k) {
      const Ray ray{ce * cos_az[k], ce * sin_az[k], se};
      double best = hit_ground(layout, ray);
      int32_t label = synth_class::kGround;
      for (const Box& box : layout.vehicles) {
        const double t = hit_box(box, ray);
        if (t < best) {
          best = t;
          label = synth_class::kVehicle;
        }
      }
      for (const Cylinder& cyl : layout.pedestrians) {
        const double t = hit_cylinder(cyl, ray);
        if (t < best) {
          best = t;
          label = synth_class::kPedestrian;
        }
      }
      if (!(best <= spec.max_range)) continue;
      double range = best;
      const float intensity = intensity_dist(rng);
      if (spec.range_jitter_sigma > 0.0) range = std::max(1e-3, range + jitter_dist(rng));
      cloud.points.push_back({static_cast<float>(range * ray.dx), static_cast<float>(range * ray.dy),
                              static_cast<float>(range * ray.dz)});
      cloud.intensity.push_back(intensity);
      cloud.labels->push_back(label);
    }
  }
  return cloud;
}

SceneLayout random_layout(uint64_t seed, const LayoutOptions& options) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SceneLayout layout;
  layout.ground_z = uniform(options.ground_z_min, options.ground_z_max);
  std::vector<Box> footprints;
  auto place = [&](double half_x, double half_y) -> std::optional<std::array<double, 2>> {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double dist = uniform(options.min_distance, options.max_distance);
      const double az = uniform(-std::numbers::pi, std::numbers::pi);
      const double cx = dist * std::cos(az);
      const double cy = dist * std::sin(az);
      const Box fp{{cx - half_x, cy - half_y, 0.0}, {cx + half_x, cy + half_y, 0.0}};
      const bool clash = std::any_of(footprints.begin(), footprints.end(),
                                     [&](const Box& other) { return boxes_overlap(fp, other, 0.5); });
      if (!clash) {
        footprints.push_back(fp);
        return std::array<double, 2>{cx, cy};
      }
    }
    return std::nullopt;
  };

  for (int i = 0; i < options.vehicles; ++i) {
    double length = uniform(3.8, 4.8);
    double width = uniform(1.6, 2.0);
    const double height = uniform(1.4, 1.8);
    if (unit(rng) < 0.5) std::swap(length, width);
    if (auto c = place(0.5 * length, 0.5 * width)) {
      layout.vehicles.push_back(Box{{(*c)[0] - 0.5 * length, (*c)[1] - 0.5 * width, layout.ground_z},
                                    {(*c)[0] + 0.5 * length, (*c)[1] + 0.5 * width, layout.ground_z + height}});
    }
  }
  for (int i = 0; i < options.pedestrians; ++i) {
    const double radius = uniform(0.25, 0.4);
    const double height = uniform(1.5, 1.9);
    if (auto c = place(radius, radius)) {
      layout.pedestrians.push_back(Cylinder{(*c)[0], (*c)[1], radius, layout.ground_z, layout.ground_z + height});
    }
  }
  return layout;
}

}  // namespace rvuda
