#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

namespace rvuda {

// Class taxonomy of the synthetic scenes. Id 0 marks empty pixels and is the
// default ignore id for losses and metrics.
namespace synth_class {
inline constexpr int32_t kIgnore = 0;
inline constexpr int32_t kGround = 1;
inline constexpr int32_t kVehicle = 2;
inline constexpr int32_t kPedestrian = 3;
inline constexpr int kCount = 4;
}  // namespace synth_class

using Point3f = std::array<float, 3>;

struct PointCloud {
  std::vector<Point3f> points;
  std::vector<float> intensity;
  std::optional<std::vector<int32_t>> labels;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_labels() const { return labels.has_value(); }

  // Throws Errc::invalid_argument on length mismatch, non-finite coordinates
  // or intensity outside [0, 1].
  void validate() const;
};

/// Reads a KITTI velodyne scan: packed little-endian float32 (x, y, z, intensity).
PointCloud load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);

/// Attaches SemanticKITTI labels (uint32 per point, class in the low 16 bits).
PointCloud load_labels(const std::filesystem::path& path, PointCloud cloud);
void save_labels(const PointCloud& cloud, const std::filesystem::path& path);

using LabelMap = std::map<int32_t, int32_t>;

PointCloud remap_labels(PointCloud cloud, const LabelMap& map);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct Box {
  std::array<double, 3> min;
  std::array<double, 3> max;
};

// Vertical cylinder clipped to [z_min, z_max].
struct Cylinder {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.3;
  double z_min = 0.0;
  double z_max = 1.0;
};

struct SceneLayout {
  bool has_ground = true;
  double ground_z = -1.73;          // sensor mounted 1.73 m above the plane
  double ground_half_extent = 80.0;  // square |x|,|y| <= extent
  std::vector<Box> vehicles;
  std::vector<Cylinder> pedestrians;
};

struct SceneSpec {
  int beam_count = 64;
  int azimuth_steps = 2048;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;
  double max_range = 60.0;
  double range_jitter_sigma = 0.0;  // meters, 0 disables jitter
  uint64_t seed = 0;
  SceneLayout layout;

  void validate() const;
};

/// Elevation of beam `index` in radians; beams are evenly spaced over the fov.
double beam_elevation(const SceneSpec& spec, int index);
/// Azimuth of step `index` in radians, centered inside its angular bin.
double azimuth_angle(const SceneSpec& spec, int index);

/// Casts one ray per (beam, azimuth step) from the origin and keeps the
/// nearest hit within max_range. Pure function of the spec.
PointCloud synth_scene(const SceneSpec& spec);

struct LayoutOptions {
  int vehicles = 6;
  int pedestrians = 8;
  double min_distance = 4.0;
  double max_distance = 30.0;
  // Ground elevation relative to the sensor, drawn per layout.
  double ground_z_min = -2.2;
  double ground_z_max = -1.3;
};

/// Random street-like layout: ground plane plus non-overlapping vehicles and
/// pedestrians placed around the sensor.
SceneLayout random_layout(uint64_t seed, const LayoutOptions& options = {});

}  // namespace rvuda
