#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "rvuda/cloud_io.hpp"

namespace rvuda {

struct ProjectionConfig {
  int h = 32;
  int w = 256;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;

  void validate() const;
};

inline constexpr int kRangeChannels = 5;  // x, y, z, intensity, range
inline constexpr int32_t kNoPoint = -1;

struct PixelIndex {
  int row = 0;
  int col = 0;
};

/// Range-view image of one scan. `image` is stored channel-major
/// (5 x h x w); pixel (r, c) of channel k lives at k*h*w + r*w + c.
struct RangeView {
  int h = 0;
  int w = 0;
  std::vector<float> image;
  std::vector<uint8_t> mask;
  std::optional<std::vector<int32_t>> label_image;
  std::vector<int32_t> index_map;         // winning point per pixel or kNoPoint
  std::vector<PixelIndex> point_pixels;   // pixel of every point, collision losers included

  size_t pixels() const { return static_cast<size_t>(h) * static_cast<size_t>(w); }
  float at(int channel, int row, int col) const {
    return image[static_cast<size_t>(channel) * pixels() + static_cast<size_t>(row) * w + col];
  }
  float range(int row, int col) const { return at(4, row, col); }
  bool valid(int row, int col) const { return mask[static_cast<size_t>(row) * w + col] != 0; }
};

/// Spherical projection; on pixel collisions the nearest point wins.
/// `ignore_label` fills label_image where the mask is 0.
RangeView project(const PointCloud& cloud, const ProjectionConfig& cfg,
                  int32_t ignore_label = synth_class::kIgnore);

/// Per-point labels read from an h x w label field at each point's pixel.
std::vector<int32_t> back_project(std::span<const int32_t> rv_labels, const PointCloud& cloud, const RangeView& rv);

struct KnnConfig {
  int k = 5;
  int window = 5;
  double range_cutoff = 1.0;
};

/// Majority vote over the k in-window valid pixels closest in range to each
/// point. Ties: range difference then row-major order for candidates, smallest
/// class id for the vote. Points without candidates fall back to back_project.
std::vector<int32_t> knn_postprocess(const PointCloud& cloud, const RangeView& rv,
                                     std::span<const int32_t> rv_labels, const KnnConfig& cfg);

enum class PaletteMode { scalar, label };

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

std::array<uint8_t, 3> label_color(int32_t label);

/// Renders an h x w field. Scalar mode maps [min, max] over unmasked pixels to
/// gray; label mode uses label_color. Masked-out pixels are black.
RgbImage render_field(std::span<const double> field, int h, int w, PaletteMode mode,
                      std::span<const uint8_t> mask = {});
void write_ppm(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_ppm(const std::filesystem::path& path);
void render_ppm(std::span<const double> field, int h, int w, PaletteMode mode, const std::filesystem::path& path,
                std::span<const uint8_t> mask = {});

/// Binary range-view container written by the project command.
void save_range_view(const RangeView& rv, const std::filesystem::path& path);
RangeView load_range_view(const std::filesystem::path& path);

}  // namespace rvuda
