#include "rvuda/range_view.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "rvuda/error.hpp"

namespace rvuda {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double point_range(const Point3f& p) {
  const double x = p[0], y = p[1], z = p[2];
  return std::sqrt(x * x + y * y + z * z);
}

void check_field_shape(size_t size, const RangeView& rv) {
  if (size != rv.pixels()) throw Error(Errc::shape_mismatch, "label field does not match range view size");
}

}  // namespace

void ProjectionConfig::validate() const {
  if (h < 1) throw Error(Errc::invalid_argument, "projection height must be >= 1");
  if (w < 2) throw Error(Errc::invalid_argument, "projection width must be >= 2");
  if (!(fov_up_deg > fov_down_deg)) throw Error(Errc::invalid_argument, "fov_up_deg must exceed fov_down_deg");
}

RangeView project(const PointCloud& cloud, const ProjectionConfig& cfg, int32_t ignore_label) {
  cfg.validate();
  if (cloud.intensity.size() != cloud.size()) throw Error(Errc::shape_mismatch, "intensity length mismatch");

  RangeView rv;
  rv.h = cfg.h;
  rv.w = cfg.w;
  const size_t hw = rv.pixels();
  rv.image.assign(kRangeChannels * hw, 0.0f);
  rv.mask.assign(hw, 0);
  rv.index_map.assign(hw, kNoPoint);
  rv.point_pixels.resize(cloud.size());

  const double down = cfg.fov_down_deg * kDegToRad;
  const double fov = (cfg.fov_up_deg - cfg.fov_down_deg) * kDegToRad;
  std::vector<double> ranges(cloud.size());

  for (size_t i = 0; i < cloud.size(); ++i) {
    const Point3f& p = cloud.points[i];
    const double r = point_range(p);
    if (!(r > 0.0)) throw Error(Errc::point_at_origin, "point " + std::to_string(i) + " has zero range");
    ranges[i] = r;
    const double yaw = std::atan2(static_cast<double>(p[1]), static_cast<double>(p[0]));
    const double pitch = std::asin(std::clamp(static_cast<double>(p[2]) / r, -1.0, 1.0));
    const double u = std::floor(0.5 * (1.0 - yaw / std::numbers::pi) * cfg.w);
    const double v = std::floor((1.0 - (pitch - down) / fov) * cfg.h);
    const int col = static_cast<int>(std::clamp(u, 0.0, static_cast<double>(cfg.w - 1)));
    const int row = static_cast<int>(std::clamp(v, 0.0, static_cast<double>(cfg.h - 1)));
    rv.point_pixels[i] = {row, col};

    const size_t pix = static_cast<size_t>(row) * cfg.w + col;
    const int32_t current = rv.index_map[pix];
    // Equal ranges keep the lower index, so the result is order independent.
    if (current == kNoPoint || r < ranges[current]) rv.index_map[pix] = static_cast<int32_t>(i);
  }

  if (cloud.labels) rv.label_image.emplace(hw, ignore_label);
  for (size_t pix = 0; pix < hw; ++pix) {
    const int32_t idx = rv.index_map[pix];
    if (idx == kNoPoint) continue;
    const Point3f& p = cloud.points[idx];
    rv.mask[pix] = 1;
    rv.image[0 * hw + pix] = p[0];
    rv.image[1 * hw + pix] = p[1];
    rv.image[2 * hw + pix] = p[2];
    rv.image[3 * hw + pix] = cloud.intensity[idx];
    rv.image[4 * hw + pix] = static_cast<float>(ranges[idx]);
    if (cloud.labels) (*rv.label_image)[pix] = (*cloud.labels)[idx];
  }
  return rv;
}

std::vector<int32_t> back_project(std::span<const int32_t> rv_labels, const PointCloud& cloud, const RangeView& rv) {
  check_field_shape(rv_labels.size(), rv);
  if (rv.point_pixels.size() != cloud.size())
    throw Error(Errc::shape_mismatch, "range view was not produced from this cloud");
  std::vector<int32_t> out(cloud.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const PixelIndex px = rv.point_pixels[i];
    out[i] = rv_labels[static_cast<size_t>(px.row) * rv.w + px.col];
  }
  return out;
}

std::vector<int32_t> knn_postprocess(const PointCloud& cloud, const RangeView& rv,
                                     std::span<const int32_t> rv_labels, const KnnConfig& cfg) {
  if (cfg.window < 1 || cfg.window % 2 == 0) throw Error(Errc::even_window, "knn window must be odd and >= 1");
  if (cfg.k < 1) throw Error(Errc::invalid_argument, "knn k must be >= 1");
  std::vector<int32_t> fallback = back_project(rv_labels, cloud, rv);

  const int half = cfg.window / 2;
  struct Candidate {
    double diff;
    size_t pix;
  };
  std::vector<Candidate> candidates;
  std::vector<std::pair<int32_t, int>> votes;
  std::vector<int32_t> out(cloud.size());

  for (size_t i = 0; i < cloud.size(); ++i) {
    const PixelIndex px = rv.point_pixels[i];
    const double rho = point_range(cloud.points[i]);
    candidates.clear();
    for (int r = std::max(0, px.row - half); r <= std::min(rv.h - 1, px.row + half); ++r) {
      for (int c = std::max(0, px.col - half); c <= std::min(rv.w - 1, px.col + half); ++c) {
        if (!rv.valid(r, c)) continue;
        const double diff = std::abs(static_cast<double>(rv.range(r, c)) - rho);
        if (diff <= cfg.range_cutoff) candidates.push_back({diff, static_cast<size_t>(r) * rv.w + c});
      }
    }
    if (candidates.empty()) {
      out[i] = fallback[i];
      continue;
    }
    const size_t keep = std::min(candidates.size(), static_cast<size_t>(cfg.k));
    std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        return a.diff < b.diff || (a.diff == b.diff && a.pix < b.pix);
                      });
    votes.clear();
    for (size_t j = 0; j < keep; ++j) {
      const int32_t label = rv_labels[candidates[j].pix];
      auto it = std::find_if(votes.begin(), votes.end(), [&](const auto& v) { return v.first == label; });
      if (it == votes.end()) {
        votes.emplace_back(label, 1);
      } else {
        ++it->second;
      }
    }
    auto best = votes.front();
    for (const auto& v : votes) {
      if (v.second > best.second || (v.second == best.second && v.first < best.first)) best = v;
    }
    out[i] = best.first;
  }
  return out;
}

std::array<uint8_t, 3> label_color(int32_t label) {
  static constexpr std::array<std::array<uint8_t, 3>, 8> kPalette{{
      {128, 128, 128},  // 0 ignore / empty
      {255, 0, 255},    // 1 ground
      {100, 150, 245},  // 2 vehicle
      {255, 30, 30},    // 3 pedestrian
      {0, 175, 0},
      {255, 200, 0},
      {150, 60, 30},
      {80, 240, 150},
  }};
  if (label >= 0 && label < static_cast<int32_t>(kPalette.size())) return kPalette[label];
  // Deterministic hash color for ids outside the table.
  uint32_t hsh = static_cast<uint32_t>(label) * 2654435761u;
  return {static_cast<uint8_t>(64 + (hsh & 0x7f)), static_cast<uint8_t>(64 + ((hsh >> 8) & 0x7f)),
          static_cast<uint8_t>(64 + ((hsh >> 16) & 0x7f))};
}

RgbImage render_field(std::span<const double> field, int h, int w, PaletteMode mode, std::span<const uint8_t> mask) {
  const size_t hw = static_cast<size_t>(h) * static_cast<size_t>(w);
  if (h < 1 || w < 1 || field.size() != hw) throw Error(Errc::shape_mismatch, "field size does not match h x w");
  if (!mask.empty() && mask.size() != hw) throw Error(Errc::shape_mismatch, "mask size does not match h x w");
  auto shown = [&](size_t i) { return mask.empty() || mask[i] != 0; };

  for (size_t i = 0; i < hw; ++i) {
    if (!std::isfinite(field[i])) throw Error(Errc::invalid_argument, "field contains non-finite values");
  }

  RgbImage img{w, h, std::vector<uint8_t>(3 * hw, 0)};
  if (mode == PaletteMode::scalar) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (size_t i = 0; i < hw; ++i) {
      if (!shown(i)) continue;
      lo = std::min(lo, field[i]);
      hi = std::max(hi, field[i]);
    }
    for (size_t i = 0; i < hw; ++i) {
      if (!shown(i)) continue;
      const double t = hi > lo ? (field[i] - lo) / (hi - lo) : 0.5;
      const auto g = static_cast<uint8_t>(std::lround(255.0 * t));
      img.rgb[3 * i] = img.rgb[3 * i + 1] = img.rgb[3 * i + 2] = g;
    }
  } else {
    for (size_t i = 0; i < hw; ++i) {
      if (!shown(i)) continue;
      const auto color = label_color(static_cast<int32_t>(std::lround(field[i])));
      std::copy(color.begin(), color.end(), img.rgb.begin() + 3 * i);
    }
  }
  return img;
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space();
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P6") throw Error(Errc::corrupt_header, path.string() + " is not a binary PPM");
  RgbImage img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw Error(Errc::corrupt_header, "unsupported PPM max value");
  } catch (const std::logic_error&) {
    throw Error(Errc::corrupt_header, path.string() + " has a malformed PPM header");
  }
  ++pos;  // single whitespace byte before the payload
  const size_t payload = 3 * static_cast<size_t>(img.width) * static_cast<size_t>(img.height);
  if (img.width < 1 || img.height < 1 || bytes.size() < pos || bytes.size() - pos != payload)
    throw Error(Errc::corrupt_header, path.string() + " has a truncated PPM payload");
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

void render_ppm(std::span<const double> field, int h, int w, PaletteMode mode, const std::filesystem::path& path,
                std::span<const uint8_t> mask) {
  write_ppm(render_field(field, h, w, mode, mask), path);
}

namespace {
constexpr char kRangeViewMagic[8] = {'R', 'V', 'I', 'E', 'W', '0', '0', '1'};
}

void save_range_view(const RangeView& rv, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out.write(kRangeViewMagic, sizeof(kRangeViewMagic));
  detail::write_u32_le(out, static_cast<uint32_t>(rv.h));
  detail::write_u32_le(out, static_cast<uint32_t>(rv.w));
  detail::write_u32_le(out, static_cast<uint32_t>(rv.point_pixels.size()));
  detail::write_u32_le(out, rv.label_image ? 1u : 0u);
  for (float v : rv.image) detail::write_f32_le(out, v);
  out.write(reinterpret_cast<const char*>(rv.mask.data()), static_cast<std::streamsize>(rv.mask.size()));
  if (rv.label_image) {
    for (int32_t v : *rv.label_image) detail::write_u32_le(out, static_cast<uint32_t>(v));
  }
  for (int32_t v : rv.index_map) detail::write_u32_le(out, static_cast<uint32_t>(v));
  for (const PixelIndex& px : rv.point_pixels) {
    detail::write_u32_le(out, static_cast<uint32_t>(px.row));
    detail::write_u32_le(out, static_cast<uint32_t>(px.col));
  }
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

RangeView load_range_view(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader in(bytes, Errc::corrupt_header);
  if (in.str(sizeof(kRangeViewMagic)) != std::string(kRangeViewMagic, sizeof(kRangeViewMagic)))
    throw Error(Errc::corrupt_header, path.string() + " is not a range view file");
  RangeView rv;
  rv.h = static_cast<int>(in.u32());
  rv.w = static_cast<int>(in.u32());
  const size_t n = in.u32();
  const bool has_labels = in.u32() != 0;
  const size_t hw = rv.pixels();
  rv.image.resize(kRangeChannels * hw);
  for (float& v : rv.image) v = in.f32();
  const unsigned char* m = in.take(hw);
  rv.mask.assign(m, m + hw);
  if (has_labels) {
    rv.label_image.emplace(hw);
    for (int32_t& v : *rv.label_image) v = static_cast<int32_t>(in.u32());
  }
  rv.index_map.resize(hw);
  for (int32_t& v : rv.index_map) v = static_cast<int32_t>(in.u32());
  rv.point_pixels.resize(n);
  for (PixelIndex& px : rv.point_pixels) {
    px.row = static_cast<int>(in.u32());
    px.col = static_cast<int>(in.u32());
  }
  if (!in.done()) throw Error(Errc::corrupt_header, path.string() + " has trailing bytes");
  return rv;
}

}  // namespace rvuda
