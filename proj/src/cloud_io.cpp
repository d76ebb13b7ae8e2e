#include "rvuda/cloud_io.hpp"

#include <cmath>
#include <sstream>

#include "binary_io.hpp"
#include "rvuda/error.hpp"

namespace rvuda {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::io: return "io";
    case Errc::file_length: return "file-length-not-multiple-of-16";
    case Errc::count_mismatch: return "count-mismatch";
    case Errc::unmapped_label: return "unmapped-label";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::point_at_origin: return "point-at-origin";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::even_window: return "even-window";
    case Errc::label_out_of_range: return "label-out-of-range";
    case Errc::non_scalar_loss: return "non-scalar-loss";
    case Errc::channel_mismatch: return "channel-mismatch";
    case Errc::indivisible_dims: return "indivisible-dims";
    case Errc::odd_dims: return "odd-dims";
    case Errc::corrupt_header: return "corrupt-header";
    case Errc::empty_input: return "empty-input";
    case Errc::unknown_key: return "unknown-key";
    case Errc::unparsable_value: return "unparsable-value";
    case Errc::missing_required: return "missing-required";
  }
  return "unknown";
}

using detail::open_for_write;
using detail::read_f32_le;
using detail::read_file;
using detail::read_u32_le;
using detail::write_f32_le;
using detail::write_u32_le;

void PointCloud::validate() const {
  if (intensity.size() != points.size())
    throw Error(Errc::invalid_argument, "intensity length differs from point count");
  if (labels && labels->size() != points.size())
    throw Error(Errc::invalid_argument, "label length differs from point count");
  for (const auto& p : points) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
      throw Error(Errc::invalid_argument, "non-finite coordinate");
  }
  for (float v : intensity) {
    if (!(v >= 0.0f && v <= 1.0f)) throw Error(Errc::invalid_argument, "intensity outside [0,1]");
  }
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() % 16 != 0) {
    std::ostringstream msg;
    msg << path.string() << ": " << bytes.size() << " bytes is not a multiple of 16";
    throw Error(Errc::file_length, msg.str());
  }
  const size_t n = bytes.size() / 16;
  PointCloud cloud;
  cloud.points.resize(n);
  cloud.intensity.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + 16 * i;
    cloud.points[i] = {read_f32_le(rec), read_f32_le(rec + 4), read_f32_le(rec + 8)};
    cloud.intensity[i] = read_f32_le(rec + 12);
  }
  return cloud;
}

void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  if (cloud.intensity.size() != cloud.points.size())
    throw Error(Errc::invalid_argument, "intensity length differs from point count");
  auto out = open_for_write(path);
  for (size_t i = 0; i < cloud.size(); ++i) {
    write_f32_le(out, cloud.points[i][0]);
    write_f32_le(out, cloud.points[i][1]);
    write_f32_le(out, cloud.points[i][2]);
    write_f32_le(out, cloud.intensity[i]);
  }
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

PointCloud load_labels(const std::filesystem::path& path, PointCloud cloud) {
  const auto bytes = read_file(path);
  if (bytes.size() % 4 != 0 || bytes.size() / 4 != cloud.size()) {
    std::ostringstream msg;
    msg << path.string() << ": " << bytes.size() / 4 << " label records for " << cloud.size() << " points";
    throw Error(Errc::count_mismatch, msg.str());
  }
  std::vector<int32_t> labels(cloud.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<int32_t>(read_u32_le(bytes.data() + 4 * i) & 0xffffu);
  }
  cloud.labels = std::move(labels);
  return cloud;
}

void save_labels(const PointCloud& cloud, const std::filesystem::path& path) {
  if (!cloud.labels) throw Error(Errc::invalid_argument, "cloud has no labels");
  auto out = open_for_write(path);
  for (int32_t label : *cloud.labels) write_u32_le(out, static_cast<uint32_t>(label) & 0xffffu);
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

PointCloud remap_labels(PointCloud cloud, const LabelMap& map) {
  if (!cloud.labels) return cloud;
  for (int32_t& label : *cloud.labels) {
    auto it = map.find(label);
    if (it == map.end()) throw Error(Errc::unmapped_label, "label " + std::to_string(label) + " is not mapped");
    label = it->second;
  }
  return cloud;
}

}  // namespace rvuda
