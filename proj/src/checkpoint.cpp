#include <map>
#include <set>

#include "binary_io.hpp"
#include "rvuda/adapter_net.hpp"
#include "rvuda/error.hpp"

namespace rvuda {

namespace {
constexpr char kMagic[8] = {'R', 'V', 'U', 'D', 'A', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

struct Record {
  ad::Shape shape;
  std::vector<float> values;
};
}  // namespace

template <typename T>
void save_checkpoint(const UdaModel<T>& model, int64_t step_count, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out.write(kMagic, sizeof(kMagic));
  detail::write_u32_le(out, kVersion);
  detail::write_u64_le(out, static_cast<uint64_t>(step_count));
  const auto params = model.named_parameters();
  detail::write_u32_le(out, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::write_u32_le(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_u32_le(out, static_cast<uint32_t>(p.tensor.ndim()));
    for (int d : p.tensor.shape()) detail::write_u32_le(out, static_cast<uint32_t>(d));
    for (T v : p.tensor.data()) detail::write_f32_le(out, static_cast<float>(v));
  }
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

template <typename T>
int64_t load_checkpoint(UdaModel<T>& model, const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader in(bytes, Errc::corrupt_header);
  if (bytes.size() < sizeof(kMagic) || in.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw Error(Errc::corrupt_header, path.string() + " is not a checkpoint");
  const uint32_t version = in.u32();
  if (version != kVersion)
    throw Error(Errc::corrupt_header, "unsupported checkpoint version " + std::to_string(version));
  const auto step_count = static_cast<int64_t>(in.u64());
  const uint32_t count = in.u32();

  std::map<std::string, Record> records;
  for (uint32_t r = 0; r < count; ++r) {
    const uint32_t name_len = in.u32();
    std::string name = in.str(name_len);
    Record rec;
    const uint32_t rank = in.u32();
    if (rank > 8) throw Error(Errc::corrupt_header, "implausible rank for " + name);
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = in.u32();
      if (dim == 0) throw Error(Errc::corrupt_header, "zero dimension in " + name);
      rec.shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    if (numel > bytes.size()) throw Error(Errc::corrupt_header, "record " + name + " exceeds file size");
    rec.values.resize(numel);
    for (float& v : rec.values) v = in.f32();
    records.emplace(std::move(name), std::move(rec));
  }
  if (!in.done()) throw Error(Errc::corrupt_header, path.string() + " has trailing bytes");

  // Validate everything before touching the model.
  auto params = model.named_parameters();
  std::set<std::string> expected;
  for (const auto& p : params) {
    expected.insert(p.name);
    auto it = records.find(p.name);
    if (it == records.end()) throw Error(Errc::shape_mismatch, "checkpoint lacks parameter " + p.name);
    if (it->second.shape != p.tensor.shape()) {
      throw Error(Errc::shape_mismatch, "parameter " + p.name + " has shape " + ad::shape_str(it->second.shape) +
                                            ", model expects " + ad::shape_str(p.tensor.shape()));
    }
  }
  for (const auto& [name, rec] : records) {
    if (!expected.count(name)) throw Error(Errc::shape_mismatch, "checkpoint has unknown parameter " + name);
  }
  for (auto& p : params) {
    const auto& values = records.at(p.name).values;
    auto dst = p.tensor.data();
    for (size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<T>(values[i]);
  }
  return step_count;
}

template void save_checkpoint<float>(const UdaModel<float>&, int64_t, const std::filesystem::path&);
template void save_checkpoint<double>(const UdaModel<double>&, int64_t, const std::filesystem::path&);
template int64_t load_checkpoint<float>(UdaModel<float>&, const std::filesystem::path&);
template int64_t load_checkpoint<double>(UdaModel<double>&, const std::filesystem::path&);

}  // namespace rvuda
