#pragma once

#include <stdexcept>
#include <string>

namespace rvuda {

enum class Errc {
  io,
  file_length,          // point file size not a multiple of 16
  count_mismatch,       // label record count differs from point count
  unmapped_label,
  invalid_argument,
  point_at_origin,
  shape_mismatch,
  even_window,
  label_out_of_range,
  non_scalar_loss,
  channel_mismatch,
  indivisible_dims,
  odd_dims,
  corrupt_header,
  empty_input,
  unknown_key,
  unparsable_value,
  missing_required,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace rvuda
