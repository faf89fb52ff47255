#pragma once

/// Volume file format and JSON serialization of configs and reports.
///
/// Volume file layout:
///   line 1   SVFREG1
///   line 2   {"components":C,"dims":[X,Y,Z],"dtype":"f32|u16|u8","kind":"...","spacing":[sx,sy,sz]}
///   payload  little-endian, x fastest, C components interleaved per voxel
///
/// kind is one of image, labels, velocity, displacement, distance; velocity and
/// displacement files carry 3 components, all others 1.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "svfreg/optimize.hpp"

namespace svfreg {

inline constexpr std::string_view kVersion = "0.3.0";
inline constexpr std::string_view kVolumeMagic = "SVFREG1";

enum class DType { f32, u16, u8 };
enum class VolumeKind { image, labels, velocity, displacement, distance };

inline std::string_view to_string(DType d) {
  switch (d) {
    case DType::f32:
      return "f32";
    case DType::u16:
      return "u16";
    case DType::u8:
      return "u8";
  }
  return "?";
}

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : (d == DType::u16 ? 2 : 1); }

inline std::string_view to_string(VolumeKind k) {
  switch (k) {
    case VolumeKind::image:
      return "image";
    case VolumeKind::labels:
      return "labels";
    case VolumeKind::velocity:
      return "velocity";
    case VolumeKind::displacement:
      return "displacement";
    case VolumeKind::distance:
      return "distance";
  }
  return "?";
}

inline DType parse_dtype(std::string_view s) {
  if (s == "f32") return DType::f32;
  if (s == "u16") return DType::u16;
  if (s == "u8") return DType::u8;
  throw FormatError("unknown dtype '" + std::string(s) + "'");
}

inline VolumeKind parse_kind(std::string_view s) {
  for (VolumeKind k : {VolumeKind::image, VolumeKind::labels, VolumeKind::velocity,
                       VolumeKind::displacement, VolumeKind::distance})
    if (to_string(k) == s) return k;
  throw FormatError("unknown volume kind '" + std::string(s) + "'");
}

inline bool is_vector_kind(VolumeKind k) {
  return k == VolumeKind::velocity || k == VolumeKind::displacement;
}

struct VolumeHeader {
  GridSpec grid;
  DType dtype = DType::f32;
  VolumeKind kind = VolumeKind::image;
  int components = 1;

  std::size_t payload_bytes() const {
    return static_cast<std::size_t>(grid.voxel_count()) * static_cast<std::size_t>(components) *
           dtype_size(dtype);
  }

  void validate() const {
    if (components != 1 && components != 3) throw FormatError("components must be 1 or 3");
    if (is_vector_kind(kind) != (components == 3))
      throw FormatError("kind '" + std::string(to_string(kind)) + "' requires " +
                        (is_vector_kind(kind) ? "3 components" : "1 component"));
    if (is_vector_kind(kind) && dtype != DType::f32) throw FormatError("vector files must be f32");
  }
};

struct VolumeFile {
  VolumeHeader header;
  std::vector<std::uint8_t> payload;
};

namespace detail {

template <class U>
U load_le(const std::uint8_t* p) {
  U v;
  std::memcpy(&v, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big && sizeof(U) > 1) {
    auto* b = reinterpret_cast<std::uint8_t*>(&v);
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
  }
  return v;
}

template <class U>
void store_le(std::uint8_t* p, U v) {
  if constexpr (std::endian::native == std::endian::big && sizeof(U) > 1) {
    auto* b = reinterpret_cast<std::uint8_t*>(&v);
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
  }
  std::memcpy(p, &v, sizeof(U));
}

inline nlohmann::json header_json(const VolumeHeader& h) {
  return {{"dims", {h.grid.dims[0], h.grid.dims[1], h.grid.dims[2]}},
          {"dtype", std::string(to_string(h.dtype))},
          {"spacing", {h.grid.spacing[0], h.grid.spacing[1], h.grid.spacing[2]}},
          {"kind", std::string(to_string(h.kind))},
          {"components", h.components}};
}

inline VolumeHeader parse_header(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("volume header is not valid JSON: ") + e.what());
  }
  try {
    VolumeHeader h;
    const auto dims = j.at("dims").get<std::vector<Index>>();
    const auto spacing = j.at("spacing").get<std::vector<double>>();
    if (dims.size() != 3 || spacing.size() != 3) throw FormatError("dims and spacing need 3 entries");
    h.grid = GridSpec({dims[0], dims[1], dims[2]}, {spacing[0], spacing[1], spacing[2]});
    h.dtype = parse_dtype(j.at("dtype").get<std::string>());
    h.kind = parse_kind(j.at("kind").get<std::string>());
    h.components = j.at("components").get<int>();
    h.validate();
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("volume header field error: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("volume header: ") + e.what());
  }
}

}  // namespace detail

inline VolumeFile read_volume_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::string magic;
  std::string header;
  if (!std::getline(in, magic) || magic != kVolumeMagic)
    throw FormatError("'" + path + "' is not an SVFREG1 volume");
  if (!std::getline(in, header)) throw FormatError("'" + path + "': missing header line");
  VolumeFile f;
  f.header = detail::parse_header(header);
  f.payload.resize(f.header.payload_bytes());
  in.read(reinterpret_cast<char*>(f.payload.data()), static_cast<std::streamsize>(f.payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != f.payload.size())
    throw FormatError("'" + path + "': truncated payload");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("'" + path + "': trailing bytes");
  return f;
}

inline void write_volume_file(const std::string& path, const VolumeFile& f) {
  f.header.validate();
  if (f.payload.size() != f.header.payload_bytes()) throw FormatError("payload size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << kVolumeMagic << '\n' << detail::header_json(f.header).dump() << '\n';
  out.write(reinterpret_cast<const char*>(f.payload.data()), static_cast<std::streamsize>(f.payload.size()));
  if (!out) throw FormatError("write failed for '" + path + "'");
}

/// Scalar image from any 1-component file (labels and distances included).
inline Volume to_volume(const VolumeFile& f) {
  if (f.header.components != 1) throw FormatError("expected a scalar volume");
  Volume v(f.header.grid);
  const std::size_t sz = dtype_size(f.header.dtype);
  for (Index i = 0; i < v.size(); ++i) {
    const std::uint8_t* p = f.payload.data() + static_cast<std::size_t>(i) * sz;
    switch (f.header.dtype) {
      case DType::f32:
        v[i] = detail::load_le<float>(p);
        break;
      case DType::u16:
        v[i] = static_cast<float>(detail::load_le<std::uint16_t>(p));
        break;
      case DType::u8:
        v[i] = static_cast<float>(*p);
        break;
    }
  }
  if (!all_finite(v)) throw FormatError("volume contains non-finite values");
  return v;
}

inline SegmentationMap to_labels(const VolumeFile& f) {
  if (f.header.kind != VolumeKind::labels) throw FormatError("expected a labels volume");
  if (f.header.dtype == DType::f32) throw FormatError("labels must be u8 or u16");
  SegmentationMap s(f.header.grid);
  const std::size_t sz = dtype_size(f.header.dtype);
  for (Index i = 0; i < s.size(); ++i) {
    const std::uint8_t* p = f.payload.data() + static_cast<std::size_t>(i) * sz;
    s[i] = f.header.dtype == DType::u16 ? detail::load_le<std::uint16_t>(p) : Label{*p};
  }
  return s;
}

inline VectorField to_vector_field(const VolumeFile& f) {
  if (f.header.components != 3) throw FormatError("expected a 3-component vector field");
  VectorField v(f.header.grid);
  for (Index i = 0; i < v.size(); ++i) {
    const std::uint8_t* p = f.payload.data() + static_cast<std::size_t>(i) * 12;
    v[i] = {detail::load_le<float>(p), detail::load_le<float>(p + 4), detail::load_le<float>(p + 8)};
  }
  if (!all_finite(v)) throw FormatError("vector field contains non-finite values");
  return v;
}

inline VolumeFile from_volume(const Volume& v, VolumeKind kind = VolumeKind::image) {
  VolumeFile f{{v.grid(), DType::f32, kind, 1}, {}};
  f.header.validate();
  f.payload.resize(f.header.payload_bytes());
  for (Index i = 0; i < v.size(); ++i)
    detail::store_le<float>(f.payload.data() + static_cast<std::size_t>(i) * 4, v[i]);
  return f;
}

/// Label file in `dtype`, or the smallest integer type holding every label.
inline VolumeFile from_labels(const SegmentationMap& s, std::optional<DType> dtype = std::nullopt) {
  Label hi = 0;
  for (Label l : s.values()) hi = std::max(hi, l);
  const DType dt = dtype.value_or(hi <= 255 ? DType::u8 : DType::u16);
  if (dt == DType::f32) throw FormatError("labels must be u8 or u16");
  if (dt == DType::u8 && hi > 255) throw FormatError("label value exceeds u8 range");
  VolumeFile f{{s.grid(), dt, VolumeKind::labels, 1}, {}};
  f.payload.resize(f.header.payload_bytes());
  for (Index i = 0; i < s.size(); ++i) {
    if (dt == DType::u8)
      f.payload[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(s[i]);
    else
      detail::store_le<std::uint16_t>(f.payload.data() + static_cast<std::size_t>(i) * 2, s[i]);
  }
  return f;
}

inline VolumeFile from_vector_field(const VectorField& v, VolumeKind kind) {
  VolumeFile f{{v.grid(), DType::f32, kind, 3}, {}};
  f.header.validate();
  f.payload.resize(f.header.payload_bytes());
  for (Index i = 0; i < v.size(); ++i) {
    std::uint8_t* p = f.payload.data() + static_cast<std::size_t>(i) * 12;
    detail::store_le<float>(p, v[i].x);
    detail::store_le<float>(p + 4, v[i].y);
    detail::store_le<float>(p + 8, v[i].z);
  }
  return f;
}

// JSON --------------------------------------------------------------------

inline nlohmann::json to_json(const LossBreakdown& l) {
  return {{"data", l.data}, {"kl", l.kl}, {"surface", l.surface}, {"total", l.total}};
}

inline nlohmann::json to_json(const RegistrationConfig& c) {
  nlohmann::json j = {
      {"lambda", c.prior.lambda},
      {"sigma_image_sq", c.hyper.sigma_image_sq},
      {"sigma_surface_sq", c.hyper.sigma_surface_sq},
      {"samples", c.hyper.samples},
      {"integrator", std::string(to_string(c.integrator.method))},
      {"steps", c.integrator.steps},
      {"iterations", c.iterations},
      {"step_size", c.step_size},
      {"seed", c.seed},
      {"posterior_mode", std::string(to_string(c.posterior_mode))},
      {"velocity_downsample", c.velocity_downsample},
      {"initial_log_var", c.initial_log_var},
  };
  j["sigma_c"] = c.sigma_c ? nlohmann::json(*c.sigma_c) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const DistanceStats& s) {
  return {{"max", s.max}, {"median", s.median}, {"mean", s.mean}};
}

inline nlohmann::json to_json(const DiceResult& d) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [label, v] : d.per_label)
    per[std::to_string(label)] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  return {{"per_label", per}, {"mean", d.mean ? nlohmann::json(*d.mean) : nlohmann::json(nullptr)}};
}

inline nlohmann::json to_json(const RegistrationMetrics& m) {
  nlohmann::json j = {
      {"folding_count", m.jacobian.folding_count},
      {"folding_fraction", m.jacobian.folding_fraction},
      {"mean_jacobian_determinant", m.jacobian.mean_determinant},
      {"inverse_consistency", {{"mean", m.inverse.mean}, {"max", m.inverse.max}}},
      {"max_scaled_velocity", m.max_scaled_velocity},
  };
  if (m.dice) j["dice"] = to_json(*m.dice);
  if (m.surface)
    j["surface_distance"] = {{"fixed_to_moving", to_json(m.surface->fixed_to_moving)},
                             {"moving_to_fixed", to_json(m.surface->moving_to_fixed)},
                             {"symmetric", to_json(m.surface->symmetric)}};
  return j;
}

}  // namespace svfreg
