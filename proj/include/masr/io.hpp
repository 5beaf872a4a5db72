#pragma once

// VVF1 volume files.
//
//   bytes 0..3     "VVF1"
//   bytes 4..7     header length H, unsigned 32-bit little endian
//   bytes 8..8+H   UTF-8 JSON header:
//                    kind        "image" | "labels" | "prob" | "field"
//                    dims        [nx, ny, nz]
//                    channels    c (1 for image and labels, 3 for field)
//                    spacing_mm  [sx, sy, sz]
//                    dtype       "u8" for labels, "f32" otherwise
//                    num_structures  (labels only; optional on read)
//   payload        little endian samples, x fastest, then y, then z, with
//                  whole channel blocks one after another
//
// In memory, files decode to float (or u8) containers so that a read/write
// round trip is bit exact. The double overloads of write_volume round to float.

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

#include "masr/volume.hpp"

namespace masr {

enum class VolumeKind { image, labels, prob, field };

const char* to_string(VolumeKind kind);

using AnyVolume = std::variant<ScalarVolume<float>, LabelVolume, ProbVolume<float>, DisplacementField<float>>;

std::string encode_volume(const AnyVolume& v);
AnyVolume decode_volume(std::string_view bytes);

AnyVolume read_volume(const std::filesystem::path& path);
void write_volume(const AnyVolume& v, const std::filesystem::path& path);

void write_volume(const ScalarVolume<double>& v, const std::filesystem::path& path);
void write_volume(const ProbVolume<double>& v, const std::filesystem::path& path);
void write_volume(const DisplacementField<double>& v, const std::filesystem::path& path);

// Typed readers; the file must hold the requested kind.
ScalarVolume<double> read_image(const std::filesystem::path& path);
LabelVolume read_labels(const std::filesystem::path& path);
ProbVolume<double> read_prob(const std::filesystem::path& path);
DisplacementField<double> read_field(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace masr
