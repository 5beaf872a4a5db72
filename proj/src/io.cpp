#include "masr/io.hpp"

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace masr {
namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'V', 'V', 'F', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(char((v >> (8 * b)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

template <class Array>
void put_f32(std::string& out, const Array& data) {
  out.reserve(out.size() + 4 * std::size_t(data.size()));
  for (Index i = 0; i < data.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(float(data[i])));
}

VoxelArray<float> get_f32(const unsigned char* p, Index count) {
  VoxelArray<float> out(count);
  for (Index i = 0; i < count; ++i) out[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  return out;
}

struct Header {
  VolumeKind kind = VolumeKind::image;
  Dims dims = Dims::Zero();
  int channels = 1;
  Spacing spacing = Spacing::Ones();
  std::string dtype;
  int num_structures = 0;  // 0 when not present
};

std::string encode(const Header& h, const GridGeometry& geom, const std::string& payload) {
  json j;
  j["kind"] = to_string(h.kind);
  j["dims"] = {geom.nx(), geom.ny(), geom.nz()};
  j["channels"] = h.channels;
  j["spacing_mm"] = {geom.spacing()[0], geom.spacing()[1], geom.spacing()[2]};
  j["dtype"] = h.dtype;
  if (h.kind == VolumeKind::labels) j["num_structures"] = h.num_structures;
  const std::string text = j.dump();
  std::string out(kMagic, 4);
  put_u32(out, std::uint32_t(text.size()));
  out += text;
  out += payload;
  return out;
}

VolumeKind parse_kind(const std::string& s) {
  if (s == "image") return VolumeKind::image;
  if (s == "labels") return VolumeKind::labels;
  if (s == "prob") return VolumeKind::prob;
  if (s == "field") return VolumeKind::field;
  throw Error(Errc::header_parse, "unknown kind '" + s + "'");
}

Header parse_header(std::string_view text) {
  Header h;
  try {
    const json j = json::parse(text);
    h.kind = parse_kind(j.at("kind").get<std::string>());
    const auto dims = j.at("dims").get<std::vector<long long>>();
    const auto spacing = j.at("spacing_mm").get<std::vector<double>>();
    if (dims.size() != 3 || spacing.size() != 3) throw Error(Errc::header_parse, "dims and spacing_mm need 3 entries");
    h.dims = Dims(dims[0], dims[1], dims[2]);
    h.spacing = Spacing(spacing[0], spacing[1], spacing[2]);
    h.channels = j.at("channels").get<int>();
    h.dtype = j.at("dtype").get<std::string>();
    if (j.contains("num_structures")) h.num_structures = j.at("num_structures").get<int>();
  } catch (const json::exception& e) {
    throw Error(Errc::header_parse, e.what());
  }
  if (h.channels < 1) throw Error(Errc::header_parse, "channels must be >= 1");
  const char* want = h.kind == VolumeKind::labels ? "u8" : "f32";
  if (h.dtype != want) throw Error(Errc::kind_dtype_mismatch, std::string(to_string(h.kind)) + " requires " + want);
  if ((h.kind == VolumeKind::image || h.kind == VolumeKind::labels) && h.channels != 1)
    throw Error(Errc::kind_dtype_mismatch, std::string(to_string(h.kind)) + " requires channels = 1");
  if (h.kind == VolumeKind::field && h.channels != 3)
    throw Error(Errc::kind_dtype_mismatch, "field requires channels = 3");
  return h;
}

}  // namespace

const char* to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::image: return "image";
    case VolumeKind::labels: return "labels";
    case VolumeKind::prob: return "prob";
    case VolumeKind::field: return "field";
  }
  return "image";
}

std::string encode_volume(const AnyVolume& v) {
  return std::visit(
      [](const auto& vol) -> std::string {
        using V = std::decay_t<decltype(vol)>;
        Header h;
        std::string payload;
        if constexpr (std::is_same_v<V, LabelVolume>) {
          h.kind = VolumeKind::labels;
          h.dtype = "u8";
          h.num_structures = vol.num_structures();
          payload.assign(reinterpret_cast<const char*>(vol.data().data()), std::size_t(vol.data().size()));
        } else {
          h.dtype = "f32";
          if constexpr (std::is_same_v<V, ScalarVolume<float>>) {
            h.kind = VolumeKind::image;
          } else if constexpr (std::is_same_v<V, ProbVolume<float>>) {
            h.kind = VolumeKind::prob;
            h.channels = vol.channels();
          } else {
            h.kind = VolumeKind::field;
            h.channels = 3;
          }
          put_f32(payload, vol.data());
        }
        return encode(h, vol.geom(), payload);
      },
      v);
}

AnyVolume decode_volume(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(Errc::bad_magic, "not a VVF1 file");
  if (bytes.size() < 8) throw Error(Errc::header_parse, "truncated header length");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t header_len = get_u32(raw + 4);
  if (8 + header_len > bytes.size()) throw Error(Errc::header_parse, "header runs past end of file");
  const Header h = parse_header(bytes.substr(8, header_len));

  GridGeometry geom(Dims::Constant(2), Spacing::Ones());
  try {
    geom = GridGeometry(h.dims, h.spacing);
  } catch (const Error& e) {
    throw Error(Errc::header_parse, e.detail());
  }
  const std::uint64_t sample_size = h.kind == VolumeKind::labels ? 1 : 4;
  const std::uint64_t expected = std::uint64_t(geom.size()) * std::uint64_t(h.channels) * sample_size;
  const std::uint64_t actual = bytes.size() - 8 - header_len;
  if (actual != expected) {
    throw Error(Errc::payload_length_mismatch,
                "expected " + std::to_string(expected) + " payload bytes, found " + std::to_string(actual));
  }
  const unsigned char* payload = raw + 8 + header_len;
  const Index count = geom.size() * h.channels;

  switch (h.kind) {
    case VolumeKind::labels: {
      LabelVolume::Data data(count);
      std::memcpy(data.data(), payload, std::size_t(count));
      const int k = h.num_structures > 0 ? h.num_structures : std::max(1, int(data.maxCoeff()));
      return LabelVolume(geom, k, std::move(data));
    }
    case VolumeKind::image: return ScalarVolume<float>(geom, get_f32(payload, count));
    case VolumeKind::prob: return ProbVolume<float>(geom, h.channels, get_f32(payload, count));
    case VolumeKind::field: return DisplacementField<float>(geom, get_f32(payload, count));
  }
  throw Error(Errc::header_parse, "unreachable kind");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_failure, "cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw Error(Errc::io_failure, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

AnyVolume read_volume(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_volume(bytes);
  } catch (const Error& e) {
    throw e.with_context(path.string());
  }
}

void write_volume(const AnyVolume& v, const std::filesystem::path& path) { write_file(path, encode_volume(v)); }

void write_volume(const ScalarVolume<double>& v, const std::filesystem::path& path) {
  write_volume(AnyVolume(v.cast<float>()), path);
}

void write_volume(const ProbVolume<double>& v, const std::filesystem::path& path) {
  // Rounding to float can push a channel sum a hair above 1; the container
  // tolerates 1e-6.
  write_volume(AnyVolume(ProbVolume<float>(v.geom(), v.channels(), v.data().cast<float>().eval())), path);
}

void write_volume(const DisplacementField<double>& v, const std::filesystem::path& path) {
  write_volume(AnyVolume(v.cast<float>()), path);
}

namespace {

template <class V>
const V& expect_kind(const AnyVolume& v, const std::filesystem::path& path, VolumeKind want) {
  if (const V* p = std::get_if<V>(&v)) return *p;
  throw Error(Errc::kind_dtype_mismatch, path.string() + ": expected a " + to_string(want) + " volume");
}

}  // namespace

ScalarVolume<double> read_image(const std::filesystem::path& path) {
  const AnyVolume v = read_volume(path);
  return expect_kind<ScalarVolume<float>>(v, path, VolumeKind::image).cast<double>();
}

LabelVolume read_labels(const std::filesystem::path& path) {
  const AnyVolume v = read_volume(path);
  return expect_kind<LabelVolume>(v, path, VolumeKind::labels);
}

ProbVolume<double> read_prob(const std::filesystem::path& path) {
  const AnyVolume v = read_volume(path);
  const auto& p = expect_kind<ProbVolume<float>>(v, path, VolumeKind::prob);
  return ProbVolume<double>(p.geom(), p.channels(), p.data().cast<double>().eval());
}

DisplacementField<double> read_field(const std::filesystem::path& path) {
  const AnyVolume v = read_volume(path);
  return expect_kind<DisplacementField<float>>(v, path, VolumeKind::field).cast<double>();
}

}  // namespace masr
