#include "psplat/formats.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>
#include <png.h>

namespace psplat::io {

using Json = nlohmann::ordered_json;

namespace {

void write_binary(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, bytes);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

Json read_json(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
}

void expect_version(ByteReader& r) {
  const std::size_t at = r.offset();
  const std::uint32_t v = r.u32();
  if (v != kFormatVersion) throw FormatError("unsupported version " + std::to_string(v), at);
}

fs::path sidecar_path(const fs::path& path) {
  fs::path p = path;
  p += ".json";
  return p;
}

}  // namespace

// ---- PLY -------------------------------------------------------------------

namespace {

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::I8:
    case PlyType::U8: return 1;
    case PlyType::I16:
    case PlyType::U16: return 2;
    case PlyType::I32:
    case PlyType::U32:
    case PlyType::F32: return 4;
    case PlyType::F64: return 8;
  }
  return 0;
}

std::optional<PlyType> ply_type(const std::string& name) {
  static const std::map<std::string, PlyType> table{
      {"char", PlyType::I8},   {"int8", PlyType::I8},     {"uchar", PlyType::U8},   {"uint8", PlyType::U8},
      {"short", PlyType::I16}, {"int16", PlyType::I16},   {"ushort", PlyType::U16}, {"uint16", PlyType::U16},
      {"int", PlyType::I32},   {"int32", PlyType::I32},   {"uint", PlyType::U32},   {"uint32", PlyType::U32},
      {"float", PlyType::F32}, {"float32", PlyType::F32}, {"double", PlyType::F64}, {"float64", PlyType::F64}};
  const auto it = table.find(name);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

double read_ply_value(ByteReader& r, PlyType t) {
  switch (t) {
    case PlyType::I8: return static_cast<std::int8_t>(r.u8());
    case PlyType::U8: return r.u8();
    case PlyType::I16: return static_cast<std::int16_t>(r.u16());
    case PlyType::U16: return r.u16();
    case PlyType::I32: return r.i32();
    case PlyType::U32: return r.u32();
    case PlyType::F32: return r.f32();
    case PlyType::F64: return r.f64();
  }
  return 0.0;
}

struct PlyHeader {
  std::size_t vertex_count = 0;
  std::vector<std::pair<std::string, PlyType>> properties;
  std::size_t body_offset = 0;

  int index(const std::string& name) const {
    for (std::size_t k = 0; k < properties.size(); ++k) {
      if (properties[k].first == name) return static_cast<int>(k);
    }
    return -1;
  }
  std::size_t stride() const {
    std::size_t s = 0;
    for (const auto& p : properties) s += ply_size(p.second);
    return s;
  }
};

PlyHeader parse_ply_header(std::span<const std::uint8_t> bytes) {
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const std::string_view terminator = "end_header\n";
  const auto end = text.find(terminator);
  if (text.substr(0, 4) != "ply\n") throw FormatError("missing ply signature", 0);
  if (end == std::string_view::npos) throw FormatError("missing end_header", bytes.size());
  PlyHeader h;
  h.body_offset = end + terminator.size();
  std::istringstream in{std::string(text.substr(4, end - 4))};
  std::string line;
  bool in_vertex = false;
  bool seen_vertex = false;
  std::size_t offset = 4;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw FormatError("unsupported ply format " + fmt, offset);
    } else if (word == "comment" || word == "obj_info" || word.empty()) {
    } else if (word == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      if (name == "vertex") {
        h.vertex_count = count;
        in_vertex = seen_vertex = true;
      } else if (count > 0) {
        throw FormatError("unsupported ply element " + name, offset);
      } else {
        in_vertex = false;
      }
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      if (type == "list") throw FormatError("list properties are not supported", offset);
      const auto t = ply_type(type);
      if (!t) throw FormatError("unknown ply type " + type, offset);
      if (in_vertex) h.properties.emplace_back(name, *t);
    } else {
      throw FormatError("unexpected ply header line: " + line, offset);
    }
    offset += line.size() + 1;
  }
  if (!seen_vertex) throw FormatError("ply has no vertex element", h.body_offset);
  for (const char* axis : {"x", "y", "z"}) {
    if (h.index(axis) < 0) throw FormatError(std::string("ply lacks property ") + axis, h.body_offset);
  }
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_ply(const PrimitiveCloud& cloud) {
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n"
         << "property float x\nproperty float y\nproperty float z\n";
  if (cloud.has_normals()) header << "property float nx\nproperty float ny\nproperty float nz\n";
  if (cloud.has_colors()) header << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  header << "end_header\n";
  const std::string h = header.str();
  ByteWriter w;
  w.bytes(h.data(), h.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(cloud.positions[i][a]));
    if (cloud.has_normals()) {
      for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(cloud.normals[i][a]));
    }
    if (cloud.has_colors()) {
      for (int a = 0; a < 3; ++a) w.u8(cloud.colors[i][static_cast<std::size_t>(a)]);
    }
  }
  return w.buffer();
}

PrimitiveCloud decode_ply(std::span<const std::uint8_t> bytes) {
  const PlyHeader h = parse_ply_header(bytes);
  ByteReader r(bytes);
  r.skip(h.body_offset);
  r.require(h.vertex_count * h.stride(), "vertex data");
  const int ix = h.index("x"), iy = h.index("y"), iz = h.index("z");
  const int inx = h.index("nx"), iny = h.index("ny"), inz = h.index("nz");
  const int ir = h.index("red"), ig = h.index("green"), ib = h.index("blue");
  const bool normals = inx >= 0 && iny >= 0 && inz >= 0;
  const bool colors = ir >= 0 && ig >= 0 && ib >= 0;
  PrimitiveCloud cloud;
  cloud.positions.resize(h.vertex_count);
  if (normals) cloud.normals.resize(h.vertex_count);
  if (colors) cloud.colors.resize(h.vertex_count);
  std::vector<double> values(h.properties.size());
  for (std::size_t i = 0; i < h.vertex_count; ++i) {
    for (std::size_t k = 0; k < h.properties.size(); ++k) values[k] = read_ply_value(r, h.properties[k].second);
    cloud.positions[i] = Vec3(values[ix], values[iy], values[iz]);
    if (normals) cloud.normals[i] = Vec3(values[inx], values[iny], values[inz]);
    if (colors) {
      cloud.colors[i] = {static_cast<std::uint8_t>(values[ir]), static_cast<std::uint8_t>(values[ig]),
                         static_cast<std::uint8_t>(values[ib])};
    }
  }
  r.expect_end();
  return cloud;
}

void write_ply(const fs::path& path, const PrimitiveCloud& cloud) { write_binary(path, encode_ply(cloud)); }
PrimitiveCloud read_ply(const fs::path& path) { return decode_ply(read_file(path)); }

// ---- PNG -------------------------------------------------------------------

namespace {

struct PngBuffer {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

void png_read_callback(png_structp png, png_bytep out, png_size_t n) {
  auto* buf = static_cast<PngBuffer*>(png_get_io_ptr(png));
  if (buf->pos + n > buf->data.size()) png_error(png, "truncated png data");
  std::memcpy(out, buf->data.data() + buf->pos, n);
  buf->pos += n;
}

void png_write_callback(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + n);
}

void png_flush_callback(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_png16(const Image16& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw ConfigError("png image dimensions do not match pixel count");
  }
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialization failed");
  }
  // Big-endian samples as PNG stores them.
  std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * 2);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png encoding failed");
  }
  png_set_write_fn(png, &out, png_write_callback, png_flush_callback);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::uint16_t v = image.pixels[static_cast<std::size_t>(y) * image.width + x];
      row[2 * static_cast<std::size_t>(x)] = static_cast<std::uint8_t>(v >> 8);
      row[2 * static_cast<std::size_t>(x) + 1] = static_cast<std::uint8_t>(v & 0xFF);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Image16 decode_png16(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a png file", 0);
  PngBuffer buf{bytes, 0};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng initialization failed");
  }
  Image16 image;
  std::vector<std::uint8_t> row;
  if (setjmp(png_jmpbuf(png))) {
    const std::size_t at = buf.pos;
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png decoding failed", at);
  }
  png_set_read_fn(png, &buf, png_read_callback);
  png_read_info(png, info);
  const auto depth = png_get_bit_depth(png, info);
  const auto color = png_get_color_type(png, info);
  if (depth != 16 || color != PNG_COLOR_TYPE_GRAY || png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) {
    const std::size_t at = buf.pos;
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("expected a non-interlaced 16-bit grayscale png", at);
  }
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  image.pixels.resize(static_cast<std::size_t>(image.width) * image.height);
  row.resize(static_cast<std::size_t>(image.width) * 2);
  for (int y = 0; y < image.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < image.width; ++x) {
      image.pixels[static_cast<std::size_t>(y) * image.width + x] = static_cast<std::uint16_t>(
          (row[2 * static_cast<std::size_t>(x)] << 8) | row[2 * static_cast<std::size_t>(x) + 1]);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png16(const fs::path& path, const Image16& image) { write_binary(path, encode_png16(image)); }
Image16 read_png16(const fs::path& path) { return decode_png16(read_file(path)); }

Image16 depth_to_image(const CameraView& view) {
  if (!view.has_depth()) throw ConfigError("view " + std::to_string(view.view_id) + " has no depth map");
  Image16 img{view.width, view.height, std::vector<std::uint16_t>(view.depth.size())};
  for (std::size_t p = 0; p < view.depth.size(); ++p) {
    const double mm = std::round(static_cast<double>(view.depth[p]) * 1000.0);
    img.pixels[p] = static_cast<std::uint16_t>(std::clamp(mm, 0.0, 65535.0));
  }
  return img;
}

void write_depth(const fs::path& path, const CameraView& view) { write_png16(path, depth_to_image(view)); }

std::vector<float> read_depth(const fs::path& path, int width, int height) {
  const Image16 img = read_png16(path);
  if (img.width != width || img.height != height) {
    throw FormatError(path.string() + ": depth map is " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + ", camera expects " + std::to_string(width) + "x" +
                          std::to_string(height),
                      16);
  }
  std::vector<float> depth(img.pixels.size());
  for (std::size_t p = 0; p < depth.size(); ++p) depth[p] = static_cast<float>(img.pixels[p] / 1000.0);
  return depth;
}

void write_mask(const fs::path& path, const MaskMap& mask) {
  Image16 img{mask.width, mask.height, std::vector<std::uint16_t>(mask.labels.size())};
  for (std::size_t p = 0; p < mask.labels.size(); ++p) {
    if (mask.labels[p] > 0xFFFF) throw ConfigError("mask label exceeds 16 bits: " + std::to_string(mask.labels[p]));
    img.pixels[p] = static_cast<std::uint16_t>(mask.labels[p]);
  }
  write_png16(path, img);
}

MaskMap read_mask(const fs::path& path) {
  const Image16 img = read_png16(path);
  MaskMap mask(img.width, img.height);
  std::copy(img.pixels.begin(), img.pixels.end(), mask.labels.begin());
  return mask;
}

// ---- Cameras ---------------------------------------------------------------

void write_cameras(const fs::path& path, std::span<const CameraView> views) {
  Json arr = Json::array();
  for (const auto& v : views) {
    Json j;
    j["view_id"] = v.view_id;
    j["width"] = v.width;
    j["height"] = v.height;
    j["fx"] = v.fx;
    j["fy"] = v.fy;
    j["cx"] = v.cx;
    j["cy"] = v.cy;
    Json m = Json::array();
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) m.push_back(v.world_to_camera(r, c));
    }
    j["world_to_camera"] = m;
    if (!v.depth_file.empty()) j["depth_file"] = v.depth_file;
    if (!v.feature_file.empty()) j["feature_file"] = v.feature_file;
    if (!v.mask_file.empty()) j["mask_file"] = v.mask_file;
    arr.push_back(j);
  }
  write_text(path, arr.dump(2) + "\n");
}

std::vector<CameraView> read_cameras(const fs::path& path, bool load_depth) {
  const Json arr = read_json(path);
  if (!arr.is_array()) throw FormatError(path.string() + ": cameras must be a JSON array", 0);
  const fs::path dir = path.parent_path();
  std::vector<CameraView> views;
  try {
    for (const auto& j : arr) {
      CameraView v;
      v.view_id = j.at("view_id").get<int>();
      v.width = j.at("width").get<int>();
      v.height = j.at("height").get<int>();
      v.fx = j.at("fx").get<double>();
      v.fy = j.at("fy").get<double>();
      v.cx = j.at("cx").get<double>();
      v.cy = j.at("cy").get<double>();
      const auto& m = j.at("world_to_camera");
      if (!m.is_array() || m.size() != 16) throw ConfigError("world_to_camera must hold 16 numbers");
      for (int k = 0; k < 16; ++k) v.world_to_camera(k / 4, k % 4) = m[static_cast<std::size_t>(k)].get<double>();
      const auto resolve = [&](const char* key) -> std::string {
        if (!j.contains(key)) return {};
        const fs::path p = j.at(key).get<std::string>();
        return (p.is_absolute() ? p : dir / p).string();
      };
      v.depth_file = resolve("depth_file");
      v.feature_file = resolve("feature_file");
      v.mask_file = resolve("mask_file");
      v.validate();
      if (load_depth && !v.depth_file.empty()) v.depth = read_depth(v.depth_file, v.width, v.height);
      views.push_back(std::move(v));
    }
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
  return views;
}

// ---- FMAP ------------------------------------------------------------------

std::vector<std::uint8_t> encode_fmap(const FeatureMap& fmap) {
  ByteWriter w;
  w.magic("FMAP");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(fmap.height));
  w.u32(static_cast<std::uint32_t>(fmap.width));
  w.u32(static_cast<std::uint32_t>(fmap.dim));
  for (float x : fmap.data) w.f32(x);
  return w.buffer();
}

FeatureMap decode_fmap(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("FMAP");
  expect_version(r);
  const auto h = r.u32(), wd = r.u32(), d = r.u32();
  const std::size_t count = static_cast<std::size_t>(h) * wd * d;
  r.require(count * 4, "feature data");
  FeatureMap fmap(static_cast<int>(wd), static_cast<int>(h), static_cast<int>(d));
  for (auto& x : fmap.data) x = r.f32();
  r.expect_end();
  return fmap;
}

void write_fmap(const fs::path& path, const FeatureMap& fmap) { write_binary(path, encode_fmap(fmap)); }
FeatureMap read_fmap(const fs::path& path) { return decode_fmap(read_file(path)); }

// ---- FUSE ------------------------------------------------------------------

std::vector<std::uint8_t> encode_fused(const FusedFeatureCloud& fused) {
  ByteWriter w;
  w.magic("FUSE");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(fused.size()));
  w.u32(static_cast<std::uint32_t>(fused.dim));
  w.u32(fused.view_count);
  for (float x : fused.features.data) w.f32(x);
  for (double c : fused.confidence) w.f32(static_cast<float>(c));
  for (auto o : fused.obs_count) w.u32(o);
  return w.buffer();
}

FusedFeatureCloud decode_fused(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("FUSE");
  expect_version(r);
  const auto n = r.u32(), d = r.u32();
  FusedFeatureCloud f;
  f.view_count = r.u32();
  f.dim = d;
  r.require(static_cast<std::size_t>(n) * (d + 2) * 4, "fused data");
  f.features = FeatureMatrix(n, d);
  for (auto& x : f.features.data) x = r.f32();
  f.confidence.resize(n);
  for (auto& c : f.confidence) c = r.f32();
  f.obs_count.resize(n);
  for (auto& o : f.obs_count) o = r.u32();
  r.expect_end();
  return f;
}

void write_fused(const fs::path& path, const FusedFeatureCloud& fused) { write_binary(path, encode_fused(fused)); }
FusedFeatureCloud read_fused(const fs::path& path) { return decode_fused(read_file(path)); }

// ---- TRIP ------------------------------------------------------------------

std::vector<std::uint8_t> encode_field(const LanguageField& field) {
  const auto& planes = field.planes;
  ByteWriter w;
  w.magic("TRIP");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(planes.level_count()));
  w.u32(static_cast<std::uint32_t>(planes.channels()));
  for (int a = 0; a < 3; ++a) w.f64(planes.aabb().lo[a]);
  for (int a = 0; a < 3; ++a) w.f64(planes.aabb().hi[a]);
  for (const auto& level : planes.levels()) {
    w.u32(static_cast<std::uint32_t>(level.resolution));
    for (const auto& plane : level.planes) {
      for (double x : plane) w.f32(static_cast<float>(x));
    }
  }
  const auto& layers = field.decoder.layers();
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto& layer : layers) {
    w.u32(static_cast<std::uint32_t>(layer.inputs));
    w.u32(static_cast<std::uint32_t>(layer.outputs));
    for (double x : layer.weight) w.f32(static_cast<float>(x));
    for (double x : layer.bias) w.f32(static_cast<float>(x));
  }
  return w.buffer();
}

LanguageField decode_field(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("TRIP");
  expect_version(r);
  const std::size_t levels_at = r.offset();
  const auto levels = r.u32(), channels = r.u32();
  if (levels == 0 || channels == 0) throw FormatError("field needs at least one level and channel", levels_at);
  Aabb aabb;
  for (int a = 0; a < 3; ++a) aabb.lo[a] = r.f64();
  for (int a = 0; a < 3; ++a) aabb.hi[a] = r.f64();
  std::vector<std::vector<float>> plane_data;
  std::vector<int> resolutions;
  for (std::uint32_t l = 0; l < levels; ++l) {
    const std::size_t at = r.offset();
    const auto res = r.u32();
    if (res < 2 || res > 65536) throw FormatError("bad plane resolution " + std::to_string(res), at);
    resolutions.push_back(static_cast<int>(res));
    const std::size_t count = 3ull * res * res * channels;
    r.require(count * 4, "plane data");
    std::vector<float> data(count);
    for (auto& x : data) x = r.f32();
    plane_data.push_back(std::move(data));
  }
  LanguageField field;
  try {
    field.planes = PyramidTriPlane(aabb, resolutions, static_cast<int>(channels));
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), levels_at);
  }
  for (std::size_t l = 0; l < plane_data.size(); ++l) {
    auto& level = field.planes.levels()[l];
    const std::size_t per_plane = plane_data[l].size() / 3;
    for (std::size_t p = 0; p < 3; ++p) {
      for (std::size_t k = 0; k < per_plane; ++k) level.planes[p][k] = plane_data[l][p * per_plane + k];
    }
  }
  const std::size_t layers_at = r.offset();
  if (r.u32() != 3) throw FormatError("decoder must have 3 layers", layers_at);
  std::array<DenseLayer, 3> layers;
  for (auto& layer : layers) {
    layer.inputs = static_cast<int>(r.u32());
    layer.outputs = static_cast<int>(r.u32());
    const std::size_t wn = static_cast<std::size_t>(layer.inputs) * layer.outputs;
    r.require((wn + layer.outputs) * 4, "decoder weights");
    layer.weight.resize(wn);
    for (auto& x : layer.weight) x = r.f32();
    layer.bias.resize(static_cast<std::size_t>(layer.outputs));
    for (auto& x : layer.bias) x = r.f32();
  }
  if (layers[0].inputs != field.planes.latent_dim() || layers[1].inputs != layers[0].outputs ||
      layers[2].inputs != layers[1].outputs || layers[1].outputs != layers[0].outputs) {
    throw FormatError("decoder layer dimensions are inconsistent", layers_at);
  }
  r.expect_end();
  field.decoder = FeatureDecoder(layers[0].inputs, layers[0].outputs, layers[2].outputs);
  field.decoder.layers() = std::move(layers);
  return field;
}

void write_field(const fs::path& path, const LanguageField& field) { write_binary(path, encode_field(field)); }
LanguageField read_field(const fs::path& path) { return decode_field(read_file(path)); }

// ---- SUPR ------------------------------------------------------------------

std::vector<std::uint8_t> encode_partition(const SuperPrimitivePartition& partition) {
  ByteWriter w;
  w.magic("SUPR");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(partition.primitive_count()));
  w.u32(static_cast<std::uint32_t>(partition.segment_count()));
  w.u32(static_cast<std::uint32_t>(partition.feature_dim()));
  for (auto s : partition.segment_of) w.u32(s);
  for (const auto& seg : partition.segments) {
    w.u32(seg.count);
    for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(seg.normal[a]));
    for (float x : seg.feature) w.f32(x);
    w.f32(static_cast<float>(seg.confidence_mass));
  }
  return w.buffer();
}

SuperPrimitivePartition decode_partition(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("SUPR");
  expect_version(r);
  const auto n = r.u32(), s = r.u32(), d = r.u32();
  r.require(static_cast<std::size_t>(n) * 4 + static_cast<std::size_t>(s) * (4 + 12 + 4ull * d + 4), "partition");
  SuperPrimitivePartition p;
  p.segment_of.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    p.segment_of[i] = r.u32();
    if (p.segment_of[i] >= s) {
      throw FormatError("primitive " + std::to_string(i) + " references segment " + std::to_string(p.segment_of[i]) +
                            " of " + std::to_string(s),
                        at);
    }
  }
  p.segments.resize(s);
  for (auto& seg : p.segments) {
    seg.count = r.u32();
    for (int a = 0; a < 3; ++a) seg.normal[a] = r.f32();
    seg.feature.resize(d);
    for (auto& x : seg.feature) x = r.f32();
    seg.confidence_mass = r.f32();
  }
  r.expect_end();
  return p;
}

void write_partition(const fs::path& path, const SuperPrimitivePartition& partition) {
  write_binary(path, encode_partition(partition));
}
SuperPrimitivePartition read_partition(const fs::path& path) { return decode_partition(read_file(path)); }

// ---- INST ------------------------------------------------------------------

std::vector<std::uint8_t> encode_instances(const InstancePartition& instances) {
  ByteWriter w;
  w.magic("INST");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(instances.instance_of.size()));
  for (auto id : instances.instance_of) w.u32(id);
  return w.buffer();
}

InstancePartition decode_instances(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("INST");
  expect_version(r);
  const auto n = r.u32();
  r.require(static_cast<std::size_t>(n) * 4, "instance ids");
  InstancePartition p;
  p.instance_of.resize(n);
  for (auto& id : p.instance_of) {
    id = r.u32();
    p.instance_count = std::max(p.instance_count, id + 1);
  }
  r.expect_end();
  return p;
}

void write_instances(const fs::path& path, const ClusterResult& result) {
  write_binary(path, encode_instances(result.instances));
  Json side;
  side["instance_count"] = result.instances.instance_count;
  Json its = Json::array();
  for (const auto& it : result.iterations) {
    its.push_back({{"threshold", it.threshold},
                   {"candidate_pairs", it.candidate_pairs},
                   {"merges", it.merges},
                   {"instances_after", it.instances_after}});
  }
  side["iterations"] = its;
  write_text(sidecar_path(path), side.dump(2) + "\n");
}

InstancePartition read_instances(const fs::path& path) { return decode_instances(read_file(path)); }

// ---- PANO ------------------------------------------------------------------

namespace {
constexpr std::uint32_t kNoInstance = 0xFFFFFFFFu;
constexpr std::uint16_t kNoClass = 0xFFFFu;
}  // namespace

std::vector<std::uint8_t> encode_panoptic(const PanopticLabeling& labeling) {
  ByteWriter w;
  w.magic("PANO");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(labeling.size()));
  for (std::size_t i = 0; i < labeling.size(); ++i) {
    w.u32(labeling.instance_of[i] < 0 ? kNoInstance : static_cast<std::uint32_t>(labeling.instance_of[i]));
    w.u16(labeling.class_of[i] < 0 ? kNoClass : static_cast<std::uint16_t>(labeling.class_of[i]));
  }
  return w.buffer();
}

PanopticLabeling decode_panoptic(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("PANO");
  expect_version(r);
  const auto n = r.u32();
  r.require(static_cast<std::size_t>(n) * 6, "panoptic labels");
  PanopticLabeling l;
  l.instance_of.resize(n);
  l.class_of.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto inst = r.u32();
    const auto cls = r.u16();
    l.instance_of[i] = inst == kNoInstance ? kUnassigned : static_cast<std::int32_t>(inst);
    l.class_of[i] = cls == kNoClass ? kUnassigned : static_cast<std::int32_t>(cls);
    if (l.instance_of[i] >= 0) {
      const auto id = static_cast<std::size_t>(l.instance_of[i]);
      if (id >= l.instances.size()) l.instances.resize(id + 1);
      l.instances[id].class_index = static_cast<std::uint32_t>(std::max(l.class_of[i], 0));
      ++l.instances[id].primitive_count;
    }
  }
  r.expect_end();
  return l;
}

void write_panoptic(const fs::path& path, const PanopticLabeling& labeling, const QuerySet& queries) {
  write_binary(path, encode_panoptic(labeling));
  Json arr = Json::array();
  for (std::size_t k = 0; k < labeling.instances.size(); ++k) {
    const auto& inst = labeling.instances[k];
    arr.push_back({{"id", k},
                   {"class", inst.class_index},
                   {"name", inst.class_index < queries.size() ? queries.entries[inst.class_index].name : ""},
                   {"stuff", inst.stuff},
                   {"primitive_count", inst.primitive_count},
                   {"score", inst.score}});
  }
  write_text(sidecar_path(path), Json{{"instances", arr}}.dump(2) + "\n");
}

PanopticLabeling read_panoptic(const fs::path& path) {
  auto l = decode_panoptic(read_file(path));
  const fs::path side = sidecar_path(path);
  if (fs::exists(side)) {
    const Json j = read_json(side);
    try {
      for (const auto& e : j.at("instances")) {
        const auto id = e.at("id").get<std::size_t>();
        if (id >= l.instances.size()) l.instances.resize(id + 1);
        auto& inst = l.instances[id];
        inst.class_index = e.at("class").get<std::uint32_t>();
        inst.stuff = e.at("stuff").get<bool>();
        inst.score = e.at("score").get<double>();
      }
    } catch (const Json::exception& e) {
      throw FormatError(side.string() + ": " + e.what(), 0);
    }
  }
  return l;
}

// ---- GTLB ------------------------------------------------------------------

std::vector<std::uint8_t> encode_ground_truth(const GroundTruth& gt) {
  ByteWriter w;
  w.magic("GTLB");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(gt.size()));
  for (std::size_t i = 0; i < gt.size(); ++i) {
    w.i32(gt.class_of[i]);
    w.i32(gt.instance_of[i]);
  }
  return w.buffer();
}

void write_ground_truth(const fs::path& path, const GroundTruth& gt) { write_binary(path, encode_ground_truth(gt)); }

GroundTruth read_ground_truth(const fs::path& path, const QuerySet& queries) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic("GTLB");
  expect_version(r);
  const auto n = r.u32();
  r.require(static_cast<std::size_t>(n) * 8, "ground truth labels");
  GroundTruth gt;
  gt.class_of.resize(n);
  gt.instance_of.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    gt.class_of[i] = r.i32();
    gt.instance_of[i] = r.i32();
  }
  r.expect_end();
  for (const auto& e : queries.entries) {
    gt.kinds.push_back(e.kind);
    gt.names.push_back(e.name);
  }
  gt.validate();
  return gt;
}

// ---- Queries ---------------------------------------------------------------

std::string encode_queries(const QuerySet& queries) {
  Json arr = Json::array();
  for (const auto& e : queries.entries) {
    arr.push_back(
        {{"name", e.name}, {"kind", e.kind == ClassKind::Stuff ? "stuff" : "thing"}, {"embedding", e.embedding}});
  }
  return arr.dump() + "\n";
}

void write_queries(const fs::path& path, const QuerySet& queries) { write_text(path, encode_queries(queries)); }

QuerySet read_queries(const fs::path& path) {
  const Json arr = read_json(path);
  QuerySet q;
  try {
    if (!arr.is_array()) throw FormatError(path.string() + ": queries must be a JSON array", 0);
    for (const auto& j : arr) {
      QueryEntry e;
      e.name = j.at("name").get<std::string>();
      const auto kind = j.at("kind").get<std::string>();
      if (kind != "thing" && kind != "stuff") throw ConfigError("query kind must be thing or stuff: " + kind);
      e.kind = kind == "stuff" ? ClassKind::Stuff : ClassKind::Thing;
      e.embedding = j.at("embedding").get<std::vector<float>>();
      q.entries.push_back(std::move(e));
    }
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
  q.validate();
  return q;
}

// ---- Eval report -----------------------------------------------------------

namespace {
Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
}  // namespace

std::string eval_report_json(const EvalReport& report, const GroundTruth& gt) {
  Json j;
  j["miou"] = report.miou;
  j["macc"] = report.macc;
  j["prq_thing"] = opt(report.prq_thing);
  j["prq_stuff"] = opt(report.prq_stuff);
  Json per = Json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& s = report.per_class[c];
    per.push_back({{"class", c < gt.names.size() ? gt.names[c] : std::to_string(c)},
                   {"kind", gt.kinds[c] == ClassKind::Stuff ? "stuff" : "thing"},
                   {"iou", opt(s.iou)},
                   {"accuracy", opt(s.accuracy)},
                   {"prq", opt(s.prq)},
                   {"tp", s.tp},
                   {"fp", s.fp},
                   {"fn", s.fn}});
  }
  j["per_class"] = per;
  return j.dump(2) + "\n";
}

std::string eval_report_text(const EvalReport& report, const GroundTruth& gt) {
  const auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << *v;
    return s.str();
  };
  std::ostringstream out;
  out << std::left << std::setw(14) << "class" << std::setw(7) << "kind" << std::right << std::setw(8) << "IoU"
      << std::setw(8) << "Acc" << std::setw(8) << "PRQ" << std::setw(5) << "TP" << std::setw(5) << "FP"
      << std::setw(5) << "FN" << "\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& s = report.per_class[c];
    out << std::left << std::setw(14) << (c < gt.names.size() ? gt.names[c] : std::to_string(c)) << std::setw(7)
        << (gt.kinds[c] == ClassKind::Stuff ? "stuff" : "thing") << std::right << std::setw(8) << fmt(s.iou)
        << std::setw(8) << fmt(s.accuracy) << std::setw(8) << fmt(s.prq) << std::setw(5) << s.tp << std::setw(5)
        << s.fp << std::setw(5) << s.fn << "\n";
  }
  out << "\nmIoU     " << fmt(report.miou) << "\nmAcc     " << fmt(report.macc) << "\nPRQ(T)   "
      << fmt(report.prq_thing) << "\nPRQ(S)   " << fmt(report.prq_stuff) << "\n";
  return out.str();
}

// ---- Export ----------------------------------------------------------------

ColorBy color_by_from_string(const std::string& name) {
  if (name == "instance") return ColorBy::Instance;
  if (name == "class") return ColorBy::Class;
  if (name == "confidence") return ColorBy::Confidence;
  throw ConfigError("--color-by must be instance, class or confidence");
}

Rgb hash_color(std::uint32_t id) {
  std::uint64_t h = derive_seed(0x9E3779B97F4A7C15ull, id);
  // Keep colors away from black so they read on dark backgrounds.
  return {static_cast<std::uint8_t>(64 + (h & 0xBF)), static_cast<std::uint8_t>(64 + ((h >> 8) & 0xBF)),
          static_cast<std::uint8_t>(64 + ((h >> 16) & 0xBF))};
}

PrimitiveCloud colorize(const PrimitiveCloud& cloud, const PanopticLabeling& labeling,
                        std::span<const double> confidence, ColorBy mode) {
  if (labeling.size() != cloud.size()) throw ConfigError("labeling does not match cloud size");
  PrimitiveCloud out = cloud;
  out.colors.assign(cloud.size(), Rgb{128, 128, 128});
  if (mode == ColorBy::Confidence) {
    if (confidence.size() != cloud.size()) throw ConfigError("confidence does not match cloud size");
    double top = 0.0;
    for (double c : confidence) top = std::max(top, std::log1p(c));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const double t = top > 0.0 ? std::log1p(confidence[i]) / top : 0.0;
      out.colors[i] = {static_cast<std::uint8_t>(std::lround(255 * t)), 32,
                       static_cast<std::uint8_t>(std::lround(255 * (1 - t)))};
    }
    return out;
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const std::int32_t id = mode == ColorBy::Instance ? labeling.instance_of[i] : labeling.class_of[i];
    if (id >= 0) out.colors[i] = hash_color(static_cast<std::uint32_t>(id));
  }
  return out;
}

// ---- Validation ------------------------------------------------------------

namespace {

constexpr std::size_t kMaxListed = 20;

class Violations {
 public:
  explicit Violations(ValidationReport& report) : report_(report) {}
  ~Violations() {
    if (suppressed_ > 0) report_.violations.push_back("... and " + std::to_string(suppressed_) + " more");
  }
  void add(const std::string& v) {
    if (report_.violations.size() < kMaxListed) {
      report_.violations.push_back(v);
    } else {
      ++suppressed_;
    }
  }

 private:
  ValidationReport& report_;
  std::size_t suppressed_ = 0;
};

std::string size_violation(std::size_t expected, std::size_t actual) {
  return "size: expected " + std::to_string(expected) + " bytes, actual " + std::to_string(actual) + " bytes";
}

bool check_header(ByteReader& r, Violations& v) {
  r.skip(4);
  if (r.remaining() < 4) {
    v.add("size: header truncated");
    return false;
  }
  const auto version = r.u32();
  if (version != kFormatVersion) {
    v.add("version: expected " + std::to_string(kFormatVersion) + ", got " + std::to_string(version));
    return false;
  }
  return true;
}

bool check_counts(ByteReader& r, int count, std::vector<std::uint32_t>& out, Violations& v) {
  if (r.remaining() < static_cast<std::size_t>(count) * 4) {
    v.add("size: header truncated");
    return false;
  }
  for (int k = 0; k < count; ++k) out.push_back(r.u32());
  return true;
}

bool check_size(std::size_t expected, std::size_t actual, Violations& v) {
  if (expected == actual) return true;
  v.add(size_violation(expected, actual));
  return false;
}

void check_unit(std::span<const float> f, const std::string& where, Violations& v) {
  for (float x : f) {
    if (!std::isfinite(x)) {
      v.add(where + " is not finite");
      return;
    }
  }
  const double n = norm(f);
  if (std::abs(n - 1.0) > 1e-4) v.add(where + " has norm " + std::to_string(n) + ", expected 1");
}

void validate_fmap(std::span<const std::uint8_t> bytes, Violations& v) {
  ByteReader r(bytes);
  if (!check_header(r, v)) return;
  std::vector<std::uint32_t> hdr;
  if (!check_counts(r, 3, hdr, v)) return;
  if (!check_size(20 + 4ull * hdr[0] * hdr[1] * hdr[2], bytes.size(), v)) return;
  const auto fmap = decode_fmap(bytes);
  for (int row = 0; row < fmap.height; ++row) {
    for (int col = 0; col < fmap.width; ++col) {
      const auto f = fmap.at(row, col);
      if (std::all_of(f.begin(), f.end(), [](float x) { return x == 0.0f; })) continue;
      check_unit(f, "pixel (" + std::to_string(row) + ", " + std::to_string(col) + ")", v);
    }
  }
}

void validate_fuse(std::span<const std::uint8_t> bytes, Violations& v) {
  ByteReader r(bytes);
  if (!check_header(r, v)) return;
  std::vector<std::uint32_t> hdr;
  if (!check_counts(r, 3, hdr, v)) return;
  if (!check_size(20 + 4ull * hdr[0] * (hdr[1] + 2), bytes.size(), v)) return;
  const auto f = decode_fused(bytes);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const std::string where = "primitive " + std::to_string(i);
    const auto row = f.features.row(i);
    if (!std::isfinite(f.confidence[i]) || f.confidence[i] < 0.0) v.add(where + ": confidence out of range");
    if (f.obs_count[i] > f.view_count) v.add(where + ": obs_count exceeds view count");
    if (f.valid(i)) {
      check_unit(row, where + " feature", v);
    } else if (f.confidence[i] != 0.0 || std::any_of(row.begin(), row.end(), [](float x) { return x != 0.0f; })) {
      v.add(where + ": unobserved primitive has a feature or confidence");
    }
  }
}

void validate_trip(std::span<const std::uint8_t> bytes, Violations& v) {
  ByteReader r(bytes);
  if (!check_header(r, v)) return;
  std::vector<std::uint32_t> hdr;
  if (!check_counts(r, 2, hdr, v)) return;
  const auto levels = hdr[0], channels = hdr[1];
  if (r.remaining() < 48) {
    v.add(size_violation(r.offset() + 48, bytes.size()));
    return;
  }
  r.skip(48);
  for (std::uint32_t l = 0; l < levels; ++l) {
    if (r.remaining() < 4) {
      v.add(size_violation(r.offset() + 4, bytes.size()) + " (level " + std::to_string(l) + " header)");
      return;
    }
    const auto res = r.u32();
    const std::size_t need = 12ull * res * res * channels;
    if (r.remaining() < need) {
      v.add(size_violation(r.offset() + need, bytes.size()) + " (plane data of level " + std::to_string(l) + ")");
      return;
    }
    r.skip(need);
  }
  if (r.remaining() < 4) {
    v.add(size_violation(r.offset() + 4, bytes.size()) + " (decoder header)");
    return;
  }
  const auto layer_count = r.u32();
  for (std::uint32_t k = 0; k < layer_count; ++k) {
    if (r.remaining() < 8) {
      v.add(size_violation(r.offset() + 8, bytes.size()) + " (decoder layer " + std::to_string(k) + ")");
      return;
    }
    const auto in = r.u32(), out = r.u32();
    const std::size_t need = 4ull * (static_cast<std::size_t>(in) * out + out);
    if (r.remaining() < need) {
      v.add(size_violation(r.offset() + need, bytes.size()) + " (decoder layer " + std::to_string(k) + ")");
      return;
    }
    r.skip(need);
  }
  if (r.remaining() != 0) {
    v.add(size_violation(r.offset(), bytes.size()));
    return;
  }
  const auto field = decode_field(bytes);
  for (const auto& block : field.parameter_blocks()) {
    if (std::any_of(block.begin(), block.end(), [](double x) { return !std::isfinite(x); })) {
      v.add("non-finite parameter");
      return;
    }
  }
}

void validate_supr(std::span<const std::uint8_t> bytes, Violations& v) {
  ByteReader r(bytes);
  if (!check_header(r, v)) return;
  std::vector<std::uint32_t> hdr;
  if (!check_counts(r, 3, hdr, v)) return;
  const std::size_t n = hdr[0], s = hdr[1], d = hdr[2];
  if (!check_size(20 + 4 * n + s * (20 + 4 * d), bytes.size(), v)) return;
  std::vector<std::uint32_t> ids(n);
  for (auto& id : ids) id = r.u32();
  std::vector<std::uint32_t> members(s, 0);
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] >= s) {
      v.add("primitive " + std::to_string(i) + ": segment id " + std::to_string(ids[i]) + " out of range");
      continue;
    }
    if (ids[i] > next) {
      v.add("primitive " + std::to_string(i) + ": segment id " + std::to_string(ids[i]) +
            " breaks first-occurrence numbering (expected <= " + std::to_string(next) + ")");
    }
    if (ids[i] == next) ++next;
    ++members[ids[i]];
  }
  for (std::size_t k = 0; k < s; ++k) {
    const auto count = r.u32();
    Vec3 nrm;
    for (int a = 0; a < 3; ++a) nrm[a] = r.f32();
    std::vector<float> feature(d);
    for (auto& x : feature) x = r.f32();
    r.f32();
    const std::string where = "segment " + std::to_string(k);
    if (members[k] == 0) v.add(where + ": no member primitives");
    if (count != members[k]) {
      v.add(where + ": declares " + std::to_string(count) + " members, partition has " + std::to_string(members[k]));
    }
    if (std::abs(nrm.norm() - 1.0) > 1e-4) v.add(where + ": normal is not unit length");
    if (d > 0 && std::any_of(feature.begin(), feature.end(), [](float x) { return x != 0.0f; })) {
      check_unit(feature, where + " feature", v);
    }
  }
}

void validate_inst(std::span<const std::uint8_t> bytes, Violations& v) {
  ByteReader r(bytes);
  if (!check_header(r, v)) return;
  std::vector<std::uint32_t> hdr;
  if (!check_counts(r, 1, hdr, v)) return;
  if (!check_size(12 + 4ull * hdr[0], bytes.size(), v)) return;
  std::uint32_t next = 0;
  for (std::uint32_t k = 0; k < hdr[0]; ++k) {
    const auto id = r.u32();
    if (id > next) {
      v.add("super-primitive " + std::to_string(k) + ": instance id " + std::to_string(id) +
            " skips unused ids (expected <= " + std::to_string(next) + ")");
    }
    if (id == next) ++next;
  }
}

void validate_pano(std::span<const std::uint8_t> bytes, Violations& v) {
  ByteReader r(bytes);
  if (!check_header(r, v)) return;
  std::vector<std::uint32_t> hdr;
  if (!check_counts(r, 1, hdr, v)) return;
  if (!check_size(12 + 6ull * hdr[0], bytes.size(), v)) return;
  std::map<std::uint32_t, std::uint16_t> class_of_instance;
  for (std::uint32_t i = 0; i < hdr[0]; ++i) {
    const auto inst = r.u32();
    const auto cls = r.u16();
    if ((inst == kNoInstance) != (cls == kNoClass)) {
      v.add("primitive " + std::to_string(i) + ": instance and class disagree on being unassigned");
      continue;
    }
    if (inst == kNoInstance) continue;
    const auto [it, fresh] = class_of_instance.emplace(inst, cls);
    if (!fresh && it->second != cls) {
      v.add("primitive " + std::to_string(i) + ": class " + std::to_string(cls) + " differs from instance " +
            std::to_string(inst) + " class " + std::to_string(it->second));
    }
  }
}

void validate_gtlb(std::span<const std::uint8_t> bytes, Violations& v) {
  ByteReader r(bytes);
  if (!check_header(r, v)) return;
  std::vector<std::uint32_t> hdr;
  if (!check_counts(r, 1, hdr, v)) return;
  if (!check_size(12 + 8ull * hdr[0], bytes.size(), v)) return;
  for (std::uint32_t i = 0; i < hdr[0]; ++i) {
    const auto cls = r.i32();
    const auto inst = r.i32();
    if (cls < -1 || inst < -1) v.add("primitive " + std::to_string(i) + ": label below -1");
  }
}

void validate_ply(std::span<const std::uint8_t> bytes, Violations& v) {
  const auto h = parse_ply_header(bytes);
  if (!check_size(h.body_offset + h.vertex_count * h.stride(), bytes.size(), v)) return;
  const auto cloud = decode_ply(bytes);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!cloud.positions[i].allFinite()) v.add("vertex " + std::to_string(i) + ": non-finite position");
    if (cloud.has_normals() && std::abs(cloud.normals[i].norm() - 1.0) > 1e-4) {
      v.add("vertex " + std::to_string(i) + ": normal norm " + std::to_string(cloud.normals[i].norm()));
    }
  }
}

}  // namespace

ValidationReport validate_bytes(std::span<const std::uint8_t> bytes) {
  ValidationReport report;
  {
    Violations v(report);
    const std::string head(reinterpret_cast<const char*>(bytes.data()), std::min<std::size_t>(bytes.size(), 4));
    try {
      if (head == "ply\n") {
        report.format = "PLY";
        validate_ply(bytes, v);
      } else if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
        report.format = "PNG";
        decode_png16(bytes);
      } else if (head == "FMAP") {
        report.format = head;
        validate_fmap(bytes, v);
      } else if (head == "FUSE") {
        report.format = head;
        validate_fuse(bytes, v);
      } else if (head == "TRIP") {
        report.format = head;
        validate_trip(bytes, v);
      } else if (head == "SUPR") {
        report.format = head;
        validate_supr(bytes, v);
      } else if (head == "INST") {
        report.format = head;
        validate_inst(bytes, v);
      } else if (head == "PANO") {
        report.format = head;
        validate_pano(bytes, v);
      } else if (head == "GTLB") {
        report.format = head;
        validate_gtlb(bytes, v);
      } else {
        report.format = "unknown";
        v.add("magic: unrecognized file signature");
      }
    } catch (const FormatError& e) {
      v.add(std::string("format: ") + e.what());
    } catch (const ConfigError& e) {
      v.add(std::string("invariant: ") + e.what());
    }
  }
  return report;
}

ValidationReport validate_file(const fs::path& path) { return validate_bytes(read_file(path)); }

}  // namespace psplat::io
