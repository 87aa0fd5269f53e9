// SPDX-License-Identifier: Apache-2.0
//
// Grayscale PNG I/O (8/16-bit), volume manifests and phantom parameter
// files. Manifests are JSON objects:
//
//   { "subject_id": "...", "slice_thickness_mm": 5.0,
//     "slices": ["slice_000.png", ...] }
//
// Slice paths are relative to the manifest's directory.

#pragma once

#include <png.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ctinterp/data.hpp"
#include "ctinterp/image.hpp"

namespace ctinterp {

namespace fs = std::filesystem;
using Json = nlohmann::json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct PngHeader {
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
};

// libpng reports errors by longjmp; keep every non-trivial object outside.
inline bool png_read_header(png_structp png, png_infop info, std::FILE* f, PngHeader& hdr) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_read_info(png, info);
  hdr.width = png_get_image_width(png, info);
  hdr.height = png_get_image_height(png, info);
  hdr.bit_depth = png_get_bit_depth(png, info);
  hdr.color_type = png_get_color_type(png, info);
  return true;
}

inline bool png_read_rows(png_structp png, png_infop info, png_bytepp rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_image(png, rows);
  png_read_end(png, info);
  return true;
}

inline bool png_write_all(png_structp png, png_infop info, std::FILE* f, png_uint_32 w, png_uint_32 h, int depth,
                          png_bytepp rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_set_IHDR(png, info, w, h, depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  return true;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};

}  // namespace detail

struct LoadedImage {
  Image image;
  int bit_depth = 0;
};

/// Reads a grayscale 8- or 16-bit PNG and maps it linearly onto [0, 1].
inline LoadedImage read_png(const fs::path& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng allocation failed");
  }
  detail::PngHeader hdr;
  if (!detail::png_read_header(png, info, f.get(), hdr)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("not a readable PNG: " + path.string());
  }
  if (hdr.color_type != PNG_COLOR_TYPE_GRAY || (hdr.bit_depth != 8 && hdr.bit_depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported PNG format in " + path.string() + " (need 8- or 16-bit grayscale)");
  }
  const std::size_t row_bytes = static_cast<std::size_t>(hdr.width) * (hdr.bit_depth / 8);
  std::vector<png_byte> buffer(row_bytes * hdr.height);
  std::vector<png_bytep> rows(hdr.height);
  for (png_uint_32 y = 0; y < hdr.height; ++y) rows[y] = buffer.data() + y * row_bytes;
  const bool ok = detail::png_read_rows(png, info, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw IoError("corrupt PNG data in " + path.string());

  LoadedImage out{Image(static_cast<int>(hdr.height), static_cast<int>(hdr.width)), hdr.bit_depth};
  for (std::size_t i = 0; i < out.image.pixels.size(); ++i) {
    if (hdr.bit_depth == 8) {
      out.image.pixels[i] = static_cast<float>(buffer[i]) / 255.0f;
    } else {
      const unsigned v = (static_cast<unsigned>(buffer[2 * i]) << 8) | buffer[2 * i + 1];
      out.image.pixels[i] = static_cast<float>(v) / 65535.0f;
    }
  }
  return out;
}

/// Quantizes [0, 1] intensities to `bit_depth` (8 or 16) and writes a PNG.
inline void write_png(const fs::path& path, const Image& img, int bit_depth = 16) {
  if (bit_depth != 8 && bit_depth != 16) throw IoError("bit depth must be 8 or 16");
  if (img.height <= 0 || img.width <= 0) throw IoError("cannot write an empty image");
  const int bytes = bit_depth / 8;
  const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
  const std::size_t row_bytes = static_cast<std::size_t>(img.width) * bytes;
  std::vector<png_byte> buffer(row_bytes * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double c = std::clamp(static_cast<double>(img.pixels[i]), 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(c * maxv));
    if (bytes == 1) {
      buffer[i] = static_cast<png_byte>(q);
    } else {
      buffer[2 * i] = static_cast<png_byte>(q >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(q & 0xFF);
    }
  }
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * row_bytes;

  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng allocation failed");
  }
  const bool ok = detail::png_write_all(png, info, f.get(), static_cast<png_uint_32>(img.width),
                                        static_cast<png_uint_32>(img.height), bit_depth, rows.data());
  png_destroy_write_struct(&png, &info);
  if (!ok) throw IoError("failed writing " + path.string());
}

// ---- JSON helpers ---------------------------------------------------------

inline Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

/// Rejects keys outside `allowed`.
inline void require_known_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw DataError(where + ": unknown key '" + k + "'");
}

// ---- manifests ------------------------------------------------------------

struct Manifest {
  std::string subject_id;
  double slice_thickness_mm = 0.0;
  std::vector<std::string> slices;
};

inline Manifest parse_manifest(const Json& j, const std::string& where = "manifest") {
  require_known_keys(j, {"subject_id", "slice_thickness_mm", "slices", "provenance"}, where);
  Manifest m;
  try {
    m.subject_id = j.at("subject_id").get<std::string>();
    m.slice_thickness_mm = j.at("slice_thickness_mm").get<double>();
    m.slices = j.at("slices").get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  return m;
}

inline Json manifest_json(const SliceVolume& v, const std::vector<std::string>& files) {
  Json j;
  j["subject_id"] = v.subject_id;
  j["slice_thickness_mm"] = v.slice_thickness_mm;
  j["slices"] = files;
  if (v.provenance.phantom) j["provenance"] = {{"kind", "phantom"}, {"seed", v.provenance.seed}};
  return j;
}

/// Loads every slice in manifest order; intensities land in [0, 1].
inline SliceVolume load_volume(const fs::path& manifest_path) {
  const Manifest m = parse_manifest(read_json_file(manifest_path), manifest_path.string());
  SliceVolume v;
  v.subject_id = m.subject_id;
  v.slice_thickness_mm = m.slice_thickness_mm;
  const fs::path base = manifest_path.parent_path();
  for (const auto& rel : m.slices) {
    const fs::path p = base / rel;
    if (!fs::exists(p)) throw DataError("missing slice file " + p.string());
    v.slices.push_back(read_png(p).image);
  }
  v.validate();
  return v;
}

/// Writes slice_NNN.png files plus manifest.json into `dir`.
inline fs::path write_volume(const SliceVolume& v, const fs::path& dir, int bit_depth = 16) {
  fs::create_directories(dir);
  std::vector<std::string> files;
  char name[32];
  for (int i = 0; i < v.size(); ++i) {
    std::snprintf(name, sizeof name, "slice_%03d.png", i);
    write_png(dir / name, v.slices[i], bit_depth);
    files.emplace_back(name);
  }
  const fs::path manifest = dir / "manifest.json";
  write_text_file(manifest, manifest_json(v, files).dump(2) + "\n");
  return manifest;
}

// ---- phantom parameter files ---------------------------------------------

inline Json to_json(const Ellipsoid& b) {
  return {{"cx", b.cx}, {"cy", b.cy}, {"cz", b.cz}, {"ax", b.ax}, {"ay", b.ay}, {"az", b.az},
          {"drift_x", b.drift_x}, {"drift_y", b.drift_y}, {"axis_modulation", b.axis_modulation},
          {"frequency", b.frequency}, {"phase", b.phase}, {"intensity", b.intensity}};
}

inline Json to_json(const PhantomParams& p) {
  Json bodies = Json::array();
  for (const auto& b : p.bodies) bodies.push_back(to_json(b));
  return {{"image_size", p.image_size}, {"slice_count", p.slice_count},
          {"slice_thickness_mm", p.slice_thickness_mm}, {"num_bodies", p.num_bodies},
          {"noise_sigma", p.noise_sigma}, {"background", p.background}, {"bodies", bodies}};
}

inline PhantomParams phantom_params_from_json(const Json& j) {
  require_known_keys(j, {"image_size", "slice_count", "slice_thickness_mm", "num_bodies", "noise_sigma",
                         "background", "bodies"},
                     "phantom params");
  PhantomParams p;
  try {
    p.image_size = j.value("image_size", p.image_size);
    p.slice_count = j.value("slice_count", p.slice_count);
    p.slice_thickness_mm = j.value("slice_thickness_mm", p.slice_thickness_mm);
    p.num_bodies = j.value("num_bodies", p.num_bodies);
    p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
    p.background = j.value("background", p.background);
    if (j.contains("bodies")) {
      for (const auto& jb : j.at("bodies")) {
        require_known_keys(jb, {"cx", "cy", "cz", "ax", "ay", "az", "drift_x", "drift_y", "axis_modulation",
                                "frequency", "phase", "intensity"},
                           "phantom body");
        Ellipsoid b;
        b.cx = jb.value("cx", b.cx);
        b.cy = jb.value("cy", b.cy);
        b.cz = jb.value("cz", b.cz);
        b.ax = jb.value("ax", b.ax);
        b.ay = jb.value("ay", b.ay);
        b.az = jb.value("az", b.az);
        b.drift_x = jb.value("drift_x", b.drift_x);
        b.drift_y = jb.value("drift_y", b.drift_y);
        b.axis_modulation = jb.value("axis_modulation", b.axis_modulation);
        b.frequency = jb.value("frequency", b.frequency);
        b.phase = jb.value("phase", b.phase);
        b.intensity = jb.value("intensity", b.intensity);
        p.bodies.push_back(b);
      }
    }
  } catch (const Json::exception& e) {
    throw DataError(std::string("phantom params: ") + e.what());
  }
  return p;
}

}  // namespace ctinterp
