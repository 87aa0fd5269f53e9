// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints. Layout (little-endian throughout):
//
//   "CTINTERP"  u32 version  u64 json_len  json bytes  u32 section_count
//   section := u16 name_len  name  u8 dtype  u64 count  payload
//
// dtype 1 = f32, 2 = f64, 3 = i64, 4 = raw bytes. The JSON header holds the
// model config (needed to rebuild the architecture) and an optional "run"
// object echoing the effective training config. See docs/checkpoint_format.md.

#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ctinterp/config.hpp"
#include "ctinterp/model.hpp"

namespace ctinterp {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'C', 'T', 'I', 'N', 'T', 'E', 'R', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SectionType : std::uint8_t { F32 = 1, F64 = 2, I64 = 3, Bytes = 4 };

struct Section {
  SectionType type = SectionType::Bytes;
  std::uint64_t count = 0;
  std::string payload;

  std::size_t element_size() const {
    switch (type) {
      case SectionType::F32: return 4;
      case SectionType::F64:
      case SectionType::I64: return 8;
      case SectionType::Bytes: return 1;
    }
    return 1;
  }
};

namespace detail {

template <typename P>
void put(std::string& out, P v) {
  char buf[sizeof(P)];
  std::memcpy(buf, &v, sizeof(P));
  out.append(buf, sizeof(P));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (buf.size() - pos < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos));
  }
  template <typename P>
  P get() {
    need(sizeof(P));
    P v;
    std::memcpy(&v, buf.data() + pos, sizeof(P));
    pos += sizeof(P);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

template <typename T>
Section float_section(const std::vector<T>& v) {
  Section s;
  s.type = sizeof(T) == 4 ? SectionType::F32 : SectionType::F64;
  s.count = v.size();
  s.payload.assign(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
  return s;
}

inline Section int_section(std::int64_t v) {
  Section s;
  s.type = SectionType::I64;
  s.count = 1;
  put(s.payload, v);
  return s;
}

/// Reads a float section as T, converting between f32 and f64 if needed.
template <typename T>
std::vector<T> read_floats(const Section& s, const std::string& name) {
  std::vector<T> out(s.count);
  if (s.type == SectionType::F32) {
    std::vector<float> tmp(s.count);
    std::memcpy(tmp.data(), s.payload.data(), s.payload.size());
    for (std::size_t i = 0; i < tmp.size(); ++i) out[i] = static_cast<T>(tmp[i]);
  } else if (s.type == SectionType::F64) {
    std::vector<double> tmp(s.count);
    std::memcpy(tmp.data(), s.payload.data(), s.payload.size());
    for (std::size_t i = 0; i < tmp.size(); ++i) out[i] = static_cast<T>(tmp[i]);
  } else {
    throw CheckpointError("section '" + name + "' is not floating point");
  }
  return out;
}

inline std::int64_t read_int(const Section& s, const std::string& name) {
  if (s.type != SectionType::I64 || s.count != 1) throw CheckpointError("section '" + name + "' is not a scalar i64");
  std::int64_t v;
  std::memcpy(&v, s.payload.data(), 8);
  return v;
}

}  // namespace detail

struct CheckpointFile {
  Json header;
  std::map<std::string, Section> sections;
};

inline std::string encode_checkpoint(const CheckpointFile& f) {
  std::string out(kCheckpointMagic, 8);
  detail::put(out, kCheckpointVersion);
  const std::string js = f.header.dump();
  detail::put(out, static_cast<std::uint64_t>(js.size()));
  out += js;
  detail::put(out, static_cast<std::uint32_t>(f.sections.size()));
  for (const auto& [name, s] : f.sections) {
    detail::put(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    detail::put(out, static_cast<std::uint8_t>(s.type));
    detail::put(out, s.count);
    out += s.payload;
  }
  return out;
}

inline CheckpointFile decode_checkpoint(const std::string& buf) {
  detail::Reader r{buf};
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  CheckpointFile f;
  const auto jlen = r.get<std::uint64_t>();
  try {
    f.header = Json::parse(r.bytes(jlen));
  } catch (const Json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.bytes(r.get<std::uint16_t>());
    Section s;
    const auto t = r.get<std::uint8_t>();
    if (t < 1 || t > 4) throw CheckpointError("section '" + name + "' has unknown dtype " + std::to_string(t));
    s.type = static_cast<SectionType>(t);
    s.count = r.get<std::uint64_t>();
    if (s.count > buf.size()) throw CheckpointError("section '" + name + "' count exceeds file size");
    s.payload = r.bytes(s.count * s.element_size());
    if (!f.sections.emplace(name, std::move(s)).second) throw CheckpointError("duplicate section '" + name + "'");
  }
  if (r.pos != buf.size()) throw CheckpointError("trailing bytes after last section");
  return f;
}

template <typename T>
CheckpointFile to_checkpoint(const ModelState<T>& st, const Json& run = nullptr) {
  CheckpointFile f;
  f.header = {{"model", to_json(st.config())}};
  if (!run.is_null()) f.header["run"] = run;
  auto& sec = f.sections;
  sec["encoder"] = detail::float_section(st.encoder);
  sec["decoder"] = detail::float_section(st.decoder);
  sec["d1"] = detail::float_section(st.d1);
  sec["d2"] = detail::float_section(st.d2);
  if (st.has_perceptual) sec["perceptual"] = detail::float_section(st.perceptual);
  const std::pair<const char*, const AdamState<T>*> opts[] = {
      {"encoder", &st.encoder_opt}, {"decoder", &st.decoder_opt}, {"d1", &st.d1_opt}, {"d2", &st.d2_opt}};
  for (const auto& [name, o] : opts) {
    const std::string p = std::string("adam/") + name;
    sec[p + "/m"] = detail::float_section(o->m);
    sec[p + "/v"] = detail::float_section(o->v);
    sec[p + "/step"] = detail::int_section(o->step);
  }
  sec["iteration"] = detail::int_section(st.iteration);
  sec["stage2_start"] = detail::int_section(st.stage2_start);
  sec["stage"] = detail::int_section(static_cast<std::int64_t>(st.stage));
  Section rng;
  rng.payload = st.rng.serialize();
  rng.count = rng.payload.size();
  sec["rng"] = rng;
  return f;
}

template <typename T>
ModelState<T> from_checkpoint(const CheckpointFile& f) {
  if (!f.header.contains("model")) throw CheckpointError("checkpoint header lacks the model config");
  ModelState<T> st;
  try {
    st.arch = Architecture(resolve(model_config_from_json(f.header.at("model"))));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint model config: ") + e.what());
  }
  auto section = [&](const std::string& name) -> const Section& {
    auto it = f.sections.find(name);
    if (it == f.sections.end()) throw CheckpointError("checkpoint is missing section '" + name + "'");
    return it->second;
  };
  auto params = [&](const std::string& name, std::size_t expected) {
    auto v = detail::read_floats<T>(section(name), name);
    if (v.size() != expected)
      throw CheckpointError("section '" + name + "' holds " + std::to_string(v.size()) + " values, architecture needs " +
                            std::to_string(expected));
    return v;
  };
  st.encoder = params("encoder", st.arch.encoder.param_count());
  st.decoder = params("decoder", st.arch.decoder.param_count());
  st.d1 = params("d1", st.arch.d1.param_count());
  st.d2 = params("d2", st.arch.d2.param_count());
  st.has_perceptual = f.sections.count("perceptual") > 0;
  if (st.has_perceptual) st.perceptual = params("perceptual", st.arch.encoder.param_count());

  const std::pair<const char*, AdamState<T>*> opts[] = {
      {"encoder", &st.encoder_opt}, {"decoder", &st.decoder_opt}, {"d1", &st.d1_opt}, {"d2", &st.d2_opt}};
  for (const auto& [name, o] : opts) {
    const std::string p = std::string("adam/") + name;
    o->m = detail::read_floats<T>(section(p + "/m"), p + "/m");
    o->v = detail::read_floats<T>(section(p + "/v"), p + "/v");
    o->step = detail::read_int(section(p + "/step"), p + "/step");
  }
  st.iteration = detail::read_int(section("iteration"), "iteration");
  st.stage2_start = detail::read_int(section("stage2_start"), "stage2_start");
  const auto stage = detail::read_int(section("stage"), "stage");
  if (stage != 1 && stage != 2) throw CheckpointError("invalid stage " + std::to_string(stage));
  st.stage = static_cast<Stage>(stage);
  try {
    st.rng.deserialize(section("rng").payload);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("rng state: ") + e.what());
  }
  return st;
}

/// Written to a temporary sibling and renamed, so a crash never leaves a torn file.
template <typename T>
void save_checkpoint(const fs::path& path, const ModelState<T>& st, const Json& run = nullptr) {
  const std::string bytes = encode_checkpoint(to_checkpoint(st, run));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline CheckpointFile read_checkpoint_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(buf);
}

template <typename T>
ModelState<T> load_checkpoint(const fs::path& path) {
  return from_checkpoint<T>(read_checkpoint_file(path));
}

}  // namespace ctinterp
