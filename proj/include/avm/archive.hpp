#ifndef AVM_ARCHIVE_HPP
#define AVM_ARCHIVE_HPP

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "avm/types.hpp"

namespace avm {

// AVM-FEAT v1 tensor container. 16-byte header, little-endian:
//   magic 'AVMF' | version u8 | dtype u8 | reserved u16 | rows u32 | cols u32
// followed by a row-major payload. dtype 0 = IEEE-754 float32 (feature
// archives), dtype 1 = float64 (checkpoints, where bit-exact resume matters).

namespace avmf {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kDtypeF64 = 1;

inline void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_tensor(const std::string& path, const Mat& m, std::uint8_t dtype) {
  std::string buf;
  buf.reserve(16 + m.size() * (dtype == kDtypeF64 ? 8 : 4));
  buf += "AVMF";
  buf.push_back(static_cast<char>(kVersion));
  buf.push_back(static_cast<char>(dtype));
  put_u16(buf, 0);
  put_u32(buf, static_cast<std::uint32_t>(m.rows()));
  put_u32(buf, static_cast<std::uint32_t>(m.cols()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) {
      if (dtype == kDtypeF32) {
        float f = static_cast<float>(m(r, c));
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(buf, bits);
      } else {
        double d = m(r, c);
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        put_u32(buf, static_cast<std::uint32_t>(bits & 0xffffffffULL));
        put_u32(buf, static_cast<std::uint32_t>(bits >> 32));
      }
    }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write tensor file: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("short write: " + path);
}

inline Mat read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing tensor file: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 16) throw FormatError("truncated header in " + path);
  if (std::memcmp(buf.data(), "AVMF", 4) != 0)
    throw FormatError("bad magic in " + path);
  std::uint8_t version = buf[4];
  std::uint8_t dtype = buf[5];
  if (version != kVersion)
    throw FormatError("unsupported version " + std::to_string(version) + " in " + path);
  if (dtype != kDtypeF32 && dtype != kDtypeF64)
    throw FormatError("unsupported dtype " + std::to_string(dtype) + " in " + path);
  if (get_u16(buf.data() + 6) != 0) throw FormatError("nonzero reserved field in " + path);
  std::uint32_t rows = get_u32(buf.data() + 8);
  std::uint32_t cols = get_u32(buf.data() + 12);
  std::size_t width = dtype == kDtypeF32 ? 4 : 8;
  std::size_t need = 16 + std::size_t(rows) * cols * width;
  if (buf.size() != need)
    throw FormatError("truncated tensor payload in " + path + " (have " +
                      std::to_string(buf.size()) + " bytes, need " + std::to_string(need) + ")");
  Mat m(rows, cols);
  const unsigned char* p = buf.data() + 16;
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) {
      if (dtype == kDtypeF32) {
        std::uint32_t bits = get_u32(p);
        float f;
        std::memcpy(&f, &bits, 4);
        m(r, c) = static_cast<double>(f);
        p += 4;
      } else {
        std::uint64_t lo = get_u32(p);
        std::uint64_t hi = get_u32(p + 4);
        std::uint64_t bits = lo | (hi << 32);
        double d;
        std::memcpy(&d, &bits, 8);
        m(r, c) = d;
        p += 8;
      }
    }
  return m;
}

}  // namespace avmf

/// Feature archive: manifest.json plus one f32 tensor file per stream.
inline void write_archive(const std::vector<Sample>& samples, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Json manifest;
  manifest["format"] = "AVM-FEAT";
  manifest["version"] = 1;
  Json list = Json::array();
  for (const auto& s : samples) {
    Json e;
    e["id"] = s.id;
    e["T"] = s.t();
    e["L"] = s.question.l();
    e["answer"] = s.answer;
    e["qtype"] = to_string(s.qtype);
    e["subtype"] = to_string(s.subtype);
    e["widths"] = Json{{"audio", s.audio.width()},
                       {"visual", s.visual.width()},
                       {"text", static_cast<int>(s.question.word.cols())}};
    list.push_back(e);
    const std::string base = dir + "/" + s.id;
    avmf::write_tensor(base + ".audio.avmf", s.audio.data, avmf::kDtypeF32);
    avmf::write_tensor(base + ".visual.avmf", s.visual.data, avmf::kDtypeF32);
    avmf::write_tensor(base + ".word.avmf", s.question.word, avmf::kDtypeF32);
    avmf::write_tensor(base + ".sentence.avmf", s.question.sentence, avmf::kDtypeF32);
  }
  manifest["samples"] = list;
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

inline std::vector<Sample> read_archive(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw FormatError("missing manifest.json in " + dir);
  Json manifest;
  try {
    in >> manifest;
  } catch (const std::exception& e) {
    throw FormatError(std::string("manifest parse error: ") + e.what());
  }
  if (!manifest.contains("format") || manifest.at("format") != "AVM-FEAT")
    throw FormatError("manifest format tag is not AVM-FEAT");
  if (manifest.at("version").get<int>() != 1)
    throw FormatError("unsupported archive version");

  std::vector<Sample> samples;
  for (const auto& e : manifest.at("samples")) {
    Sample s;
    s.id = e.at("id").get<std::string>();
    const int t = e.at("T").get<int>();
    const int l = e.at("L").get<int>();
    s.answer = e.at("answer").get<int>();
    s.qtype = qtype_from_string(e.at("qtype").get<std::string>());
    if (e.contains("subtype")) s.subtype = subtype_from_string(e.at("subtype").get<std::string>());
    const auto& w = e.at("widths");

    auto load = [&](const char* stream, int rows, int cols) {
      Mat m = avmf::read_tensor(dir + "/" + s.id + "." + stream + ".avmf");
      if (m.rows() != rows || m.cols() != cols)
        throw FormatError("sample " + s.id + " " + stream + " tensor is " +
                          std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                          ", manifest says " + std::to_string(rows) + "x" +
                          std::to_string(cols));
      return m;
    };
    s.audio.modality = Modality::audio;
    s.visual.modality = Modality::visual;
    s.audio.data = load("audio", t, w.at("audio").get<int>());
    s.visual.data = load("visual", t, w.at("visual").get<int>());
    s.question.word = load("word", l, w.at("text").get<int>());
    s.question.sentence = load("sentence", 1, w.at("text").get<int>());
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace avm

#endif  // AVM_ARCHIVE_HPP
