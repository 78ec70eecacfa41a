#pragma once

#include "cot/common.hpp"
#include "cot/corpus.hpp"
#include "cot/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace cot {

// Checkpoint layout (little-endian):
//   magic "COTK" | u32 version | u32 json_len | json bytes |
//   per array: u32 name_len | name | u32 rank | u32 dims[rank] |
//              f32 values, row-major
// Values are stored at 32-bit precision; save -> load -> save is byte-stable.
namespace ckpt {

inline constexpr std::uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline float read_f32(std::istream& is) {
  std::uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace ckpt

inline void save_checkpoint(const std::string& path, const ModelParameters& params,
                            const Vocabulary& vocab) {
  if (!params.all_finite())
    throw NumericalError("save_checkpoint: parameters contain non-finite values");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write("COTK", 4);
  ckpt::write_u32(f, ckpt::kVersion);

  nlohmann::json cfg;
  cfg["model"] = {{"d", params.cfg.d},
                  {"n_layers", params.cfg.n_layers},
                  {"n_heads", params.cfg.n_heads},
                  {"vocab_size", params.cfg.vocab_size},
                  {"n_max", params.cfg.n_max},
                  {"d_ff", params.cfg.d_ff},
                  {"tied_output", params.cfg.tied_output}};
  cfg["vocab"] = vocab.tokens();
  const std::string blob = cfg.dump();
  ckpt::write_u32(f, static_cast<std::uint32_t>(blob.size()));
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));

  params.for_each([&](const std::string& name, const Mat& m) {
    ckpt::write_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    ckpt::write_u32(f, 2);
    ckpt::write_u32(f, static_cast<std::uint32_t>(m.rows()));
    ckpt::write_u32(f, static_cast<std::uint32_t>(m.cols()));
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) ckpt::write_f32(f, static_cast<float>(m(i, j)));
  });
  if (!f) throw IoError("failed while writing checkpoint: " + path);
}

struct Checkpoint {
  ModelParameters params;
  Vocabulary vocab;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "COTK")
    throw ParseError("checkpoint: bad magic in " + path);
  const std::uint32_t version = ckpt::read_u32(f);
  if (version != ckpt::kVersion)
    throw ParseError("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint32_t blob_len = ckpt::read_u32(f);
  std::string blob(blob_len, '\0');
  f.read(blob.data(), blob_len);
  if (!f) throw ParseError("checkpoint: truncated config blob");
  nlohmann::json cfg = nlohmann::json::parse(blob, nullptr, false);
  if (cfg.is_discarded()) throw ParseError("checkpoint: malformed config blob");

  ModelConfig mc;
  mc.d = cfg["model"]["d"].get<int>();
  mc.n_layers = cfg["model"]["n_layers"].get<int>();
  mc.n_heads = cfg["model"]["n_heads"].get<int>();
  mc.vocab_size = cfg["model"]["vocab_size"].get<int>();
  mc.n_max = cfg["model"]["n_max"].get<int>();
  mc.d_ff = cfg["model"]["d_ff"].get<int>();
  mc.tied_output = cfg["model"]["tied_output"].get<bool>();

  Checkpoint out{ModelParameters::init(mc, 0),
                 Vocabulary::from_tokens(cfg["vocab"].get<std::vector<std::string>>())};
  if (out.vocab.size() != mc.vocab_size)
    throw ParseError("checkpoint: vocabulary length disagrees with model config");

  out.params.for_each([&](const std::string& name, Mat& m) {
    const std::uint32_t name_len = ckpt::read_u32(f);
    std::string got(name_len, '\0');
    f.read(got.data(), name_len);
    if (!f || got != name)
      throw ParseError("checkpoint: expected array \"" + name + "\", found \"" + got + "\"");
    const std::uint32_t rank = ckpt::read_u32(f);
    if (rank != 2) throw ParseError("checkpoint: unsupported rank for " + name);
    const std::uint32_t rows = ckpt::read_u32(f);
    const std::uint32_t cols = ckpt::read_u32(f);
    if (rows != static_cast<std::uint32_t>(m.rows()) ||
        cols != static_cast<std::uint32_t>(m.cols()))
      throw ParseError("checkpoint: shape mismatch for " + name);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j)
        m(i, j) = static_cast<double>(ckpt::read_f32(f));
  });
  return out;
}

// Project parameters onto their 32-bit representation (what a checkpoint
// round trip produces).
inline ModelParameters quantized_to_f32(const ModelParameters& params) {
  ModelParameters q = params;
  q.for_each([](const std::string&, Mat& m) {
    m = m.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  });
  return q;
}

}  // namespace cot
