// SPDX-License-Identifier: Apache-2.0
#pragma once

// On-disk round layout:
//   <dir>/meta     JSON document, the single source of truth for shapes
//   <dir>/csi.f32  little-endian float32, row-major (T, S, K)

#include <bts/csi_sim.hpp>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace bts {

inline constexpr int kDatasetSchemaVersion = 1;

namespace detail {

inline std::uint32_t crc32_bytes(const void* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::vector<char> le_bytes(const std::vector<float>& v) {
  std::vector<char> out(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xFFu);
  }
  return out;
}

inline std::vector<float> from_le_bytes(const std::vector<char>& bytes) {
  std::vector<float> v(bytes.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b)
      u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    v[i] = std::bit_cast<float>(u);
  }
  return v;
}

inline std::vector<char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::data, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline nlohmann::json dataset_meta(const CsiDataset& ds, std::uint32_t crc) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : ds.segments) segs.push_back({{"start", s.start}, {"length", s.length}, {"label", s.label}});
  return {{"schema_version", kDatasetSchemaVersion},
          {"format", "bts-csi"},
          {"round_id", ds.round_id},
          {"T", ds.T()},
          {"S", ds.S()},
          {"K", ds.K()},
          {"sample_rate", ds.sample_rate},
          {"segments", segs},
          {"labeled", ds.labeled},
          {"environment_tag", ds.environment_tag},
          {"seed", ds.seed},
          {"dtype", "float32-le"},
          {"crc32", crc}};
}

inline void write_dataset(const CsiDataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::data, "cannot create " + dir.string() + ": " + ec.message());
  const auto bytes = detail::le_bytes(ds.amplitudes.data);
  const std::uint32_t crc = detail::crc32_bytes(bytes.data(), bytes.size());
  {
    std::ofstream out(dir / "csi.f32", std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::data, "cannot write " + (dir / "csi.f32").string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream meta(dir / "meta", std::ios::trunc);
  if (!meta) throw Error(ErrorKind::data, "cannot write " + (dir / "meta").string());
  meta << dataset_meta(ds, crc).dump(2) << "\n";
}

/// Loads a round. A CRC mismatch does not throw; it clears `checksum_ok`.
inline CsiDataset read_dataset(const std::filesystem::path& dir) {
  nlohmann::json meta;
  {
    std::ifstream in(dir / "meta");
    if (!in) throw Error(ErrorKind::data, "missing " + (dir / "meta").string());
    try {
      in >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::data, "malformed meta in " + dir.string() + ": " + e.what());
    }
  }
  const auto bytes = detail::read_file(dir / "csi.f32");
  CsiDataset ds;
  std::size_t T = 0, S = 0, K = 0;
  try {
    T = meta.at("T").get<std::size_t>();
    S = meta.at("S").get<std::size_t>();
    K = meta.at("K").get<std::size_t>();
    ds.round_id = meta.at("round_id").get<int>();
    ds.sample_rate = meta.at("sample_rate").get<double>();
    ds.environment_tag = meta.value("environment_tag", std::string{});
    ds.seed = meta.value("seed", std::uint64_t{0});
    ds.labeled = meta.value("labeled", true);
    for (const auto& s : meta.at("segments"))
      ds.segments.push_back({s.at("start").get<std::size_t>(), s.at("length").get<std::size_t>(),
                             s.at("label").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::data, "incomplete meta in " + dir.string() + ": " + e.what());
  }
  const std::size_t expected = T * S * K * 4;
  if (bytes.size() != expected) {
    std::ostringstream os;
    os << "shape mismatch in " << dir.string() << ": meta declares (T=" << T << ", S=" << S << ", K=" << K
       << ") = " << expected << " bytes, csi.f32 holds " << bytes.size() << " bytes";
    throw Error(ErrorKind::data, os.str());
  }
  ds.amplitudes.d0 = T;
  ds.amplitudes.d1 = S;
  ds.amplitudes.d2 = K;
  ds.amplitudes.data = detail::from_le_bytes(bytes);
  if (meta.contains("crc32"))
    ds.checksum_ok = meta["crc32"].get<std::uint32_t>() == detail::crc32_bytes(bytes.data(), bytes.size());
  return ds;
}

}  // namespace bts
