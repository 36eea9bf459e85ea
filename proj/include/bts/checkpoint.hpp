// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint file:
//   line 1   "BTSCKPT 1"
//   line 2   JSON header: network config, seeds, center, tensor table
//   rest     tensors back to back, little-endian float32, row-major
// Tensor order is the bundle's visit order.

#include <bts/nets.hpp>

#include <nlohmann/json.hpp>

#include <bit>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace bts {

inline constexpr const char* kCheckpointMagic = "BTSCKPT 1";

inline nlohmann::json config_to_json(const NetConfig& c) {
  return {{"tau", c.tau},
          {"S", c.S},
          {"K", c.K},
          {"classes", c.classes},
          {"eta", c.eta},
          {"use_diversity", c.use_diversity},
          {"primal", {{"d_model", c.primal.d_model}, {"heads", c.primal.heads}, {"ff", c.primal.ff}, {"blocks", c.primal.blocks}}},
          {"dual", {{"width", c.dual.width}, {"blocks", c.dual.blocks}, {"stem_stride", c.dual.stem_stride}}},
          {"latent", c.latent},
          {"psi_hidden", c.psi_hidden},
          {"psi_out", c.psi_out},
          {"init_seed", c.init_seed}};
}

inline NetConfig config_from_json(const nlohmann::json& j) {
  NetConfig c;
  try {
    c.tau = j.at("tau");
    c.S = j.at("S");
    c.K = j.at("K");
    c.classes = j.at("classes");
    c.eta = j.at("eta");
    c.use_diversity = j.at("use_diversity");
    const auto& p = j.at("primal");
    c.primal = {p.at("d_model"), p.at("heads"), p.at("ff"), p.at("blocks")};
    const auto& d = j.at("dual");
    c.dual = {d.at("width"), d.at("blocks"), d.at("stem_stride")};
    c.latent = j.at("latent");
    c.psi_hidden = j.at("psi_hidden");
    c.psi_out = j.at("psi_out");
    c.init_seed = j.at("init_seed");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::data, std::string("checkpoint config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace detail {

inline void put_f32(std::string& out, float v) {
  auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
}

inline float get_f32(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace detail

/// Serialized checkpoint bytes. `extra` is stored verbatim in the header.
template <typename T>
std::string checkpoint_bytes(ModelBundle<T>& b, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string blob;
  b.visit([&](const std::string& name, nn::Param<T>& p) {
    tensors.push_back({{"name", name}, {"rows", p.w.rows()}, {"cols", p.w.cols()}});
    for (Eigen::Index i = 0; i < p.w.size(); ++i) detail::put_f32(blob, static_cast<float>(p.w.data()[i]));
  });
  nlohmann::json h;
  h["config"] = config_to_json(b.config);
  if (b.center) {
    std::vector<double> c(b.center->data(), b.center->data() + b.center->size());
    h["center"] = c;
  } else {
    h["center"] = nullptr;
  }
  h["tensors"] = tensors;
  h["extra"] = extra;
  std::string out = std::string(kCheckpointMagic) + "\n" + h.dump() + "\n";
  return out + blob;
}

template <typename T>
void save_checkpoint(ModelBundle<T>& b, const std::filesystem::path& file,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  const std::string bytes = checkpoint_bytes(b, extra);
  std::ofstream f(file, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::data, "cannot write checkpoint " + file.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorKind::data, "write failed: " + file.string());
}

template <typename T>
struct LoadedCheckpoint {
  ModelBundle<T> bundle;
  nlohmann::json extra;
};

template <typename T>
LoadedCheckpoint<T> parse_checkpoint_body(const std::string& bytes) {
  const auto nl1 = bytes.find('\n');
  if (nl1 == std::string::npos || bytes.compare(0, nl1, kCheckpointMagic) != 0)
    throw Error(ErrorKind::data, "not a checkpoint (bad magic)");
  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw Error(ErrorKind::data, "truncated checkpoint header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::data, std::string("checkpoint header: ") + e.what());
  }
  LoadedCheckpoint<T> out{ModelBundle<T>(config_from_json(h.at("config"))), h.value("extra", nlohmann::json::object())};
  if (!h.at("center").is_null()) {
    const auto c = h.at("center").get<std::vector<double>>();
    RowVec<T> v(static_cast<Eigen::Index>(c.size()));
    for (std::size_t i = 0; i < c.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<T>(c[i]);
    out.bundle.center = v;
  }
  const auto& tensors = h.at("tensors");
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data()) + nl2 + 1;
  const std::size_t avail = bytes.size() - nl2 - 1;
  std::size_t k = 0, off = 0;
  out.bundle.visit([&](const std::string& name, nn::Param<T>& p) {
    if (k >= tensors.size()) throw Error(ErrorKind::data, "checkpoint lacks tensor " + name);
    const auto& t = tensors[k++];
    if (t.at("name") != name || t.at("rows") != p.w.rows() || t.at("cols") != p.w.cols())
      throw Error(ErrorKind::data, "checkpoint tensor " + t.at("name").get<std::string>() + " does not match " + name);
    const auto n = static_cast<std::size_t>(p.w.size());
    if (off + 4 * n > avail) throw Error(ErrorKind::data, "checkpoint truncated in tensor " + name);
    for (std::size_t i = 0; i < n; ++i) p.w.data()[i] = static_cast<T>(detail::get_f32(data + off + 4 * i));
    off += 4 * n;
  });
  if (k != tensors.size() || off != avail) throw Error(ErrorKind::data, "checkpoint has trailing tensors or bytes");
  return out;
}

template <typename T>
LoadedCheckpoint<T> parse_checkpoint(const std::string& bytes) {
  try {
    return parse_checkpoint_body<T>(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::data, std::string("malformed checkpoint header: ") + e.what());
  }
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw Error(ErrorKind::data, "cannot open checkpoint " + file.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint<T>(ss.str());
}

}  // namespace bts
