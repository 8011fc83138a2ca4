#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "saliencytune/errors.hpp"
#include "saliencytune/model.hpp"

namespace saliencytune {

// Checkpoint layout:
//   8 bytes   magic "STCKPT\0\1"
//   4 bytes   little-endian header length N
//   N bytes   UTF-8 JSON header {format_version, architecture, explanation_layer_id,
//             training_step, dtype, blobs[{name, shape, offset, count}]}
//   rest      parameter blobs, float64 little-endian, offsets in elements
inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'C', 'K', 'P', 'T', '\0', '\1'};
inline constexpr int kCheckpointFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline nlohmann::json checkpoint_blobs(const Architecture& arch) {
  nlohmann::json blobs = nlohmann::json::array();
  for (std::size_t i = 0; i < arch.layers().size(); ++i) {
    const auto& l = arch.layer(i);
    if (l.weight_count() == 0) continue;
    std::vector<std::size_t> wshape =
        l.kind == LayerKind::conv2d ? std::vector<std::size_t>{l.out, l.in, l.kernel, l.kernel}
                                    : std::vector<std::size_t>{l.out, l.in};
    const std::string prefix = "layers." + std::to_string(i);
    blobs.push_back({{"name", prefix + ".weight"}, {"shape", wshape}, {"offset", l.weight_offset},
                     {"count", l.weight_count()}});
    blobs.push_back({{"name", prefix + ".bias"}, {"shape", {l.out}}, {"offset", l.bias_offset},
                     {"count", l.bias_count()}});
  }
  return blobs;
}

inline std::string serialize_checkpoint(const ClassifierModel& model) {
  nlohmann::json header{{"format_version", kCheckpointFormatVersion},
                        {"architecture", model.architecture().to_json()},
                        {"explanation_layer_id", model.explanation_layer()},
                        {"training_step", model.training_step()},
                        {"dtype", "float64-le"},
                        {"blobs", checkpoint_blobs(model.architecture())}};
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += text;
  const auto params = model.parameters();
  out.append(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(double));
  return out;
}

inline ClassifierModel deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 4 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw InputError("not a checkpoint file");
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof(kCheckpointMagic), sizeof(len));
  const std::size_t header_start = sizeof(kCheckpointMagic) + sizeof(len);
  if (bytes.size() < header_start + len) throw InputError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_start, len));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (header.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw InputError("unsupported checkpoint format version");
  if (header.value("dtype", std::string("float64-le")) != "float64-le") throw InputError("unsupported checkpoint dtype");

  ClassifierModel model(Architecture::from_json(header.at("architecture")));
  const std::size_t n = model.architecture().num_parameters();
  const std::size_t data_start = header_start + len;
  if (bytes.size() != data_start + n * sizeof(double)) throw InputError("checkpoint parameter data has the wrong size");
  std::vector<double> flat(n);
  // Blobs are addressed by their declared offsets so files written by other tools load as long as
  // the names match this architecture's layout.
  const auto expected = checkpoint_blobs(model.architecture());
  for (const auto& want : expected) {
    const auto it = std::find_if(header.at("blobs").begin(), header.at("blobs").end(),
                                 [&](const nlohmann::json& b) { return b.at("name") == want.at("name"); });
    if (it == header.at("blobs").end()) throw InputError("checkpoint lacks blob " + want.at("name").get<std::string>());
    const auto count = it->at("count").get<std::size_t>();
    const auto src = it->at("offset").get<std::size_t>();
    if (count != want.at("count").get<std::size_t>() || src + count > n)
      throw InputError("checkpoint blob " + want.at("name").get<std::string>() + " has the wrong size");
    std::memcpy(flat.data() + want.at("offset").get<std::size_t>(), bytes.data() + data_start + src * sizeof(double),
                count * sizeof(double));
  }
  model.set_parameters(std::move(flat));
  model.set_explanation_layer(header.at("explanation_layer_id").get<std::size_t>());
  model.set_training_step(header.value("training_step", std::uint64_t{0}));
  return model;
}

inline void save_checkpoint(const ClassifierModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ResourceError("cannot write checkpoint " + tmp);
    const auto bytes = serialize_checkpoint(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ResourceError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline ClassifierModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace saliencytune
