#pragma once

// Network checkpoints: <dir>/manifest.json plus one TCSF tensor per parameter.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "tcs/network.hpp"
#include "tcs/tensor_io.hpp"

namespace tcs {

inline nlohmann::ordered_json arch_to_json(const ArchSpec& a) {
  nlohmann::ordered_json j;
  j["layout"] = a.layout();
  j["input_dim"] = a.input_dim;
  j["classes"] = a.classes;
  if (a.image) j["image"] = {a.image->channels, a.image->height, a.image->width};
  return j;
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
  std::optional<ImageShape> image;
  if (j.contains("image")) image = ImageShape{j["image"][0], j["image"][1], j["image"][2]};
  return ArchSpec::parse(j.at("layout").get<std::string>(), j.at("input_dim").get<std::size_t>(),
                         j.at("classes").get<std::size_t>(), image);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  write_file_bytes(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_network(const std::filesystem::path& dir, const Network& net, std::size_t epoch, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json m;
  m["arch"] = arch_to_json(net.arch());
  m["epoch"] = epoch;
  m["seed"] = seed;
  auto& params = m["params"] = nlohmann::ordered_json::array();
  for (const auto& p : const_cast<Network&>(net).parameters()) {
    const std::string file = p.name + ".tcsf";
    const std::uint64_t dims[2] = {p.value->rows(), p.value->cols()};
    const std::string bytes = encode_tensor(dims, p.value->values());
    write_file_bytes(dir / file, bytes);
    params.push_back({{"name", p.name}, {"file", file}, {"checksum", checksum(bytes)}});
  }
  write_json(dir / "manifest.json", m);
}

struct LoadedNetwork {
  Network net;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
};

inline LoadedNetwork load_network(const std::filesystem::path& dir) {
  const auto m = read_json(dir / "manifest.json");
  LoadedNetwork out{Network(arch_from_json(m.at("arch")), 0), m.at("epoch").get<std::size_t>(),
                    m.at("seed").get<std::uint64_t>()};
  auto params = out.net.parameters();
  const auto& listed = m.at("params");
  if (listed.size() != params.size()) throw FormatError(dir.string() + ": parameter list does not match architecture");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (listed[i].at("name").get<std::string>() != params[i].name) {
      throw FormatError(dir.string() + ": unexpected parameter " + listed[i].at("name").get<std::string>());
    }
    Matrix value = read_matrix(dir / listed[i].at("file").get<std::string>());
    if (!value.same_shape(*params[i].value)) throw ShapeError(dir.string() + ": shape mismatch for " + params[i].name);
    *params[i].value = std::move(value);
  }
  return out;
}

}  // namespace tcs
