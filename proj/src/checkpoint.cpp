#include "ctrm/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "ctrm/config.hpp"
#include "ctrm/errors.hpp"

namespace ctrm {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::array<char, 8> kMagic{'C', 'T', 'R', 'M', 'C', 'K', 'P', 'T'};

struct Group {
  const char* name;
  ParameterSet Checkpoint::*member;
};

constexpr std::array<Group, 3> kGroups{{{"params", &Checkpoint::params},
                                        {"adam_m", &Checkpoint::adam_first_moment},
                                        {"adam_v", &Checkpoint::adam_second_moment}}};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("checkpoint truncated reading " + what);
  return v;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const std::string config_text = to_json(model).dump();
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& g : kGroups) {
    for (const auto& [name, t] : this->*g.member) {
      tensors.push_back({{"group", g.name}, {"name", name}, {"shape", t.shape()}, {"offset", offset}});
      offset += t.size() * sizeof(double);
    }
  }
  const nlohmann::json header{{"format_version", kFormatVersion},
                              {"step", step},
                              {"config", nlohmann::json::parse(config_text)},
                              {"config_hash", fnv1a(config_text)},
                              {"vocabulary", vocabulary},
                              {"state", state},
                              {"tensors", tensors}};
  const std::string header_text = header.dump();

  // Write next to the target and rename, so a crash never leaves a torn file behind.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
    out.write(kMagic.data(), kMagic.size());
    write_pod(out, kFormatVersion);
    write_pod(out, static_cast<std::uint64_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& g : kGroups)
      for (const auto& [_, t] : this->*g.member)
        out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out.flush()) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kFormatVersion) {
    throw std::runtime_error("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kFormatVersion) + ")");
  }
  const auto header_len = read_pod<std::uint64_t>(in, "header length");
  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len)))
    throw std::runtime_error("checkpoint truncated reading header");
  const auto header = nlohmann::json::parse(header_text);

  Checkpoint c;
  c.step = header.at("step").get<std::uint64_t>();
  const auto& config = header.at("config");
  if (fnv1a(config.dump()) != header.at("config_hash").get<std::uint64_t>())
    throw std::runtime_error("checkpoint config hash mismatch");
  c.model = model_config_from_json(config);
  c.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
  c.state = header.at("state");

  const auto data_start = in.tellg();
  for (const auto& entry : header.at("tensors")) {
    const auto group = entry.at("group").get<std::string>();
    const auto* g = std::find_if(kGroups.begin(), kGroups.end(), [&](const Group& x) { return group == x.name; });
    if (g == kGroups.end()) throw std::runtime_error("checkpoint has unknown tensor group " + group);
    const auto shape = entry.at("shape").get<Shape>();
    Tensor t(shape, 0.0);
    in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    if (!in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw std::runtime_error("checkpoint truncated reading tensor " + entry.at("name").get<std::string>());
    (c.*(g->member)).emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return c;
}

}  // namespace ctrm
