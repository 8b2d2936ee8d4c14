#include "fedcsr/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace fedcsr {

namespace {

constexpr std::array<char, 8> kMagic{'F', 'C', 'S', 'R', 'T', 'E', 'N', 'S'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("checkpoint: truncated header");
  return value;
}

}  // namespace

void save_tensors(const NamedTensors& tensors, const std::filesystem::path& file,
                  const nlohmann::json& meta) {
  nlohmann::json manifest{{"meta", meta}, {"tensors", nlohmann::json::array()}};
  std::uint64_t offset = 0;
  for (const auto& [name, m] : tensors) {
    manifest["tensors"].push_back(
        {{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size());
  }
  const std::string text = manifest.dump();

  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + file.string());
  out.write(kMagic.data(), kMagic.size());
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : tensors) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  }
  if (!out) throw ConfigError("failed writing checkpoint " + file.string());
}

NamedTensors load_tensors(const std::filesystem::path& file, nlohmann::json* meta) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + file.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("checkpoint: bad magic in " + file.string());
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto len = read_pod<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint: truncated manifest");
  const auto manifest = nlohmann::json::parse(text);
  if (meta != nullptr) *meta = manifest.at("meta");

  NamedTensors out;
  std::uint64_t expected_offset = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    if (entry.at("offset").get<std::uint64_t>() != expected_offset) {
      throw DataError("checkpoint: non-contiguous tensor offsets");
    }
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    if (!in) throw DataError("checkpoint: truncated payload");
    expected_offset += static_cast<std::uint64_t>(m.size());
    out.add(entry.at("name").get<std::string>(), std::move(m));
  }
  return out;
}

}  // namespace fedcsr
