#include <bit>
#include <cstring>
#include <fstream>

#include "nascore/models.hpp"

namespace nascore {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'N', 'S', 'C', 'K'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorCode::kFormat, path.string() + ": truncated checkpoint");
  }
  return value;
}

std::string get_string(std::ifstream& in, const std::filesystem::path& path) {
  const auto n = get<std::uint64_t>(in, path);
  if (n > (1u << 24)) throw Error(ErrorCode::kFormat, path.string() + ": implausible string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw Error(ErrorCode::kFormat, path.string() + ": truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = to_text(model.config());
  put<std::uint64_t>(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  const auto& params = model.parameters();
  put<std::uint64_t>(out, params.size());
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    put<std::uint64_t>(out, p.name.size());
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint64_t>(out, offset);
    put<std::uint64_t>(out, p.value.numel());
    offset += p.value.numel();
  }
  put<std::uint64_t>(out, offset);
  for (const auto& p : params) {
    const auto data = p.value.data();
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  }
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::kFormat, path.string() + ": not a checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormat, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  auto model = build_model(model_config_from_text(get_string(in, path)));
  auto& params = model->parameters();
  const auto count = get<std::uint64_t>(in, path);
  if (count != params.size()) throw Error(ErrorCode::kFormat, path.string() + ": parameter count does not match config");
  std::vector<std::pair<std::uint64_t, std::uint64_t>> table;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = get_string(in, path);
    const auto offset = get<std::uint64_t>(in, path);
    const auto numel = get<std::uint64_t>(in, path);
    if (name != params[i].name || numel != params[i].value.numel()) {
      throw Error(ErrorCode::kFormat, path.string() + ": parameter '" + name + "' does not match config");
    }
    table.emplace_back(offset, numel);
  }
  const auto total = get<std::uint64_t>(in, path);
  std::vector<Scalar> flat(total);
  if (!in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(total * sizeof(Scalar)))) {
    throw Error(ErrorCode::kFormat, path.string() + ": truncated checkpoint");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto [offset, numel] = table[i];
    if (offset + numel > total) throw Error(ErrorCode::kFormat, path.string() + ": offset out of range");
    auto dst = params[i].value.mutable_data();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset), flat.begin() + static_cast<std::ptrdiff_t>(offset + numel), dst.begin());
  }
  return model;
}

}  // namespace nascore
