#include "rdd/model.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rdd {

namespace {

constexpr std::array<char, 8> kMagic = {'R', 'D', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

// Explicit little-endian so files are identical on every host.
template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::uint32_t limit) {
  const auto n = get_le<std::uint32_t>(in);
  if (n > limit) throw std::runtime_error("checkpoint: string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
  return s;
}

nlohmann::json spec_json(const ModelSpec& spec) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : spec.stages) stages.push_back({{"channels", s.channels}, {"convs", s.convs}, {"stride", s.stride}});
  return {{"stages", stages},
          {"num_classes", spec.num_classes},
          {"has_aux_head", spec.has_aux_head},
          {"input_channels", spec.input_channels}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  for (const auto& s : j.at("stages")) {
    spec.stages.push_back({s.at("channels").get<int>(), s.at("convs").get<int>(), s.at("stride").get<int>()});
  }
  spec.num_classes = j.at("num_classes").get<int>();
  spec.has_aux_head = j.at("has_aux_head").get<bool>();
  spec.input_channels = j.at("input_channels").get<int>();
  spec.validate();
  return spec;
}

}  // namespace

void save_checkpoint(const Params& params, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_string(out, spec_json(params.spec()).dump());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_string(out, p.name);
    const Tensor& t = p.var.value();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
    for (Index d : t.shape()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t[i]));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Params load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error("not a checkpoint file: " + path.string());
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  Params params(spec_from_json(nlohmann::json::parse(get_string(in, 1u << 20))));
  const auto count = get_le<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = get_string(in, 4096);
    const auto ndim = get_le<std::uint32_t>(in);
    if (ndim == 0 || ndim > 8) throw std::runtime_error("checkpoint: bad rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<Index>(get_le<std::uint64_t>(in)));
    Tensor t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = std::bit_cast<double>(get_le<std::uint64_t>(in));
    params.add(std::move(name), std::move(t));
  }
  // Reject files whose tensors do not fit the recorded spec.
  const Params reference = build(params.spec(), 0);
  if (reference.size() != params.size()) throw std::runtime_error("checkpoint: parameter set does not match its spec");
  for (const auto& p : reference) {
    if (!params.contains(p.name) || params.at(p.name).shape() != p.var.shape()) {
      throw std::runtime_error("checkpoint: parameter '" + p.name + "' missing or mis-shaped");
    }
  }
  return params;
}

}  // namespace rdd
