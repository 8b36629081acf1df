#include "stdiff/checkpoint.hpp"

#include "stdiff/errors.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

namespace stdiff {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'T', 'D', 'I', 'F', 'F', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorKind::io, "truncated checkpoint");
  return value;
}

nlohmann::json dims_to_json(const ModelDims& d) {
  return {{"state_dim", d.state_dim},         {"control_dim", d.control_dim},
          {"exogenous_dim", d.exogenous_dim}, {"time_embed_dim", d.time_embed_dim},
          {"context_dim", d.context_dim},     {"encoder_width", d.encoder_width},
          {"encoder_layers", d.encoder_layers}, {"predictor_width", d.predictor_width},
          {"predictor_blocks", d.predictor_blocks}};
}

ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.state_dim = j.at("state_dim").get<int>();
  d.control_dim = j.at("control_dim").get<int>();
  d.exogenous_dim = j.at("exogenous_dim").get<int>();
  d.time_embed_dim = j.at("time_embed_dim").get<int>();
  d.context_dim = j.at("context_dim").get<int>();
  d.encoder_width = j.at("encoder_width").get<int>();
  d.encoder_layers = j.at("encoder_layers").get<int>();
  d.predictor_width = j.at("predictor_width").get<int>();
  d.predictor_blocks = j.at("predictor_blocks").get<int>();
  return d;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  nlohmann::json header;
  header["dims"] = dims_to_json(ck.params.dims());
  header["schedule"] = {{"steps", ck.schedule.steps},
                        {"beta_start", ck.schedule.beta_start},
                        {"beta_end", ck.schedule.beta_end}};
  auto& channels = header["channels"] = nlohmann::json::array();
  for (const auto& ch : ck.channels) channels.push_back({{"name", ch.name}, {"role", to_string(ch.role)}});
  header["normalization"] = {{"channels", ck.stats.channels}, {"mean", ck.stats.mean}, {"scale", ck.stats.scale}};
  header["weight_count"] = ck.params.size();
  const std::string text = header.dump();

  out.write(kMagic.data(), kMagic.size());
  write_raw<std::uint32_t>(out, kCheckpointVersion);
  write_raw<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto weights = ck.params.weights();
  out.write(reinterpret_cast<const char*>(weights.data()),
            static_cast<std::streamsize>(weights.size() * sizeof(double)));
  if (!out) throw Error(ErrorKind::io, "failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error(ErrorKind::io, "not a checkpoint file (bad magic)");
  const auto version = read_raw<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::config, fmt::format("unsupported checkpoint version {} (expected {})",
                                               version, kCheckpointVersion));
  }
  const auto length = read_raw<std::uint64_t>(in);
  if (length > (1ULL << 30)) throw Error(ErrorKind::io, "checkpoint header is implausibly large");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw Error(ErrorKind::io, "truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, fmt::format("corrupt checkpoint header: {}", e.what()));
  }
  try {
    ModelParams params(dims_from_json(header.at("dims")));
    if (header.at("weight_count").get<std::size_t>() != params.size()) {
      throw Error(ErrorKind::io, "checkpoint weight count does not match its dims");
    }
    auto weights = params.weights();
    in.read(reinterpret_cast<char*>(weights.data()),
            static_cast<std::streamsize>(weights.size() * sizeof(double)));
    if (!in) throw Error(ErrorKind::io, "truncated checkpoint weights");

    Checkpoint ck{std::move(params), {}, {}, {}};
    const auto& s = header.at("schedule");
    ck.schedule = {s.at("steps").get<int>(), s.at("beta_start").get<double>(), s.at("beta_end").get<double>()};
    for (const auto& ch : header.at("channels")) {
      ck.channels.push_back({ch.at("name").get<std::string>(), parse_role(ch.at("role").get<std::string>())});
    }
    const auto& norm = header.at("normalization");
    ck.stats.channels = norm.at("channels").get<std::vector<std::string>>();
    ck.stats.mean = norm.at("mean").get<std::vector<double>>();
    ck.stats.scale = norm.at("scale").get<std::vector<double>>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, fmt::format("incomplete checkpoint header: {}", e.what()));
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", path));
  write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open '{}'", path));
  return read_checkpoint(in);
}

ModelDims data_dims(const TimeSeriesTable& table, ModelDims sizes) {
  sizes.state_dim = static_cast<int>(table.channels_with_role(ChannelRole::state).size());
  sizes.control_dim = static_cast<int>(table.channels_with_role(ChannelRole::control).size());
  sizes.exogenous_dim = static_cast<int>(table.channels_with_role(ChannelRole::exogenous).size());
  return sizes;
}

}  // namespace stdiff
