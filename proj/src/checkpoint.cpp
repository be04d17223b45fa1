#include "ant/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>
#include <zlib.h>

#include "ant/error.hpp"
#include "ant/png_io.hpp"
#include "json.hpp"

namespace ant::train {
namespace {

using nlohmann::json;
using Bytes = std::vector<uint8_t>;

constexpr char kMagic[8] = {'A', 'N', 'T', 'C', 'K', 'P', 'T', '1'};

template <class U>
void put(Bytes& out, U value) {
  for (size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<uint8_t>(value >> (8 * i)));
}

template <class U>
U get(const Bytes& in, size_t& pos) {
  if (pos + sizeof(U) > in.size()) fail(ErrorCode::CorruptCheckpoint, "checkpoint is truncated");
  U value = 0;
  for (size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return value;
}

template <class T>
void put_values(Bytes& out, const std::vector<T>& values) {
  using Raw = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
  for (T v : values) put<Raw>(out, std::bit_cast<Raw>(v));
}

template <class T, class Stored>
void get_values(const Bytes& in, size_t& pos, std::vector<T>& values) {
  using Raw = std::conditional_t<sizeof(Stored) == 4, uint32_t, uint64_t>;
  for (T& v : values) v = static_cast<T>(std::bit_cast<Stored>(get<Raw>(in, pos)));
}

uint32_t crc32_of(const uint8_t* data, size_t n) {
  return static_cast<uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

struct Parsed {
  json header;
  size_t blob_start = 0;
  Bytes bytes;
};

Parsed parse(const std::filesystem::path& path) {
  Parsed p;
  try {
    p.bytes = png::read_file(path);
  } catch (const Error& e) {
    fail(ErrorCode::Io, e.what());
  }
  const Bytes& b = p.bytes;
  if (b.size() < sizeof(kMagic) + 12 || std::memcmp(b.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::CorruptCheckpoint, "not a checkpoint file: " + path.string());
  }
  size_t pos = sizeof(kMagic);
  const uint32_t version = get<uint32_t>(b, pos);
  if (version != kCheckpointVersion) {
    fail(ErrorCode::VersionMismatch, "checkpoint format version " + std::to_string(version) +
                                         " is not supported (expected version " +
                                         std::to_string(kCheckpointVersion) + ")");
  }
  const uint32_t stored_crc = [&] {
    size_t tail = b.size() - 4;
    return get<uint32_t>(b, tail);
  }();
  if (crc32_of(b.data(), b.size() - 4) != stored_crc) fail(ErrorCode::CorruptCheckpoint, "checksum mismatch");
  const uint32_t header_len = get<uint32_t>(b, pos);
  if (pos + header_len > b.size() - 4) fail(ErrorCode::CorruptCheckpoint, "header exceeds file size");
  try {
    p.header = json::parse(std::string(reinterpret_cast<const char*>(b.data() + pos), header_len));
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("bad header: ") + e.what());
  }
  p.blob_start = pos + header_len;
  return p;
}

}  // namespace

template <class T>
void save_checkpoint(const TrainState<T>& state, const std::filesystem::path& path) {
  json header;
  header["model"] = json::parse(model::to_json(state.model.config()));
  header["precision"] = sizeof(T) == 4 ? "f32" : "f64";
  header["step"] = state.step;
  std::ostringstream rng;
  rng << state.rng;
  header["rng"] = rng.str();
  header["train_config"] = state.train_config;
  header["has_optimizer"] = !state.adam_m.empty();
  json params = json::array();
  for (const auto& p : state.model.parameters()) params.push_back({{"name", p.name}, {"shape", p.var->value.shape}});
  header["parameters"] = params;
  const std::string text = header.dump();

  Bytes out(kMagic, kMagic + sizeof(kMagic));
  put<uint32_t>(out, kCheckpointVersion);
  put<uint32_t>(out, static_cast<uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : state.model.parameters()) put_values(out, p.var->value.data);
  for (const auto& m : state.adam_m) put_values(out, m);
  for (const auto& v : state.adam_v) put_values(out, v);
  put<uint32_t>(out, crc32_of(out.data(), out.size()));
  png::write_file_atomic(path, out);
}

template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path) {
  Parsed p = parse(path);
  const json& h = p.header;
  try {
    TrainState<T> state(model::model_config_from_json(h.at("model").dump()), 0);
    state.step = h.at("step").get<long>();
    std::istringstream rng(h.at("rng").get<std::string>());
    rng >> state.rng;
    state.train_config = h.value("train_config", std::string());
    const bool f32 = h.at("precision").get<std::string>() == "f32";
    const json& names = h.at("parameters");
    auto& params = state.model.parameters();
    require(names.size() == params.size(), ErrorCode::CorruptCheckpoint, "parameter count differs from the model");
    for (size_t i = 0; i < params.size(); ++i) {
      require(names[i].at("name").get<std::string>() == params[i].name &&
                  names[i].at("shape").get<std::vector<int>>() == params[i].var->value.shape,
              ErrorCode::CorruptCheckpoint, "parameter layout differs at " + params[i].name);
    }
    size_t pos = p.blob_start;
    auto read = [&](std::vector<T>& values) {
      if (f32) {
        get_values<T, float>(p.bytes, pos, values);
      } else {
        get_values<T, double>(p.bytes, pos, values);
      }
    };
    for (auto& prm : params) read(prm.var->value.data);
    if (h.at("has_optimizer").get<bool>()) {
      state.adam_m.resize(params.size());
      state.adam_v.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) state.adam_m[i].resize(params[i].var->value.numel());
      for (size_t i = 0; i < params.size(); ++i) state.adam_v[i].resize(params[i].var->value.numel());
      for (auto& m : state.adam_m) read(m);
      for (auto& v : state.adam_v) read(v);
    }
    require(pos == p.bytes.size() - 4, ErrorCode::CorruptCheckpoint, "unexpected trailing data");
    return state;
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("bad header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) fail(ErrorCode::CorruptCheckpoint, e.what());
    throw;
  }
}

model::ModelConfig peek_model_config(const std::filesystem::path& path) {
  Parsed p = parse(path);
  try {
    return model::model_config_from_json(p.header.at("model").dump());
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("bad header: ") + e.what());
  }
}

template void save_checkpoint<float>(const TrainState<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const TrainState<double>&, const std::filesystem::path&);
template TrainState<float> load_checkpoint<float>(const std::filesystem::path&);
template TrainState<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace ant::train
