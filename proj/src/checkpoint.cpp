#include "unetsr/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "unetsr/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace unetsr {

namespace {

constexpr char kMagic[4] = {'U', 'S', 'R', 'C'};

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(const std::string& in, std::size_t at) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return value;
}

json net_to_json(const NetConfig& c) {
  return {{"depth", c.depth},           {"scale", c.scale},   {"in_channels", c.in_channels},
          {"base_width", c.base_width}, {"width_cap", c.width_cap}, {"kernel", c.kernel},
          {"seed", c.seed}};
}

NetConfig net_from_json(const json& j) {
  NetConfig c;
  c.depth = j.at("depth").get<int>();
  c.scale = j.at("scale").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.width_cap = j.at("width_cap").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// Doubles travel as their bit patterns so NaN and -0 survive.
std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }
double from_bits(std::uint64_t b) { return std::bit_cast<double>(b); }

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& e : ckpt.params) tensors.emplace_back(e.name, &e.tensor);
  const bool has_adam = !ckpt.adam_m.empty();
  if (has_adam) {
    if (ckpt.adam_m.size() != ckpt.params.size() || ckpt.adam_v.size() != ckpt.params.size()) {
      throw ContractError("checkpoint: optimizer moments do not match the parameter set");
    }
    std::size_t i = 0;
    for (const auto& e : ckpt.params) {
      tensors.emplace_back("adam.m/" + e.name, &ckpt.adam_m[i]);
      tensors.emplace_back("adam.v/" + e.name, &ckpt.adam_v[i]);
      ++i;
    }
  }

  json table = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    table.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->numel();
  }
  json header = {{"net", net_to_json(ckpt.net)},
                 {"tensors", table},
                 {"values", offset},
                 {"adam", has_adam},
                 {"adam_t", ckpt.adam_t},
                 {"epoch", ckpt.epoch},
                 {"lr_bits", bits(ckpt.lr)},
                 {"lr", std::isfinite(ckpt.lr) ? json(ckpt.lr) : json(nullptr)},
                 {"best_metric_bits", bits(ckpt.best_metric)},
                 {"train", ckpt.train_config.empty() ? json(nullptr)
                                                     : json::parse(ckpt.train_config)}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, Checkpoint::kVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + 8 * offset);
  for (const auto& [name, t] : tensors) {
    for (double v : t->data()) put_le<std::uint64_t>(out, bits(v));
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptFileError("checkpoint: missing USRC magic");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != Checkpoint::kVersion) {
    throw CorruptFileError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) throw CorruptFileError("checkpoint: truncated header");

  Checkpoint ckpt;
  try {
    const json header = json::parse(bytes.substr(16, header_len));
    ckpt.net = net_from_json(header.at("net"));
    ckpt.net.validate();
    const auto count = header.at("values").get<std::uint64_t>();
    const std::size_t payload = 16 + header_len;
    if ((bytes.size() - payload) / 8 != count || (bytes.size() - payload) % 8 != 0) {
      throw CorruptFileError("checkpoint: expected " + std::to_string(count) +
                             " values, file holds " +
                             std::to_string((bytes.size() - payload) / 8));
    }
    ckpt.adam_t = header.at("adam_t").get<std::uint64_t>();
    ckpt.epoch = header.at("epoch").get<std::uint64_t>();
    ckpt.lr = from_bits(header.at("lr_bits").get<std::uint64_t>());
    ckpt.best_metric = from_bits(header.at("best_metric_bits").get<std::uint64_t>());
    if (!header.at("train").is_null()) ckpt.train_config = header.at("train").dump();
    const bool has_adam = header.at("adam").get<bool>();

    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::size_t n = shape_numel(shape);
      if (offset > count || n > count - offset) {
        throw CorruptFileError("checkpoint: tensor " + name + " runs past the payload");
      }
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        values[i] = from_bits(get_le<std::uint64_t>(bytes, payload + 8 * (offset + i)));
      }
      Tensor t(std::move(shape), std::move(values));
      if (name.rfind("adam.m/", 0) == 0) {
        ckpt.adam_m.push_back(std::move(t));
      } else if (name.rfind("adam.v/", 0) == 0) {
        ckpt.adam_v.push_back(std::move(t));
      } else {
        t.set_requires_grad(true);
        ckpt.params.add(name, std::move(t));
      }
    }
    if (has_adam != !ckpt.adam_m.empty() || ckpt.adam_m.size() != ckpt.adam_v.size() ||
        (has_adam && ckpt.adam_m.size() != ckpt.params.size())) {
      throw CorruptFileError("checkpoint: optimizer state is incomplete");
    }
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("checkpoint: bad header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptFileError(std::string("checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw CorruptFileError(std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_checkpoint(buf.str());
  } catch (const CorruptFileError& e) {
    throw CorruptFileError(path.string() + ": " + e.what());
  }
}

}  // namespace unetsr
