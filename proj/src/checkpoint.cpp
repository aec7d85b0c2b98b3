// SPDX-License-Identifier: Apache-2.0
#include "hne/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <map>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "hne/error.hpp"

namespace hne {
namespace {

constexpr char kMagic[4] = {'H', 'N', 'E', '1'};
constexpr const char* kInitScheme = "fan-in-uniform/splitmix64-mt19937_64";

template <typename U>
void put(std::vector<unsigned char>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <typename U>
U read_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return v;
}

void put_tensor(std::vector<unsigned char>& out, const std::string& name, const Tensor<float>& t) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  for (float v : t.values()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t crc_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes, std::size_t end)
      : bytes_(bytes), end_(end) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    const U v = read_le<U>(bytes_.data() + pos_);
    pos_ += sizeof(U);
    return v;
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  Tensor<float> tensor(std::string& name) {
    name = text(get<std::uint16_t>());
    const std::uint32_t rank = get<std::uint32_t>();
    if (rank > 8) throw ParseError("tensor " + name + " has implausible rank", pos_);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get<std::uint64_t>());
    const std::size_t n = numel(shape);
    if (n > (end_ - pos_) / 4) throw ParseError("tensor " + name + " runs past the end", pos_);
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::bit_cast<float>(get<std::uint32_t>());
    return t;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) {
    if (n > end_ - pos_) throw ParseError("checkpoint ends early", pos_);
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string level_key(std::size_t level, const std::string& name) {
  return "L" + std::to_string(level) + "/" + name;
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const ParamStore<float>& params,
                                             const OptimizerState<float>* optimizer) {
  nlohmann::json header;
  header["tree"] = to_json(params.spec());
  header["master_seed"] = params.master_seed();
  header["init"] = kInitScheme;
  header["dtype"] = "f32";
  nlohmann::json recorded = nlohmann::json::object();
  for (std::size_t l = 0; l < params.levels().size(); ++l)
    for (const auto& n : params.level(l).norms) recorded[level_key(l, n.name)] = n.stats.recorded;
  header["bn_recorded"] = recorded;
  header["optimizer"] = optimizer != nullptr;
  if (optimizer != nullptr) {
    header["steps"] = optimizer->steps;
    header["epochs_done"] = optimizer->epochs_done;
  }
  const std::string text = header.dump();

  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());

  std::uint32_t count = 0;
  for (const auto& lv : params.levels()) count += lv.params.size() + 2 * lv.norms.size();
  if (optimizer != nullptr)
    for (const auto& lv : optimizer->velocity) count += lv.size();
  put<std::uint32_t>(out, count);
  for (std::size_t l = 0; l < params.levels().size(); ++l) {
    const auto& lv = params.level(l);
    for (const auto& p : lv.params) put_tensor(out, level_key(l, p.name), p.value);
    for (const auto& n : lv.norms) {
      put_tensor(out, level_key(l, n.name + ".running_mean"), n.stats.mean);
      put_tensor(out, level_key(l, n.name + ".running_var"), n.stats.var);
    }
  }
  if (optimizer != nullptr) {
    for (std::size_t l = 0; l < optimizer->velocity.size(); ++l)
      for (std::size_t i = 0; i < optimizer->velocity[l].size(); ++i)
        put_tensor(out, "momentum/" + level_key(l, params.level(l).params.at(i).name),
                   optimizer->velocity[l][i]);
  }
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16) throw ParseError("checkpoint is too short", bytes.size());
  // The trailer covers every byte, the magic included.
  const std::size_t body = bytes.size() - 4;
  const auto stored = read_le<std::uint32_t>(bytes.data() + body);
  const std::uint32_t actual = crc_of(bytes.data(), body);
  if (stored != actual) {
    throw ChecksumError("checkpoint checksum mismatch: stored " + std::to_string(stored) +
                        ", computed " + std::to_string(actual));
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("not a checkpoint (bad magic)", 0);
  Reader in(bytes, body);
  in.text(4);
  const std::uint32_t version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  nlohmann::json header;
  {
    const std::size_t at = in.pos();
    const std::string text = in.text(in.get<std::uint32_t>());
    try {
      header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("checkpoint header: ") + e.what(), at);
    }
  }
  const TreeSpec spec = tree_spec_from_json(header.at("tree"));
  const auto seed = header.at("master_seed").get<std::uint64_t>();

  std::map<std::string, Tensor<float>> tensors;
  const std::uint32_t count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    Tensor<float> t = in.tensor(name);
    tensors[name] = std::move(t);
  }
  if (in.pos() != body) throw ParseError("trailing bytes after the last tensor", in.pos());

  auto take = [&](const std::string& key) {
    const auto it = tensors.find(key);
    if (it == tensors.end()) throw Error("checkpoint lacks tensor " + key);
    Tensor<float> t = std::move(it->second);
    tensors.erase(it);
    return t;
  };

  std::vector<LevelState<float>> levels;
  for (std::size_t l = 0; l <= spec.depth; ++l) {
    const LevelLayout layout = level_layout(spec, l);
    LevelState<float> st;
    for (const ParamLayout& pl : layout.params)
      st.params.push_back({pl.name, pl.kind, take(level_key(l, pl.name))});
    for (const NormLayout& nl : layout.norms) {
      RunningStats<float> rs{take(level_key(l, nl.name + ".running_mean")),
                             take(level_key(l, nl.name + ".running_var")),
                             header.at("bn_recorded").at(level_key(l, nl.name)).get<bool>()};
      st.norms.push_back({nl.name, std::move(rs)});
    }
    levels.push_back(std::move(st));
  }
  Checkpoint ck{ParamStore<float>(spec, seed, std::move(levels)), std::nullopt};
  if (header.at("optimizer").get<bool>()) {
    OptimizerState<float> opt;
    for (std::size_t l = 0; l <= spec.depth; ++l) {
      std::vector<Tensor<float>> bufs;
      for (const auto& p : ck.params.level(l).params) {
        Tensor<float> v = take("momentum/" + level_key(l, p.name));
        if (v.shape() != p.value.shape()) throw Error("momentum buffer shape mismatch for " + p.name);
        bufs.push_back(std::move(v));
      }
      opt.velocity.push_back(std::move(bufs));
    }
    opt.steps = header.at("steps").get<std::uint64_t>();
    opt.epochs_done = header.at("epochs_done").get<std::size_t>();
    ck.optimizer = std::move(opt);
  }
  if (!tensors.empty()) throw Error("checkpoint has unexpected tensor " + tensors.begin()->first);
  return ck;
}

void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const OptimizerState<float>* optimizer) {
  const std::vector<unsigned char> bytes = encode_checkpoint(params, optimizer);
  // Write to a sibling file first so an interrupted save keeps the old one.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move " + tmp + " to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  const std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(in), {});
  return decode_checkpoint(bytes);
}

Checkpoint load_checkpoint_for(const std::string& path, const TreeSpec& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.params.spec() == expected)) {
    throw ConfigError(path + ": checkpoint tree " + to_json(ck.params.spec()).dump() +
                      " does not match the configured tree " + to_json(expected).dump());
  }
  return ck;
}

}  // namespace hne
