#include "kads/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "kads/error.hpp"

namespace kads {
namespace {

constexpr char kMagic[8] = {'K', 'A', 'D', 'S', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return x;
}

void put_doubles(std::string& out, const Tensor& t) {
  for (double d : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

std::uint64_t parse_hash(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw ParseError(std::string("checkpoint manifest lacks '") + key + "'");
  try {
    return std::stoull(j[key].get<std::string>(), nullptr, 16);
  } catch (const std::exception&) {
    throw ParseError(std::string("checkpoint manifest has a malformed '") + key + "'");
  }
}

}  // namespace

std::string hash_hex(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << h;
  return s.str();
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["vocab_hash"] = hash_hex(ckpt.vocab_hash);
  manifest["config_hash"] = hash_hex(ckpt.config_hash);
  manifest["extra"] = ckpt.extra;
  std::string blob;
  std::uint64_t offset = 0;
  nlohmann::json stores = nlohmann::json::array();
  for (const auto& [store_name, store] : ckpt.stores) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, p] : store.params()) {
      tensors.push_back({{"name", name}, {"shape", p.value.shape()}, {"offset", offset}});
      put_doubles(blob, p.value);
      put_doubles(blob, p.m);
      put_doubles(blob, p.v);
      offset += 3 * p.value.size();
    }
    stores.push_back({{"name", store_name}, {"steps", store.steps()}, {"tensors", std::move(tensors)}});
  }
  manifest["stores"] = std::move(stores);
  manifest["data_doubles"] = offset;

  const std::string text = manifest.dump();
  std::string bytes(kMagic, sizeof(kMagic));
  put_u64(bytes, text.size());
  bytes += text;
  bytes += blob;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Temp file + rename: the target path only ever holds a complete checkpoint.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_vocab_hash,
                           std::optional<std::uint64_t> expected_config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint '" + path.string() + "'";
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw ParseError(where + " has no valid header");
  const std::uint64_t manifest_len = get_u64(bytes.data() + 8);
  if (manifest_len > bytes.size() - 16) throw ParseError(where + " is truncated (manifest)");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + " has a malformed manifest: " + e.what());
  }

  Checkpoint ckpt;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw IncompatibleError(where + " has format version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointFormatVersion));
    ckpt.vocab_hash = parse_hash(manifest, "vocab_hash");
    ckpt.config_hash = parse_hash(manifest, "config_hash");
    if (expected_vocab_hash && *expected_vocab_hash != ckpt.vocab_hash)
      throw IncompatibleError(where + " was written with vocabulary " + hash_hex(ckpt.vocab_hash) + ", expected " +
                              hash_hex(*expected_vocab_hash));
    if (expected_config_hash && *expected_config_hash != ckpt.config_hash)
      throw IncompatibleError(where + " was written with config " + hash_hex(ckpt.config_hash) + ", expected " +
                              hash_hex(*expected_config_hash));
    ckpt.extra = manifest.value("extra", nlohmann::json::object());

    const std::uint64_t n_doubles = manifest.at("data_doubles").get<std::uint64_t>();
    const std::size_t data_start = 16 + manifest_len;
    if (bytes.size() - data_start != n_doubles * 8)
      throw ParseError(where + " is truncated or has trailing bytes (expected " + std::to_string(n_doubles * 8) +
                       " data bytes, found " + std::to_string(bytes.size() - data_start) + ")");
    auto read_tensor = [&](const std::vector<std::size_t>& shape, std::uint64_t at) {
      Tensor t(shape);
      if ((at + t.size()) > n_doubles) throw ParseError(where + " references data past its end");
      for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = std::bit_cast<double>(get_u64(bytes.data() + data_start + (at + i) * 8));
      return t;
    };
    for (const auto& js : manifest.at("stores")) {
      ParamStore store;
      for (const auto& jt : js.at("tensors")) {
        const auto shape = jt.at("shape").get<std::vector<std::size_t>>();
        const auto offset = jt.at("offset").get<std::uint64_t>();
        Tensor value = read_tensor(shape, offset);
        const std::uint64_t n = value.size();
        const std::string name = jt.at("name").get<std::string>();
        store.add(name, std::move(value));
        Param& p = store.mutable_at(name);
        p.m = read_tensor(shape, offset + n);
        p.v = read_tensor(shape, offset + 2 * n);
      }
      store.set_steps(js.at("steps").get<std::uint64_t>());
      ckpt.stores.emplace(js.at("name").get<std::string>(), std::move(store));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + " manifest is missing fields: " + e.what());
  }
  return ckpt;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path, std::uint64_t vocab_hash,
                     std::uint64_t config_hash) {
  Checkpoint c;
  c.vocab_hash = vocab_hash;
  c.config_hash = config_hash;
  c.stores.emplace("params", store);
  write_checkpoint(c, path);
}

ParamStore load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_vocab_hash,
                           std::optional<std::uint64_t> expected_config_hash) {
  Checkpoint c = read_checkpoint(path, expected_vocab_hash, expected_config_hash);
  auto it = c.stores.find("params");
  if (it == c.stores.end() || c.stores.size() != 1)
    throw ParseError("checkpoint '" + path.string() + "' does not hold a single parameter store");
  return std::move(it->second);
}

}  // namespace kads
