#include "tdsr/io/container.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <thread>

#include "tdsr/core/error.hpp"
#include "tdsr/core/hash.hpp"

namespace tdsr::io {

namespace {

constexpr char kMagic[8] = {'T', 'D', 'S', 'R', 'C', 'K', 'P', 'T'};

[[noreturn]] void corrupt(const std::string& why) { throw Error("corrupt checkpoint: " + why); }

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_le(const unsigned char* p, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::size_t element_bytes(DType t) { return t == DType::F32 ? 4 : 8; }

std::string dtype_name(DType t) { return t == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  corrupt("unknown dtype " + s);
}

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) corrupt("negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

const ArrayRecord& Container::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw Error("container has no array named '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

std::vector<unsigned char> serialize(const Container& c) {
  std::vector<unsigned char> payload;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& a : c.arrays) {
    if (element_count(a.shape) != a.values.size())
      throw Error("array '" + a.name + "' size does not match its shape");
    index.push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", dtype_name(a.dtype)}});
    for (double v : a.values) {
      if (a.dtype == DType::F32)
        put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      else
        put_u64(payload, std::bit_cast<std::uint64_t>(v));
    }
  }
  nlohmann::json header = {{"format_version", kFormatVersion},
                           {"kind", c.kind},
                           {"meta", c.meta},
                           {"arrays", index},
                           {"payload_bytes", payload.size()},
                           {"payload_fnv1a64", hex64(fnv1a64(payload))}};
  const std::string text = header.dump();
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Container deserialize(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 12) corrupt("file too short");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) corrupt("bad magic");
  const std::size_t header_len = get_le(bytes.data() + 8, 4);
  if (12 + header_len > bytes.size()) corrupt("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception&) {
    corrupt("unparseable header");
  }
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kFormatVersion)
      throw Error("unsupported checkpoint format version " + std::to_string(version) +
                  " (expected " + std::to_string(kFormatVersion) + ")");
    const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
    const std::size_t start = 12 + header_len;
    if (bytes.size() - start != payload_bytes) corrupt("payload size mismatch");
    const std::vector<unsigned char> payload(bytes.begin() + start, bytes.end());
    if (header.at("payload_fnv1a64").get<std::string>() != hex64(fnv1a64(payload)))
      corrupt("payload checksum mismatch");

    Container c;
    c.kind = header.at("kind").get<std::string>();
    c.meta = header.at("meta");
    std::size_t pos = 0;
    for (const auto& entry : header.at("arrays")) {
      ArrayRecord a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<std::vector<int>>();
      a.dtype = parse_dtype(entry.at("dtype").get<std::string>());
      const std::size_t n = element_count(a.shape), eb = element_bytes(a.dtype);
      if (pos + n * eb > payload.size()) corrupt("array '" + a.name + "' overruns payload");
      a.values.resize(n);
      for (std::size_t i = 0; i < n; ++i, pos += eb) {
        if (a.dtype == DType::F32)
          a.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(&payload[pos], 4)));
        else
          a.values[i] = std::bit_cast<double>(get_le(&payload[pos], 8));
      }
      c.arrays.push_back(std::move(a));
    }
    if (pos != payload.size()) corrupt("trailing payload bytes");
    return c;
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("malformed header: ") + e.what());
  }
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_container(const Container& c, const std::filesystem::path& path) {
  write_file_bytes(path, serialize(c));
}

Container read_container(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

}  // namespace tdsr::io
