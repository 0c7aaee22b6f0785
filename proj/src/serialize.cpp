#include "unirep/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "unirep/common.hpp"

namespace unirep {

namespace {

void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

void put_u32(std::string& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 8);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  const unsigned char* p;
  std::size_t left;
  std::string what;

  void need(std::size_t n) {
    if (left < n) fail(errc::truncated, "truncated payload in " + what);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    left -= 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

std::string read_file(const std::filesystem::path& path, const char* kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::missing_payload, std::string(kind) + " not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) fail(errc::io, std::string("failed reading ") + path.string());
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes, const char* kind) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(errc::io, std::string("cannot open ") + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out.good()) fail(errc::io, std::string("failed writing ") + kind + " " + path.string());
}

constexpr char kMagic[4] = {'U', 'R', 'L', 'D'};

}  // namespace

void save_tensors(const std::filesystem::path& path, const NamedTensors& entries) {
  std::string out;
  put_bytes(out, kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, entries.size());
  for (const auto& [name, t] : entries) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
  }
  for (const auto& [name, t] : entries)
    for (double v : t.data()) put_f64(out, v);
  write_file(path, out, "checkpoint");
}

NamedTensors load_tensors(const std::filesystem::path& path, bool requires_grad) {
  std::string bytes = read_file(path, "checkpoint");
  Reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), path.string()};
  r.need(4);
  if (std::memcmp(r.p, kMagic, 4) != 0)
    fail(errc::bad_format, "corrupt checkpoint header in " + path.string());
  r.p += 4;
  r.left -= 4;
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    fail(errc::bad_version, "unsupported checkpoint version " + std::to_string(version) + " in " +
                                path.string());
  std::uint64_t count = r.u64();
  struct Entry {
    std::string name;
    Shape shape;
  };
  std::vector<Entry> manifest;
  manifest.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (std::uint32_t k = 0; k < rank; ++k) shape[k] = static_cast<std::size_t>(r.u64());
    manifest.push_back({std::move(name), std::move(shape)});
  }
  NamedTensors result;
  result.reserve(manifest.size());
  for (auto& e : manifest) {
    std::size_t n = shape_numel(e.shape);
    std::vector<double> data(n);
    for (std::size_t k = 0; k < n; ++k) data[k] = r.f64();
    result.emplace_back(std::move(e.name),
                        Tensor::from_data(std::move(e.shape), std::move(data), requires_grad));
  }
  if (r.left != 0) fail(errc::bad_format, "trailing bytes in " + path.string());
  return result;
}

void write_feature_matrix(const std::filesystem::path& path, const Tensor& feats) {
  if (feats.rank() != 2)
    fail(errc::invalid_argument, "feature matrix must be rank-2, got " + shape_str(feats.shape()));
  std::string out = std::to_string(feats.dim(0)) + " " + std::to_string(feats.dim(1)) + "\n";
  for (double v : feats.data()) put_f64(out, v);
  write_file(path, out, "feature matrix");
}

Tensor read_feature_matrix(const std::filesystem::path& path) {
  std::string bytes = read_file(path, "feature matrix");
  std::size_t eol = bytes.find('\n');
  if (eol == std::string::npos) fail(errc::bad_format, "missing header line in " + path.string());
  std::istringstream header(bytes.substr(0, eol));
  long long n = -1, d = -1;
  header >> n >> d;
  if (!header || n <= 0 || d <= 0)
    fail(errc::bad_format, "bad feature-matrix header in " + path.string());
  Reader r{reinterpret_cast<const unsigned char*>(bytes.data()) + eol + 1, bytes.size() - eol - 1,
           path.string()};
  std::size_t count = static_cast<std::size_t>(n) * static_cast<std::size_t>(d);
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = r.f64();
  if (r.left != 0) fail(errc::bad_format, "trailing bytes in " + path.string());
  return Tensor::from_data({static_cast<std::size_t>(n), static_cast<std::size_t>(d)},
                           std::move(data));
}

void write_f64_file(const std::filesystem::path& path, std::span<const double> values) {
  std::string out;
  out.reserve(values.size() * 8);
  for (double v : values) put_f64(out, v);
  write_file(path, out, "payload");
}

std::vector<double> read_f64_file(const std::filesystem::path& path) {
  std::string bytes = read_file(path, "payload");
  if (bytes.size() % 8 != 0) fail(errc::truncated, "truncated payload in " + path.string());
  Reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), path.string()};
  std::vector<double> out(bytes.size() / 8);
  for (auto& v : out) v = r.f64();
  return out;
}

void write_i32_file(const std::filesystem::path& path, std::span<const int> values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (int v : values) put_u32(out, static_cast<std::uint32_t>(v));
  write_file(path, out, "payload");
}

std::vector<int> read_i32_file(const std::filesystem::path& path) {
  std::string bytes = read_file(path, "payload");
  if (bytes.size() % 4 != 0) fail(errc::truncated, "truncated payload in " + path.string());
  Reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), path.string()};
  std::vector<int> out(bytes.size() / 4);
  for (auto& v : out) v = static_cast<int>(r.u32());
  return out;
}

}  // namespace unirep
