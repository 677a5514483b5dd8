#include "lightvit/serialization.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>

namespace lightvit {

namespace {

constexpr char kMagic[4] = {'L', 'V', 'W', 'T'};

template <typename U>
void write_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  is.read(reinterpret_cast<char*>(buf), sizeof(U));
  if (!is) throw FormatError("weight file: truncated header field");
  U v = 0;
  for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

template <typename T>
constexpr uint8_t dtype_tag();
template <>
constexpr uint8_t dtype_tag<float>() {
  return 0;
}
template <>
constexpr uint8_t dtype_tag<double>() {
  return 1;
}

const char* dtype_name(uint8_t tag) { return tag == 0 ? "f32" : tag == 1 ? "f64" : "unknown"; }

template <typename T>
void write_payload(std::ostream& os, const std::vector<T>& v) {
  if constexpr (sizeof(T) == 4) {
    for (T x : v) {
      uint32_t bits;
      std::memcpy(&bits, &x, 4);
      write_le<uint32_t>(os, bits);
    }
  } else {
    for (T x : v) {
      uint64_t bits;
      std::memcpy(&bits, &x, 8);
      write_le<uint64_t>(os, bits);
    }
  }
}

template <typename T>
void read_payload(std::istream& is, std::vector<T>& v) {
  for (auto& x : v) {
    if constexpr (sizeof(T) == 4) {
      const uint32_t bits = read_le<uint32_t>(is);
      std::memcpy(&x, &bits, 4);
    } else {
      const uint64_t bits = read_le<uint64_t>(is);
      std::memcpy(&x, &bits, 8);
    }
  }
}

void write_string(std::ostream& os, const std::string& s) {
  write_le<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const uint32_t len = read_le<uint32_t>(is);
  std::string s(len, '\0');
  if (len > 0) {
    is.read(s.data(), len);
    if (!is) throw FormatError("weight file: truncated string");
  }
  return s;
}

void check_magic(std::istream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("'" + path + "' is not a weight file (bad magic)");
  }
  const uint16_t version = read_le<uint16_t>(is);
  if (version != kWeightFileVersion) {
    throw FormatError("'" + path + "': unsupported format version " + std::to_string(version));
  }
}

struct EntryHeader {
  std::string name;
  uint8_t dtype = 0;
  Shape shape;
  int64_t numel = 1;
};

EntryHeader read_entry_header(std::istream& is) {
  EntryHeader e;
  e.name = read_string(is);
  e.dtype = read_le<uint8_t>(is);
  if (e.dtype > 1) throw FormatError("weight file: unknown dtype tag");
  const uint8_t rank = read_le<uint8_t>(is);
  if (rank < 1) throw FormatError("weight file: rank-0 entries are not allowed");
  for (uint8_t d = 0; d < rank; ++d) {
    const int64_t extent = static_cast<int64_t>(read_le<uint64_t>(is));
    if (extent <= 0) throw FormatError("weight file: non-positive extent");
    e.shape.push_back(extent);
    e.numel *= extent;
  }
  return e;
}

template <typename T>
void write_entry(std::ostream& os, const std::string& name, const Tensor<T>& t) {
  write_string(os, name);
  write_le<uint8_t>(os, dtype_tag<T>());
  write_le<uint8_t>(os, static_cast<uint8_t>(t.rank()));
  for (int64_t d = 0; d < t.rank(); ++d) write_le<uint64_t>(os, static_cast<uint64_t>(t.dim(d)));
  write_payload(os, t.data());
}

}  // namespace

template <typename T>
void save_model(const Model<T>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  write_le<uint16_t>(os, kWeightFileVersion);
  write_string(os, model.config().canonical_text());

  std::vector<const NamedParam<T>*> sorted;
  for (const auto& p : model.parameters()) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(),
            [](const NamedParam<T>* a, const NamedParam<T>* b) { return a->name < b->name; });

  write_le<uint32_t>(os, static_cast<uint32_t>(sorted.size()));
  for (const auto* p : sorted) write_entry(os, p->name, p->tensor);
  if (!os) throw IoError("write failed for '" + path + "'");
}

ModelConfig peek_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  check_magic(is, path);
  return ModelConfig::parse(read_string(is));
}

template <typename T>
Model<T> load_model(const std::string& path, const ModelConfig& expected, GradTape<T>* tape) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  check_magic(is, path);
  const std::string cfg_text = read_string(is);
  const uint64_t file_digest = fnv1a64(cfg_text);
  if (file_digest != expected.digest()) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(file_digest));
    throw ConfigError("config digest mismatch: file " + std::string(buf) + " vs expected " +
                      expected.digest_hex());
  }

  Model<T> model = Model<T>::build(expected, 0, tape);
  const uint32_t count = read_le<uint32_t>(is);
  if (count != model.parameters().size()) {
    throw FormatError("weight file: expected " + std::to_string(model.parameters().size()) +
                      " entries, found " + std::to_string(count));
  }
  std::string prev;
  for (uint32_t i = 0; i < count; ++i) {
    EntryHeader e = read_entry_header(is);
    if (i > 0 && !(prev < e.name)) {
      throw FormatError("weight file: entry names not sorted/unique at '" + e.name + "'");
    }
    prev = e.name;
    if (e.dtype != dtype_tag<T>()) {
      throw FormatError("weight file: entry '" + e.name + "' holds " + dtype_name(e.dtype) +
                        " but " + dtype_name(dtype_tag<T>()) + " was requested");
    }
    Tensor<T> param = model.parameter(e.name);
    if (param.shape() != e.shape) {
      throw FormatError("weight file: entry '" + e.name + "' has shape " + shape_str(e.shape) +
                        ", model expects " + shape_str(param.shape()));
    }
    read_payload(is, param.data());
    if (!is) throw FormatError("weight file: truncated payload in '" + e.name + "'");
  }
  return model;
}

template <typename T>
void dump_tensor(const Tensor<T>& t, const std::string& path) {
  if (!t.defined() || t.rank() < 1) {
    throw ContractError("dump_tensor: undefined or rank-0 tensor");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  write_le<uint16_t>(os, kWeightFileVersion);
  write_string(os, "");  // no embedded config
  write_le<uint32_t>(os, 1);
  write_entry(os, "", t);
  if (!os) throw IoError("write failed for '" + path + "'");
}

template <typename T>
Tensor<T> read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  check_magic(is, path);
  (void)read_string(is);
  const uint32_t count = read_le<uint32_t>(is);
  if (count != 1) throw FormatError("tensor file: expected a single entry");
  EntryHeader e = read_entry_header(is);
  if (e.dtype != dtype_tag<T>()) {
    throw FormatError("tensor file: holds " + std::string(dtype_name(e.dtype)) + " but " +
                      dtype_name(dtype_tag<T>()) + " was requested");
  }
  std::vector<T> data(static_cast<size_t>(e.numel));
  read_payload(is, data);
  if (!is) throw FormatError("tensor file: truncated payload");
  return Tensor<T>::from_data(e.shape, std::move(data));
}

template <typename T>
Tensor<T> load_ppm(const std::string& path, const std::array<double, 3>& mean,
                   const std::array<double, 3>& stddev) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image '" + path + "'");

  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
      if (c == '#') {
        while ((c = is.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError("ppm: truncated header in '" + path + "'");
    return tok;
  };

  if (next_token() != "P6") throw FormatError("ppm: '" + path + "' is not a binary P6 file");
  const int64_t w = std::stoll(next_token());
  const int64_t h = std::stoll(next_token());
  const int64_t maxval = std::stoll(next_token());
  if (w <= 0 || h <= 0) throw FormatError("ppm: invalid dimensions");
  if (maxval != 255) throw FormatError("ppm: only 8-bit images are supported");

  std::vector<unsigned char> raw(static_cast<size_t>(w * h * 3));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw FormatError("ppm: truncated pixel data in '" + path + "'");

  std::vector<T> out(static_cast<size_t>(3 * h * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        const double v = static_cast<double>(raw[(y * w + x) * 3 + c]) / 255.0;
        out[static_cast<size_t>((c * h + y) * w + x)] =
            static_cast<T>((v - mean[static_cast<size_t>(c)]) / stddev[static_cast<size_t>(c)]);
      }
    }
  }
  return Tensor<T>::from_data({3, h, w}, std::move(out));
}

#define LIGHTVIT_INSTANTIATE_SERIALIZATION(T)                                                \
  template void save_model(const Model<T>&, const std::string&);                            \
  template Model<T> load_model(const std::string&, const ModelConfig&, GradTape<T>*);       \
  template void dump_tensor(const Tensor<T>&, const std::string&);                          \
  template Tensor<T> read_tensor(const std::string&);                                       \
  template Tensor<T> load_ppm(const std::string&, const std::array<double, 3>&,             \
                              const std::array<double, 3>&);

LIGHTVIT_INSTANTIATE_SERIALIZATION(float)
LIGHTVIT_INSTANTIATE_SERIALIZATION(double)

#undef LIGHTVIT_INSTANTIATE_SERIALIZATION

}  // namespace lightvit
