#include "hcrn/tensor_dump.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace hcrn {

namespace {

constexpr char kMagic[8] = {'H', 'C', 'R', 'N', 'D', 'U', 'M', 'P'};

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DumpFormatError("tensor dump truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t count_of(const std::vector<std::uint64_t>& extents) {
  std::uint64_t n = 1;
  for (auto e : extents) n *= e;
  return n;
}

}  // namespace

void TensorDump::push(DumpEntry entry) {
  if (find(entry.name) != nullptr) throw DumpFormatError("duplicate tensor name '" + entry.name + "'");
  entries_.push_back(std::move(entry));
}

void TensorDump::add(std::string name, const Tensor& tensor) {
  std::vector<std::uint64_t> extents(tensor.shape().begin(), tensor.shape().end());
  add_f64(std::move(name), std::move(extents), {tensor.data().begin(), tensor.data().end()});
}

void TensorDump::add_f64(std::string name, std::vector<std::uint64_t> extents, std::vector<double> values) {
  if (count_of(extents) != values.size()) throw DumpFormatError("extent/value count mismatch for '" + name + "'");
  DumpEntry e{std::move(name), DType::kFloat64, std::move(extents), std::move(values), {}, {}};
  push(std::move(e));
}

void TensorDump::add_i64(std::string name, std::vector<std::uint64_t> extents, std::vector<std::int64_t> values) {
  if (count_of(extents) != values.size()) throw DumpFormatError("extent/value count mismatch for '" + name + "'");
  DumpEntry e{std::move(name), DType::kInt64, std::move(extents), {}, std::move(values), {}};
  push(std::move(e));
}

void TensorDump::add_text(std::string name, const std::string& text) {
  DumpEntry e{std::move(name), DType::kUInt8, {text.size()}, {}, {}, {text.begin(), text.end()}};
  push(std::move(e));
}

const DumpEntry* TensorDump::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const DumpEntry& TensorDump::at(const std::string& name) const {
  const auto* e = find(name);
  if (e == nullptr) throw DumpFormatError("tensor dump has no entry '" + name + "'");
  return *e;
}

Tensor TensorDump::tensor(const std::string& name) const {
  const auto& e = at(name);
  if (e.dtype != DType::kFloat64) throw DumpFormatError("entry '" + name + "' is not float64");
  Shape shape(e.extents.begin(), e.extents.end());
  return Tensor::from(std::move(shape), e.f64);
}

std::vector<std::int64_t> TensorDump::ints(const std::string& name) const {
  const auto& e = at(name);
  if (e.dtype != DType::kInt64) throw DumpFormatError("entry '" + name + "' is not int64");
  return e.i64;
}

std::string TensorDump::text(const std::string& name) const {
  const auto& e = at(name);
  if (e.dtype != DType::kUInt8) throw DumpFormatError("entry '" + name + "' is not uint8");
  return {e.u8.begin(), e.u8.end()};
}

std::vector<std::uint8_t> TensorDump::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kDumpFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.extents.size()));
    for (auto x : e.extents) put<std::uint64_t>(out, x);
    switch (e.dtype) {
      case DType::kFloat64:
        for (double v : e.f64) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        break;
      case DType::kInt64:
        for (auto v : e.i64) put<std::uint64_t>(out, static_cast<std::uint64_t>(v));
        break;
      case DType::kUInt8:
        out.insert(out.end(), e.u8.begin(), e.u8.end());
        break;
    }
  }
  return out;
}

TensorDump TensorDump::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw DumpFormatError("not a tensor dump (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kDumpFormatVersion) {
    throw DumpFormatError("tensor dump version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kDumpFormatVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>();
  TensorDump dump;
  for (std::uint32_t i = 0; i < count; ++i) {
    DumpEntry e;
    const auto name_len = r.get<std::uint32_t>();
    auto name = r.take(name_len);
    e.name.assign(name.begin(), name.end());
    const auto tag = r.get<std::uint8_t>();
    if (tag < 1 || tag > 3) throw DumpFormatError("unknown dtype tag " + std::to_string(tag));
    e.dtype = static_cast<DType>(tag);
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t a = 0; a < rank; ++a) e.extents.push_back(r.get<std::uint64_t>());
    const auto n = count_of(e.extents);
    switch (e.dtype) {
      case DType::kFloat64:
        e.f64.resize(n);
        for (auto& v : e.f64) v = std::bit_cast<double>(r.get<std::uint64_t>());
        break;
      case DType::kInt64:
        e.i64.resize(n);
        for (auto& v : e.i64) v = static_cast<std::int64_t>(r.get<std::uint64_t>());
        break;
      case DType::kUInt8: {
        auto raw = r.take(n);
        e.u8.assign(raw.begin(), raw.end());
        break;
      }
    }
    dump.push(std::move(e));
  }
  if (!r.done()) throw DumpFormatError("trailing bytes after tensor dump");
  return dump;
}

void TensorDump::save(const std::filesystem::path& path) const {
  auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

TensorDump TensorDump::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace hcrn
