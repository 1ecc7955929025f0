#include "efest/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "efest/error.hpp"

namespace efest {
namespace {

constexpr std::string_view kCheckpointMagic = "EFCKPT01";
constexpr std::string_view kGradSumMagic = "EFGSUM01";
constexpr std::string_view kDatasetMagic = "EFDSET01";

class Writer {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  // Write to a sibling temp file, then rename, so readers never see half a file.
  void commit(const std::filesystem::path& path) const {
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) fail(Errc::Io, "cannot write " + tmp.string());
      out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
      if (!out) fail(Errc::Io, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(Errc::Io, "cannot rename " + tmp.string() + ": " + ec.message());
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : name_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::Io, "cannot open " + name_);
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0) fail(Errc::Format, name_ + ": bad magic");
    pos_ += m.size();
  }
  void version() {
    if (u32() != kFormatVersion) fail(Errc::Format, name_ + ": unsupported format version");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  /// Checks that `count` items of `width` bytes are present before anything is allocated for them.
  void expect(std::uint64_t count, std::uint64_t width) {
    if (width != 0 && count > remaining() / width) fail(Errc::Length, name_ + ": declared size exceeds file length");
  }
  void finish() {
    if (remaining() != 0) fail(Errc::Length, name_ + ": trailing bytes after payload");
  }
  const std::string& name() const { return name_; }

 private:
  void need(std::size_t n) {
    if (remaining() < n) fail(Errc::Length, name_ + ": truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string name_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

void write_params(Writer& w, const ParamVector& params) {
  const auto& dims = params.layout().dims;
  w.magic(kCheckpointMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) w.u32(d);
  for (double v : params.values()) w.f64(v);
}

ParamVector read_params(Reader& r) {
  r.magic(kCheckpointMagic);
  r.version();
  const std::uint32_t count = r.u32();
  r.expect(count, 4);
  Layout layout;
  layout.dims.resize(count);
  for (auto& d : layout.dims) d = r.u32();
  try {
    layout.validate();
  } catch (const Error& e) {
    fail(Errc::Format, r.name() + ": " + e.what());
  }
  const std::size_t n = layout.param_count();
  r.expect(n, 8);
  if (r.remaining() != n * 8) fail(Errc::Length, r.name() + ": parameter payload length mismatch");
  std::vector<double> values(n);
  for (double& v : values) v = r.f64();
  r.finish();
  return ParamVector(std::move(layout), std::move(values));
}

}  // namespace

void check_header(const std::filesystem::path& path, FileKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  char head[12] = {};
  in.read(head, sizeof head);
  if (in.gcount() != sizeof head) fail(Errc::Length, path.string() + ": truncated header");
  const std::string_view magic = kind == FileKind::Checkpoint ? kCheckpointMagic
                                 : kind == FileKind::GradSum  ? kGradSumMagic
                                                              : kDatasetMagic;
  if (std::string_view(head, 8) != magic) fail(Errc::Format, path.string() + ": bad magic");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= std::uint32_t{static_cast<unsigned char>(head[8 + i])} << (8 * i);
  if (version != kFormatVersion) fail(Errc::Format, path.string() + ": unsupported format version");
}

void save_params(const std::filesystem::path& path, const ParamVector& params) {
  Writer w;
  write_params(w, params);
  w.commit(path);
}

ParamVector load_params(const std::filesystem::path& path) {
  Reader r(path);
  return read_params(r);
}

void save_checkpoint(const std::filesystem::path& path, const MlpNetwork& net) { save_params(path, net.params()); }

MlpNetwork load_checkpoint(const std::filesystem::path& path) { return MlpNetwork(load_params(path)); }

void save_gradsum(const std::filesystem::path& path, const GradSumRecord& rec) {
  Writer w;
  w.magic(kGradSumMagic);
  w.u32(kFormatVersion);
  w.u32(rec.round);
  w.u32(rec.klass);
  w.u8(static_cast<std::uint8_t>(rec.path));
  w.u32(rec.batch_size);
  w.u32(rec.sample_count);
  w.u32(rec.failed_count);
  w.u32(rec.succeeded_count);
  w.u64(rec.vector.size());
  for (double v : rec.vector.values()) w.f64(v);
  w.commit(path);
}

GradSumRecord load_gradsum(const std::filesystem::path& path, const Layout& layout) {
  Reader r(path);
  r.magic(kGradSumMagic);
  r.version();
  GradSumRecord rec;
  rec.round = r.u32();
  rec.klass = r.u32();
  const std::uint8_t tag = r.u8();
  if (tag > 1) fail(Errc::Format, r.name() + ": unknown path tag");
  rec.path = static_cast<GradPath>(tag);
  rec.batch_size = r.u32();
  rec.sample_count = r.u32();
  rec.failed_count = r.u32();
  rec.succeeded_count = r.u32();
  if (rec.failed_count + std::uint64_t{rec.succeeded_count} != rec.sample_count)
    fail(Errc::Consistency, r.name() + ": sample counts do not add up");
  const std::uint64_t n = r.u64();
  r.expect(n, 8);
  if (r.remaining() != n * 8) fail(Errc::Length, r.name() + ": vector payload length mismatch");
  if (n != layout.param_count()) fail(Errc::Layout, r.name() + ": vector length does not match network layout");
  std::vector<double> values(n);
  for (double& v : values) v = r.f64();
  r.finish();
  rec.vector = ParamVector(layout, std::move(values));
  return rec;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  Writer w;
  w.magic(kDatasetMagic);
  w.u32(kFormatVersion);
  w.u64(data.examples.size());
  w.u32(data.dim);
  w.u32(data.num_classes);
  for (const auto& ex : data.examples) {
    w.u64(ex.id);
    w.u32(ex.label);
    for (double v : ex.features) w.f64(v);
  }
  w.commit(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  Reader r(path);
  r.magic(kDatasetMagic);
  r.version();
  const std::uint64_t n = r.u64();
  Dataset data;
  data.dim = r.u32();
  data.num_classes = r.u32();
  if (data.dim == 0) fail(Errc::Format, r.name() + ": zero feature dimension");
  const std::uint64_t record = 12 + 8 * std::uint64_t{data.dim};
  r.expect(n, record);
  if (r.remaining() != n * record) fail(Errc::Length, r.name() + ": example payload length mismatch");
  data.examples.resize(n);
  for (auto& ex : data.examples) {
    ex.id = r.u64();
    ex.label = r.u32();
    ex.features.resize(data.dim);
    for (double& v : ex.features) v = r.f64();
  }
  r.finish();
  data.validate();
  return data;
}

}  // namespace efest
