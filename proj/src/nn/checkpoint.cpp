#include "sentord/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "sentord/core.hpp"

namespace sentord::nn {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> buf, std::string source) : buf_(std::move(buf)), source_(std::move(source)) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  std::string string(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw InputError("checkpoint '" + source_ + "' is truncated");
  }
  std::vector<char> buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.le<std::uint32_t>(kCheckpointVersion);
  auto header = ckpt.header;
  header["dtype"] = ckpt.dtype == DType::f64 ? "f64" : "f32";
  const std::string h = header.dump();
  w.le<std::uint64_t>(h.size());
  w.bytes(h.data(), h.size());
  w.le<std::uint64_t>(ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    std::uint64_t elems = 1;
    for (auto d : t.shape) elems *= d;
    if (elems != t.data.size()) throw std::invalid_argument("checkpoint tensor '" + t.name + "': shape/data mismatch");
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.le<std::uint64_t>(d);
    for (double v : t.data) {
      if (ckpt.dtype == DType::f64) {
        w.f64(v);
      } else {
        w.f32(static_cast<float>(v));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint '" + path.string() + "'");
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(buf), path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw InputError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw InputError("checkpoint '" + path.string() + "' has unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto header_len = r.le<std::uint64_t>();
  try {
    ckpt.header = nlohmann::json::parse(r.string(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("checkpoint '" + path.string() + "': bad header: " + e.what());
  }
  const auto dtype = ckpt.header.value("dtype", std::string("f32"));
  if (dtype != "f32" && dtype != "f64") throw InputError("checkpoint dtype '" + dtype + "' unsupported");
  ckpt.dtype = dtype == "f64" ? DType::f64 : DType::f32;
  const auto count = r.le<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.string(r.le<std::uint32_t>());
    const auto rank = r.le<std::uint32_t>();
    std::uint64_t elems = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.le<std::uint64_t>());
      elems *= t.shape.back();
    }
    t.data.resize(elems);
    for (auto& v : t.data) {
      v = ckpt.dtype == DType::f64 ? std::bit_cast<double>(r.le<std::uint64_t>())
                                   : static_cast<double>(std::bit_cast<float>(r.le<std::uint32_t>()));
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw InputError("checkpoint '" + path.string() + "' has trailing bytes");
  return ckpt;
}

template <typename S>
void append_tensors(Checkpoint& ckpt, const ParameterSet<S>& params, const std::string& prefix) {
  for (const auto& p : params) {
    NamedTensor t;
    t.name = prefix + p.name;
    t.shape = {static_cast<std::uint64_t>(p.value.rows()), static_cast<std::uint64_t>(p.value.cols())};
    t.data.assign(p.value.data(), p.value.data() + p.value.size());
    ckpt.tensors.push_back(std::move(t));
  }
}

template <typename S>
void load_tensors(const Checkpoint& ckpt, ParameterSet<S>& params, const std::string& prefix) {
  for (std::size_t id = 0; id < params.size(); ++id) {
    auto& p = params[id];
    const auto* t = ckpt.find(prefix + p.name);
    if (!t) throw InputError("checkpoint is missing tensor '" + prefix + p.name + "'");
    const std::vector<std::uint64_t> expect{static_cast<std::uint64_t>(p.value.rows()),
                                            static_cast<std::uint64_t>(p.value.cols())};
    if (t->shape != expect) {
      throw InputError("checkpoint tensor '" + t->name + "' has the wrong shape for the configured model");
    }
    for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(t->data[static_cast<std::size_t>(i)]);
  }
}

template void append_tensors<float>(Checkpoint&, const ParameterSet<float>&, const std::string&);
template void append_tensors<double>(Checkpoint&, const ParameterSet<double>&, const std::string&);
template void load_tensors<float>(const Checkpoint&, ParameterSet<float>&, const std::string&);
template void load_tensors<double>(const Checkpoint&, ParameterSet<double>&, const std::string&);

}  // namespace sentord::nn
