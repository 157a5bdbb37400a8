#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "b2diff/trainer.hpp"

namespace b2diff {

namespace {

constexpr std::array<char, 4> kMagic{'B', '2', 'D', 'R'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const std::vector<double>& v) {
    for (double d : v) f64(d);
  }
  const std::vector<unsigned char>& data() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> buf) : buf_(std::move(buf)) {}

  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw std::runtime_error("checkpoint truncated");
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s(std::uint64_t n) {
    need(n * 8);
    std::vector<double> v(n);
    for (double& d : v) d = f64();
    return v;
  }
  void expect_end() const {
    if (pos_ != buf_.size()) throw std::runtime_error("checkpoint has trailing data");
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const NetworkArch& a = ckpt.params.arch;
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(a.input_dim));
  w.u32(static_cast<std::uint32_t>(a.hidden_dims.size()));
  for (std::size_t h : a.hidden_dims) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(a.cond_count));
  w.u32(static_cast<std::uint32_t>(a.t_embed_dim));
  w.u32(static_cast<std::uint32_t>(a.c_embed_dim));

  const std::uint64_t count = ckpt.params.values.size();
  w.u64(count);
  w.f64s(ckpt.params.values);

  const bool has_moments = ckpt.adam.m.size() == count && ckpt.adam.v.size() == count;
  w.u64(has_moments ? ckpt.adam.step : 0);
  if (has_moments) {
    w.f64s(ckpt.adam.m);
    w.f64s(ckpt.adam.v);
  } else {
    w.f64s(std::vector<double>(count * 2, 0.0));
  }

  const NormalizerConfig& nc = ckpt.normalizer.config();
  w.u32(static_cast<std::uint32_t>(nc.window));
  w.f64(nc.variance_floor);
  w.u8(nc.divide_by == NormalizeBy::Variance ? 0 : 1);
  const auto& bufs = ckpt.normalizer.buffers();
  w.u32(static_cast<std::uint32_t>(bufs.size()));
  for (const auto& [cid, entries] : bufs) {
    w.i32(cid);
    w.u64(entries.size());
    for (const auto& e : entries) {
      w.u64(e.round);
      w.f64(e.score);
    }
  }
  w.u64(ckpt.round);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(buf));

  r.need(4);
  for (char c : kMagic) {
    if (static_cast<char>(r.u8()) != c) throw std::runtime_error("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  NetworkArch& a = ck.params.arch;
  a.input_dim = r.u32();
  const std::uint32_t layers = r.u32();
  if (layers > 1024) throw std::runtime_error("implausible layer count in checkpoint");
  a.hidden_dims.resize(layers);
  for (auto& h : a.hidden_dims) h = r.u32();
  a.cond_count = r.u32();
  a.t_embed_dim = r.u32();
  a.c_embed_dim = r.u32();
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("corrupt checkpoint architecture: ") + e.what());
  }

  const std::uint64_t count = r.u64();
  if (count != a.parameter_count()) throw std::runtime_error("checkpoint parameter count does not match its architecture");
  ck.params.values = r.f64s(count);

  ck.adam.step = r.u64();
  ck.adam.m = r.f64s(count);
  ck.adam.v = r.f64s(count);

  NormalizerConfig nc;
  nc.window = r.u32();
  nc.variance_floor = r.f64();
  nc.divide_by = r.u8() == 0 ? NormalizeBy::Variance : NormalizeBy::StdDev;
  ck.normalizer = NormalizerState(nc);
  const std::uint32_t conds = r.u32();
  for (std::uint32_t i = 0; i < conds; ++i) {
    const int cid = r.i32();
    const std::uint64_t n = r.u64();
    r.need(n * 16);
    auto& dq = ck.normalizer.buffers()[cid];
    for (std::uint64_t k = 0; k < n; ++k) {
      const std::uint64_t round = r.u64();
      dq.push_back(NormalizerState::Entry{round, r.f64()});
    }
  }
  ck.round = r.u64();
  r.expect_end();
  return ck;
}

}  // namespace b2diff
