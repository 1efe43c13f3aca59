#include "hmslab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <vector>

#include "hmslab/error.hpp"
#include "hmslab/util.hpp"

namespace hmslab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'H', 'M', 'S', 'L', 'A', 'B', '0', '1'};
constexpr std::uint32_t kKindBase = 0;
constexpr std::uint32_t kKindAdapters = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source)
      : bytes_(bytes), source_(source) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& msg) const {
    fail_data(source_ + ": " + msg + " (offset " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("truncated checkpoint");
  }
  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

void put_config(std::string& out, const ModelConfig& c) {
  for (std::size_t v : {c.n_layers, c.n_query_heads, c.n_kv_heads, c.head_dim, c.ffn_dim,
                        c.vocab_size, c.max_seq_len, c.adapter_rank}) {
    put<std::uint64_t>(out, v);
  }
}

ModelConfig get_config(Reader& r) {
  ModelConfig c;
  for (std::size_t* f : {&c.n_layers, &c.n_query_heads, &c.n_kv_heads, &c.head_dim,
                         &c.ffn_dim, &c.vocab_size, &c.max_seq_len, &c.adapter_rank}) {
    *f = static_cast<std::size_t>(r.get<std::uint64_t>());
  }
  try {
    c.validate();
  } catch (const Error& e) {
    r.fail(std::string("invalid model config: ") + e.what());
  }
  return c;
}

struct Named {
  std::string name;
  const ad::Tensor* tensor;
};

std::string encode(std::uint32_t kind, const ModelConfig& c, const std::vector<Named>& ts) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kind);
  put_config(out, c);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ts.size()));
  for (const auto& [name, t] : ts) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t->shape().size()));
    for (std::size_t d : t->shape()) put<std::uint64_t>(out, d);
    for (double v : t->values()) put<double>(out, v);
  }
  return out;
}

// Fills the tensors of a freshly shaped container in for_each order,
// checking names and shapes.
template <typename Container>
Container decode(const std::string& bytes, const std::string& source, std::uint32_t kind,
                 Container (*make)(const ModelConfig&)) {
  Reader r(bytes, source);
  if (r.get_bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    r.fail("bad magic, not a checkpoint");
  }
  if (r.get<std::uint32_t>() != kind) {
    r.fail(kind == kKindBase ? "expected a base-weight checkpoint"
                             : "expected an adapter checkpoint");
  }
  const ModelConfig config = get_config(r);
  Container c = make(config);
  std::size_t expected = 0;
  c.for_each([&](const std::string&, ad::Tensor&) { ++expected; });
  const auto count = r.get<std::uint32_t>();
  if (count != expected) {
    r.fail("expected " + std::to_string(expected) + " tensors, found " + std::to_string(count));
  }
  c.for_each([&](const std::string& name, ad::Tensor& t) {
    const auto len = r.get<std::uint32_t>();
    const std::string got = r.get_bytes(len);
    if (got != name) r.fail("expected tensor '" + name + "', found '" + got + "'");
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (shape != t.shape()) r.fail("tensor '" + name + "' has unexpected shape");
    for (double& v : t.values()) v = r.get<double>();
  });
  if (!r.done()) r.fail("trailing bytes after last tensor");
  return c;
}

BaseWeights shaped_base(const ModelConfig& c) { return BaseWeights::init(c, 0); }

}  // namespace

std::string encode_base(const BaseWeights& w) {
  std::vector<Named> ts;
  w.for_each([&](const std::string& n, const ad::Tensor& t) { ts.push_back({n, &t}); });
  return encode(kKindBase, w.config, ts);
}

std::string encode_adapters(const AdapterSet& a) {
  std::vector<Named> ts;
  a.for_each([&](const std::string& n, const ad::Tensor& t) { ts.push_back({n, &t}); });
  return encode(kKindAdapters, a.config, ts);
}

BaseWeights decode_base(const std::string& bytes, const std::string& source) {
  return decode<BaseWeights>(bytes, source, kKindBase, &shaped_base);
}

AdapterSet decode_adapters(const std::string& bytes, const std::string& source) {
  return decode<AdapterSet>(bytes, source, kKindAdapters, &AdapterSet::zeros);
}

void save_base(const std::filesystem::path& path, const BaseWeights& w) {
  write_file(path, encode_base(w));
}

void save_adapters(const std::filesystem::path& path, const AdapterSet& a) {
  write_file(path, encode_adapters(a));
}

BaseWeights load_base(const std::filesystem::path& path) {
  return decode_base(read_file(path), path.string());
}

AdapterSet load_adapters(const std::filesystem::path& path) {
  return decode_adapters(read_file(path), path.string());
}

}  // namespace hmslab
