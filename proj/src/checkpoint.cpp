#include "metaxl/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "json.hpp"
#include "metaxl/config.hpp"
#include "metaxl/data.hpp"
#include "metaxl/errors.hpp"

namespace metaxl {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

constexpr char magic[] = "MXLCKPT1";
constexpr std::size_t magic_len = 8;

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
  put_u64(out, name.size());
  out += name;
  put_u64(out, t.shape().size());
  for (std::size_t d : t.shape()) put_u64(out, d);
  const auto data = t.data();
  out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8, "integer");
    std::uint64_t v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::string str(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles(std::uint64_t n) {
    if (n > (bytes_.size() - pos_) / sizeof(double)) fail("truncated tensor data");
    std::vector<double> v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("checkpoint: " + what + " at byte " + std::to_string(pos_), 1);
  }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > bytes_.size() - pos_) fail(std::string("truncated ") + what);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json m = {{"format", 1},
                      {"config_hash", ck.manifest.config_hash},
                      {"cell", ck.manifest.cell},
                      {"step", ck.manifest.step},
                      {"encoder", nlohmann::json::parse(to_json(ck.manifest.encoder))},
                      {"label_names", ck.manifest.label_names}};
  m["metric"] = std::isfinite(ck.manifest.metric) ? nlohmann::json(ck.manifest.metric) : nlohmann::json();
  const std::string manifest = m.dump();

  std::string out(magic, magic_len);
  put_u64(out, manifest.size());
  out += manifest;
  put_u64(out, ck.theta.size() + ck.phi.size());
  // "phi/" sorts before "theta/"; emit in that order so the stream is in key order.
  for (const auto& [name, t] : ck.phi) put_tensor(out, "phi/" + name, t);
  for (const auto& [name, t] : ck.theta) put_tensor(out, "theta/" + name, t);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(magic_len, "magic") != std::string(magic, magic_len)) r.fail("bad magic, not a checkpoint");
  const std::string manifest = r.str(r.u64(), "manifest");
  Checkpoint ck;
  try {
    const auto m = nlohmann::json::parse(manifest);
    if (m.at("format").get<int>() != 1) r.fail("unsupported format version");
    ck.manifest.config_hash = m.at("config_hash").get<std::string>();
    ck.manifest.cell = m.at("cell").get<std::string>();
    ck.manifest.step = m.at("step").get<std::size_t>();
    ck.manifest.encoder = parse_encoder_config(m.at("encoder").dump());
    ck.manifest.label_names = m.at("label_names").get<std::vector<std::string>>();
    ck.manifest.metric = m.at("metric").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                  : m.at("metric").get<double>();
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad manifest: ") + e.what());
  }
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u64(), "tensor name");
    const std::uint64_t rank = r.u64();
    if (rank > 8) r.fail("implausible tensor rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      shape.push_back(r.u64());
      numel *= shape.back();
    }
    Tensor t = Tensor::from(shape, r.doubles(numel));
    if (name.rfind("theta/", 0) == 0) {
      ck.theta.emplace(name.substr(6), std::move(t));
    } else if (name.rfind("phi/", 0) == 0) {
      ck.phi.emplace(name.substr(4), std::move(t));
    } else {
      r.fail("tensor '" + name + "' has no theta/ or phi/ prefix");
    }
  }
  if (!r.done()) r.fail("trailing bytes");
  check_encoder_params(ck.manifest.encoder, ck.theta);
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return deserialize_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
}

}  // namespace metaxl
