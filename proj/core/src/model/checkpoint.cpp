#include "anchortune/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "anchortune/config_json.hpp"
#include "anchortune/error.hpp"

namespace anchortune::model {
namespace {

constexpr char kMagic[4] = {'A', 'T', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : b_(bytes), source_(std::move(source)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(source_ + ": " + what); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail("truncated at byte " + std::to_string(pos_));
  }
  const std::string& b_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string encode_checkpoint(const std::string& kind, nlohmann::json meta, const ParamSet<float>& params) {
  if (meta.is_null()) meta = nlohmann::json::object();
  if (!meta.is_object()) throw DomainError("checkpoint meta must be a JSON object");
  meta["kind"] = kind;
  const std::string m = meta.dump();
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(m.size()));
  out += m;
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (int d : e.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.str(4) != std::string(kMagic, 4)) r.fail("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    r.fail("checkpoint version " + std::to_string(version) + " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(r.str(r.u32()));
  } catch (const nlohmann::json::parse_error& e) {
    r.fail(std::string("bad meta JSON: ") + e.what());
  }
  if (!ck.meta.is_object() || !ck.meta.contains("kind") || !ck.meta["kind"].is_string()) r.fail("meta lacks a kind");
  ck.kind = ck.meta["kind"].get<std::string>();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) r.fail("entry '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<int>(r.u32()));
    for (int d : shape)
      if (d <= 0) r.fail("entry '" + name + "' has non-positive extent");
    Tensor<float> t(shape);
    for (auto& v : t.data()) v = std::bit_cast<float>(r.u32());
    try {
      ck.params.add(std::move(name), std::move(t));
    } catch (const DomainError& e) {
      r.fail(e.what());
    }
  }
  if (!r.done()) r.fail("trailing bytes after last entry");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, nlohmann::json meta,
                     const ParamSet<float>& params) {
  const auto bytes = encode_checkpoint(kind, std::move(meta), params);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  auto ck = decode_checkpoint(slurp(path), path.string());
  if (ck.kind != expected_kind)
    throw FormatError(path.string() + ": checkpoint kind '" + ck.kind + "', expected '" + expected_kind + "'");
  return ck;
}

void assign_params(const ParamSet<float>& loaded, ParamSet<float>& target, const std::string& source) {
  for (const auto& e : loaded.entries())
    if (!target.contains(e.name)) throw FormatError(source + ": unknown parameter '" + e.name + "'");
  for (auto& e : target.entries()) {
    if (!loaded.contains(e.name)) throw FormatError(source + ": missing parameter '" + e.name + "'");
    const auto& src = loaded[e.name];
    if (src.shape() != e.tensor.shape())
      throw FormatError(source + ": parameter '" + e.name + "' has shape " + shape_str(src.shape()) + ", expected " +
                        shape_str(e.tensor.shape()));
    std::copy(src.data().begin(), src.data().end(), e.tensor.data().begin());
  }
}

void save_mat(const std::filesystem::path& path, const MatModel& m, nlohmann::json extra) {
  extra["config"] = m.config;
  save_checkpoint(path, "mat_lite", std::move(extra), m.params);
}

MatModel load_mat(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path, "mat_lite");
  MatModel m;
  try {
    const auto& j = ck.meta.at("config");
    cfg::require_keys(j, nlohmann::json(MatConfig{}), path.string() + ": model config");
    m.config = j.get<MatConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad model config: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": bad model config: " + e.what());
  }
  m.params = init_mat_params(m.config);
  assign_params(ck.params, m.params, path.string());
  return m;
}

}  // namespace anchortune::model
