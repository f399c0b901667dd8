#include "anchortune/dataset/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "anchortune/config_json.hpp"
#include "anchortune/dataset/image_io.hpp"
#include "anchortune/dataset/render.hpp"
#include "anchortune/error.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::data {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Reg: return "reg";
  }
  return "train";
}

std::optional<Split> split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "reg") return Split::Reg;
  return std::nullopt;
}

bool is_group_label(std::string_view label) {
  return std::find(std::begin(kGroupLabels), std::end(kGroupLabels), label) != std::end(kGroupLabels);
}

void Manifest::validate() const {
  if (!is_supported_size(image_size)) throw FormatError("manifest image_size " + std::to_string(image_size) + " unsupported");
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (r.path.empty()) throw FormatError("manifest record with empty path");
    if (!seen.insert(r.path).second) throw FormatError("duplicate manifest path " + r.path);
    if (!is_group_label(r.group)) throw FormatError("record " + r.path + " has unknown group label '" + r.group + "'");
    r.nuisance.validate();
  }
}

std::vector<const ImageRecord*> Manifest::select(std::optional<Split> split, std::optional<int> identity) const {
  std::vector<const ImageRecord*> out;
  for (const auto& r : records)
    if ((!split || r.split == *split) && (!identity || r.identity == *identity)) out.push_back(&r);
  return out;
}

int person_identity(const Manifest& m) {
  std::set<int> ids;
  for (const auto* r : m.select(Split::Train)) ids.insert(r->identity);
  if (ids.size() != 1)
    throw FormatError("person manifest must have train records of exactly one identity, found " + std::to_string(ids.size()));
  return *ids.begin();
}

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw FormatError("unknown field '" + it.key() + "' in " + where);
}

template <typename T>
T required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError("missing field '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError("field '" + std::string(key) + "' in " + where + ": " + e.what());
  }
}

json nuisance_json(const NuisanceSpec& n) {
  return {{"yaw", n.yaw}, {"lighting", n.lighting}, {"accessory", std::string(to_string(n.accessory))}, {"expression", n.expression}};
}

NuisanceSpec nuisance_from(const json& j, const std::string& where) {
  reject_unknown(j, {"yaw", "lighting", "accessory", "expression"}, where);
  NuisanceSpec n;
  n.yaw = required<double>(j, "yaw", where);
  n.lighting = required<double>(j, "lighting", where);
  const auto acc = required<std::string>(j, "accessory", where);
  const auto a = accessory_from_string(acc);
  if (!a) throw FormatError("unknown accessory '" + acc + "' in " + where);
  n.accessory = *a;
  n.expression = required<double>(j, "expression", where);
  return n;
}

}  // namespace

std::string manifest_to_json(const Manifest& m) {
  json records = json::array();
  for (const auto& r : m.records) {
    json j{{"path", r.path},
           {"identity", r.identity},
           {"group", r.group},
           {"split", std::string(to_string(r.split))},
           {"identity_seed", r.identity_seed},
           {"nuisance", nuisance_json(r.nuisance)}};
    if (!r.mask_path.empty()) j["mask_path"] = r.mask_path;
    records.push_back(std::move(j));
  }
  json doc{{"version", 1}, {"image_size", m.image_size}, {"records", std::move(records)}};
  return doc.dump(1) + "\n";
}

Manifest manifest_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("manifest root must be an object");
  reject_unknown(doc, {"version", "image_size", "records"}, "manifest");
  if (required<int>(doc, "version", "manifest") != 1) throw FormatError("unsupported manifest version");
  Manifest m;
  m.image_size = required<int>(doc, "image_size", "manifest");
  const auto& recs = doc.at("records");
  if (!recs.is_array()) throw FormatError("manifest records must be an array");
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& j = recs[i];
    const std::string where = "manifest record " + std::to_string(i);
    reject_unknown(j, {"path", "identity", "group", "split", "mask_path", "identity_seed", "nuisance"}, where);
    ImageRecord r;
    r.path = required<std::string>(j, "path", where);
    r.identity = required<int>(j, "identity", where);
    r.group = required<std::string>(j, "group", where);
    const auto split = required<std::string>(j, "split", where);
    const auto s = split_from_string(split);
    if (!s) throw FormatError("unknown split '" + split + "' in " + where);
    r.split = *s;
    if (j.contains("mask_path")) r.mask_path = required<std::string>(j, "mask_path", where);
    r.identity_seed = required<std::uint64_t>(j, "identity_seed", where);
    if (!j.contains("nuisance")) throw FormatError("missing field 'nuisance' in " + where);
    r.nuisance = nuisance_from(j.at("nuisance"), where);
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  m.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_to_json(m);
  if (!out) throw IoError("write failed for " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return manifest_from_json(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void CorpusConfig::validate() const {
  if (!is_supported_size(image_size)) throw ConfigError("image_size " + std::to_string(image_size) + " unsupported (32 or 64)");
  if (references <= 0) throw ConfigError("references must be positive; an empty reference set is unusable");
  if (pretrain_identities < 0 || renders_per_identity < 0 || test_images < 0 || reg_images < 0 ||
      off_identity_images < 0 || off_identity_count < 0)
    throw ConfigError("corpus counts must be non-negative");
  if (holdout_per_identity < 0 || holdout_per_identity > renders_per_identity)
    throw ConfigError("holdout_per_identity must lie in [0, renders_per_identity]");
  if (off_identity_images > 0 && off_identity_count <= 0) throw ConfigError("off_identity_count must be positive");
  if (reference_groups.empty()) throw ConfigError("reference_groups must not be empty");
  std::set<std::string> labels;
  for (const auto& [label, w] : reference_groups) {
    if (!is_group_label(label)) throw ConfigError("reference group '" + label + "' is not a group label");
    if (!labels.insert(label).second) throw ConfigError("reference group '" + label + "' listed twice");
    if (!(w > 0)) throw ConfigError("reference group '" + label + "' weight must be positive");
  }
  if (!(eval_hole_fraction > 0 && eval_hole_fraction <= 0.6)) throw ConfigError("eval_hole_fraction outside (0, 0.6]");
  const long ids = static_cast<long>(pretrain_identities) + 1 + reg_images + off_identity_count;
  if (ids > static_cast<long>(kSeparationSeedSpan))
    throw ConfigError("corpus needs " + std::to_string(ids) + " identities; at most " + std::to_string(kSeparationSeedSpan));
}

void to_json(json& j, const CorpusConfig& c) {
  j = {{"image_size", c.image_size},
       {"seed", c.seed},
       {"pretrain_identities", c.pretrain_identities},
       {"renders_per_identity", c.renders_per_identity},
       {"holdout_per_identity", c.holdout_per_identity},
       {"references", c.references},
       {"reference_groups", c.reference_groups},
       {"test_images", c.test_images},
       {"reg_images", c.reg_images},
       {"off_identity_images", c.off_identity_images},
       {"off_identity_count", c.off_identity_count},
       {"eval_mask_kind", to_string(c.eval_mask_kind)},
       {"eval_hole_fraction", c.eval_hole_fraction}};
}

void from_json(const json& j, CorpusConfig& c) {
  constexpr std::string_view w = "corpus";
  cfg::reject_unknown(j,
                      {"image_size", "seed", "pretrain_identities", "renders_per_identity", "holdout_per_identity",
                       "references", "reference_groups", "test_images", "reg_images", "off_identity_images",
                       "off_identity_count", "eval_mask_kind", "eval_hole_fraction"},
                      w);
  cfg::read(j, "image_size", c.image_size, w);
  cfg::read(j, "seed", c.seed, w);
  cfg::read(j, "pretrain_identities", c.pretrain_identities, w);
  cfg::read(j, "renders_per_identity", c.renders_per_identity, w);
  cfg::read(j, "holdout_per_identity", c.holdout_per_identity, w);
  cfg::read(j, "references", c.references, w);
  cfg::read(j, "reference_groups", c.reference_groups, w);
  cfg::read(j, "test_images", c.test_images, w);
  cfg::read(j, "reg_images", c.reg_images, w);
  cfg::read(j, "off_identity_images", c.off_identity_images, w);
  cfg::read(j, "off_identity_count", c.off_identity_count, w);
  if (j.contains("eval_mask_kind")) {
    std::string s;
    cfg::read(j, "eval_mask_kind", s, w);
    const auto k = mask_kind_from_string(s);
    if (!k) throw ConfigError("corpus.eval_mask_kind: expected rectangle or free_form, got '" + s + "'");
    c.eval_mask_kind = *k;
  }
  cfg::read(j, "eval_hole_fraction", c.eval_hole_fraction, w);
}

std::vector<std::pair<std::string, int>> allocate_groups(int total, const std::vector<std::pair<std::string, double>>& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0, [](double a, const auto& p) { return a + p.second; });
  std::vector<std::pair<std::string, int>> out;
  std::vector<std::pair<double, std::size_t>> rema;
  int used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = total * weights[i].second / sum;
    const int n = static_cast<int>(std::floor(exact));
    out.emplace_back(weights[i].first, n);
    rema.emplace_back(exact - n, i);
    used += n;
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; used < total; ++k, ++used) out[rema[k].second].second += 1;
  return out;
}

CorpusPaths corpus_paths(const std::filesystem::path& root) {
  return {root / "pretrain" / "manifest.json", root / "person" / "manifest.json", root / "off_identity" / "manifest.json"};
}

Tensor<float> render_record(const ImageRecord& r, int size) {
  return render_face(generate_identity(r.identity_seed), r.nuisance, size);
}

namespace {

enum Stream : std::uint64_t { kPretrain = 1, kReference = 2, kTest = 3, kReg = 4, kOffIdentity = 5 };

NuisanceSpec draw_nuisance(Rng& rng, std::string_view group) {
  NuisanceSpec n;
  n.yaw = uniform(rng, -0.5, 0.5);
  n.expression = uniform(rng, -1.0, 1.0);
  n.lighting = group == "dim" ? uniform(rng, 0.5, 0.7) : uniform(rng, 0.85, 1.15);
  n.accessory = accessory_from_string(group).value_or(Accessory::None);
  return n;
}

NuisanceSpec draw_wild_nuisance(Rng& rng) {
  NuisanceSpec n;
  n.yaw = uniform(rng, -0.6, 0.6);
  n.expression = uniform(rng, -1.0, 1.0);
  n.lighting = uniform(rng, 0.6, 1.4);
  const double a = uniform(rng, 0, 1);
  n.accessory = a < 0.5 ? Accessory::None : (a < 0.75 ? Accessory::Glasses : Accessory::Sunglasses);
  return n;
}

std::string group_of(const NuisanceSpec& n) {
  if (n.accessory == Accessory::None && n.lighting < 0.75) return "dim";
  return std::string(to_string(n.accessory));
}

std::string numbered(std::string_view stem, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return std::string(stem) + "_" + buf + ".png";
}

class Writer {
 public:
  Writer(std::filesystem::path dir, int size) : dir_(std::move(dir)) { m_.image_size = size; }

  ImageRecord& add(std::string name, int identity, std::uint64_t identity_seed, const NuisanceSpec& n, Split split,
                   std::string group) {
    ImageRecord r;
    r.path = "images/" + name;
    r.identity = identity;
    r.identity_seed = identity_seed;
    r.nuisance = n;
    r.split = split;
    r.group = std::move(group);
    write_image_png(dir_ / r.path, render_record(r, m_.image_size));
    m_.records.push_back(std::move(r));
    return m_.records.back();
  }

  void attach_mask(ImageRecord& r, const MaskSpec& spec) {
    r.mask_path = "masks/" + std::filesystem::path(r.path).filename().string();
    write_mask_png(dir_ / r.mask_path, generate_mask(spec, m_.image_size));
  }

  std::filesystem::path finish() {
    const auto path = dir_ / "manifest.json";
    save_manifest(path, m_);
    return path;
  }

 private:
  std::filesystem::path dir_;
  Manifest m_;
};

}  // namespace

CorpusPaths build_corpus(const CorpusConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  const auto paths = corpus_paths(root);
  for (const auto& p : {paths.pretrain, paths.person, paths.off_identity}) std::filesystem::remove_all(p.parent_path());

  const auto identity_seed = [&](int index) {
    return (cfg.seed * 211 + static_cast<std::uint64_t>(index)) % kSeparationSeedSpan;
  };
  const int target = cfg.pretrain_identities;
  const int reg_base = target + 1;
  const int off_base = reg_base + cfg.reg_images;

  Writer pre(paths.pretrain.parent_path(), cfg.image_size);
  for (int id = 0; id < cfg.pretrain_identities; ++id) {
    for (int k = 0; k < cfg.renders_per_identity; ++k) {
      auto rng = make_rng(cfg.seed, {kPretrain, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(k)});
      const auto n = draw_wild_nuisance(rng);
      const Split split = k >= cfg.renders_per_identity - cfg.holdout_per_identity ? Split::Test : Split::Train;
      pre.add(numbered("id" + std::to_string(id), k), id, identity_seed(id), n, split, group_of(n));
    }
  }
  pre.finish();

  Writer person(paths.person.parent_path(), cfg.image_size);
  int index = 0;
  for (const auto& [label, count] : allocate_groups(cfg.references, cfg.reference_groups)) {
    for (int k = 0; k < count; ++k, ++index) {
      auto rng = make_rng(cfg.seed, {kReference, static_cast<std::uint64_t>(index)});
      person.add(numbered("ref", index), target, identity_seed(target), draw_nuisance(rng, label), Split::Train, label);
    }
  }
  for (int k = 0; k < cfg.test_images; ++k) {
    auto rng = make_rng(cfg.seed, {kTest, static_cast<std::uint64_t>(k)});
    auto& r = person.add(numbered("test", k), target, identity_seed(target), draw_nuisance(rng, "none"), Split::Test, "none");
    person.attach_mask(r, {cfg.eval_mask_kind, cfg.eval_hole_fraction, cfg.seed * 7919 + static_cast<std::uint64_t>(k), true});
  }
  for (int k = 0; k < cfg.reg_images; ++k) {
    auto rng = make_rng(cfg.seed, {kReg, static_cast<std::uint64_t>(k)});
    const auto n = draw_wild_nuisance(rng);
    auto& r = person.add(numbered("reg", k), reg_base + k, identity_seed(reg_base + k), n, Split::Reg, group_of(n));
    person.attach_mask(r, {MaskKind::FreeForm, uniform(rng, 0.2, 0.5), cfg.seed * 104729 + static_cast<std::uint64_t>(k)});
  }
  person.finish();

  Writer off(paths.off_identity.parent_path(), cfg.image_size);
  for (int k = 0; k < cfg.off_identity_images; ++k) {
    const int id = off_base + k % std::max(1, cfg.off_identity_count);
    auto rng = make_rng(cfg.seed, {kOffIdentity, static_cast<std::uint64_t>(k)});
    const auto n = draw_wild_nuisance(rng);
    auto& r = off.add(numbered("off", k), id, identity_seed(id), n, Split::Test, group_of(n));
    off.attach_mask(r, {cfg.eval_mask_kind, cfg.eval_hole_fraction, cfg.seed * 15485863 + static_cast<std::uint64_t>(k), true});
  }
  off.finish();
  return paths;
}

std::vector<LoadedImage> load_records(const std::filesystem::path& manifest_path, const std::vector<const ImageRecord*>& records) {
  const auto dir = manifest_path.parent_path();
  std::vector<LoadedImage> out;
  out.reserve(records.size());
  for (const auto* r : records) {
    LoadedImage li{r, read_image_png(dir / r->path), std::nullopt};
    if (!r->mask_path.empty()) li.mask = read_mask_png(dir / r->mask_path);
    out.push_back(std::move(li));
  }
  return out;
}

}  // namespace anchortune::data
