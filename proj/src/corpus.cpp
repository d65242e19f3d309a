#include "faircop/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "faircop/encoding.hpp"
#include "json.hpp"

namespace faircop {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::uint32_t kMatrixVersion = 1;
constexpr std::size_t kMatrixHeaderBytes = 4 + 4 + 8 + 8;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(bytes[offset + i]) << (8 * i);
  }
  return value;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CorpusError("short write to " + path.string());
}

std::string cell_key(const ImageRecord& record, const std::vector<std::string>& attrs) {
  std::string key;
  for (const auto& a : attrs) {
    key += record.attributes.at(a);
    key.push_back('\x1f');
  }
  return key;
}

}  // namespace

// --- Corpus ------------------------------------------------------------------

Corpus::Corpus(std::vector<ImageRecord> records, std::vector<EmbeddingView> views,
               AttributeSchema schema, std::vector<std::string> sensitive_attributes)
    : records_(std::move(records)),
      views_(std::move(views)),
      schema_(std::move(schema)),
      sensitive_(std::move(sensitive_attributes)) {
  for (const auto& [name, values] : schema_) {
    if (values.empty()) throw CorpusError("attribute '" + name + "' has no values");
  }
  for (const auto& s : sensitive_) {
    if (!schema_.contains(s)) {
      throw CorpusError("sensitive attribute '" + s + "' is not in the schema");
    }
  }
  index_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.id.empty()) throw CorpusError("record " + std::to_string(i) + " has an empty id");
    if (!index_.emplace(r.id, i).second) {
      throw CorpusError("duplicate id '" + r.id + "' at record " + std::to_string(i));
    }
    for (const auto& [name, values] : schema_) {
      auto it = r.attributes.find(name);
      if (it == r.attributes.end()) {
        throw CorpusError("record " + std::to_string(i) + " is missing attribute '" + name + "'");
      }
      if (std::find(values.begin(), values.end(), it->second) == values.end()) {
        throw CorpusError("record " + std::to_string(i) + ": unknown value '" + it->second +
                          "' for attribute '" + name + "'");
      }
    }
    for (const auto& [name, value] : r.attributes) {
      if (!schema_.contains(name)) {
        throw CorpusError("record " + std::to_string(i) + ": attribute '" + name +
                          "' not in schema");
      }
    }
  }
  std::set<std::string> names;
  for (const auto& v : views_) {
    if (!names.insert(v.name).second) throw CorpusError("duplicate view '" + v.name + "'");
    if (v.dim == 0) throw CorpusError("view '" + v.name + "' has dim 0");
    if (v.data.size() % v.dim != 0 || v.rows() != records_.size()) {
      throw CorpusError("view '" + v.name + "' has " + std::to_string(v.data.size() / v.dim) +
                        " rows but corpus has " + std::to_string(records_.size()) + " records");
    }
    for (std::size_t k = 0; k < v.data.size(); ++k) {
      if (!std::isfinite(v.data[k])) {
        throw CorpusError("non-finite value in view '" + v.name + "' at record " +
                          std::to_string(k / v.dim));
      }
    }
  }
}

bool Corpus::has_view(const std::string& name) const {
  return std::any_of(views_.begin(), views_.end(), [&](const auto& v) { return v.name == name; });
}

const EmbeddingView& Corpus::view(const std::string& name) const {
  for (const auto& v : views_) {
    if (v.name == name) return v;
  }
  throw CorpusError("unknown view '" + name + "'");
}

std::optional<std::size_t> Corpus::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Corpus::require_index(const std::string& id) const {
  auto idx = index_of(id);
  if (!idx) throw CorpusError("unknown image id '" + id + "'");
  return *idx;
}

// --- matrix files ------------------------------------------------------------

std::vector<std::uint8_t> encode_matrix(std::span<const float> data, std::size_t rows,
                                        std::size_t dim) {
  if (data.size() != rows * dim) throw CorpusError("matrix payload does not match shape");
  std::vector<std::uint8_t> out{'F', 'C', 'P', 'E'};
  out.reserve(kMatrixHeaderBytes + 4 * data.size());
  put_le<std::uint32_t>(out, kMatrixVersion);
  put_le<std::uint64_t>(out, rows);
  put_le<std::uint64_t>(out, dim);
  for (float f : data) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_le<std::uint32_t>(out, bits);
  }
  return out;
}

EmbeddingView decode_matrix(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (bytes.size() < kMatrixHeaderBytes || std::memcmp(bytes.data(), "FCPE", 4) != 0) {
    throw CorpusError("view '" + name + "': bad matrix magic");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kMatrixVersion) {
    throw CorpusError("view '" + name + "': unsupported matrix version " + std::to_string(version));
  }
  const auto rows = get_le<std::uint64_t>(bytes, 8);
  const auto dim = get_le<std::uint64_t>(bytes, 16);
  if (dim == 0) throw CorpusError("view '" + name + "': dim 0");
  if (rows > (bytes.size() - kMatrixHeaderBytes) / 4 / dim ||
      bytes.size() != kMatrixHeaderBytes + 4 * rows * dim) {
    throw CorpusError("view '" + name + "': payload size does not match header");
  }
  EmbeddingView view{name, static_cast<std::size_t>(dim), {}};
  view.data.resize(rows * dim);
  for (std::size_t k = 0; k < view.data.size(); ++k) {
    const auto bits = get_le<std::uint32_t>(bytes, kMatrixHeaderBytes + 4 * k);
    std::memcpy(&view.data[k], &bits, sizeof bits);
  }
  return view;
}

void write_matrix_file(const fs::path& path, const EmbeddingView& view) {
  write_file(path, encode_matrix(view.data, view.rows(), view.dim));
}

EmbeddingView read_matrix_file(const fs::path& path, const std::string& name) {
  const auto bytes = read_file(path);
  return decode_matrix(bytes, name.empty() ? path.stem().string() : name);
}

// --- manifest ----------------------------------------------------------------

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "faircop-corpus";
  manifest["version"] = 1;
  manifest["schema"] = json::object();
  for (const auto& [name, values] : corpus.schema()) manifest["schema"][name] = values;
  manifest["sensitive_attributes"] = corpus.sensitive_attributes();
  manifest["records"] = json::array();
  for (const auto& r : corpus.records()) {
    json jr{{"id", r.id}, {"attributes", r.attributes}};
    if (r.image_uri) jr["image_uri"] = *r.image_uri;
    manifest["records"].push_back(std::move(jr));
  }
  manifest["views"] = json::array();
  for (const auto& v : corpus.views()) {
    const auto bytes = encode_matrix(v.data, v.rows(), v.dim);
    const std::string file = "view_" + v.name + ".fcpe";
    write_file(dir / file, bytes);
    manifest["views"].push_back(
        {{"name", v.name}, {"dim", v.dim}, {"file", file}, {"sha256", sha256_hex(bytes)}});
  }
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw CorpusError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Corpus load_corpus(const fs::path& manifest_path) {
  const fs::path path =
      fs::is_directory(manifest_path) ? manifest_path / kManifestName : manifest_path;
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open manifest " + path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw CorpusError("malformed manifest " + path.string() + ": " + e.what());
  }
  try {
    AttributeSchema schema;
    for (const auto& [name, values] : manifest.at("schema").items()) {
      schema[name] = values.get<std::vector<std::string>>();
    }
    auto sensitive = manifest.value("sensitive_attributes", std::vector<std::string>{});
    std::vector<ImageRecord> records;
    for (const auto& jr : manifest.at("records")) {
      ImageRecord r;
      r.id = jr.at("id").get<std::string>();
      r.attributes = jr.value("attributes", std::map<std::string, std::string>{});
      if (jr.contains("image_uri") && !jr["image_uri"].is_null()) {
        r.image_uri = jr["image_uri"].get<std::string>();
      }
      records.push_back(std::move(r));
    }
    std::vector<EmbeddingView> views;
    for (const auto& jv : manifest.value("views", json::array())) {
      const auto name = jv.at("name").get<std::string>();
      const auto bytes = read_file(path.parent_path() / jv.at("file").get<std::string>());
      if (jv.contains("sha256") && jv["sha256"].get<std::string>() != sha256_hex(bytes)) {
        throw CorpusError("view '" + name + "': sha256 mismatch");
      }
      auto view = decode_matrix(bytes, name);
      if (view.dim != jv.at("dim").get<std::size_t>()) {
        throw CorpusError("view '" + name + "': dim in manifest does not match file");
      }
      views.push_back(std::move(view));
    }
    return Corpus(std::move(records), std::move(views), std::move(schema), std::move(sensitive));
  } catch (const json::exception& e) {
    throw CorpusError("invalid manifest " + path.string() + ": " + e.what());
  }
}

// --- synthesis ---------------------------------------------------------------

void SynthConfig::validate() const {
  if (n == 0) throw CorpusError("synth: n must be >= 1");
  if (!(prototype_scale > 0)) throw CorpusError("synth: prototype_scale must be positive");
  std::set<std::string> seen;
  for (const auto& a : attributes) {
    if (!seen.insert(a.name).second) throw CorpusError("synth: duplicate attribute " + a.name);
    if (a.values.size() < 2) throw CorpusError("synth: attribute " + a.name + " needs >= 2 classes");
    if (std::set<std::string>(a.values.begin(), a.values.end()).size() != a.values.size()) {
      throw CorpusError("synth: attribute " + a.name + " has duplicate values");
    }
  }
  if (views.empty()) throw CorpusError("synth: at least one view is required");
  seen.clear();
  for (const auto& v : views) {
    if (!seen.insert(v.name).second) throw CorpusError("synth: duplicate view " + v.name);
    if (v.dim == 0) throw CorpusError("synth: view " + v.name + " needs dim >= 1");
    if (!(v.noise_sigma >= 0)) throw CorpusError("synth: view " + v.name + " noise_sigma < 0");
  }
}

AttributeSpec numbered_attribute(std::string name, std::size_t classes, bool sensitive) {
  AttributeSpec spec{std::move(name), {}, sensitive};
  for (std::size_t c = 0; c < classes; ++c) spec.values.push_back(std::to_string(c));
  return spec;
}

std::vector<AttributeSpec> face_like_schema() {
  return {
      {"gender", {"female", "male"}, true},
      {"complexion", {"fair", "wheatish", "dark"}, true},
      {"face_shape", {"oval", "round", "square", "long"}, false},
      {"hair", {"short", "long", "bald"}, false},
      {"beard", {"none", "present"}, false},
      {"eyes", {"small", "medium", "large"}, false},
      {"nose", {"narrow", "broad"}, false},
      {"age", {"18-25", "26-35", "36-50", "50+"}, false},
  };
}

Corpus synthesize_corpus(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t width = std::to_string(cfg.n - 1).size();

  Rng attr_rng(cfg.seed);
  std::vector<ImageRecord> records(cfg.n);
  std::vector<std::vector<std::size_t>> classes(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    std::string num = std::to_string(i);
    records[i].id = "img" + std::string(width - num.size(), '0') + num;
    for (const auto& a : cfg.attributes) {
      std::uniform_int_distribution<std::size_t> pick(0, a.values.size() - 1);
      const std::size_t c = pick(attr_rng);
      classes[i].push_back(c);
      records[i].attributes[a.name] = a.values[c];
    }
  }

  std::vector<EmbeddingView> views;
  for (std::size_t v = 0; v < cfg.views.size(); ++v) {
    const auto& spec = cfg.views[v];
    std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(v + 1), std::uint64_t{0x5EED}};
    Rng rng(seq);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // prototypes[a][c] is a unit vector of length dim
    std::vector<std::vector<std::vector<double>>> prototypes(cfg.attributes.size());
    for (std::size_t a = 0; a < cfg.attributes.size(); ++a) {
      for (std::size_t c = 0; c < cfg.attributes[a].values.size(); ++c) {
        std::vector<double> p(spec.dim);
        double norm = 0;
        do {
          norm = 0;
          for (auto& x : p) {
            x = gauss(rng);
            norm += x * x;
          }
        } while (norm < 1e-24);
        norm = std::sqrt(norm);
        for (auto& x : p) x /= norm;
        prototypes[a].push_back(std::move(p));
      }
    }

    EmbeddingView view{spec.name, spec.dim, std::vector<float>(cfg.n * spec.dim)};
    std::vector<double> row(spec.dim);
    for (std::size_t i = 0; i < cfg.n; ++i) {
      std::fill(row.begin(), row.end(), 0.0);
      for (std::size_t a = 0; a < cfg.attributes.size(); ++a) {
        const auto& p = prototypes[a][classes[i][a]];
        for (std::size_t d = 0; d < spec.dim; ++d) row[d] += cfg.prototype_scale * p[d];
      }
      if (spec.noise_sigma > 0) {
        for (auto& x : row) x += spec.noise_sigma * gauss(rng);
      }
      for (std::size_t d = 0; d < spec.dim; ++d) {
        view.data[i * spec.dim + d] = static_cast<float>(row[d]);
      }
    }
    views.push_back(std::move(view));
  }

  AttributeSchema schema;
  std::vector<std::string> sensitive;
  for (const auto& a : cfg.attributes) {
    schema[a.name] = a.values;
    if (a.sensitive) sensitive.push_back(a.name);
  }
  return Corpus(std::move(records), std::move(views), std::move(schema), std::move(sensitive));
}

// --- sampling ----------------------------------------------------------------

void validate_filter(const Corpus& corpus, const AttributeFilter& filter) {
  for (const auto& [name, values] : filter) {
    auto it = corpus.schema().find(name);
    if (it == corpus.schema().end()) {
      throw UnknownAttributeError(name, "unknown attribute '" + name + "'");
    }
    for (const auto& v : values) {
      if (std::find(it->second.begin(), it->second.end(), v) == it->second.end()) {
        throw UnknownAttributeError(name, "unknown value '" + v + "' for attribute '" + name + "'");
      }
    }
  }
}

bool matches(const ImageRecord& record, const AttributeFilter& filter) {
  for (const auto& [name, values] : filter) {
    auto it = record.attributes.find(name);
    if (it == record.attributes.end() || !values.contains(it->second)) return false;
  }
  return true;
}

std::vector<std::size_t> matching_indices(const Corpus& corpus, const AttributeFilter& filter) {
  validate_filter(corpus, filter);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (matches(corpus.record(i), filter)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> stratified_sample_indices(const Corpus& corpus,
                                                   std::span<const std::size_t> candidates,
                                                   std::size_t count, Rng& rng) {
  if (count == 0 || candidates.empty()) return {};

  // Group by sensitive cell, keeping first-seen order so the result only
  // depends on the candidate order and the rng.
  std::map<std::string, std::size_t> cell_of_key;
  std::vector<std::vector<std::size_t>> cells;
  std::set<std::size_t> seen;
  for (std::size_t idx : candidates) {
    if (!seen.insert(idx).second) continue;
    const auto key = cell_key(corpus.record(idx), corpus.sensitive_attributes());
    auto [it, inserted] = cell_of_key.emplace(key, cells.size());
    if (inserted) cells.emplace_back();
    cells[it->second].push_back(idx);
  }
  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (auto& cell : cells) std::shuffle(cell.begin(), cell.end(), rng);

  std::vector<std::size_t> out;
  out.reserve(std::min(count, seen.size()));
  for (std::size_t round = 0; out.size() < count; ++round) {
    bool any = false;
    for (std::size_t c : order) {
      if (round < cells[c].size()) {
        any = true;
        out.push_back(cells[c][round]);
        if (out.size() == count) break;
      }
    }
    if (!any) break;
  }
  return out;
}

std::vector<std::string> stratified_sample(const Corpus& corpus, const AttributeFilter& filter,
                                           std::size_t count, Rng& rng) {
  const auto candidates = matching_indices(corpus, filter);
  std::vector<std::string> ids;
  for (std::size_t idx : stratified_sample_indices(corpus, candidates, count, rng)) {
    ids.push_back(corpus.id(idx));
  }
  return ids;
}

}  // namespace faircop
