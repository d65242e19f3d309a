#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace faircop {

using Rng = std::mt19937_64;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a filter names an attribute (or value) the schema does not know.
class UnknownAttributeError : public CorpusError {
 public:
  UnknownAttributeError(std::string attribute, const std::string& what)
      : CorpusError(what), attribute_(std::move(attribute)) {}
  const std::string& attribute() const { return attribute_; }

 private:
  std::string attribute_;
};

struct ImageRecord {
  std::string id;
  std::map<std::string, std::string> attributes;
  std::optional<std::string> image_uri;

  bool operator==(const ImageRecord&) const = default;
};

// One named embedding of every record, stored row-major as 32-bit floats.
struct EmbeddingView {
  std::string name;
  std::size_t dim = 0;
  std::vector<float> data;

  std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const float> row(std::size_t i) const {
    return {data.data() + i * dim, dim};
  }
};

// attribute name -> ordered list of allowed categorical values
using AttributeSchema = std::map<std::string, std::vector<std::string>>;

// attribute name -> accepted values; an empty filter accepts everything
using AttributeFilter = std::map<std::string, std::set<std::string>>;

/// Image records plus their embedding views. Immutable once constructed;
/// the constructor enforces every structural invariant.
class Corpus {
 public:
  Corpus(std::vector<ImageRecord> records, std::vector<EmbeddingView> views,
         AttributeSchema schema, std::vector<std::string> sensitive_attributes);

  std::size_t size() const { return records_.size(); }
  const std::vector<ImageRecord>& records() const { return records_; }
  const ImageRecord& record(std::size_t i) const { return records_.at(i); }
  const std::string& id(std::size_t i) const { return records_.at(i).id; }

  const std::vector<EmbeddingView>& views() const { return views_; }
  bool has_view(const std::string& name) const;
  const EmbeddingView& view(const std::string& name) const;

  const AttributeSchema& schema() const { return schema_; }
  const std::vector<std::string>& sensitive_attributes() const { return sensitive_; }

  std::optional<std::size_t> index_of(const std::string& id) const;
  std::size_t require_index(const std::string& id) const;

 private:
  std::vector<ImageRecord> records_;
  std::vector<EmbeddingView> views_;
  AttributeSchema schema_;
  std::vector<std::string> sensitive_;
  std::unordered_map<std::string, std::size_t> index_;
};

// --- persistence -----------------------------------------------------------

inline constexpr char kManifestName[] = "manifest.json";

/// Accepts either the manifest file itself or the directory holding it.
Corpus load_corpus(const std::filesystem::path& manifest_path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

/// Raw "FCPE" matrix file: magic, u32 version, u64 rows, u64 dim, f32 LE payload.
std::vector<std::uint8_t> encode_matrix(std::span<const float> data, std::size_t rows,
                                        std::size_t dim);
EmbeddingView decode_matrix(std::span<const std::uint8_t> bytes, const std::string& name);
void write_matrix_file(const std::filesystem::path& path, const EmbeddingView& view);
EmbeddingView read_matrix_file(const std::filesystem::path& path, const std::string& name = "");

// --- synthesis -------------------------------------------------------------

struct AttributeSpec {
  std::string name;
  std::vector<std::string> values;
  bool sensitive = false;
};

struct ViewSpec {
  std::string name;
  std::size_t dim = 0;
  double noise_sigma = 0.0;
};

struct SynthConfig {
  std::size_t n = 0;
  std::vector<AttributeSpec> attributes;
  std::vector<ViewSpec> views;
  std::uint64_t seed = 0;
  double prototype_scale = 1.0;

  void validate() const;
};

/// Builds an attribute with values "0".."classes-1".
AttributeSpec numbered_attribute(std::string name, std::size_t classes, bool sensitive = false);

/// Eight face-like attributes with two sensitive ones (gender, complexion).
std::vector<AttributeSpec> face_like_schema();

/// Each view gets one random unit prototype per (attribute, class); a record's
/// embedding is prototype_scale times the sum of its class prototypes plus
/// isotropic Gaussian noise.
Corpus synthesize_corpus(const SynthConfig& cfg);

// --- sampling --------------------------------------------------------------

void validate_filter(const Corpus& corpus, const AttributeFilter& filter);
bool matches(const ImageRecord& record, const AttributeFilter& filter);
std::vector<std::size_t> matching_indices(const Corpus& corpus, const AttributeFilter& filter);

/// Draws up to `count` distinct candidates, round-robin over the cells of the
/// sensitive-attribute cross product. Cell order and within-cell order are
/// shuffled by `rng`; exhausted cells are skipped.
std::vector<std::size_t> stratified_sample_indices(const Corpus& corpus,
                                                   std::span<const std::size_t> candidates,
                                                   std::size_t count, Rng& rng);

std::vector<std::string> stratified_sample(const Corpus& corpus, const AttributeFilter& filter,
                                           std::size_t count, Rng& rng);

}  // namespace faircop
