#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace recbase::data {

/// One catalog entry. `fields` keeps the attribute order of the source record.
struct ItemRecord {
  std::string item_id;
  std::string domain_tag;
  std::vector<std::pair<std::string, std::string>> fields;
  std::string formatted_text;

  const std::string* field(const std::string& name) const;
};

class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<ItemRecord> items);

  void add(ItemRecord item);
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const std::vector<ItemRecord>& items() const { return items_; }
  const ItemRecord& at(size_t i) const { return items_.at(i); }
  std::optional<size_t> find(const std::string& item_id) const;
  bool contains(const std::string& item_id) const { return find(item_id).has_value(); }

  /// Distinct domain tags in first-seen order.
  std::vector<std::string> domains() const;
  /// Items whose domain is (or is not, when `exclude`) in `tags`.
  Catalog filter_domains(std::span<const std::string> tags, bool exclude = false) const;

 private:
  std::vector<ItemRecord> items_;
  std::unordered_map<std::string, size_t> index_;
};

/// N x D row-major float matrix with an item_id -> row index.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(size_t dim, std::vector<std::string> ids, std::vector<float> values);

  size_t rows() const { return ids_.size(); }
  size_t dim() const { return dim_; }
  std::span<const float> row(size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::optional<size_t> find(const std::string& item_id) const;
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<float>& values() const { return values_; }

  /// Rows for `item_ids`, in that order. Unknown ids raise a data error.
  EmbeddingMatrix select(std::span<const std::string> item_ids) const;
  /// Throws unless every catalog item has exactly one row.
  void check_covers(const Catalog& catalog) const;

 private:
  size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> values_;
  std::unordered_map<std::string, size_t> index_;
};

struct InteractionSequence {
  std::string user_id;
  std::vector<std::string> items;
  std::string domain_tag;  // empty when unknown
};

/// Raw interaction log entry before preprocessing. Timestamps are optional;
/// when absent the given order is chronological.
struct RawInteractions {
  std::string user_id;
  std::vector<std::string> items;
  std::vector<int64_t> timestamps;
};

struct CorpusSplit {
  std::vector<InteractionSequence> train;
  std::vector<InteractionSequence> validation;
  std::vector<InteractionSequence> test;
  std::string policy;
};

// --- formatting -------------------------------------------------------------

/// Builds the item description template: a `Describe a <category>:` preamble
/// followed by a brace block with one `"name": "{name}"` line per field.
std::string make_item_template(const std::string& category,
                               std::span<const std::string> field_names);

/// Template for a record's own fields, in record order.
std::string make_item_template(const std::string& category, const ItemRecord& record);

/// Substitutes `{field}` placeholders from record.fields. Braces that do not
/// enclose an identifier are copied literally. Missing fields raise a data
/// error naming the field.
std::string format_item_text(const ItemRecord& record, const std::string& templ);

// --- embeddings file ----------------------------------------------------------

/// Binary layout: "CFE1", u64 N, u64 D, N*D float32, all little-endian.
/// Row ids are not stored; the caller supplies them (typically catalog order).
void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& matrix);
EmbeddingMatrix load_embeddings(const std::filesystem::path& path,
                                std::vector<std::string> ids = {});
EmbeddingMatrix load_embeddings(const std::filesystem::path& path, const Catalog& catalog);

// --- line-delimited records ---------------------------------------------------

Catalog load_catalog(const std::filesystem::path& path);
void write_catalog(const std::filesystem::path& path, const Catalog& catalog);
std::vector<RawInteractions> load_interactions(const std::filesystem::path& path);
void write_interactions(const std::filesystem::path& path,
                        std::span<const InteractionSequence> sequences);

// --- synthesis and preprocessing ----------------------------------------------

struct SynthResult {
  Catalog catalog;
  EmbeddingMatrix embeddings;
  std::vector<std::vector<double>> domain_means;
};

/// Draws each domain as an isotropic Gaussian cluster N(mean_d, spread^2 I).
/// Domain means are N(0, mean_scale^2 I). Domains are tagged "A", "B", ...
SynthResult synth_embeddings(size_t n_domains, size_t items_per_domain, size_t dim,
                             double spread, uint64_t seed, double mean_scale = 1.0);

inline constexpr size_t kDefaultMinHistory = 15;
inline constexpr size_t kDefaultMaxHistory = 2500;

/// Drops users with fewer than min_history interactions and keeps the most
/// recent max_history items of longer histories.
std::vector<InteractionSequence> build_sequences(std::span<const RawInteractions> raw,
                                                 const Catalog& catalog,
                                                 size_t min_history = kDefaultMinHistory,
                                                 size_t max_history = kDefaultMaxHistory);

/// Deterministic user-disjoint split by fractions (test gets the remainder).
CorpusSplit split_by_user(std::span<const InteractionSequence> sequences, double train_fraction,
                          double validation_fraction, uint64_t seed);

std::string domain_label(size_t index);

}  // namespace recbase::data
