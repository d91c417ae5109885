#include "recbase/data_pipeline.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "recbase/error.hpp"
#include "recbase/rng.hpp"

namespace recbase::data {
namespace {

using json = nlohmann::ordered_json;

constexpr char kEmbeddingMagic[4] = {'C', 'F', 'E', '1'};

Error data_error(const std::string& msg) { return Error(ErrorKind::kData, msg); }

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_le(std::istream& in, T& v) {
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) return false;
  v = to_little(v);
  return true;
}

std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw data_error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw data_error("cannot write " + path.string());
  return out;
}

std::string json_scalar_to_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

const std::string* ItemRecord::field(const std::string& name) const {
  for (const auto& [k, v] : fields) {
    if (k == name) return &v;
  }
  return nullptr;
}

// --- Catalog -----------------------------------------------------------------

Catalog::Catalog(std::vector<ItemRecord> items) {
  for (auto& item : items) add(std::move(item));
}

void Catalog::add(ItemRecord item) {
  if (index_.contains(item.item_id)) throw data_error("duplicate item_id '" + item.item_id + "'");
  index_.emplace(item.item_id, items_.size());
  items_.push_back(std::move(item));
}

std::optional<size_t> Catalog::find(const std::string& item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Catalog::domains() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& item : items_) {
    if (seen.insert(item.domain_tag).second) out.push_back(item.domain_tag);
  }
  return out;
}

Catalog Catalog::filter_domains(std::span<const std::string> tags, bool exclude) const {
  Catalog out;
  for (const auto& item : items_) {
    const bool listed = std::find(tags.begin(), tags.end(), item.domain_tag) != tags.end();
    if (listed != exclude) out.add(item);
  }
  return out;
}

// --- EmbeddingMatrix -----------------------------------------------------------

EmbeddingMatrix::EmbeddingMatrix(size_t dim, std::vector<std::string> ids, std::vector<float> values)
    : dim_(dim), ids_(std::move(ids)), values_(std::move(values)) {
  if (dim_ == 0) throw data_error("embedding dimension must be positive");
  if (values_.size() != ids_.size() * dim_) {
    throw data_error("embedding payload has " + std::to_string(values_.size()) +
                     " values, expected " + std::to_string(ids_.size() * dim_));
  }
  for (size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw data_error("non-finite embedding value at row " + std::to_string(i / dim_));
    }
  }
  for (size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw data_error("duplicate embedding id '" + ids_[i] + "'");
  }
}

std::optional<size_t> EmbeddingMatrix::find(const std::string& item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const std::string> item_ids) const {
  std::vector<float> values;
  values.reserve(item_ids.size() * dim_);
  for (const auto& id : item_ids) {
    auto r = find(id);
    if (!r) throw data_error("no embedding for item '" + id + "'");
    auto src = row(*r);
    values.insert(values.end(), src.begin(), src.end());
  }
  return EmbeddingMatrix(dim_, {item_ids.begin(), item_ids.end()}, std::move(values));
}

void EmbeddingMatrix::check_covers(const Catalog& catalog) const {
  for (const auto& item : catalog.items()) {
    if (!find(item.item_id)) throw data_error("catalog item '" + item.item_id + "' has no embedding");
  }
}

// --- formatting ------------------------------------------------------------------

std::string make_item_template(const std::string& category, std::span<const std::string> field_names) {
  std::string out = "Describe a " + category + ":\n{\n";
  for (size_t i = 0; i < field_names.size(); ++i) {
    out += "\"" + field_names[i] + "\": \"{" + field_names[i] + "}\"";
    out += (i + 1 < field_names.size()) ? ",\n" : "\n";
  }
  return out + "}";
}

std::string make_item_template(const std::string& category, const ItemRecord& record) {
  std::vector<std::string> names;
  names.reserve(record.fields.size());
  for (const auto& [k, v] : record.fields) names.push_back(k);
  return make_item_template(category, names);
}

std::string format_item_text(const ItemRecord& record, const std::string& templ) {
  std::string out;
  out.reserve(templ.size() * 2);
  size_t i = 0;
  while (i < templ.size()) {
    if (templ[i] == '{' && i + 1 < templ.size() && is_ident_start(templ[i + 1])) {
      size_t j = i + 1;
      while (j < templ.size() && is_ident_char(templ[j])) ++j;
      if (j < templ.size() && templ[j] == '}') {
        const std::string name = templ.substr(i + 1, j - i - 1);
        const std::string* value = record.field(name);
        if (!value) {
          throw data_error("item '" + record.item_id + "': template field '" + name + "' is missing");
        }
        out += *value;
        i = j + 1;
        continue;
      }
    }
    out += templ[i++];
  }
  return out;
}

// --- embeddings file ----------------------------------------------------------------

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& matrix) {
  auto out = open_output(path, std::ios::binary);
  out.write(kEmbeddingMagic, 4);
  write_le<uint64_t>(out, matrix.rows());
  write_le<uint64_t>(out, matrix.dim());
  for (float v : matrix.values()) write_le<float>(out, v);
  if (!out) throw data_error("failed writing " + path.string());
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path, std::vector<std::string> ids) {
  auto in = open_input(path, std::ios::binary);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kEmbeddingMagic, 4) != 0) {
    throw data_error(path.string() + ": bad magic, expected CFE1");
  }
  uint64_t n = 0, d = 0;
  if (!read_le(in, n) || !read_le(in, d)) throw data_error(path.string() + ": truncated header");
  if (d == 0) throw data_error(path.string() + ": invalid dimension D=0");
  if (ids.empty()) {
    ids.reserve(n);
    for (uint64_t i = 0; i < n; ++i) ids.push_back(std::to_string(i));
  } else if (ids.size() != n) {
    throw data_error(path.string() + ": file holds " + std::to_string(n) + " rows but " +
                     std::to_string(ids.size()) + " ids were supplied");
  }
  std::vector<float> values(n * d);
  for (uint64_t i = 0; i < n * d; ++i) {
    if (!read_le(in, values[i])) {
      throw data_error(path.string() + ": truncated file, header declares N=" + std::to_string(n) +
                       " but only " + std::to_string(i / d) + " complete rows present");
    }
  }
  return EmbeddingMatrix(d, std::move(ids), std::move(values));
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path, const Catalog& catalog) {
  std::vector<std::string> ids;
  ids.reserve(catalog.size());
  for (const auto& item : catalog.items()) ids.push_back(item.item_id);
  return load_embeddings(path, std::move(ids));
}

// --- line-delimited records ---------------------------------------------------------

Catalog load_catalog(const std::filesystem::path& path) {
  auto in = open_input(path);
  Catalog catalog;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw data_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("item_id")) {
      throw data_error(path.string() + ":" + std::to_string(lineno) + ": record lacks item_id");
    }
    ItemRecord rec;
    for (const auto& [key, value] : obj.items()) {
      if (key == "item_id") {
        rec.item_id = json_scalar_to_string(value);
      } else if (key == "domain") {
        rec.domain_tag = json_scalar_to_string(value);
      } else if (key == "formatted_text") {
        rec.formatted_text = json_scalar_to_string(value);
      } else {
        rec.fields.emplace_back(key, json_scalar_to_string(value));
      }
    }
    catalog.add(std::move(rec));
  }
  return catalog;
}

void write_catalog(const std::filesystem::path& path, const Catalog& catalog) {
  auto out = open_output(path);
  for (const auto& item : catalog.items()) {
    json obj;
    obj["item_id"] = item.item_id;
    obj["domain"] = item.domain_tag;
    for (const auto& [k, v] : item.fields) obj[k] = v;
    if (!item.formatted_text.empty()) obj["formatted_text"] = item.formatted_text;
    out << obj.dump() << '\n';
  }
}

std::vector<RawInteractions> load_interactions(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<RawInteractions> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      auto obj = json::parse(line);
      RawInteractions raw;
      raw.user_id = json_scalar_to_string(obj.at("user_id"));
      for (const auto& v : obj.at("items")) raw.items.push_back(json_scalar_to_string(v));
      if (obj.contains("timestamps")) {
        raw.timestamps = obj["timestamps"].get<std::vector<int64_t>>();
        if (raw.timestamps.size() != raw.items.size()) {
          throw data_error(where + ": timestamps and items differ in length");
        }
      }
      out.push_back(std::move(raw));
    } catch (const json::exception& e) {
      throw data_error(where + ": " + e.what());
    }
  }
  return out;
}

void write_interactions(const std::filesystem::path& path, std::span<const InteractionSequence> sequences) {
  auto out = open_output(path);
  for (const auto& seq : sequences) {
    json obj;
    obj["user_id"] = seq.user_id;
    obj["items"] = seq.items;
    out << obj.dump() << '\n';
  }
}

// --- synthesis and preprocessing -------------------------------------------------------

std::string domain_label(size_t index) {
  std::string out;
  do {
    out.insert(out.begin(), static_cast<char>('A' + index % 26));
    index /= 26;
  } while (index-- > 0);
  return out;
}

SynthResult synth_embeddings(size_t n_domains, size_t items_per_domain, size_t dim, double spread,
                             uint64_t seed, double mean_scale) {
  if (n_domains == 0 || items_per_domain == 0 || dim == 0) {
    throw Error(ErrorKind::kConfig, "synth_embeddings: counts must be positive");
  }
  if (!(spread > 0.0)) throw Error(ErrorKind::kConfig, "synth_embeddings: spread must be positive");

  Rng mean_rng(seed, "synth/means");
  SynthResult out;
  out.domain_means.resize(n_domains, std::vector<double>(dim));
  for (auto& mean : out.domain_means) {
    for (auto& v : mean) v = mean_scale * mean_rng.normal();
  }

  std::vector<std::string> ids;
  std::vector<float> values;
  ids.reserve(n_domains * items_per_domain);
  values.reserve(n_domains * items_per_domain * dim);
  for (size_t d = 0; d < n_domains; ++d) {
    Rng rng(seed, "synth/items", d);
    const std::string tag = domain_label(d);
    for (size_t i = 0; i < items_per_domain; ++i) {
      ItemRecord rec;
      rec.item_id = tag + "-" + std::to_string(i);
      rec.domain_tag = tag;
      rec.fields = {{"title", "Item " + std::to_string(i) + " of domain " + tag},
                    {"category", "domain " + tag}};
      rec.formatted_text = format_item_text(rec, make_item_template("item", rec));
      for (size_t k = 0; k < dim; ++k) {
        values.push_back(static_cast<float>(out.domain_means[d][k] + spread * rng.normal()));
      }
      ids.push_back(rec.item_id);
      out.catalog.add(std::move(rec));
    }
  }
  out.embeddings = EmbeddingMatrix(dim, std::move(ids), std::move(values));
  return out;
}

std::vector<InteractionSequence> build_sequences(std::span<const RawInteractions> raw,
                                                 const Catalog& catalog, size_t min_history,
                                                 size_t max_history) {
  if (max_history < min_history) {
    throw Error(ErrorKind::kConfig, "build_sequences: max_history < min_history");
  }
  std::vector<InteractionSequence> out;
  for (const auto& user : raw) {
    std::vector<size_t> order(user.items.size());
    std::iota(order.begin(), order.end(), size_t{0});
    if (!user.timestamps.empty()) {
      std::stable_sort(order.begin(), order.end(),
                       [&](size_t a, size_t b) { return user.timestamps[a] < user.timestamps[b]; });
    }
    for (const auto& id : user.items) {
      if (!catalog.contains(id)) {
        throw data_error("user '" + user.user_id + "' references unknown item_id '" + id + "'");
      }
    }
    if (order.size() < min_history) continue;
    const size_t start = order.size() > max_history ? order.size() - max_history : 0;

    InteractionSequence seq;
    seq.user_id = user.user_id;
    seq.items.reserve(order.size() - start);
    for (size_t i = start; i < order.size(); ++i) seq.items.push_back(user.items[order[i]]);
    for (const auto& id : seq.items) {
      const auto& tag = catalog.at(*catalog.find(id)).domain_tag;
      if (seq.domain_tag.empty()) {
        seq.domain_tag = tag;
      } else if (seq.domain_tag != tag) {
        seq.domain_tag = "*";
        break;
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

CorpusSplit split_by_user(std::span<const InteractionSequence> sequences, double train_fraction,
                          double validation_fraction, uint64_t seed) {
  if (train_fraction < 0 || validation_fraction < 0 || train_fraction + validation_fraction > 1.0) {
    throw Error(ErrorKind::kConfig, "split_by_user: fractions must be non-negative and sum to <= 1");
  }
  std::vector<size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed, "split/users");
  rng.shuffle(order.begin(), order.end());

  const auto n = static_cast<double>(order.size());
  const auto n_train = static_cast<size_t>(std::floor(n * train_fraction));
  const auto n_val = static_cast<size_t>(std::floor(n * validation_fraction));
  std::sort(order.begin(), order.begin() + n_train);
  std::sort(order.begin() + n_train, order.begin() + n_train + n_val);
  std::sort(order.begin() + n_train + n_val, order.end());

  CorpusSplit split;
  for (size_t i = 0; i < order.size(); ++i) {
    auto& part = i < n_train ? split.train : (i < n_train + n_val ? split.validation : split.test);
    part.push_back(sequences[order[i]]);
  }
  split.policy = "user-disjoint random split train=" + std::to_string(train_fraction) +
                 " validation=" + std::to_string(validation_fraction) + " seed=" + std::to_string(seed);
  return split;
}

}  // namespace recbase::data
