#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "recbase/data_pipeline.hpp"
#include "recbase/quantizer.hpp"

namespace recbase::ar {

/// Token layout: specials first, then one contiguous block of K ids per level.
/// Level-d code c maps to kSpecials + d * K + c.
struct TokenVocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kSep = 2;
  static constexpr size_t kSpecials = 3;

  size_t levels = 0;         // m
  size_t codebook_size = 0;  // K
  bool use_sep = true;       // item boundary token after every item

  size_t size() const { return kSpecials + levels * codebook_size; }
  int token(size_t level, uint32_t code) const;
  size_t level_begin(size_t level) const { return kSpecials + level * codebook_size; }
  size_t level_end(size_t level) const { return level_begin(level) + codebook_size; }
  bool is_code(int token) const;
  /// (level, code) of a code token; throws for specials.
  std::pair<size_t, uint32_t> code_of(int token) const;

  /// Tokens per item including the separator.
  size_t period() const { return levels + (use_sep ? 1 : 0); }
  /// Expected level of the token at stream position `pos`, or -1 for BOS/SEP slots.
  int level_at(size_t pos) const;

  bool operator==(const TokenVocab&) const = default;
};

nlohmann::json to_json(const TokenVocab& v);
TokenVocab vocab_from_json(const nlohmann::json& j);

using TokenStream = std::vector<int>;
using IdTable = std::unordered_map<std::string, tok::ConceptId>;

/// BOS, then each item's m level tokens (followed by SEP when enabled).
TokenStream tokenize_items(std::span<const std::string> items, const IdTable& ids, const TokenVocab& vocab);
TokenStream tokenize_sequence(const data::InteractionSequence& seq, const IdTable& ids, const TokenVocab& vocab);
/// Inverse of tokenize_*: recovers the concept ids in order.
std::vector<tok::ConceptId> parse_stream(const TokenStream& stream, const TokenVocab& vocab);

/// Token streams plus the vocabulary they were produced with.
struct TokenCorpus {
  TokenVocab vocab;
  std::vector<TokenStream> streams;
};

/// Line-delimited `{"item_id": ..., "ids": [c_1, ..., c_m]}` records.
void write_id_table(const std::filesystem::path& path, std::span<const std::string> item_ids,
                    std::span<const tok::ConceptId> ids);
IdTable load_id_table(const std::filesystem::path& path, size_t* levels = nullptr);

}  // namespace recbase::ar
