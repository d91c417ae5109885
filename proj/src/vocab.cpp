#include "recbase/vocab.hpp"

#include <fstream>

#include "recbase/error.hpp"

namespace recbase::ar {

int TokenVocab::token(size_t level, uint32_t code) const {
  if (level >= levels || code >= codebook_size) {
    throw Error(ErrorKind::kMismatch, "code " + std::to_string(code) + " at level " + std::to_string(level) +
                                          " outside vocabulary (m=" + std::to_string(levels) +
                                          ", K=" + std::to_string(codebook_size) + ")");
  }
  return static_cast<int>(level_begin(level) + code);
}

bool TokenVocab::is_code(int token) const {
  return token >= static_cast<int>(kSpecials) && static_cast<size_t>(token) < size();
}

std::pair<size_t, uint32_t> TokenVocab::code_of(int token) const {
  if (!is_code(token)) throw Error(ErrorKind::kData, "token " + std::to_string(token) + " is not a concept-id token");
  const size_t offset = static_cast<size_t>(token) - kSpecials;
  return {offset / codebook_size, static_cast<uint32_t>(offset % codebook_size)};
}

int TokenVocab::level_at(size_t pos) const {
  if (pos == 0) return -1;
  const size_t r = (pos - 1) % period();
  return r < levels ? static_cast<int>(r) : -1;
}

nlohmann::json to_json(const TokenVocab& v) {
  return {{"levels", v.levels}, {"codebook_size", v.codebook_size}, {"use_sep", v.use_sep},
          {"specials", TokenVocab::kSpecials}, {"size", v.size()}};
}

TokenVocab vocab_from_json(const nlohmann::json& j) {
  TokenVocab v;
  v.levels = j.at("levels").get<size_t>();
  v.codebook_size = j.at("codebook_size").get<size_t>();
  v.use_sep = j.value("use_sep", true);
  return v;
}

TokenStream tokenize_items(std::span<const std::string> items, const IdTable& ids, const TokenVocab& vocab) {
  TokenStream out;
  out.reserve(1 + items.size() * vocab.period());
  out.push_back(TokenVocab::kBos);
  for (const auto& item : items) {
    auto it = ids.find(item);
    if (it == ids.end()) throw Error(ErrorKind::kData, "item '" + item + "' has no concept id");
    const auto& id = it->second;
    if (id.size() != vocab.levels) {
      throw Error(ErrorKind::kMismatch, "item '" + item + "' has " + std::to_string(id.size()) +
                                            " levels, vocabulary expects " + std::to_string(vocab.levels));
    }
    for (size_t d = 0; d < vocab.levels; ++d) out.push_back(vocab.token(d, id[d]));
    if (vocab.use_sep) out.push_back(TokenVocab::kSep);
  }
  return out;
}

TokenStream tokenize_sequence(const data::InteractionSequence& seq, const IdTable& ids, const TokenVocab& vocab) {
  return tokenize_items(seq.items, ids, vocab);
}

std::vector<tok::ConceptId> parse_stream(const TokenStream& stream, const TokenVocab& vocab) {
  if (stream.empty() || stream[0] != TokenVocab::kBos) throw Error(ErrorKind::kData, "token stream must start with BOS");
  if ((stream.size() - 1) % vocab.period() != 0) {
    throw Error(ErrorKind::kData, "token stream length " + std::to_string(stream.size()) + " is not 1 + n*" +
                                      std::to_string(vocab.period()));
  }
  std::vector<tok::ConceptId> out;
  for (size_t pos = 1; pos < stream.size(); pos += vocab.period()) {
    tok::ConceptId id;
    for (size_t d = 0; d < vocab.levels; ++d) {
      const auto [level, code] = vocab.code_of(stream[pos + d]);
      if (level != d) throw Error(ErrorKind::kData, "token out of level order at position " + std::to_string(pos + d));
      id.codes.push_back(code);
    }
    if (vocab.use_sep && stream[pos + vocab.levels] != TokenVocab::kSep) {
      throw Error(ErrorKind::kData, "missing separator at position " + std::to_string(pos + vocab.levels));
    }
    out.push_back(std::move(id));
  }
  return out;
}

void write_id_table(const std::filesystem::path& path, std::span<const std::string> item_ids,
                    std::span<const tok::ConceptId> ids) {
  if (item_ids.size() != ids.size()) throw Error(ErrorKind::kData, "id table: item and id counts differ");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kData, "cannot write " + path.string());
  for (size_t i = 0; i < ids.size(); ++i) {
    nlohmann::ordered_json j;
    j["item_id"] = item_ids[i];
    j["ids"] = ids[i].codes;
    out << j.dump() << '\n';
  }
}

IdTable load_id_table(const std::filesystem::path& path, size_t* levels) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "cannot open id table " + path.string());
  IdTable table;
  std::string line;
  size_t m = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      tok::ConceptId id{j.at("ids").get<std::vector<uint32_t>>()};
      if (m == 0) m = id.size();
      if (id.size() != m) throw Error(ErrorKind::kData, "id table rows differ in length");
      table[j.at("item_id").get<std::string>()] = std::move(id);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kData, path.string() + ": " + e.what());
    }
  }
  if (levels) *levels = m;
  return table;
}

}  // namespace recbase::ar
