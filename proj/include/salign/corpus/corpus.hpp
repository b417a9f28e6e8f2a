#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "salign/align/alignment.hpp"
#include "salign/types.hpp"

namespace salign::corpus {

/// Token strings <-> ids. Ids 0/1/2 are always <bos>/<eos>/<pad>.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);

  TokenId add(const std::string& token);
  std::optional<TokenId> find(std::string_view token) const;
  /// Throws ValidationError for unknown tokens.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  TokenSeq encode(std::string_view line) const;
  std::string decode(const TokenSeq& ids) const;

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

enum class Task { Copy, Reverse, DictPermute, DictInsert, Polarity };

std::string_view to_string(Task t) noexcept;
std::optional<Task> parse_task(std::string_view name) noexcept;
std::string task_names();

struct SentencePair {
  TokenSeq src;
  TokenSeq tgt;
  align::GoldAlignment gold;
  bool operator==(const SentencePair&) const = default;
};

/// Translation tables of the dict tasks, by source content index. Empty for
/// copy and reverse.
struct Lexicon {
  std::vector<TokenId> dictionary;
  std::vector<TokenId> antonyms;
  std::vector<TokenId> function_tokens;
  std::optional<TokenId> neg_token;

  bool operator==(const Lexicon&) const = default;
  /// Source token translated by `tgt`, if any (dictionary entries only).
  std::optional<TokenId> invert(TokenId tgt) const;
};

struct GeneratorSettings {
  /// Per side, reserved tokens included; content tokens = vocab_size - 3.
  std::size_t vocab_size = 103;
  std::size_t n_pairs = 11000;
  std::size_t min_len = 6;
  std::size_t max_len = 12;
  std::size_t block = 2;
  double insert_rate = 0.1;
  double neg_rate = 0.2;
  std::uint64_t seed = 1;
  bool operator==(const GeneratorSettings&) const = default;
};

inline constexpr std::size_t kMaxSentenceLength = 256;
inline constexpr std::size_t kFunctionTokens = 5;

struct AlignedCorpus {
  Task task = Task::Copy;
  GeneratorSettings settings;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  Lexicon lexicon;
  std::vector<SentencePair> pairs;
};

/// Target position of source content position `i` for a sentence of `len`
/// content words: each consecutive block of `block` positions is reversed.
std::size_t block_permutation(std::size_t i, std::size_t len, std::size_t block);

AlignedCorpus gen_copy(const GeneratorSettings& s);
AlignedCorpus gen_reverse(const GeneratorSettings& s);
AlignedCorpus gen_dict_permute(const GeneratorSettings& s);
AlignedCorpus gen_dict_insert(const GeneratorSettings& s);
AlignedCorpus gen_polarity(const GeneratorSettings& s);
AlignedCorpus generate(Task task, const GeneratorSettings& s);

struct Splits {
  std::vector<SentencePair> train;
  std::vector<SentencePair> dev;
  std::vector<SentencePair> test;
};

/// Deterministic shuffled partition. Fractions must be in [0,1] and sum to 1.
Splits split(const std::vector<SentencePair>& pairs, std::array<double, 3> fractions,
             std::uint64_t seed);

/// A corpus on disk: manifest plus per-split parallel files.
struct CorpusBundle {
  Task task = Task::Copy;
  GeneratorSettings settings;
  std::array<double, 3> fractions{1.0, 0.0, 0.0};
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  Lexicon lexicon;
  Splits splits;

  const std::vector<SentencePair>& split_named(std::string_view name) const;
};

CorpusBundle make_bundle(const AlignedCorpus& c, std::array<double, 3> fractions);

/// Writes {train,dev,test}.{src,tgt,gold} and manifest.json into `dir`.
/// `extra` is merged into the manifest as the "settings" object.
void write_bundle(const CorpusBundle& b, const std::filesystem::path& dir,
                  const std::string& extra_settings_json = "{}");
/// Reads a bundle from its manifest path (or its directory).
CorpusBundle load_bundle(const std::filesystem::path& manifest);

/// Source/target swapped, gold transposed.
std::vector<SentencePair> reversed_pairs(const std::vector<SentencePair>& pairs);

}  // namespace salign::corpus
