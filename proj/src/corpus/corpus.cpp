#include "salign/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "salign/error.hpp"
#include "salign/util/io.hpp"
#include "salign/util/rng.hpp"

namespace salign::corpus {

using nlohmann::json;
namespace fs = std::filesystem;

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<bos>", "<eos>", "<pad>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  if (tokens.size() < kReservedTokens || tokens[kBos] != "<bos>" || tokens[kEos] != "<eos>" ||
      tokens[kPad] != "<pad>") {
    throw ValidationError("vocabulary must start with <bos> <eos> <pad>");
  }
  for (auto& t : tokens) add(t);
}

TokenId Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) {
    throw ValidationError("duplicate vocabulary token '" + token + "'");
  }
  const TokenId id = tokens_.size();
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  if (auto v = find(token)) return *v;
  throw ValidationError("unknown token '" + std::string(token) + "'");
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw ValidationError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

TokenSeq Vocabulary::encode(std::string_view line) const {
  TokenSeq out;
  for (const auto& t : split_whitespace(line)) out.push_back(id(t));
  return out;
}

std::string Vocabulary::decode(const TokenSeq& ids) const {
  std::string out;
  for (TokenId i : ids) {
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

namespace {

constexpr std::array<std::pair<Task, std::string_view>, 5> kTasks{{
    {Task::Copy, "copy"},
    {Task::Reverse, "reverse"},
    {Task::DictPermute, "dict-permute"},
    {Task::DictInsert, "dict-insert"},
    {Task::Polarity, "polarity"},
}};

// Independent random streams so that, for example, the insertion draws never
// shift the sentence draws.
enum Stream : std::uint64_t { kDictStream = 1, kSentenceStream = 2, kInsertStream = 3, kNegStream = 4 };

}  // namespace

std::string_view to_string(Task t) noexcept {
  for (const auto& [k, n] : kTasks)
    if (k == t) return n;
  return "unknown";
}

std::optional<Task> parse_task(std::string_view name) noexcept {
  for (const auto& [k, n] : kTasks)
    if (n == name) return k;
  return std::nullopt;
}

std::string task_names() {
  std::string out;
  for (const auto& [k, n] : kTasks) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

std::optional<TokenId> Lexicon::invert(TokenId tgt) const {
  for (std::size_t k = 0; k < dictionary.size(); ++k)
    if (dictionary[k] == tgt) return kReservedTokens + k;
  return std::nullopt;
}

std::size_t block_permutation(std::size_t i, std::size_t len, std::size_t block) {
  const std::size_t start = (i / block) * block;
  const std::size_t end = std::min(start + block, len);
  return start + (end - 1 - i);
}

namespace {

void validate(const GeneratorSettings& s) {
  if (s.vocab_size < kReservedTokens + 1) {
    throw ValidationError("vocab_size must be at least 4 (3 reserved + 1 content token)");
  }
  if (s.min_len < 1 || s.min_len > s.max_len || s.max_len > kMaxSentenceLength) {
    throw ValidationError("length range [" + std::to_string(s.min_len) + ", " +
                          std::to_string(s.max_len) + "] must lie within [1, " +
                          std::to_string(kMaxSentenceLength) + "]");
  }
  if (s.block < 1) throw ValidationError("block must be at least 1");
  if (!(s.insert_rate >= 0.0 && s.insert_rate <= 0.5)) {
    throw ValidationError("insert_rate must lie in [0, 0.5]");
  }
  if (!(s.neg_rate >= 0.0 && s.neg_rate <= 0.5)) throw ValidationError("neg_rate must lie in [0, 0.5]");
}

std::size_t content_size(const GeneratorSettings& s) { return s.vocab_size - kReservedTokens; }

Vocabulary content_vocab(const std::string& prefix, std::size_t n) {
  Vocabulary v;
  for (std::size_t k = 0; k < n; ++k) v.add(prefix + std::to_string(k));
  return v;
}

// Content words for one sentence, as source ids.
TokenSeq draw_sentence(Rng& rng, const GeneratorSettings& s) {
  std::uniform_int_distribution<std::size_t> len(s.min_len, s.max_len);
  std::uniform_int_distribution<std::size_t> word(0, content_size(s) - 1);
  TokenSeq out(len(rng));
  for (auto& w : out) w = kReservedTokens + word(rng);
  return out;
}

AlignedCorpus monolingual(Task task, const GeneratorSettings& s, bool reverse) {
  validate(s);
  AlignedCorpus c;
  c.task = task;
  c.settings = s;
  c.src_vocab = content_vocab("s", content_size(s));
  c.tgt_vocab = c.src_vocab;
  Rng rng(derive_seed(s.seed, {kSentenceStream}));
  c.pairs.reserve(s.n_pairs);
  for (std::size_t n = 0; n < s.n_pairs; ++n) {
    SentencePair p;
    p.src = draw_sentence(rng, s);
    const std::size_t len = p.src.size();
    p.tgt = p.src;
    if (reverse) std::reverse(p.tgt.begin(), p.tgt.end());
    align::AlignmentSet sure(len, len);
    for (std::size_t i = 0; i < len; ++i) sure.insert(i, reverse ? len - 1 - i : i);
    p.gold = align::GoldAlignment::from_sure(sure);
    c.pairs.push_back(std::move(p));
  }
  return c;
}

// Shared construction for the three dictionary tasks.
AlignedCorpus dictionary_task(Task task, const GeneratorSettings& s) {
  validate(s);
  const std::size_t v = content_size(s);
  AlignedCorpus c;
  c.task = task;
  c.settings = s;
  c.src_vocab = content_vocab("s", v);
  if (task == Task::Polarity) c.lexicon.neg_token = c.src_vocab.add("NEG");

  c.tgt_vocab = content_vocab("t", v);
  for (std::size_t k = 0; k < kFunctionTokens; ++k) {
    c.lexicon.function_tokens.push_back(c.tgt_vocab.add("f" + std::to_string(k)));
  }
  std::vector<TokenId> antonym_ids;
  for (std::size_t k = 0; k < v; ++k) antonym_ids.push_back(c.tgt_vocab.add("x" + std::to_string(k)));

  {
    Rng dict_rng(derive_seed(s.seed, {kDictStream}));
    std::vector<std::size_t> perm(v);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), dict_rng);
    for (std::size_t k = 0; k < v; ++k) {
      c.lexicon.dictionary.push_back(kReservedTokens + perm[k]);
      c.lexicon.antonyms.push_back(antonym_ids[perm[k]]);
    }
  }

  Rng rng(derive_seed(s.seed, {kSentenceStream}));
  Rng insert_rng(derive_seed(s.seed, {kInsertStream}));
  Rng neg_rng(derive_seed(s.seed, {kNegStream}));
  std::bernoulli_distribution insert(task == Task::DictInsert ? s.insert_rate : 0.0);
  std::bernoulli_distribution negate(task == Task::Polarity ? s.neg_rate : 0.0);
  std::uniform_int_distribution<std::size_t> pick_function(0, kFunctionTokens - 1);

  c.pairs.reserve(s.n_pairs);
  for (std::size_t n = 0; n < s.n_pairs; ++n) {
    const TokenSeq words = draw_sentence(rng, s);
    const std::size_t len = words.size();

    // Source side: content words, each optionally preceded by NEG.
    TokenSeq src;
    std::vector<std::size_t> word_pos(len);
    std::vector<bool> negated(len, false);
    for (std::size_t k = 0; k < len; ++k) {
      if (task == Task::Polarity && negate(neg_rng)) {
        src.push_back(*c.lexicon.neg_token);
        negated[k] = true;
      }
      word_pos[k] = src.size();
      src.push_back(words[k]);
    }

    std::vector<TokenId> translated(len);
    std::vector<std::size_t> origin(len);  // content index that lands at each target slot
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t slot = block_permutation(k, len, s.block);
      const std::size_t w = words[k] - kReservedTokens;
      translated[slot] = negated[k] ? c.lexicon.antonyms[w] : c.lexicon.dictionary[w];
      origin[slot] = k;
    }

    TokenSeq tgt;
    std::vector<align::Link> links;
    for (std::size_t slot = 0; slot < len; ++slot) {
      if (task == Task::DictInsert && insert(insert_rng)) {
        tgt.push_back(c.lexicon.function_tokens[pick_function(insert_rng)]);
      }
      links.push_back({word_pos[origin[slot]], tgt.size()});
      tgt.push_back(translated[slot]);
    }

    SentencePair p;
    align::AlignmentSet sure(src.size(), tgt.size());
    for (const auto& l : links) sure.insert(l);
    p.gold = align::GoldAlignment::from_sure(sure);
    p.src = std::move(src);
    p.tgt = std::move(tgt);
    c.pairs.push_back(std::move(p));
  }
  return c;
}

}  // namespace

AlignedCorpus gen_copy(const GeneratorSettings& s) { return monolingual(Task::Copy, s, false); }
AlignedCorpus gen_reverse(const GeneratorSettings& s) { return monolingual(Task::Reverse, s, true); }
AlignedCorpus gen_dict_permute(const GeneratorSettings& s) { return dictionary_task(Task::DictPermute, s); }
AlignedCorpus gen_dict_insert(const GeneratorSettings& s) { return dictionary_task(Task::DictInsert, s); }
AlignedCorpus gen_polarity(const GeneratorSettings& s) { return dictionary_task(Task::Polarity, s); }

AlignedCorpus generate(Task task, const GeneratorSettings& s) {
  switch (task) {
    case Task::Copy: return gen_copy(s);
    case Task::Reverse: return gen_reverse(s);
    case Task::DictPermute: return gen_dict_permute(s);
    case Task::DictInsert: return gen_dict_insert(s);
    case Task::Polarity: return gen_polarity(s);
  }
  throw ValidationError("unknown task");
}

Splits split(const std::vector<SentencePair>& pairs, std::array<double, 3> fractions,
             std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("split fractions must lie in [0, 1]");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");

  const std::size_t n = pairs.size();
  const auto n_dev = std::min(n, static_cast<std::size_t>(std::llround(fractions[1] * n)));
  const auto n_test = std::min(n - n_dev, static_cast<std::size_t>(std::llround(fractions[2] * n)));
  const std::size_t n_train = n - n_dev - n_test;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x5917}));
  std::shuffle(order.begin(), order.end(), rng);

  Splits out;
  for (std::size_t k = 0; k < n; ++k) {
    auto& dst = k < n_train ? out.train : (k < n_train + n_dev ? out.dev : out.test);
    dst.push_back(pairs[order[k]]);
  }
  return out;
}

const std::vector<SentencePair>& CorpusBundle::split_named(std::string_view name) const {
  if (name == "train") return splits.train;
  if (name == "dev") return splits.dev;
  if (name == "test") return splits.test;
  throw ValidationError("unknown split '" + std::string(name) + "' (expected train, dev or test)");
}

CorpusBundle make_bundle(const AlignedCorpus& c, std::array<double, 3> fractions) {
  CorpusBundle b;
  b.task = c.task;
  b.settings = c.settings;
  b.fractions = fractions;
  b.src_vocab = c.src_vocab;
  b.tgt_vocab = c.tgt_vocab;
  b.lexicon = c.lexicon;
  b.splits = split(c.pairs, fractions, c.settings.seed);
  return b;
}

namespace {

constexpr std::array<const char*, 3> kSplitNames{"train", "dev", "test"};

json settings_json(const GeneratorSettings& s) {
  return {{"vocab_size", s.vocab_size}, {"n_pairs", s.n_pairs}, {"min_len", s.min_len},
          {"max_len", s.max_len},       {"block", s.block},     {"insert_rate", s.insert_rate},
          {"neg_rate", s.neg_rate},     {"seed", s.seed}};
}

GeneratorSettings settings_from(const json& j) {
  GeneratorSettings s;
  s.vocab_size = j.at("vocab_size").get<std::size_t>();
  s.n_pairs = j.at("n_pairs").get<std::size_t>();
  s.min_len = j.at("min_len").get<std::size_t>();
  s.max_len = j.at("max_len").get<std::size_t>();
  s.block = j.at("block").get<std::size_t>();
  s.insert_rate = j.at("insert_rate").get<double>();
  s.neg_rate = j.at("neg_rate").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

void write_bundle(const CorpusBundle& b, const fs::path& dir, const std::string& extra_settings_json) {
  const std::vector<SentencePair>* parts[] = {&b.splits.train, &b.splits.dev, &b.splits.test};
  json files = json::object();
  for (std::size_t k = 0; k < 3; ++k) {
    std::string src, tgt, gold;
    for (const auto& p : *parts[k]) {
      src += b.src_vocab.decode(p.src) + "\n";
      tgt += b.tgt_vocab.decode(p.tgt) + "\n";
      gold += align::write_pharaoh(p.gold) + "\n";
    }
    const std::string name = kSplitNames[k];
    write_file_atomic(dir / (name + ".src"), src);
    write_file_atomic(dir / (name + ".tgt"), tgt);
    write_file_atomic(dir / (name + ".gold"), gold);
    files[name] = {{"src", name + ".src"}, {"tgt", name + ".tgt"}, {"gold", name + ".gold"},
                   {"pairs", parts[k]->size()}};
  }
  json lex = {{"dictionary", b.lexicon.dictionary},
              {"antonyms", b.lexicon.antonyms},
              {"function_tokens", b.lexicon.function_tokens}};
  if (b.lexicon.neg_token) lex["neg_token"] = *b.lexicon.neg_token;

  json m = {{"kind", "corpus"},
            {"task", std::string(to_string(b.task))},
            {"generator", settings_json(b.settings)},
            {"fractions", b.fractions},
            {"files", files},
            {"src_vocab", b.src_vocab.tokens()},
            {"tgt_vocab", b.tgt_vocab.tokens()},
            {"lexicon", lex},
            {"settings", json::parse(extra_settings_json)},
            {"tool", "salign"},
            {"version", SALIGN_VERSION}};
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

CorpusBundle load_bundle(const fs::path& manifest) {
  fs::path path = manifest;
  if (fs::is_directory(path)) path /= "manifest.json";
  if (!fs::exists(path)) throw IoError("corpus manifest not found: " + path.string());
  json m;
  try {
    m = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("invalid corpus manifest " + path.string() + ": " + e.what());
  }
  const fs::path dir = path.parent_path();

  CorpusBundle b;
  try {
    const auto task = parse_task(m.at("task").get<std::string>());
    if (!task) throw ValidationError("manifest names an unknown task");
    b.task = *task;
    b.settings = settings_from(m.at("generator"));
    b.fractions = m.at("fractions").get<std::array<double, 3>>();
    b.src_vocab = Vocabulary(m.at("src_vocab").get<std::vector<std::string>>());
    b.tgt_vocab = Vocabulary(m.at("tgt_vocab").get<std::vector<std::string>>());
    const json& lex = m.at("lexicon");
    b.lexicon.dictionary = lex.at("dictionary").get<std::vector<TokenId>>();
    b.lexicon.antonyms = lex.at("antonyms").get<std::vector<TokenId>>();
    b.lexicon.function_tokens = lex.at("function_tokens").get<std::vector<TokenId>>();
    if (lex.contains("neg_token")) b.lexicon.neg_token = lex.at("neg_token").get<TokenId>();
  } catch (const json::exception& e) {
    throw ValidationError("invalid corpus manifest " + path.string() + ": " + e.what());
  }

  std::vector<SentencePair>* parts[] = {&b.splits.train, &b.splits.dev, &b.splits.test};
  for (std::size_t k = 0; k < 3; ++k) {
    const json& f = m.at("files").at(kSplitNames[k]);
    const auto src = read_lines(dir / f.at("src").get<std::string>());
    const auto tgt = read_lines(dir / f.at("tgt").get<std::string>());
    const auto gold = read_lines(dir / f.at("gold").get<std::string>());
    if (src.size() != tgt.size() || src.size() != gold.size()) {
      throw ValidationError(std::string("split ") + kSplitNames[k] + " has mismatched line counts");
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
      SentencePair p;
      p.src = b.src_vocab.encode(src[i]);
      p.tgt = b.tgt_vocab.encode(tgt[i]);
      p.gold = align::parse_pharaoh(gold[i], align::PharaohMode::Gold, i + 1,
                                    align::GridSize{p.src.size(), p.tgt.size()});
      parts[k]->push_back(std::move(p));
    }
  }
  return b;
}

std::vector<SentencePair> reversed_pairs(const std::vector<SentencePair>& pairs) {
  std::vector<SentencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.tgt, p.src, p.gold.transposed()});
  return out;
}

}  // namespace salign::corpus
