#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "salign/align/alignment.hpp"
#include "salign/corpus/corpus.hpp"
#include "salign/model/model.hpp"
#include "salign/model/train.hpp"
#include "salign/saliency/config.hpp"

namespace salign::harness {

enum class Mode { Force, Free };

std::string_view to_string(Mode m) noexcept;
std::optional<Mode> parse_mode(std::string_view name) noexcept;

struct ExperimentSpec {
  std::filesystem::path checkpoint;
  /// Target-to-source model, required when symmetrize is set.
  std::optional<std::filesystem::path> reverse_checkpoint;
  std::filesystem::path corpus;
  std::vector<SaliencyConfig> methods;
  Mode mode = Mode::Force;
  bool symmetrize = false;
  std::filesystem::path output_dir;
  /// Noise seeds; each method runs once per seed. Empty means the seed stored
  /// in the method config.
  std::vector<std::uint64_t> seeds;
  std::string split = "test";
  /// Use only the first `limit` sentences of the split.
  std::optional<std::size_t> limit;
  bool dump_soft = false;

  /// Throws ValidationError on an inconsistent spec.
  void validate() const;
  std::string to_json() const;
  static ExperimentSpec from_json(std::string_view text);
};

std::string saliency_config_json(const SaliencyConfig& c);
/// Missing keys take SaliencyConfig defaults; sigma and n default to 0 and 1
/// for unsmoothed methods.
SaliencyConfig saliency_config_from_json(std::string_view text);

std::string optimizer_json(const model::OptimizerSettings& o);
/// Missing keys take OptimizerSettings defaults.
model::OptimizerSettings optimizer_from_json(std::string_view text);

struct ResultRow {
  SaliencyConfig method;
  /// "forward", "reverse" or "symmetrized".
  std::string direction = "forward";
  double aer = 0.0;
  /// Mean over all target words of the evaluated sentences.
  double entropy = 0.0;
  double seconds = 0.0;
  align::AerCounts counts;
  std::size_t sentences = 0;
  std::size_t failures = 0;
};

struct ResultTable {
  std::vector<ResultRow> rows;

  /// Columns method, sigma, n, seed, direction, aer, entropy, sentences,
  /// failures. Timing is excluded so reruns compare byte for byte.
  std::string to_tsv() const;
  std::string to_json() const;
  /// method, sigma, n, seed, direction, seconds.
  std::string timing_tsv() const;
};

/// Per-sentence outcome of one method.
struct SentenceResult {
  /// Target side that was interpreted: the reference in force mode, the
  /// greedy output in free mode.
  TokenSeq target;
  align::AlignmentSet hypothesis;
  align::GoldAlignment reference;
  align::SoftAlignment soft;
  std::optional<std::string> error;
};

/// Noise seed used for sentence `index` of a run whose method seed is `seed`.
std::uint64_t sentence_seed(std::uint64_t seed, std::size_t index);

/// Pooled corpus AER: counts are summed before the formula is applied.
double pooled_aer(const std::vector<align::AlignmentSet>& hyps,
                  const std::vector<align::GoldAlignment>& golds);

/// Mean entropy over every target word, rows of all sentences pooled.
double pooled_entropy(const std::vector<align::SoftAlignment>& softs);

/// Hypothesis, reference and soft alignment per sentence, plus the pooled row.
struct MethodRun {
  ResultRow row;
  std::vector<SentenceResult> sentences;
};

/// Force decoding on reference targets. With `reverse`, also evaluates the
/// reverse model and the grow-diag-final combination, giving three runs.
std::vector<MethodRun> evaluate_force(const model::Model& forward, const model::Model* reverse,
                                      const std::vector<corpus::SentencePair>& pairs,
                                      const SaliencyConfig& method, std::size_t threads = 0);

/// Reference alignment for a free-decoding hypothesis: each output token whose
/// inverse-dictionary source occurs in `src` links to that occurrence. With
/// repeated source words the occurrence whose block-permuted slot is closest
/// to the output slot wins (lowest position on ties). Other tokens stay
/// unaligned. Throws UnsupportedTask for tasks without an invertible
/// dictionary.
align::GoldAlignment free_reference(corpus::Task task, const corpus::Lexicon& lexicon,
                                    std::size_t block, const TokenSeq& src, const TokenSeq& hyp);

/// Greedy decoding from sources alone, then evaluation against free_reference.
MethodRun evaluate_free(const model::Model& m, corpus::Task task, const corpus::Lexicon& lexicon,
                        std::size_t block, const std::vector<TokenSeq>& sources,
                        const SaliencyConfig& method, std::size_t threads = 0);

/// Loads the checkpoint(s) and corpus named by the spec and runs every
/// (method, seed) combination.
ResultTable run_force_eval(const ExperimentSpec& spec, std::size_t threads = 0);
ResultTable run_free_eval(const ExperimentSpec& spec, std::size_t threads = 0);
/// Dispatches on spec.mode and writes results.tsv, results.json, timing.tsv,
/// hyp.<method>.<direction>.pharaoh files and, with dump_soft, per-sentence
/// soft matrices into spec.output_dir.
ResultTable run_experiment(const ExperimentSpec& spec, std::size_t threads = 0);

inline const std::vector<double> kDefaultSigmas{0.0, 0.05, 0.15, 0.3};

/// Every method of the spec at every sigma (ascending). Unsmoothed methods
/// are evaluated once.
ResultTable sigma_sweep(const ExperimentSpec& spec, const std::vector<double>& sigmas,
                        std::size_t threads = 0);

struct PolarityReport {
  std::size_t sentences = 0;
  std::size_t neg_sentences = 0;
  std::size_t excluded = 0;
  std::size_t grad_input_negative = 0;
  std::size_t li_nonnegative = 0;
  double dev_loss = 0.0;

  double negative_fraction() const;
  bool li_all_nonnegative() const { return li_nonnegative == neg_sentences; }
};

/// For the first NEG of every sentence: grad-input and li saliency of NEG for
/// the suppressed dictionary translation at the antonym's target step.
/// Throws PreconditionError when the dev loss is not below 0.1.
PolarityReport polarity_check(const model::Model& m, const corpus::CorpusBundle& bundle,
                              std::size_t threads = 0);

struct MeanStdev {
  double mean = 0.0;
  /// Sample standard deviation (k - 1 denominator).
  double stdev = 0.0;
};
MeanStdev mean_stdev(const std::vector<double>& values);

struct StabilitySpec {
  std::filesystem::path corpus;
  model::ModelConfig model;
  model::OptimizerSettings optimizer;
  std::vector<SaliencyConfig> methods;
  /// One model per seed; it replaces both the init and the shuffle seed.
  std::vector<std::uint64_t> seeds;
  std::string split = "test";
  std::optional<std::size_t> limit;

  void validate() const;
  std::string to_json() const;
  static StabilitySpec from_json(std::string_view text);
};

struct StabilityRow {
  SaliencyConfig method;
  std::vector<double> aers;
  MeanStdev aer;
};

/// Trains one forward model per seed on the corpus's train split and
/// force-evaluates each.
std::vector<StabilityRow> stability_run(const StabilitySpec& spec, std::size_t threads = 0);
std::string stability_tsv(const std::vector<StabilityRow>& rows);

/// Training examples of a split.
std::vector<model::Example> examples_of(const std::vector<corpus::SentencePair>& pairs);

}  // namespace salign::harness
