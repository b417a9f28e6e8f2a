#pragma once

#include <memory>
#include <string>
#include <vector>

#include "salign/ad/tape.hpp"
#include "salign/align/alignment.hpp"
#include "salign/model/model.hpp"
#include "salign/saliency/config.hpp"
#include "salign/types.hpp"

namespace salign::saliency {

/// Raw signed scores, one row per target step and one column per source word.
struct SaliencyMatrix {
  Tensor values;
  TokenSeq src_tokens;
  TokenSeq tgt_tokens;
  SaliencyConfig config;
};

/// Something whose per-query label probabilities depend on a stack of
/// queried source embedding rows.
class ProbabilitySource {
 public:
  virtual ~ProbabilitySource() = default;
  /// Clean queried rows, [src_len x embed_dim].
  virtual const Tensor& embeddings() const = 0;
  /// One scalar probability per query, built on `tape` from `rows`.
  virtual std::vector<ad::Var> probabilities(ad::Tape& tape, ad::Var rows) const = 0;
};

struct StepQuery {
  std::size_t step = 0;
  TokenId label = 0;
};

/// p(label | source, target prefix) of a seq2seq model at selected steps.
/// `tgt` holds the target words (no EOS); step j conditions on tgt[0..j-1].
class ModelProbability final : public ProbabilitySource {
 public:
  ModelProbability(const model::Model& m, TokenSeq src, TokenSeq tgt, std::vector<StepQuery> queries);
  /// Every step j = 0..len(tgt)-1 with label tgt[j].
  ModelProbability(const model::Model& m, TokenSeq src, TokenSeq tgt);

  const Tensor& embeddings() const override { return rows_; }
  std::vector<ad::Var> probabilities(ad::Tape& tape, ad::Var rows) const override;

 private:
  const model::Model& model_;
  TokenSeq src_;
  TokenSeq tgt_;
  std::vector<StepQuery> queries_;
  Tensor rows_;
};

struct NoiseSpec {
  double sigma = 0.0;
  std::size_t n_samples = 1;
  std::uint64_t seed = 0;
  NoiseScaling scaling = NoiseScaling::RangeRelative;
};

/// Both gradient methods from shared samples, [queries x src_len] each.
struct GradientScores {
  Tensor grad_input;
  Tensor li;
};

/// Per sample k: noise from derive_seed(seed, {k}) is added to the queried
/// rows, each row becomes its own leaf, and for every query the base scores
/// are recomputed at the perturbed rows e_i:
///   grad_input = dot(dp/de_i, e_i)   and   li = mean |dp/de_i|. Returns the running mean over samples in index
/// order. Samples may run in parallel; the result does not depend on it.
GradientScores gradient_scores(const ProbabilitySource& source, const NoiseSpec& noise,
                               std::size_t threads = 0);

/// Noise matrix for sample `k` of a sentence whose clean queried rows are `rows`.
Tensor sample_noise(const Tensor& rows, const NoiseSpec& noise, std::size_t k);

std::vector<double> grad_input_saliency(const model::Model& m, const TokenSeq& src,
                                        const TokenSeq& tgt, std::size_t j, TokenId label);
std::vector<double> li_saliency(const model::Model& m, const TokenSeq& src, const TokenSeq& tgt,
                                std::size_t j, TokenId label);
/// `base` is Method::GradInput or Method::LiGrad.
std::vector<double> smoothgrad(Method base, const model::Model& m, const TokenSeq& src,
                               const TokenSeq& tgt, std::size_t j, TokenId label,
                               const NoiseSpec& noise);

/// Attention rows for the target words (EOS step excluded), teacher forced.
align::SoftAlignment attention_matrix(const model::Model& m, const TokenSeq& src,
                                      const TokenSeq& tgt, const Tensor* noise = nullptr);
/// Mean of attention matrices under n noisy copies of the source rows, rows
/// renormalized.
align::SoftAlignment smoothed_attention(const model::Model& m, const TokenSeq& src,
                                        const TokenSeq& tgt, const NoiseSpec& noise,
                                        std::size_t threads = 0);

/// Elementwise mean of equally shaped matrices in index order, then each row
/// divided by its sum.
Tensor average_rows(const std::vector<Tensor>& matrices);

/// All steps of `tgt` with the method in `config`; attention methods return
/// their attention weights.
SaliencyMatrix saliency_matrix(const model::Model& m, const TokenSeq& src, const TokenSeq& tgt,
                               const SaliencyConfig& config, std::size_t threads = 0);

/// max(0, psi) per row, divided by the row sum. All-nonpositive rows become
/// zero rows flagged degenerate; `raw` keeps the input for argmax fallback.
align::SoftAlignment normalize_saliency(const Tensor& matrix);

/// Soft alignment for any method: attention methods pass through, gradient
/// methods go through normalize_saliency.
align::SoftAlignment to_soft_alignment(const SaliencyMatrix& s);

NoiseSpec noise_of(const SaliencyConfig& c);

/// Tab-separated, one line per target step, 17 significant digits.
std::string to_tsv(const Tensor& matrix);
/// tokens, matrix, method, sigma, n, seed.
std::string to_json(const SaliencyMatrix& s, const std::vector<std::string>& src_tokens,
                    const std::vector<std::string>& tgt_tokens);

}  // namespace salign::saliency
