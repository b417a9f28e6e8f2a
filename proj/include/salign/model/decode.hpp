#pragma once

#include <vector>

#include "salign/align/alignment.hpp"
#include "salign/model/model.hpp"
#include "salign/types.hpp"

namespace salign::model {

struct StepOutput {
  /// Probabilities over the target vocabulary.
  Tensor distribution;
  /// [src_len] for rnn-attn, [layers x heads x src_len] for mini-transformer.
  Tensor attention;
};

/// [len x width] encoder states; width is hidden_dim for rnn-attn and
/// embed_dim for mini-transformer.
Tensor encode(const Model& m, const TokenSeq& src);

/// Distribution of the token after `prev_target_ids` (which start with BOS).
StepOutput decode_step(const Model& m, const TokenSeq& src, const TokenSeq& prev_target_ids);

/// One output per token of `ref` (which ends with EOS), teacher forced.
std::vector<StepOutput> force_decode(const Model& m, const TokenSeq& src, const TokenSeq& ref);

struct GreedyResult {
  /// Generated tokens, EOS excluded.
  TokenSeq hypothesis;
  /// One per generated token, plus the EOS step when EOS was produced.
  std::vector<StepOutput> steps;
  bool hit_max_len = false;
};

GreedyResult greedy_decode(const Model& m, const TokenSeq& src, std::size_t max_len);

/// Rows are steps: the attention vector itself for rnn-attn, the last layer
/// averaged over heads for mini-transformer.
align::SoftAlignment attention_alignment(const std::vector<StepOutput>& steps);

/// Mean per-token cross-entropy (nats) of `tgt` + EOS under teacher forcing.
double sentence_loss(const Model& m, const TokenSeq& src, const TokenSeq& tgt);

/// Decoder inputs for teacher forcing: BOS followed by all but the last of
/// `ref`.
TokenSeq teacher_inputs(const TokenSeq& ref);
/// `tgt` followed by EOS.
TokenSeq with_eos(const TokenSeq& tgt);

}  // namespace salign::model
