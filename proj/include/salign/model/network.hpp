#pragma once

#include <memory>
#include <vector>

#include "salign/ad/ops.hpp"
#include "salign/model/model.hpp"
#include "salign/types.hpp"

namespace salign::model {

/// Output of one decoder step while the graph is still live.
struct StepNode {
  ad::Var logits;
  /// [src_len] for rnn-attn, [layers x heads x src_len] for mini-transformer.
  Tensor attention;
};

/// A model bound to a tape. Parameters enter as borrowed leaves when
/// `trainable`, otherwise as constants, so that only the quantities a caller
/// asked about carry gradients.
class Graph {
 public:
  Graph(const Model& model, ad::Tape& tape, bool trainable);
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Parameter node, bound once per graph.
  ad::Var param(std::string_view name);
  /// [len x embed_dim] source embedding rows gathered from the table.
  ad::Var source_embeddings(const TokenSeq& src);

  /// Runs the encoder over pre-built embedding rows; returns the states.
  ad::Var encode(ad::Var src_embeddings);
  /// Next step given the previous target token. Requires encode().
  StepNode step(TokenId prev);
  /// Teacher-forced steps for `inputs` (BOS followed by a target prefix).
  std::vector<StepNode> steps(const TokenSeq& inputs);

  /// Every parameter node, in name order.
  const std::vector<std::pair<std::string, ad::Var>>& parameters() const noexcept { return bound_; }
  const Model& model() const noexcept { return model_; }
  ad::Tape& tape() noexcept { return tape_; }

  class Impl;

 private:
  const Model& model_;
  ad::Tape& tape_;
  std::vector<std::pair<std::string, ad::Var>> bound_;
  std::unique_ptr<Impl> impl_;
};

/// Throws ValidationError for empty, over-long, or out-of-vocabulary input.
void validate_source(const ModelConfig& c, const TokenSeq& src);
void validate_target(const ModelConfig& c, const TokenSeq& tgt);

}  // namespace salign::model
