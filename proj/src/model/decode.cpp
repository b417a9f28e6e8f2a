#include "salign/model/decode.hpp"

#include <algorithm>
#include <cmath>

#include "salign/error.hpp"
#include "salign/model/network.hpp"

namespace salign::model {

namespace {

Tensor probabilities(const Tensor& logits) {
  Tensor p(logits.shape());
  const double mx = *std::max_element(logits.storage().begin(), logits.storage().end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p.storage()) v /= z;
  return p;
}

StepOutput to_output(const StepNode& s) { return {probabilities(s.logits.value()), s.attention}; }

std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(
      std::max_element(t.storage().begin(), t.storage().end()) - t.storage().begin());
}

}  // namespace

TokenSeq teacher_inputs(const TokenSeq& ref) {
  TokenSeq in{kBos};
  if (!ref.empty()) in.insert(in.end(), ref.begin(), ref.end() - 1);
  return in;
}

TokenSeq with_eos(const TokenSeq& tgt) {
  TokenSeq r = tgt;
  r.push_back(kEos);
  return r;
}

Tensor encode(const Model& m, const TokenSeq& src) {
  ad::Tape tape;
  Graph g(m, tape, false);
  return g.encode(g.source_embeddings(src)).value();
}

StepOutput decode_step(const Model& m, const TokenSeq& src, const TokenSeq& prev_target_ids) {
  ad::Tape tape;
  Graph g(m, tape, false);
  g.encode(g.source_embeddings(src));
  validate_target(m.config, prev_target_ids);
  return to_output(g.steps(prev_target_ids).back());
}

std::vector<StepOutput> force_decode(const Model& m, const TokenSeq& src, const TokenSeq& ref) {
  validate_target(m.config, ref);
  if (ref.back() != kEos) throw ValidationError("reference must end with EOS");
  ad::Tape tape;
  Graph g(m, tape, false);
  g.encode(g.source_embeddings(src));
  std::vector<StepOutput> out;
  for (const auto& s : g.steps(teacher_inputs(ref))) out.push_back(to_output(s));
  return out;
}

GreedyResult greedy_decode(const Model& m, const TokenSeq& src, std::size_t max_len) {
  ad::Tape tape;
  Graph g(m, tape, false);
  g.encode(g.source_embeddings(src));
  GreedyResult r;
  TokenId prev = kBos;
  while (true) {
    if (r.hypothesis.size() >= max_len) {
      r.hit_max_len = true;
      break;
    }
    StepOutput out = to_output(g.step(prev));
    prev = argmax(out.distribution);
    r.steps.push_back(std::move(out));
    if (prev == kEos) break;
    r.hypothesis.push_back(prev);
  }
  return r;
}

align::SoftAlignment attention_alignment(const std::vector<StepOutput>& steps) {
  if (steps.empty()) throw ContractError("attention_alignment needs at least one step");
  const Tensor& first = steps.front().attention;
  const std::size_t s = first.shape().last();
  Tensor probs(Shape{steps.size(), s});
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const Tensor& a = steps[j].attention;
    if (a.shape().last() != s) throw ShapeError("attention width differs between steps");
    if (a.shape().rank() == 1) {
      for (std::size_t k = 0; k < s; ++k) probs.at(j, k) = a[k];
      continue;
    }
    const std::size_t heads = a.shape()[a.shape().rank() - 2];
    const std::size_t base = a.size() - heads * s;
    for (std::size_t k = 0; k < s; ++k) {
      double acc = 0.0;
      for (std::size_t h = 0; h < heads; ++h) acc += a[base + h * s + k];
      probs.at(j, k) = acc / static_cast<double>(heads);
    }
  }
  align::SoftAlignment soft;
  soft.raw = probs;
  soft.probs = std::move(probs);
  soft.degenerate.assign(steps.size(), false);
  soft.provenance.method = Method::Attention;
  return soft;
}

double sentence_loss(const Model& m, const TokenSeq& src, const TokenSeq& tgt) {
  const TokenSeq ref = with_eos(tgt);
  ad::Tape tape;
  Graph g(m, tape, false);
  g.encode(g.source_embeddings(src));
  const auto steps = g.steps(teacher_inputs(ref));
  double total = 0.0;
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const Tensor& logits = steps[j].logits.value();
    const double mx = *std::max_element(logits.storage().begin(), logits.storage().end());
    double z = 0.0;
    for (double v : logits.storage()) z += std::exp(v - mx);
    total += -(logits[ref[j]] - mx - std::log(z));
  }
  return total / static_cast<double>(steps.size());
}

}  // namespace salign::model
