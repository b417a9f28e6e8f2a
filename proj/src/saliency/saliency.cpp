#include "salign/saliency/saliency.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "salign/ad/ops.hpp"
#include "salign/error.hpp"
#include "salign/model/decode.hpp"
#include "salign/model/network.hpp"
#include "salign/util/io.hpp"
#include "salign/util/parallel.hpp"
#include "salign/util/rng.hpp"

namespace salign::saliency {

namespace {

std::size_t resolve_threads(std::size_t t) { return t == 0 ? configured_threads() : t; }

Tensor source_rows(const model::Model& m, const TokenSeq& src) {
  model::validate_source(m.config, src);
  const Tensor& table = m.params.get("src_embed");
  const std::size_t e = m.config.embed_dim;
  Tensor rows(Shape{src.size(), e});
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t k = 0; k < e; ++k) rows.at(i, k) = table.at(src[i], k);
  }
  return rows;
}

void check_target(const model::Model& m, const TokenSeq& tgt) {
  if (tgt.empty()) throw ValidationError("saliency needs at least one target word");
  model::validate_target(m.config, tgt);
}

// m += (x - m) / (k + 1), elementwise; exact when every sample is identical.
void running_mean(Tensor& mean, const Tensor& x, std::size_t k) {
  if (k == 0) {
    mean = x;
    return;
  }
  const double w = 1.0 / static_cast<double>(k + 1);
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (x[i] - mean[i]) * w;
}

Tensor perturbed(const Tensor& rows, const NoiseSpec& noise, std::size_t k) {
  if (noise.sigma == 0.0) return rows;
  Tensor out = sample_noise(rows, noise, k);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rows[i];
  return out;
}

void validate_noise(const NoiseSpec& n) {
  if (!(n.sigma >= 0.0) || !std::isfinite(n.sigma)) throw ValidationError("sigma must be >= 0");
  if (n.n_samples == 0) throw ValidationError("n_samples must be >= 1");
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  const std::size_t s = t.shape().last();
  return {t.storage().begin() + static_cast<std::ptrdiff_t>(r * s),
          t.storage().begin() + static_cast<std::ptrdiff_t>((r + 1) * s)};
}

}  // namespace

ModelProbability::ModelProbability(const model::Model& m, TokenSeq src, TokenSeq tgt,
                                   std::vector<StepQuery> queries)
    : model_(m), src_(std::move(src)), tgt_(std::move(tgt)), queries_(std::move(queries)) {
  rows_ = source_rows(m, src_);
  check_target(m, tgt_);
  if (queries_.empty()) throw ValidationError("no saliency queries");
  for (const auto& q : queries_) {
    if (q.step >= tgt_.size()) {
      throw ValidationError("target step " + std::to_string(q.step) + " out of range");
    }
    if (q.label >= m.config.vocab_size_tgt) throw ValidationError("label out of vocabulary");
  }
}

ModelProbability::ModelProbability(const model::Model& m, TokenSeq src, TokenSeq tgt)
    : model_(m), src_(std::move(src)), tgt_(std::move(tgt)) {
  rows_ = source_rows(m, src_);
  check_target(m, tgt_);
  for (std::size_t j = 0; j < tgt_.size(); ++j) queries_.push_back({j, tgt_[j]});
}

std::vector<ad::Var> ModelProbability::probabilities(ad::Tape& tape, ad::Var rows) const {
  model::Graph g(model_, tape, false);
  g.encode(rows);
  std::size_t last = 0;
  for (const auto& q : queries_) last = std::max(last, q.step);
  TokenSeq inputs{kBos};
  inputs.insert(inputs.end(), tgt_.begin(), tgt_.begin() + static_cast<std::ptrdiff_t>(last));
  const auto steps = g.steps(inputs);
  std::vector<ad::Var> out;
  out.reserve(queries_.size());
  for (const auto& q : queries_) out.push_back(ad::pick(ad::softmax(steps[q.step].logits), q.label));
  return out;
}

Tensor sample_noise(const Tensor& rows, const NoiseSpec& noise, std::size_t k) {
  double sd = noise.sigma;
  if (noise.scaling == NoiseScaling::RangeRelative) {
    const auto [lo, hi] = std::minmax_element(rows.storage().begin(), rows.storage().end());
    sd *= *hi - *lo;
  }
  Tensor out(rows.shape());
  Rng rng(derive_seed(noise.seed, {k}));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : out.storage()) v = sd * normal(rng);
  return out;
}

GradientScores gradient_scores(const ProbabilitySource& source, const NoiseSpec& noise,
                               std::size_t threads) {
  validate_noise(noise);
  const Tensor& clean = source.embeddings();
  const std::size_t s = clean.shape()[0], e = clean.shape()[1];

  std::vector<GradientScores> samples(noise.n_samples);
  parallel_for(
      noise.n_samples,
      [&](std::size_t k) {
        const Tensor rows = perturbed(clean, noise, k);
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        leaves.reserve(s);
        for (std::size_t i = 0; i < s; ++i) {
          leaves.push_back(tape.leaf(Tensor(Shape{e}, row_of(rows, i))));
        }
        const auto probs = source.probabilities(tape, ad::stack_rows(leaves));
        GradientScores out{Tensor(Shape{probs.size(), s}), Tensor(Shape{probs.size(), s})};
        for (std::size_t q = 0; q < probs.size(); ++q) {
          const auto store = ad::backward(tape, probs[q], leaves);
          for (std::size_t i = 0; i < s; ++i) {
            const Tensor& g = store[leaves[i]];
            if (!g.all_finite()) throw NumericError("non-finite saliency gradient");
            double dot = 0.0, abs_sum = 0.0;
            for (std::size_t d = 0; d < e; ++d) {
              dot += g[d] * rows.at(i, d);
              abs_sum += std::abs(g[d]);
            }
            out.grad_input.at(q, i) = dot;
            out.li.at(q, i) = abs_sum / static_cast<double>(e);
          }
        }
        samples[k] = std::move(out);
      },
      resolve_threads(threads));

  GradientScores mean;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    running_mean(mean.grad_input, samples[k].grad_input, k);
    running_mean(mean.li, samples[k].li, k);
  }
  return mean;
}

std::vector<double> grad_input_saliency(const model::Model& m, const TokenSeq& src,
                                        const TokenSeq& tgt, std::size_t j, TokenId label) {
  ModelProbability p(m, src, tgt, {{j, label}});
  return row_of(gradient_scores(p, {}, 1).grad_input, 0);
}

std::vector<double> li_saliency(const model::Model& m, const TokenSeq& src, const TokenSeq& tgt,
                                std::size_t j, TokenId label) {
  ModelProbability p(m, src, tgt, {{j, label}});
  return row_of(gradient_scores(p, {}, 1).li, 0);
}

std::vector<double> smoothgrad(Method base, const model::Model& m, const TokenSeq& src,
                               const TokenSeq& tgt, std::size_t j, TokenId label,
                               const NoiseSpec& noise) {
  if (base != Method::GradInput && base != Method::LiGrad) {
    throw ValidationError("smoothgrad wraps grad-input or li-grad only");
  }
  ModelProbability p(m, src, tgt, {{j, label}});
  auto scores = gradient_scores(p, noise);
  return row_of(base == Method::GradInput ? scores.grad_input : scores.li, 0);
}

align::SoftAlignment attention_matrix(const model::Model& m, const TokenSeq& src,
                                      const TokenSeq& tgt, const Tensor* noise) {
  check_target(m, tgt);
  Tensor rows = source_rows(m, src);
  if (noise) {
    if (!(noise->shape() == rows.shape())) throw ShapeError("noise shape differs from source rows");
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] += (*noise)[i];
  }
  ad::Tape tape;
  model::Graph g(m, tape, false);
  g.encode(tape.constant(std::move(rows)));
  const auto steps = g.steps(model::teacher_inputs(tgt));
  std::vector<model::StepOutput> outs;
  outs.reserve(steps.size());
  for (const auto& s : steps) outs.push_back({Tensor(), s.attention});
  return model::attention_alignment(outs);
}

align::SoftAlignment smoothed_attention(const model::Model& m, const TokenSeq& src,
                                        const TokenSeq& tgt, const NoiseSpec& noise,
                                        std::size_t threads) {
  validate_noise(noise);
  const Tensor clean = source_rows(m, src);
  std::vector<Tensor> samples(noise.n_samples);
  parallel_for(
      noise.n_samples,
      [&](std::size_t k) {
        if (noise.sigma == 0.0) {
          samples[k] = attention_matrix(m, src, tgt).probs;
        } else {
          const Tensor eps = sample_noise(clean, noise, k);
          samples[k] = attention_matrix(m, src, tgt, &eps).probs;
        }
      },
      resolve_threads(threads));
  Tensor mean = average_rows(samples);
  const std::size_t t = mean.shape()[0];
  align::SoftAlignment soft;
  soft.raw = mean;
  soft.probs = std::move(mean);
  soft.degenerate.assign(t, false);
  soft.provenance.method = Method::SmoothedAttention;
  soft.provenance.sigma = noise.sigma;
  soft.provenance.n_samples = noise.n_samples;
  soft.provenance.seed = noise.seed;
  soft.provenance.noise_scaling = noise.scaling;
  return soft;
}

Tensor average_rows(const std::vector<Tensor>& matrices) {
  if (matrices.empty()) throw ContractError("average_rows needs at least one matrix");
  Tensor mean;
  for (std::size_t k = 0; k < matrices.size(); ++k) {
    if (k && !(matrices[k].shape() == matrices[0].shape())) {
      throw ShapeError("average_rows: shapes differ");
    }
    running_mean(mean, matrices[k], k);
  }
  const std::size_t t = mean.shape().rows(), s = mean.shape().last();
  for (std::size_t r = 0; r < t; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < s; ++c) z += mean[r * s + c];
    if (z > 0.0) {
      for (std::size_t c = 0; c < s; ++c) mean[r * s + c] /= z;
    }
  }
  return mean;
}

NoiseSpec noise_of(const SaliencyConfig& c) {
  if (!is_smoothed(c.method)) return {0.0, 1, c.seed, c.noise_scaling};
  return {c.sigma, c.n_samples, c.seed, c.noise_scaling};
}

SaliencyMatrix saliency_matrix(const model::Model& m, const TokenSeq& src, const TokenSeq& tgt,
                               const SaliencyConfig& config, std::size_t threads) {
  config.validate();
  SaliencyMatrix out{Tensor(), src, tgt, config};
  switch (config.method) {
    case Method::Attention:
      out.values = attention_matrix(m, src, tgt).probs;
      break;
    case Method::SmoothedAttention:
      out.values = smoothed_attention(m, src, tgt, noise_of(config), threads).probs;
      break;
    default: {
      ModelProbability p(m, src, tgt);
      auto scores = gradient_scores(p, noise_of(config), threads);
      const Method base = base_method(config.method);
      out.values = base == Method::GradInput ? std::move(scores.grad_input) : std::move(scores.li);
    }
  }
  return out;
}

align::SoftAlignment normalize_saliency(const Tensor& matrix) {
  if (matrix.shape().rank() != 2) throw ShapeError("normalize_saliency expects a matrix");
  const std::size_t t = matrix.shape()[0], s = matrix.shape()[1];
  align::SoftAlignment soft;
  soft.raw = matrix;
  soft.probs = Tensor(matrix.shape());
  soft.degenerate.assign(t, false);
  for (std::size_t r = 0; r < t; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < s; ++c) z += std::max(0.0, matrix.at(r, c));
    if (!(z > 0.0)) {
      soft.degenerate[r] = true;
      continue;
    }
    for (std::size_t c = 0; c < s; ++c) soft.probs.at(r, c) = std::max(0.0, matrix.at(r, c)) / z;
  }
  return soft;
}

align::SoftAlignment to_soft_alignment(const SaliencyMatrix& s) {
  align::SoftAlignment soft;
  if (is_attention(s.config.method)) {
    soft.probs = s.values;
    soft.raw = s.values;
    soft.degenerate.assign(s.values.shape()[0], false);
  } else {
    soft = normalize_saliency(s.values);
  }
  soft.provenance = s.config;
  return soft;
}

std::string to_tsv(const Tensor& matrix) {
  const std::size_t t = matrix.shape().rows(), s = matrix.shape().last();
  std::string out;
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t c = 0; c < s; ++c) {
      if (c) out += '\t';
      out += format_g17(matrix[r * s + c]);
    }
    out += '\n';
  }
  return out;
}

std::string to_json(const SaliencyMatrix& s, const std::vector<std::string>& src_tokens,
                    const std::vector<std::string>& tgt_tokens) {
  using nlohmann::json;
  const std::size_t t = s.values.shape()[0], n = s.values.shape()[1];
  json rows = json::array();
  for (std::size_t r = 0; r < t; ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < n; ++c) row.push_back(s.values.at(r, c));
    rows.push_back(std::move(row));
  }
  json j = {{"src_tokens", src_tokens},
            {"tgt_tokens", tgt_tokens},
            {"matrix", rows},
            {"method", std::string(to_string(s.config.method))},
            {"sigma", s.config.sigma},
            {"n", s.config.n_samples},
            {"seed", s.config.seed},
            {"noise_scaling", std::string(to_string(s.config.noise_scaling))}};
  return j.dump(2) + "\n";
}

}  // namespace salign::saliency
