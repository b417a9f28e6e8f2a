#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "json.hpp"
#include "salign/ad/gradcheck.hpp"
#include "salign/ad/ops.hpp"
#include "salign/error.hpp"
#include "salign/model/decode.hpp"
#include "salign/model/network.hpp"
#include "salign/saliency/saliency.hpp"
#include "salign/util/rng.hpp"

using namespace salign;
using namespace salign::saliency;
using model::Architecture;

namespace {

model::Model random_model(Architecture arch, std::uint64_t seed) {
  model::ModelConfig c;
  c.architecture = arch;
  c.vocab_size_src = 12;
  c.vocab_size_tgt = 10;
  c.embed_dim = 6;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.seed = seed;
  c.max_len = 20;
  model::Model m = model::init_model(c);
  Rng rng(seed);
  std::uniform_real_distribution<double> uni(-0.7, 0.7);
  for (auto& [_, t] : m.params.tensors()) {
    for (double& v : t.storage()) v = uni(rng);
  }
  return m;
}

TokenSeq random_seq(Rng& rng, std::size_t len, std::size_t vocab) {
  std::uniform_int_distribution<std::size_t> d(kReservedTokens, vocab - 1);
  TokenSeq s(len);
  for (auto& t : s) t = d(rng);
  return s;
}

// p = softmax(V e)[label] for a single source row e, V of shape [2 x d].
class SoftmaxMicroModel final : public ProbabilitySource {
 public:
  SoftmaxMicroModel(Tensor e, Tensor v, std::size_t label) : e_(std::move(e)), v_(std::move(v)), label_(label) {}
  const Tensor& embeddings() const override { return e_; }
  std::vector<ad::Var> probabilities(ad::Tape& tape, ad::Var rows) const override {
    ad::Var logits = ad::matmul(tape.constant(v_), ad::transpose(rows));  // [2 x 1]
    ad::Var p = ad::softmax(ad::reshape(logits, Shape{2}));
    return {ad::pick(p, label_)};
  }

 private:
  Tensor e_, v_;
  std::size_t label_;
};

// p = 0.5 + sum_i w_i . e_i: the gradient does not depend on the input.
class LinearMicroModel final : public ProbabilitySource {
 public:
  LinearMicroModel(Tensor e, Tensor w) : e_(std::move(e)), w_(std::move(w)) {}
  const Tensor& embeddings() const override { return e_; }
  std::vector<ad::Var> probabilities(ad::Tape& tape, ad::Var rows) const override {
    ad::Var s = ad::sum(ad::mul(rows, tape.constant(w_)));
    return {ad::add(s, tape.constant(Tensor::scalar(0.5)))};
  }

 private:
  Tensor e_, w_;
};

// Same function as ModelProbability but on fixed, caller-supplied rows.
class FixedRows final : public ProbabilitySource {
 public:
  FixedRows(const model::Model& m, TokenSeq src, TokenSeq tgt, Tensor rows)
      : inner_(m, std::move(src), std::move(tgt)), rows_(std::move(rows)) {}
  const Tensor& embeddings() const override { return rows_; }
  std::vector<ad::Var> probabilities(ad::Tape& tape, ad::Var rows) const override {
    return inner_.probabilities(tape, rows);
  }

 private:
  ModelProbability inner_;
  Tensor rows_;
};

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

class BothArchitectures : public ::testing::TestWithParam<Architecture> {};

}  // namespace

TEST(MicroModel, GradInputMatchesClosedFormAndFiniteDifferences) {
  const Tensor e = Tensor::matrix(1, 3, {0.4, -1.2, 0.7});
  const Tensor v = Tensor::matrix(2, 3, {0.3, 0.8, -0.5, -0.6, 0.2, 0.9});
  for (std::size_t label : {0u, 1u}) {
    SoftmaxMicroModel micro(e, v, label);
    auto scores = gradient_scores(micro, {}, 1);
    // p_l (v_l - sum_k p_k v_k)
    double z[2];
    for (int k = 0; k < 2; ++k) z[k] = v.at(k, 0) * e[0] + v.at(k, 1) * e[1] + v.at(k, 2) * e[2];
    const double m = std::max(z[0], z[1]);
    const double p0 = std::exp(z[0] - m) / (std::exp(z[0] - m) + std::exp(z[1] - m));
    const double p[2] = {p0, 1.0 - p0};
    double psi = 0.0, li = 0.0;
    double g[3];
    for (int d = 0; d < 3; ++d) {
      g[d] = p[label] * (v.at(label, d) - (p[0] * v.at(0, d) + p[1] * v.at(1, d)));
      psi += g[d] * e[d];
      li += std::abs(g[d]) / 3.0;
    }
    EXPECT_NEAR(scores.grad_input[0], psi, 1e-15);
    EXPECT_NEAR(scores.li[0], li, 1e-15);

    auto f = [&](ad::Tape& tape, ad::Var x) { return micro.probabilities(tape, x)[0]; };
    EXPECT_LT(ad::finite_difference_check(f, e, 1e-5), 1e-7);
    const auto report = ad::finite_difference_report(f, e, 1e-5);
    double fd_psi = 0.0;
    for (int d = 0; d < 3; ++d) fd_psi += report.numeric[d] * e[d];
    EXPECT_NEAR(scores.grad_input[0], fd_psi, 1e-9);
  }
}

TEST(MicroModel, LinearModelSmoothingLeavesGradientUnchanged) {
  const Tensor e = Tensor::matrix(2, 2, {0.5, -0.25, 1.0, 0.75});
  const Tensor w = Tensor::matrix(2, 2, {0.3, -0.7, 0.2, 0.9});
  LinearMicroModel micro(e, w);
  const auto base = gradient_scores(micro, {}, 1);
  for (double sigma : {0.05, 0.15, 1.0}) {
    for (std::size_t n : {1u, 5u, 30u}) {
      NoiseSpec noise{sigma, n, 17, NoiseScaling::Absolute};
      const auto smooth = gradient_scores(micro, noise, 1);
      EXPECT_LT(max_abs_diff(smooth.li, base.li), 1e-9);
      // Each sample dots the constant gradient w_i with its own perturbed row,
      // so the mean is w_i . mean_k(e_i + noise_k).
      for (std::size_t i = 0; i < 2; ++i) {
        double expected = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const Tensor eps = sample_noise(e, noise, k);
          for (std::size_t d = 0; d < 2; ++d) expected += w.at(i, d) * (e.at(i, d) + eps.at(i, d));
        }
        EXPECT_NEAR(smooth.grad_input[i], expected / static_cast<double>(n), 1e-9);
      }
    }
  }
  EXPECT_NEAR(base.grad_input[0], 0.3 * 0.5 + 0.7 * 0.25, 1e-15);
}

TEST(MicroModel, ConstantOutputGivesZeroScores) {
  class Constant final : public ProbabilitySource {
   public:
    const Tensor& embeddings() const override { return e_; }
    std::vector<ad::Var> probabilities(ad::Tape& tape, ad::Var rows) const override {
      return {ad::add(ad::scale(ad::sum(rows), 0.0), tape.constant(Tensor::scalar(1.0)))};
    }
    Tensor e_ = Tensor::matrix(1, 2, {0.3, 0.4});
  } constant;
  auto s = gradient_scores(constant, {}, 1);
  EXPECT_EQ(s.li[0], 0.0);
  EXPECT_EQ(s.grad_input[0], 0.0);
}

TEST_P(BothArchitectures, ZeroEmbeddingRowHasZeroScore) {
  auto m = random_model(GetParam(), 3);
  for (double& v : std::span(m.params.get_mut("src_embed").storage()).subspan(5 * 6, 6)) v = 0.0;
  const TokenSeq src{3, 5, 7, 5};
  const TokenSeq tgt{4, 6, 8};
  for (std::size_t j = 0; j < tgt.size(); ++j) {
    auto psi = grad_input_saliency(m, src, tgt, j, tgt[j]);
    EXPECT_EQ(psi[1], 0.0);
    EXPECT_EQ(psi[3], 0.0);
    EXPECT_NE(psi[0], 0.0);
  }
}

TEST_P(BothArchitectures, DuplicateWordScoresSumToSharedRowScore) {
  std::size_t tested = 0;
  for (std::uint64_t inst = 0; inst < 24; ++inst) {
    auto m = random_model(GetParam(), 40 + inst);
    Rng rng(inst);
    TokenSeq src = random_seq(rng, 4 + inst % 5, m.config.vocab_size_src);
    src[src.size() - 1] = src[1];  // guarantee a repeat
    const TokenSeq tgt = random_seq(rng, 2 + inst % 4, m.config.vocab_size_tgt);
    const std::size_t j = inst % tgt.size();
    const TokenId label = (tgt[j] + inst) % m.config.vocab_size_tgt;
    const auto psi = grad_input_saliency(m, src, tgt, j, label);

    // No-copy run: the whole table is one leaf and rows are gathered from it.
    ad::Tape tape;
    const Tensor& table = m.params.get("src_embed");
    ad::Var w = tape.leaf(table);
    model::Graph g(m, tape, false);
    g.encode(ad::gather_rows(w, src));
    TokenSeq inputs{kBos};
    inputs.insert(inputs.end(), tgt.begin(), tgt.begin() + static_cast<std::ptrdiff_t>(j));
    auto steps = g.steps(inputs);
    ad::Var p = ad::pick(ad::softmax(steps[j].logits), label);
    const ad::Var wrt[] = {w};
    const Tensor grad = ad::backward(tape, p, wrt)[w];

    std::map<TokenId, double> per_word;
    for (std::size_t i = 0; i < src.size(); ++i) per_word[src[i]] += psi[i];
    for (const auto& [word, total] : per_word) {
      double shared = 0.0;
      for (std::size_t d = 0; d < m.config.embed_dim; ++d) shared += grad.at(word, d) * table.at(word, d);
      EXPECT_NEAR(total, shared, 1e-9) << "instance " << inst << " word " << word;
    }
    ++tested;
  }
  EXPECT_GE(tested, 20u);
}

TEST_P(BothArchitectures, ZeroNoiseEqualsBaseMethods) {
  auto m = random_model(GetParam(), 9);
  const TokenSeq src{3, 8, 4, 11, 8};
  const TokenSeq tgt{5, 7, 9, 4};
  for (Method smooth : {Method::SmoothGrad, Method::LiSmoothGrad, Method::SmoothedAttention}) {
    SaliencyConfig base_cfg;
    base_cfg.method = base_method(smooth);
    const auto base = saliency_matrix(m, src, tgt, base_cfg);
    for (std::size_t n : {1u, 7u, 30u}) {
      SaliencyConfig cfg{smooth, 0.0, n, 5, NoiseScaling::RangeRelative};
      const auto s = saliency_matrix(m, src, tgt, cfg);
      EXPECT_LE(max_abs_diff(s.values, base.values), 1e-12) << to_string(smooth) << " n=" << n;
    }
  }
}

TEST_P(BothArchitectures, SingleSampleEqualsManualPerturbedRun) {
  auto m = random_model(GetParam(), 12);
  const TokenSeq src{4, 6, 9};
  const TokenSeq tgt{3, 8};
  NoiseSpec noise{0.15, 1, 99, NoiseScaling::RangeRelative};
  ModelProbability clean(m, src, tgt);
  auto smooth = gradient_scores(clean, noise);

  Tensor rows = clean.embeddings();
  const Tensor eps = sample_noise(rows, noise, 0);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] += eps[i];
  FixedRows manual(m, src, tgt, rows);
  auto once = gradient_scores(manual, {}, 1);
  EXPECT_EQ(smooth.grad_input, once.grad_input);
  EXPECT_EQ(smooth.li, once.li);
  EXPECT_NE(smooth.grad_input, gradient_scores(clean, {}, 1).grad_input);
}

TEST_P(BothArchitectures, SeedControlsNoiseAndThreadsDoNot) {
  auto m = random_model(GetParam(), 13);
  const TokenSeq src{4, 6, 9, 10};
  const TokenSeq tgt{3, 8, 5};
  SaliencyConfig cfg{Method::SmoothGrad, 0.15, 6, 1, NoiseScaling::RangeRelative};
  const auto a = saliency_matrix(m, src, tgt, cfg, 1);
  const auto b = saliency_matrix(m, src, tgt, cfg, 3);
  EXPECT_EQ(a.values, b.values);
  cfg.seed = 2;
  EXPECT_NE(saliency_matrix(m, src, tgt, cfg, 1).values, a.values);
  cfg.method = Method::SmoothedAttention;
  EXPECT_EQ(saliency_matrix(m, src, tgt, cfg, 1).values, saliency_matrix(m, src, tgt, cfg, 2).values);
}

TEST_P(BothArchitectures, MatrixShapesSignsAndRows) {
  auto m = random_model(GetParam(), 14);
  const TokenSeq src{4, 6, 9, 10, 3};
  const TokenSeq tgt{3, 8, 5};
  SaliencyConfig li{Method::LiGrad, 0.0, 1, 0, NoiseScaling::RangeRelative};
  const auto lm = saliency_matrix(m, src, tgt, li);
  EXPECT_EQ(lm.values.shape(), (Shape{3, 5}));
  for (double v : lm.values.storage()) EXPECT_GE(v, 0.0);

  SaliencyConfig gi{Method::GradInput, 0.0, 1, 0, NoiseScaling::RangeRelative};
  const auto gm = saliency_matrix(m, src, tgt, gi);
  for (std::size_t j = 0; j < tgt.size(); ++j) {
    const auto row = grad_input_saliency(m, src, tgt, j, tgt[j]);
    for (std::size_t i = 0; i < src.size(); ++i) EXPECT_EQ(gm.values.at(j, i), row[i]);
  }
  const auto one = saliency_matrix(m, src, {tgt[0]}, gi);
  EXPECT_EQ(one.values.shape(), (Shape{1, 5}));
  const auto single = grad_input_saliency(m, src, {tgt[0]}, 0, tgt[0]);
  for (std::size_t i = 0; i < src.size(); ++i) EXPECT_EQ(one.values.at(0, i), single[i]);

  SaliencyConfig sa{Method::SmoothedAttention, 0.3, 4, 3, NoiseScaling::RangeRelative};
  const auto att = to_soft_alignment(saliency_matrix(m, src, tgt, sa));
  for (std::size_t j = 0; j < 3; ++j) {
    double z = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(att.probs.at(j, i), 0.0);
      z += att.probs.at(j, i);
    }
    EXPECT_NEAR(z, 1.0, 1e-9);
  }
  const auto plain = attention_matrix(m, src, tgt);
  const auto forced = model::force_decode(m, src, model::with_eos(tgt));
  const auto full = model::attention_alignment(forced);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(plain.probs.at(j, i), full.probs.at(j, i));
  }
}

TEST_P(BothArchitectures, InvalidQueriesRejected) {
  auto m = random_model(GetParam(), 15);
  EXPECT_THROW(grad_input_saliency(m, {3, 4}, {5}, 1, 5), ValidationError);
  EXPECT_THROW(grad_input_saliency(m, {3, 4}, {5}, 0, 99), ValidationError);
  EXPECT_THROW(grad_input_saliency(m, {}, {5}, 0, 5), ValidationError);
  EXPECT_THROW(smoothgrad(Method::Attention, m, {3}, {5}, 0, 5, {}), ValidationError);
  NoiseSpec bad{0.1, 0, 0, NoiseScaling::Absolute};
  EXPECT_THROW(smoothgrad(Method::GradInput, m, {3}, {5}, 0, 5, bad), ValidationError);
}

TEST(Normalize, ClampAndDivide) {
  const auto s = normalize_saliency(Tensor::matrix(3, 3, {2, -1, 2, -1, -2, 0, 0.3, 0.7, 0}));
  EXPECT_EQ(s.probs.at(0, 0), 0.5);
  EXPECT_EQ(s.probs.at(0, 1), 0.0);
  EXPECT_EQ(s.probs.at(0, 2), 0.5);
  EXPECT_FALSE(s.degenerate[0]);
  EXPECT_TRUE(s.degenerate[1]);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s.probs.at(1, i), 0.0);
  EXPECT_DOUBLE_EQ(s.probs.at(2, 0), 0.3);
  EXPECT_DOUBLE_EQ(s.probs.at(2, 1), 0.7);
  EXPECT_EQ(s.raw.at(1, 0), -1.0);
  // Degenerate row falls back to the raw argmax.
  const auto hard = align::soft_to_hard(s);
  EXPECT_TRUE(hard.contains(2, 1));
}

TEST(Normalize, AveragingRows) {
  const Tensor avg = average_rows({Tensor::matrix(1, 2, {1, 0}), Tensor::matrix(1, 2, {0, 1})});
  EXPECT_EQ(avg, Tensor::matrix(1, 2, {0.5, 0.5}));
  EXPECT_THROW(average_rows({}), ContractError);
}

TEST(Export, TsvAndJson) {
  SaliencyMatrix s{Tensor::matrix(2, 2, {0.1, -2.0, 1.0 / 3.0, 4.0}), {3, 4}, {5, 6},
                   SaliencyConfig{Method::SmoothGrad, 0.15, 30, 7, NoiseScaling::RangeRelative}};
  EXPECT_EQ(to_tsv(s.values), "0.10000000000000001\t-2\n0.33333333333333331\t4\n");
  auto j = nlohmann::json::parse(to_json(s, {"a", "b"}, {"c", "d"}));
  EXPECT_EQ(j["method"], "smoothgrad");
  EXPECT_EQ(j["n"], 30);
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["matrix"][1][0].get<double>(), 1.0 / 3.0);
  EXPECT_EQ(j["src_tokens"][1], "b");
}

INSTANTIATE_TEST_SUITE_P(Models, BothArchitectures,
                         ::testing::Values(Architecture::RnnAttn, Architecture::MiniTransformer),
                         [](const auto& info) {
                           return info.param == Architecture::RnnAttn ? std::string("RnnAttn")
                                                                      : std::string("MiniTransformer");
                         });
