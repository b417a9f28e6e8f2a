#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "salign/error.hpp"
#include "salign/harness/harness.hpp"
#include "salign/model/decode.hpp"
#include "salign/saliency/saliency.hpp"
#include "salign/util/io.hpp"

using namespace salign;
using namespace salign::harness;
namespace fs = std::filesystem;

namespace {

align::AlignmentSet links(std::size_t s, std::size_t t, std::initializer_list<align::Link> ls) {
  align::AlignmentSet a(s, t);
  for (const auto& l : ls) a.insert(l);
  return a;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("salign_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

model::Model random_model(const corpus::CorpusBundle& b, model::Architecture arch, std::uint64_t seed) {
  model::ModelConfig c;
  c.architecture = arch;
  c.vocab_size_src = b.src_vocab.size();
  c.vocab_size_tgt = b.tgt_vocab.size();
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.seed = seed;
  return model::init_model(c);
}

corpus::CorpusBundle small_bundle(corpus::Task task, std::size_t pairs, std::uint64_t seed = 3) {
  corpus::GeneratorSettings s;
  s.vocab_size = 23;
  s.n_pairs = pairs;
  s.min_len = 4;
  s.max_len = 8;
  s.seed = seed;
  s.insert_rate = 0.3;
  s.neg_rate = 0.3;
  return corpus::make_bundle(corpus::generate(task, s), {0.6, 0.2, 0.2});
}

}  // namespace

TEST(PooledAer, MatchesDirectSummation) {
  const auto g1 = align::GoldAlignment{links(3, 3, {{0, 0}, {1, 1}}), links(3, 3, {{0, 0}, {1, 1}, {2, 1}})};
  const auto g2 = align::GoldAlignment::from_sure(links(2, 2, {{0, 1}, {1, 0}}));
  const auto h1 = links(3, 3, {{0, 0}, {2, 1}});
  const auto h2 = links(2, 2, {{0, 1}, {0, 0}, {1, 1}});
  // |A&S| = 1 + 1, |A&P| = 2 + 1, |A| = 2 + 3, |S| = 2 + 2.
  const double direct = 1.0 - (2.0 + 3.0) / (5.0 + 4.0);
  EXPECT_DOUBLE_EQ(pooled_aer({h1, h2}, {g1, g2}), direct);
  const double averaged = (align::aer(h1, g1) + align::aer(h2, g2)) / 2.0;
  EXPECT_NE(pooled_aer({h1, h2}, {g1, g2}), averaged);
  EXPECT_THROW(pooled_aer({h1}, {g1, g2}), ValidationError);
}

TEST(PooledAer, GoldAsHypothesisScoresZero) {
  auto b = small_bundle(corpus::Task::DictInsert, 40);
  std::vector<align::AlignmentSet> hyps;
  std::vector<align::GoldAlignment> golds;
  for (const auto& p : b.splits.train) {
    hyps.push_back(p.gold.sure);
    golds.push_back(p.gold);
  }
  EXPECT_EQ(pooled_aer(hyps, golds), 0.0);
}

TEST(PooledEntropy, WeightsByTargetWords) {
  align::SoftAlignment a{Tensor::matrix(1, 2, {0.5, 0.5}), Tensor::matrix(1, 2, {0.5, 0.5}), {false}, {}};
  align::SoftAlignment b{Tensor::matrix(3, 2, {1, 0, 1, 0, 1, 0}), Tensor::matrix(3, 2, {1, 0, 1, 0, 1, 0}),
                         {false, false, false}, {}};
  EXPECT_NEAR(pooled_entropy({a, b}), std::log(2.0) / 4.0, 1e-15);
  EXPECT_EQ(pooled_entropy({}), 0.0);
}

TEST(FreeReference, HandEnumeration) {
  corpus::Lexicon lex;
  // Source ids 3,4,5,6 translate to 10,11,12,13; function token 20.
  lex.dictionary = {10, 11, 12, 13};
  lex.function_tokens = {20};
  const TokenSeq src{3, 4, 5};
  // Block 2 over 3 words sends source 0 -> slot 1, 1 -> slot 0, 2 -> slot 2.
  const TokenSeq hyp{11, 20, 10};
  auto ref = free_reference(corpus::Task::DictInsert, lex, 2, src, hyp);
  EXPECT_EQ(ref.sure, links(3, 3, {{1, 0}, {0, 2}}));
  EXPECT_EQ(ref.possible, ref.sure);

  // A token outside the dictionary and a word missing from the source stay unaligned.
  auto partial = free_reference(corpus::Task::DictInsert, lex, 2, src, TokenSeq{11, 99, 13});
  EXPECT_EQ(partial.sure, links(3, 3, {{1, 0}}));
}

TEST(FreeReference, RepeatedSourceWordsUseSlotBookkeeping) {
  corpus::Lexicon lex;
  lex.dictionary = {10, 11};
  const TokenSeq src{3, 4, 3, 4};
  // Slots: 0 -> 1, 1 -> 0, 2 -> 3, 3 -> 2.
  const TokenSeq hyp{11, 10, 11, 10};
  auto ref = free_reference(corpus::Task::DictPermute, lex, 2, src, hyp);
  EXPECT_EQ(ref.sure, links(4, 4, {{1, 0}, {0, 1}, {3, 2}, {2, 3}}));
}

TEST(FreeReference, ReproducesGoldForCorrectTranslations) {
  for (auto task : {corpus::Task::DictPermute, corpus::Task::DictInsert}) {
    auto b = small_bundle(task, 200);
    std::size_t mappable = 0;
    for (const auto& p : b.splits.train) {
      const auto ref = free_reference(task, b.lexicon, b.settings.block, p.src, p.tgt);
      EXPECT_EQ(ref, p.gold);
      mappable += p.src.size();
      EXPECT_EQ(ref.sure.size(), p.src.size());
    }
    EXPECT_GT(mappable, 0u);
  }
}

TEST(FreeReference, RejectsTasksWithoutDictionary) {
  corpus::Lexicon lex;
  EXPECT_THROW(free_reference(corpus::Task::Copy, lex, 2, {3}, {3}), UnsupportedTask);
  EXPECT_THROW(free_reference(corpus::Task::Polarity, lex, 2, {3}, {3}), UnsupportedTask);
}

TEST(MeanStdev, Examples) {
  const auto a = mean_stdev({0.2, 0.4});
  EXPECT_NEAR(a.mean, 0.3, 1e-15);
  EXPECT_NEAR(a.stdev, 0.1414213562373095, 1e-12);
  const auto b = mean_stdev({0.25, 0.25, 0.25});
  EXPECT_EQ(b.stdev, 0.0);
  EXPECT_EQ(mean_stdev({0.5}).stdev, 0.0);
  EXPECT_THROW(mean_stdev({}), ValidationError);
}

TEST(ExperimentSpec, JsonRoundTripAndValidation) {
  ExperimentSpec s;
  s.checkpoint = "a.ckpt";
  s.corpus = "c/manifest.json";
  s.methods = {SaliencyConfig{Method::SmoothGrad, 0.15, 30, 4, NoiseScaling::Absolute},
               SaliencyConfig{Method::Attention, 0.0, 1, 0, NoiseScaling::RangeRelative}};
  s.seeds = {1, 2};
  s.limit = 7;
  s.output_dir = "out";
  const auto back = ExperimentSpec::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(back.methods, s.methods);
  EXPECT_EQ(*back.limit, 7u);

  ExperimentSpec empty = s;
  empty.methods.clear();
  EXPECT_THROW(empty.validate(), ValidationError);
  ExperimentSpec sym = s;
  sym.symmetrize = true;
  EXPECT_THROW(sym.validate(), ValidationError);
  sym.reverse_checkpoint = "b.ckpt";
  EXPECT_NO_THROW(sym.validate());
  EXPECT_THROW(ExperimentSpec::from_json("{\"checkpoint\": 3}"), ValidationError);
  EXPECT_THROW(ExperimentSpec::from_json("not json"), ValidationError);
  EXPECT_THROW(saliency_config_from_json("{\"method\": \"saliency\"}"), ValidationError);

  const auto plain = saliency_config_from_json("{\"method\": \"grad-input\"}");
  EXPECT_EQ(plain.sigma, 0.0);
  EXPECT_EQ(plain.n_samples, 1u);
  const auto smooth = saliency_config_from_json("{\"method\": \"smoothgrad\"}");
  EXPECT_EQ(smooth.sigma, 0.15);
  EXPECT_EQ(smooth.n_samples, 30u);
}

TEST(OptimizerJson, RoundTrip) {
  model::OptimizerSettings o;
  o.lr = 5e-3;
  o.batch_size = 16;
  o.target_dev_loss = 0.25;
  const auto back = optimizer_from_json(optimizer_json(o));
  EXPECT_EQ(back.lr, o.lr);
  EXPECT_EQ(back.batch_size, 16u);
  EXPECT_EQ(*back.target_dev_loss, 0.25);
  EXPECT_THROW(optimizer_from_json("{\"lr\": -1}"), ValidationError);
}

TEST(ForceEval, DeterministicAcrossThreadsAndCountsFailures) {
  auto b = small_bundle(corpus::Task::DictPermute, 60);
  auto m = random_model(b, model::Architecture::RnnAttn, 5);
  SaliencyConfig sg{Method::SmoothGrad, 0.15, 4, 9, NoiseScaling::RangeRelative};
  auto pairs = b.splits.test;
  const auto a = evaluate_force(m, nullptr, pairs, sg, 1);
  const auto c = evaluate_force(m, nullptr, pairs, sg, 4);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].row.aer, c[0].row.aer);
  EXPECT_EQ(a[0].row.entropy, c[0].row.entropy);
  EXPECT_EQ(a[0].row.failures, 0u);
  EXPECT_EQ(a[0].row.sentences, pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(a[0].sentences[i].soft.raw, c[0].sentences[i].soft.raw);
  }

  // An out-of-vocabulary token makes one sentence fail; it is excluded and counted.
  pairs[0].src[0] = 1000;
  const auto f = evaluate_force(m, nullptr, pairs, sg, 2);
  EXPECT_EQ(f[0].row.failures, 1u);
  EXPECT_EQ(f[0].row.sentences, pairs.size() - 1);
  EXPECT_TRUE(f[0].sentences[0].error.has_value());
}

TEST(ForceEval, SymmetrizedRunsUseBothDirections) {
  auto b = small_bundle(corpus::Task::DictPermute, 40);
  auto fwd = random_model(b, model::Architecture::RnnAttn, 5);
  model::ModelConfig rc = fwd.config;
  std::swap(rc.vocab_size_src, rc.vocab_size_tgt);
  auto rev = model::init_model(rc);
  const auto runs = evaluate_force(fwd, &rev, b.splits.test, SaliencyConfig{Method::Attention, 0, 1, 0, {}}, 2);
  ASSERT_EQ(runs.size(), 3u);
  EXPECT_EQ(runs[0].row.direction, "forward");
  EXPECT_EQ(runs[1].row.direction, "reverse");
  EXPECT_EQ(runs[2].row.direction, "symmetrized");
  for (std::size_t i = 0; i < b.splits.test.size(); ++i) {
    const auto& f = runs[0].sentences[i].hypothesis;
    const auto& r = runs[1].sentences[i].hypothesis;
    const auto& s = runs[2].sentences[i].hypothesis;
    EXPECT_TRUE(align::set_intersection(f, r).subset_of(s));
    EXPECT_TRUE(s.subset_of(align::set_union(f, r)));
  }
}

TEST(ForceEval, ZeroSigmaSweepEqualsPlainMethod) {
  auto b = small_bundle(corpus::Task::DictPermute, 40);
  auto m = random_model(b, model::Architecture::MiniTransformer, 6);
  const auto plain = evaluate_force(m, nullptr, b.splits.test, SaliencyConfig{Method::GradInput, 0, 1, 0, {}}, 2);
  const auto zero = evaluate_force(m, nullptr, b.splits.test, SaliencyConfig{Method::SmoothGrad, 0, 30, 3, {}}, 2);
  EXPECT_EQ(plain[0].row.aer, zero[0].row.aer);
  EXPECT_EQ(plain[0].row.entropy, zero[0].row.entropy);
}

TEST(ForceEval, AttentionOnTrainedCopyModelIsDiagonal) {
  corpus::GeneratorSettings s;
  s.vocab_size = 23;
  s.n_pairs = 500;
  s.min_len = 4;
  s.max_len = 8;
  s.seed = 2;
  auto b = corpus::make_bundle(corpus::gen_copy(s), {0.8, 0.1, 0.1});
  model::ModelConfig c;
  c.vocab_size_src = b.src_vocab.size();
  c.vocab_size_tgt = b.tgt_vocab.size();
  model::OptimizerSettings o;
  o.lr = 5e-3;
  o.batch_size = 16;
  o.epochs = 40;
  o.target_dev_loss = 0.05;
  const auto trained = model::train(c, examples_of(b.splits.train), o, examples_of(b.splits.dev));
  ASSERT_LT(trained.dev_curve.back(), 0.05);
  const auto runs = evaluate_force(trained.model, nullptr, b.splits.test,
                                   SaliencyConfig{Method::Attention, 0, 1, 0, {}});
  EXPECT_LE(runs[0].row.aer, 0.05);
}

TEST(FreeEval, SourcesOnlyAndEmptyHypothesesContributeNothing) {
  auto b = small_bundle(corpus::Task::DictInsert, 40);
  auto m = random_model(b, model::Architecture::RnnAttn, 7);
  std::vector<TokenSeq> sources;
  for (const auto& p : b.splits.test) sources.push_back(p.src);
  const auto run = evaluate_free(m, b.task, b.lexicon, b.settings.block, sources,
                                 SaliencyConfig{Method::GradInput, 0, 1, 0, {}}, 2);
  ASSERT_EQ(run.sentences.size(), sources.size());
  EXPECT_EQ(run.row.failures, 0u);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto hyp = model::greedy_decode(m, sources[i], m.config.max_len).hypothesis;
    const auto& r = run.sentences[i];
    EXPECT_EQ(r.reference, free_reference(b.task, b.lexicon, b.settings.block, sources[i], hyp));
    EXPECT_EQ(r.hypothesis.tgt_len(), hyp.size());
  }
  EXPECT_THROW(evaluate_free(m, corpus::Task::Copy, b.lexicon, 2, sources, SaliencyConfig{}, 1),
               UnsupportedTask);
}

TEST(RunExperiment, WritesTablesAndRerunsIdentically) {
  const auto dir = scratch("run");
  auto b = small_bundle(corpus::Task::DictPermute, 50);
  corpus::write_bundle(b, dir / "corpus");
  auto m = random_model(b, model::Architecture::RnnAttn, 8);
  model::save_checkpoint(dir / "m.ckpt", m);

  ExperimentSpec spec;
  spec.checkpoint = dir / "m.ckpt";
  spec.corpus = dir / "corpus" / "manifest.json";
  spec.methods = {SaliencyConfig{Method::SmoothGrad, 0.15, 3, 1, {}}, SaliencyConfig{Method::LiGrad, 0, 1, 0, {}}};
  spec.output_dir = dir / "out1";
  spec.dump_soft = true;
  const auto t1 = run_experiment(spec, 1);
  spec.output_dir = dir / "out2";
  const auto t2 = run_experiment(spec, 3);
  EXPECT_EQ(t1.to_tsv(), t2.to_tsv());
  for (const auto& f : fs::recursive_directory_iterator(dir / "out1")) {
    if (!f.is_regular_file() || f.path().filename() == "timing.tsv") continue;
    const auto rel = fs::relative(f.path(), dir / "out1");
    EXPECT_EQ(read_file(f.path()), read_file(dir / "out2" / rel)) << rel;
  }
  EXPECT_TRUE(fs::exists(dir / "out1" / "results.json"));
  EXPECT_EQ(read_lines(dir / "out1" / "hyp.li-grad_s0_n1_seed0.forward.pharaoh").size(), b.splits.test.size());

  // Li-grad dumps are non-negative.
  for (const auto& f : fs::directory_iterator(dir / "out1" / "soft" / "li-grad_s0_n1_seed0.forward")) {
    for (const auto& line : read_lines(f.path())) {
      for (const auto& v : split_whitespace(line)) EXPECT_GE(std::stod(v), 0.0);
    }
  }

  spec.checkpoint = dir / "missing.ckpt";
  EXPECT_THROW(run_experiment(spec), IoError);
}

TEST(SigmaSweep, OneRowPerSigmaAndSortedGrid) {
  const auto dir = scratch("sweep");
  auto b = small_bundle(corpus::Task::DictPermute, 40);
  corpus::write_bundle(b, dir / "corpus");
  auto m = random_model(b, model::Architecture::RnnAttn, 9);
  model::save_checkpoint(dir / "m.ckpt", m);
  ExperimentSpec spec;
  spec.checkpoint = dir / "m.ckpt";
  spec.corpus = dir / "corpus";
  spec.methods = {SaliencyConfig{Method::SmoothGrad, 0.15, 3, 1, {}}, SaliencyConfig{Method::Attention, 0, 1, 0, {}}};
  spec.output_dir = dir / "out";
  const auto t = sigma_sweep(spec, kDefaultSigmas, 2);
  ASSERT_EQ(t.rows.size(), 5u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(t.rows[k].method.sigma, kDefaultSigmas[k]);
  EXPECT_EQ(t.rows[4].method.method, Method::Attention);
  for (const auto& r : t.rows) {
    EXPECT_GE(r.aer, 0.0);
    EXPECT_LE(r.aer, 1.0);
    EXPECT_GE(r.entropy, 0.0);
  }
  EXPECT_THROW(sigma_sweep(spec, {0.3, 0.0}), ValidationError);
  EXPECT_THROW(sigma_sweep(spec, {}), ValidationError);

  spec.methods = {SaliencyConfig{Method::SmoothGrad, 0.15, 5, 1, {}}};
  const auto zero = sigma_sweep(spec, {0.0}, 2);
  spec.methods = {SaliencyConfig{Method::GradInput, 0, 1, 0, {}}};
  const auto plain = run_force_eval(spec, 2);
  EXPECT_EQ(zero.rows[0].aer, plain.rows[0].aer);
  EXPECT_EQ(zero.rows[0].entropy, plain.rows[0].entropy);
}

TEST(Polarity, UntrainedModelFailsPrecondition) {
  auto b = small_bundle(corpus::Task::Polarity, 60);
  auto m = random_model(b, model::Architecture::RnnAttn, 3);
  try {
    polarity_check(m, b, 1);
    FAIL() << "expected a precondition error";
  } catch (const PreconditionError& e) {
    EXPECT_GT(e.measured(), 0.1);
  }
  auto other = small_bundle(corpus::Task::DictPermute, 20);
  EXPECT_THROW(polarity_check(random_model(other, model::Architecture::RnnAttn, 1), other, 1), UnsupportedTask);
}

TEST(Stability, IdenticalSeedsGiveZeroStdev) {
  const auto dir = scratch("stability");
  auto b = small_bundle(corpus::Task::DictPermute, 40);
  corpus::write_bundle(b, dir / "corpus");
  StabilitySpec spec;
  spec.corpus = dir / "corpus";
  spec.model.embed_dim = 8;
  spec.model.hidden_dim = 8;
  spec.optimizer.epochs = 2;
  spec.methods = {SaliencyConfig{Method::GradInput, 0, 1, 0, {}}, SaliencyConfig{Method::Attention, 0, 1, 0, {}}};
  spec.seeds = {4, 4};
  const auto rows = stability_run(spec, 2);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.aers.size(), 2u);
    EXPECT_EQ(r.aer.stdev, 0.0);
  }
  spec.seeds = {4, 5, 6};
  for (const auto& r : stability_run(spec, 2)) EXPECT_TRUE(std::isfinite(r.aer.stdev));
  spec.seeds = {4};
  EXPECT_THROW(spec.validate(), ValidationError);

  StabilitySpec round = StabilitySpec::from_json(
      "{\"corpus\": \"c\", \"methods\": [{\"method\": \"attention\"}], \"seeds\": [1, 2],"
      " \"model\": {\"embed_dim\": 16}, \"optimizer\": {\"epochs\": 3}}");
  EXPECT_EQ(round.model.embed_dim, 16u);
  EXPECT_EQ(round.optimizer.epochs, 3u);
}
