#include "salign/harness/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "salign/error.hpp"
#include "salign/model/decode.hpp"
#include "salign/saliency/saliency.hpp"
#include "salign/util/io.hpp"
#include "salign/util/parallel.hpp"
#include "salign/util/rng.hpp"

namespace salign::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t resolve_threads(std::size_t threads) { return threads ? threads : configured_threads(); }

json method_to_json(const SaliencyConfig& c) {
  return {{"method", std::string(salign::to_string(c.method))},
          {"sigma", c.sigma},
          {"n", c.n_samples},
          {"seed", c.seed},
          {"noise_scaling", std::string(salign::to_string(c.noise_scaling))}};
}

SaliencyConfig method_from_json(const json& j) {
  SaliencyConfig c;
  const std::string name = j.at("method").get<std::string>();
  const auto m = parse_method(name);
  if (!m) throw ValidationError("unknown method '" + name + "' (expected one of " + method_names() + ")");
  c.method = *m;
  if (!is_smoothed(c.method)) {
    c.sigma = 0.0;
    c.n_samples = 1;
  }
  c.sigma = j.value("sigma", c.sigma);
  c.n_samples = j.value("n", c.n_samples);
  c.seed = j.value("seed", c.seed);
  if (j.contains("noise_scaling")) {
    const std::string s = j.at("noise_scaling").get<std::string>();
    const auto scaling = parse_noise_scaling(s);
    if (!scaling) throw ValidationError("unknown noise scaling '" + s + "'");
    c.noise_scaling = *scaling;
  }
  c.validate();
  return c;
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed ") + what + ": " + e.what());
  }
}

std::vector<corpus::SentencePair> selected(const corpus::CorpusBundle& b, const std::string& split,
                                           std::optional<std::size_t> limit) {
  auto pairs = b.split_named(split);
  if (limit && *limit < pairs.size()) pairs.resize(*limit);
  return pairs;
}

model::Model load_model_checked(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  return model::load_checkpoint(path);
}

corpus::CorpusBundle load_corpus_checked(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("corpus not found: " + path.string());
  return corpus::load_bundle(path);
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

SaliencyConfig with_sentence_seed(SaliencyConfig c, std::size_t index) {
  c.seed = sentence_seed(c.seed, index);
  return c;
}

// Pools counts and entropies of the successful sentences into a row.
ResultRow summarize(const SaliencyConfig& method, const std::string& direction,
                    const std::vector<SentenceResult>& sentences) {
  ResultRow row;
  row.method = method;
  row.direction = direction;
  std::vector<align::SoftAlignment> softs;
  for (const auto& s : sentences) {
    if (s.error) {
      ++row.failures;
      continue;
    }
    ++row.sentences;
    row.counts += align::aer_counts(s.hypothesis, s.reference);
    softs.push_back(s.soft);
  }
  row.aer = row.counts.aer();
  row.entropy = pooled_entropy(softs);
  return row;
}

std::vector<SaliencyConfig> expand_seeds(const std::vector<SaliencyConfig>& methods,
                                         const std::vector<std::uint64_t>& seeds) {
  std::vector<SaliencyConfig> out;
  for (const auto& m : methods) {
    if (seeds.empty()) {
      out.push_back(m);
      continue;
    }
    for (auto seed : seeds) {
      SaliencyConfig c = m;
      c.seed = seed;
      out.push_back(c);
    }
  }
  return out;
}

std::string format_sigma(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string method_tag(const SaliencyConfig& c) {
  return std::string(salign::to_string(c.method)) + "_s" + format_sigma(c.sigma) + "_n" +
         std::to_string(c.n_samples) + "_seed" + std::to_string(c.seed);
}

struct LoadedExperiment {
  model::Model forward;
  std::optional<model::Model> reverse;
  corpus::CorpusBundle bundle;
  std::vector<corpus::SentencePair> pairs;
};

LoadedExperiment load(const ExperimentSpec& spec) {
  spec.validate();
  LoadedExperiment e{load_model_checked(spec.checkpoint), std::nullopt, load_corpus_checked(spec.corpus), {}};
  if (spec.symmetrize) e.reverse = load_model_checked(*spec.reverse_checkpoint);
  e.pairs = selected(e.bundle, spec.split, spec.limit);
  return e;
}

std::vector<MethodRun> run_methods(const LoadedExperiment& e, const ExperimentSpec& spec,
                                   const std::vector<SaliencyConfig>& methods, std::size_t threads) {
  std::vector<MethodRun> runs;
  if (spec.mode == Mode::Force) {
    for (const auto& m : methods) {
      auto r = evaluate_force(e.forward, e.reverse ? &*e.reverse : nullptr, e.pairs, m, threads);
      for (auto& run : r) runs.push_back(std::move(run));
    }
  } else {
    // Free mode sees the sources only.
    std::vector<TokenSeq> sources;
    sources.reserve(e.pairs.size());
    for (const auto& p : e.pairs) sources.push_back(p.src);
    for (const auto& m : methods) {
      runs.push_back(evaluate_free(e.forward, e.bundle.task, e.bundle.lexicon, e.bundle.settings.block,
                                   sources, m, threads));
    }
  }
  return runs;
}

ResultTable table_of(const std::vector<MethodRun>& runs) {
  ResultTable t;
  for (const auto& r : runs) t.rows.push_back(r.row);
  return t;
}

void write_outputs(const ExperimentSpec& spec, const std::vector<MethodRun>& runs) {
  const ResultTable table = table_of(runs);
  write_file_atomic(spec.output_dir / "results.tsv", table.to_tsv());
  write_file_atomic(spec.output_dir / "results.json", table.to_json());
  write_file_atomic(spec.output_dir / "timing.tsv", table.timing_tsv());
  for (const auto& run : runs) {
    const std::string tag = method_tag(run.row.method) + "." + run.row.direction;
    std::string hyp;
    for (const auto& s : run.sentences) {
      if (!s.error) hyp += align::write_pharaoh(s.hypothesis);
      hyp += '\n';
    }
    write_file_atomic(spec.output_dir / ("hyp." + tag + ".pharaoh"), hyp);
    if (spec.dump_soft && run.row.direction != "symmetrized") {
      for (std::size_t i = 0; i < run.sentences.size(); ++i) {
        const auto& s = run.sentences[i];
        if (s.error || s.soft.raw.shape().rank() != 2) continue;
        write_file_atomic(spec.output_dir / "soft" / tag / (std::to_string(i) + ".tsv"),
                          saliency::to_tsv(s.soft.raw));
      }
    }
  }
}

}  // namespace

std::string_view to_string(Mode m) noexcept { return m == Mode::Force ? "force" : "free"; }

std::optional<Mode> parse_mode(std::string_view name) noexcept {
  if (name == "force") return Mode::Force;
  if (name == "free") return Mode::Free;
  return std::nullopt;
}

void ExperimentSpec::validate() const {
  if (methods.empty()) throw ValidationError("experiment needs at least one method");
  for (const auto& m : methods) m.validate();
  if (symmetrize && !reverse_checkpoint) {
    throw ValidationError("symmetrize requires a reverse-direction checkpoint");
  }
  if (symmetrize && mode == Mode::Free) {
    throw ValidationError("symmetrization is only available in force mode");
  }
  if (split != "train" && split != "dev" && split != "test") {
    throw ValidationError("unknown split '" + split + "' (expected train, dev or test)");
  }
}

std::string ExperimentSpec::to_json() const {
  json j;
  j["checkpoint"] = checkpoint.string();
  j["reverse_checkpoint"] = reverse_checkpoint ? json(reverse_checkpoint->string()) : json(nullptr);
  j["corpus"] = corpus.string();
  j["methods"] = json::array();
  for (const auto& m : methods) j["methods"].push_back(method_to_json(m));
  j["mode"] = std::string(harness::to_string(mode));
  j["symmetrize"] = symmetrize;
  j["output_dir"] = output_dir.string();
  j["seeds"] = seeds;
  j["split"] = split;
  j["limit"] = limit ? json(*limit) : json(nullptr);
  j["dump_soft"] = dump_soft;
  return j.dump(2);
}

ExperimentSpec ExperimentSpec::from_json(std::string_view text) {
  const json j = parse_json(text, "experiment spec");
  ExperimentSpec s;
  try {
    s.checkpoint = j.at("checkpoint").get<std::string>();
    if (j.contains("reverse_checkpoint") && !j["reverse_checkpoint"].is_null()) {
      s.reverse_checkpoint = fs::path(j["reverse_checkpoint"].get<std::string>());
    }
    s.corpus = j.at("corpus").get<std::string>();
    for (const auto& m : j.at("methods")) s.methods.push_back(method_from_json(m));
    const std::string mode = j.value("mode", std::string("force"));
    const auto parsed = parse_mode(mode);
    if (!parsed) throw ValidationError("unknown mode '" + mode + "' (expected force or free)");
    s.mode = *parsed;
    s.symmetrize = j.value("symmetrize", false);
    s.output_dir = j.value("output_dir", std::string("."));
    s.seeds = j.value("seeds", std::vector<std::uint64_t>{});
    s.split = j.value("split", std::string("test"));
    if (j.contains("limit") && !j["limit"].is_null()) s.limit = j["limit"].get<std::size_t>();
    s.dump_soft = j.value("dump_soft", false);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed experiment spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::string saliency_config_json(const SaliencyConfig& c) { return method_to_json(c).dump(); }

SaliencyConfig saliency_config_from_json(std::string_view text) {
  const json j = parse_json(text, "method config");
  try {
    return method_from_json(j);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed method config: ") + e.what());
  }
}

std::string optimizer_json(const model::OptimizerSettings& o) {
  json j = {{"lr", o.lr},       {"beta1", o.beta1},   {"beta2", o.beta2},
            {"eps", o.eps},     {"epochs", o.epochs}, {"batch_size", o.batch_size},
            {"seed", o.seed},   {"clip_norm", o.clip_norm}};
  j["target_dev_loss"] = o.target_dev_loss ? json(*o.target_dev_loss) : json(nullptr);
  return j.dump();
}

model::OptimizerSettings optimizer_from_json(std::string_view text) {
  const json j = parse_json(text, "optimizer settings");
  model::OptimizerSettings o;
  try {
    o.lr = j.value("lr", o.lr);
    o.beta1 = j.value("beta1", o.beta1);
    o.beta2 = j.value("beta2", o.beta2);
    o.eps = j.value("eps", o.eps);
    o.epochs = j.value("epochs", o.epochs);
    o.batch_size = j.value("batch_size", o.batch_size);
    o.seed = j.value("seed", o.seed);
    o.clip_norm = j.value("clip_norm", o.clip_norm);
    if (j.contains("target_dev_loss") && !j["target_dev_loss"].is_null()) {
      o.target_dev_loss = j["target_dev_loss"].get<double>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed optimizer settings: ") + e.what());
  }
  o.validate();
  return o;
}

std::string ResultTable::to_tsv() const {
  std::string out = "method\tsigma\tn\tseed\tdirection\taer\tentropy\tsentences\tfailures\n";
  for (const auto& r : rows) {
    out += std::string(salign::to_string(r.method.method)) + '\t' + format_g17(r.method.sigma) + '\t' +
           std::to_string(r.method.n_samples) + '\t' + std::to_string(r.method.seed) + '\t' +
           r.direction + '\t' + format_g17(r.aer) + '\t' + format_g17(r.entropy) + '\t' +
           std::to_string(r.sentences) + '\t' + std::to_string(r.failures) + '\n';
  }
  return out;
}

std::string ResultTable::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    json j = method_to_json(r.method);
    j["direction"] = r.direction;
    j["aer"] = r.aer;
    j["entropy"] = r.entropy;
    j["sentences"] = r.sentences;
    j["failures"] = r.failures;
    j["counts"] = {{"hyp_and_sure", r.counts.hyp_and_sure},
                   {"hyp_and_possible", r.counts.hyp_and_possible},
                   {"hyp", r.counts.hyp},
                   {"sure", r.counts.sure}};
    rows_json.push_back(j);
  }
  return json{{"rows", rows_json}}.dump(2) + "\n";
}

std::string ResultTable::timing_tsv() const {
  std::string out = "method\tsigma\tn\tseed\tdirection\tseconds\n";
  for (const auto& r : rows) {
    out += std::string(salign::to_string(r.method.method)) + '\t' + format_g17(r.method.sigma) + '\t' +
           std::to_string(r.method.n_samples) + '\t' + std::to_string(r.method.seed) + '\t' +
           r.direction + '\t' + format_fixed(r.seconds, 3) + '\n';
  }
  return out;
}

std::uint64_t sentence_seed(std::uint64_t seed, std::size_t index) {
  return derive_seed(seed, {0x5e47, index});
}

double pooled_aer(const std::vector<align::AlignmentSet>& hyps,
                  const std::vector<align::GoldAlignment>& golds) {
  if (hyps.size() != golds.size()) throw ValidationError("hypothesis and gold counts differ");
  align::AerCounts total;
  for (std::size_t i = 0; i < hyps.size(); ++i) total += align::aer_counts(hyps[i], golds[i]);
  return total.aer();
}

double pooled_entropy(const std::vector<align::SoftAlignment>& softs) {
  double sum = 0.0;
  std::size_t rows = 0;
  for (const auto& s : softs) {
    if (s.probs.shape().rank() != 2 || s.tgt_len() == 0) continue;
    sum += align::dispersion_entropy(s) * static_cast<double>(s.tgt_len());
    rows += s.tgt_len();
  }
  return rows ? sum / static_cast<double>(rows) : 0.0;
}

std::vector<MethodRun> evaluate_force(const model::Model& forward, const model::Model* reverse,
                                      const std::vector<corpus::SentencePair>& pairs,
                                      const SaliencyConfig& method, std::size_t threads) {
  method.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = pairs.size();
  std::vector<SentenceResult> fwd(n), rev(reverse ? n : 0), sym(reverse ? n : 0);

  parallel_for(
      n,
      [&](std::size_t i) {
        const auto& p = pairs[i];
        const SaliencyConfig cfg = with_sentence_seed(method, i);
        try {
          auto& f = fwd[i];
          f.target = p.tgt;
          f.reference = p.gold;
          f.soft = saliency::to_soft_alignment(saliency::saliency_matrix(forward, p.src, p.tgt, cfg, 1));
          f.hypothesis = align::soft_to_hard(f.soft);
        } catch (const Error& e) {
          fwd[i].error = e.what();
        }
        if (!reverse) return;
        try {
          auto& r = rev[i];
          r.target = p.tgt;
          r.reference = p.gold;
          r.soft = saliency::to_soft_alignment(saliency::saliency_matrix(*reverse, p.tgt, p.src, cfg, 1));
          r.hypothesis = align::soft_to_hard(r.soft).transposed();
        } catch (const Error& e) {
          rev[i].error = e.what();
        }
        auto& s = sym[i];
        if (fwd[i].error || rev[i].error) {
          s.error = fwd[i].error ? fwd[i].error : rev[i].error;
          return;
        }
        s.target = p.tgt;
        s.reference = p.gold;
        s.hypothesis = align::grow_diag_final(fwd[i].hypothesis, rev[i].hypothesis);
        s.soft = fwd[i].soft;
      },
      resolve_threads(threads));

  std::vector<MethodRun> runs;
  runs.push_back({summarize(method, "forward", fwd), std::move(fwd)});
  if (reverse) {
    runs.push_back({summarize(method, "reverse", rev), std::move(rev)});
    MethodRun s{summarize(method, "symmetrized", sym), std::move(sym)};
    // Dispersion of a symmetrized alignment: both directions' rows pooled.
    std::vector<align::SoftAlignment> both;
    for (std::size_t i = 0; i < n; ++i) {
      if (s.sentences[i].error) continue;
      both.push_back(runs[0].sentences[i].soft);
      both.push_back(runs[1].sentences[i].soft);
    }
    s.row.entropy = pooled_entropy(both);
    runs.push_back(std::move(s));
  }
  const double seconds = elapsed(start);
  for (auto& r : runs) r.row.seconds = seconds;
  return runs;
}

align::GoldAlignment free_reference(corpus::Task task, const corpus::Lexicon& lexicon,
                                    std::size_t block, const TokenSeq& src, const TokenSeq& hyp) {
  if (task != corpus::Task::DictPermute && task != corpus::Task::DictInsert) {
    throw UnsupportedTask("free-mode references need an invertible dictionary (dict-permute or "
                          "dict-insert), got " +
                          std::string(corpus::to_string(task)));
  }
  if (block == 0) throw ValidationError("block size must be positive");
  const std::size_t len = src.size();
  const auto& fn = lexicon.function_tokens;
  align::AlignmentSet sure(len, hyp.size());
  std::size_t slot = 0;
  for (std::size_t j = 0; j < hyp.size(); ++j) {
    if (std::find(fn.begin(), fn.end(), hyp[j]) != fn.end()) continue;
    const std::size_t here = slot++;
    const auto word = lexicon.invert(hyp[j]);
    if (!word) continue;
    std::optional<std::size_t> best;
    std::size_t best_distance = 0;
    for (std::size_t k = 0; k < len; ++k) {
      if (src[k] != *word) continue;
      const std::size_t expected = corpus::block_permutation(k, len, block);
      const std::size_t d = expected > here ? expected - here : here - expected;
      if (!best || d < best_distance) {
        best = k;
        best_distance = d;
      }
    }
    if (best) sure.insert(*best, j);
  }
  return align::GoldAlignment::from_sure(sure);
}

MethodRun evaluate_free(const model::Model& m, corpus::Task task, const corpus::Lexicon& lexicon,
                        std::size_t block, const std::vector<TokenSeq>& sources,
                        const SaliencyConfig& method, std::size_t threads) {
  method.validate();
  if (task != corpus::Task::DictPermute && task != corpus::Task::DictInsert) {
    throw UnsupportedTask("free decoding evaluation supports dict-permute and dict-insert only, got " +
                          std::string(corpus::to_string(task)));
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<SentenceResult> out(sources.size());
  parallel_for(
      sources.size(),
      [&](std::size_t i) {
        const auto& src = sources[i];
        auto& r = out[i];
        try {
          const auto hyp = model::greedy_decode(m, src, m.config.max_len).hypothesis;
          r.target = hyp;
          r.reference = free_reference(task, lexicon, block, src, hyp);
          r.hypothesis = align::AlignmentSet(src.size(), hyp.size());
          if (hyp.empty()) return;
          r.soft = saliency::to_soft_alignment(
              saliency::saliency_matrix(m, src, hyp, with_sentence_seed(method, i), 1));
          r.hypothesis = align::soft_to_hard(r.soft);
        } catch (const Error& e) {
          r.error = e.what();
        }
      },
      resolve_threads(threads));
  MethodRun run{summarize(method, "forward", out), std::move(out)};
  run.row.seconds = elapsed(start);
  return run;
}

ResultTable run_force_eval(const ExperimentSpec& spec, std::size_t threads) {
  if (spec.mode != Mode::Force) throw ValidationError("run_force_eval needs mode force");
  const auto e = load(spec);
  return table_of(run_methods(e, spec, expand_seeds(spec.methods, spec.seeds), threads));
}

ResultTable run_free_eval(const ExperimentSpec& spec, std::size_t threads) {
  if (spec.mode != Mode::Free) throw ValidationError("run_free_eval needs mode free");
  const auto e = load(spec);
  return table_of(run_methods(e, spec, expand_seeds(spec.methods, spec.seeds), threads));
}

ResultTable run_experiment(const ExperimentSpec& spec, std::size_t threads) {
  const auto e = load(spec);
  const auto runs = run_methods(e, spec, expand_seeds(spec.methods, spec.seeds), threads);
  write_outputs(spec, runs);
  return table_of(runs);
}

ResultTable sigma_sweep(const ExperimentSpec& spec, const std::vector<double>& sigmas,
                        std::size_t threads) {
  if (sigmas.empty()) throw ValidationError("sigma grid is empty");
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    if (!(sigmas[k] >= 0.0)) throw ValidationError("sigma values must be non-negative");
    if (k && sigmas[k] < sigmas[k - 1]) throw ValidationError("sigma grid must be ascending");
  }
  std::vector<SaliencyConfig> grid;
  for (const auto& m : spec.methods) {
    if (!is_smoothed(m.method)) {
      grid.push_back(m);
      continue;
    }
    for (double s : sigmas) {
      SaliencyConfig c = m;
      c.sigma = s;
      grid.push_back(c);
    }
  }
  const auto e = load(spec);
  const auto runs = run_methods(e, spec, expand_seeds(grid, spec.seeds), threads);
  if (!spec.output_dir.empty()) write_outputs(spec, runs);
  return table_of(runs);
}

double PolarityReport::negative_fraction() const {
  return neg_sentences ? static_cast<double>(grad_input_negative) / static_cast<double>(neg_sentences)
                       : 0.0;
}

PolarityReport polarity_check(const model::Model& m, const corpus::CorpusBundle& bundle,
                              std::size_t threads) {
  if (bundle.task != corpus::Task::Polarity || !bundle.lexicon.neg_token) {
    throw UnsupportedTask("polarity check needs a polarity corpus, got " +
                          std::string(corpus::to_string(bundle.task)));
  }
  const auto& dev = bundle.splits.dev.empty() ? bundle.splits.train : bundle.splits.dev;
  PolarityReport report;
  report.dev_loss = model::corpus_loss(m, examples_of(dev), resolve_threads(threads));
  if (!(report.dev_loss < 0.1)) {
    throw PreconditionError("polarity check needs a model with dev loss below 0.1, measured " +
                                format_fixed(report.dev_loss, 4),
                            report.dev_loss);
  }

  const TokenId neg = *bundle.lexicon.neg_token;
  const auto& pairs = bundle.splits.test;
  report.sentences = pairs.size();
  // 0 = no NEG, 1 = NEG with psi >= 0, 2 = NEG with psi < 0; bit 4 marks li >= 0.
  std::vector<int> outcome(pairs.size(), 0);
  parallel_for(
      pairs.size(),
      [&](std::size_t i) {
        const auto& p = pairs[i];
        const auto it = std::find(p.src.begin(), p.src.end(), neg);
        if (it == p.src.end() || it + 1 == p.src.end()) return;
        const std::size_t at = static_cast<std::size_t>(it - p.src.begin());
        std::optional<std::size_t> step;
        for (const auto& l : p.gold.sure.links()) {
          if (l.src == at + 1) step = l.tgt;
        }
        if (!step) return;
        const TokenId label = bundle.lexicon.dictionary.at(p.src[at + 1] - kReservedTokens);
        const double psi = saliency::grad_input_saliency(m, p.src, p.tgt, *step, label)[at];
        const double li = saliency::li_saliency(m, p.src, p.tgt, *step, label)[at];
        outcome[i] = (psi < 0.0 ? 2 : 1) | (li >= 0.0 ? 4 : 0);
      },
      resolve_threads(threads));
  for (int o : outcome) {
    if ((o & 3) == 0) {
      ++report.excluded;
      continue;
    }
    ++report.neg_sentences;
    if ((o & 3) == 2) ++report.grad_input_negative;
    if (o & 4) ++report.li_nonnegative;
  }
  return report;
}

MeanStdev mean_stdev(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("mean of an empty list");
  MeanStdev r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return r;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.stdev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return r;
}

void StabilitySpec::validate() const {
  if (seeds.size() < 2) throw ValidationError("stability runs need at least two seeds");
  if (methods.empty()) throw ValidationError("stability run needs at least one method");
  for (const auto& m : methods) m.validate();
  optimizer.validate();
}

std::string StabilitySpec::to_json() const {
  json j;
  j["corpus"] = corpus.string();
  j["model"] = json::parse(model.to_json());
  j["optimizer"] = json::parse(optimizer_json(optimizer));
  j["methods"] = json::array();
  for (const auto& m : methods) j["methods"].push_back(method_to_json(m));
  j["seeds"] = seeds;
  j["split"] = split;
  j["limit"] = limit ? json(*limit) : json(nullptr);
  return j.dump(2);
}

StabilitySpec StabilitySpec::from_json(std::string_view text) {
  const json j = parse_json(text, "stability spec");
  StabilitySpec s;
  try {
    s.corpus = j.at("corpus").get<std::string>();
    if (j.contains("model")) {
      const json& mj = j["model"];
      if (mj.contains("architecture")) {
        const auto arch = model::parse_architecture(mj["architecture"].get<std::string>());
        if (!arch) throw ValidationError("unknown architecture " + mj["architecture"].dump());
        s.model.architecture = *arch;
      }
      s.model.vocab_size_src = mj.value("vocab_size_src", s.model.vocab_size_src);
      s.model.vocab_size_tgt = mj.value("vocab_size_tgt", s.model.vocab_size_tgt);
      s.model.embed_dim = mj.value("embed_dim", s.model.embed_dim);
      s.model.hidden_dim = mj.value("hidden_dim", s.model.hidden_dim);
      s.model.num_heads = mj.value("num_heads", s.model.num_heads);
      s.model.max_len = mj.value("max_len", s.model.max_len);
    }
    if (j.contains("optimizer")) s.optimizer = optimizer_from_json(j["optimizer"].dump());
    for (const auto& m : j.at("methods")) s.methods.push_back(method_from_json(m));
    s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.split = j.value("split", std::string("test"));
    if (j.contains("limit") && !j["limit"].is_null()) s.limit = j["limit"].get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed stability spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<StabilityRow> stability_run(const StabilitySpec& spec, std::size_t threads) {
  spec.validate();
  const auto bundle = load_corpus_checked(spec.corpus);
  const auto pairs = selected(bundle, spec.split, spec.limit);
  const auto train = examples_of(bundle.splits.train);
  const auto dev = examples_of(bundle.splits.dev);

  std::vector<StabilityRow> rows;
  for (const auto& m : spec.methods) rows.push_back({m, {}, {}});
  for (auto seed : spec.seeds) {
    model::ModelConfig cfg = spec.model;
    cfg.vocab_size_src = bundle.src_vocab.size();
    cfg.vocab_size_tgt = bundle.tgt_vocab.size();
    cfg.seed = seed;
    model::OptimizerSettings opt = spec.optimizer;
    opt.seed = seed;
    opt.threads = resolve_threads(threads);
    const auto trained = model::train(cfg, train, opt, dev);
    for (auto& row : rows) {
      const auto runs = evaluate_force(trained.model, nullptr, pairs, row.method, threads);
      row.aers.push_back(runs.front().row.aer);
    }
  }
  for (auto& row : rows) row.aer = mean_stdev(row.aers);
  return rows;
}

std::string stability_tsv(const std::vector<StabilityRow>& rows) {
  std::string out = "method\tsigma\tn\tseed\tmean_aer\tstdev_aer\truns\n";
  for (const auto& r : rows) {
    out += std::string(salign::to_string(r.method.method)) + '\t' + format_g17(r.method.sigma) + '\t' +
           std::to_string(r.method.n_samples) + '\t' + std::to_string(r.method.seed) + '\t' +
           format_g17(r.aer.mean) + '\t' + format_g17(r.aer.stdev) + '\t' + std::to_string(r.aers.size()) +
           '\n';
  }
  return out;
}

std::vector<model::Example> examples_of(const std::vector<corpus::SentencePair>& pairs) {
  std::vector<model::Example> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.src, p.tgt});
  return out;
}

}  // namespace salign::harness
