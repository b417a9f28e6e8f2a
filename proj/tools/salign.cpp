#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "salign/align/alignment.hpp"
#include "salign/corpus/corpus.hpp"
#include "salign/error.hpp"
#include "salign/harness/harness.hpp"
#include "salign/model/decode.hpp"
#include "salign/model/model.hpp"
#include "salign/model/train.hpp"
#include "salign/saliency/saliency.hpp"
#include "salign/util/io.hpp"
#include "salign/util/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace salign;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitArgs = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Io: return kExitIo;
    case ErrorKind::Numeric:
    case ErrorKind::TrainingDiverged:
    case ErrorKind::OracleInvalid:
    case ErrorKind::Precondition: return kExitNumeric;
    default: return kExitArgs;
  }
}

void write_manifest(const fs::path& dir, const std::string& subcommand, const json& config,
                    const json& extra = json::object()) {
  json m = {{"tool", "salign"}, {"version", SALIGN_VERSION}, {"subcommand", subcommand}, {"config", config}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

std::vector<double> parse_doubles(const std::string& text, const char* what) {
  std::vector<double> out;
  std::string item;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ',') {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ValidationError(std::string("invalid number '") + item + "' in " + what);
      }
      item.clear();
    } else if (text[i] != ' ') {
      item += text[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------- gen-corpus

struct GenCorpusArgs {
  std::string task;
  std::size_t pairs = 11000;
  std::size_t vocab = 103;
  std::size_t min_len = 6;
  std::size_t max_len = 12;
  std::size_t block = 2;
  double insert_rate = 0.1;
  double neg_rate = 0.2;
  std::uint64_t seed = 1;
  std::string split = "0.8,0.1,0.1";
  std::string out;

  json config() const {
    return {{"task", task},       {"pairs", pairs},         {"vocab", vocab},       {"min-len", min_len},
            {"max-len", max_len}, {"block", block},         {"insert-rate", insert_rate},
            {"neg-rate", neg_rate}, {"seed", seed},         {"split", split},       {"out", out}};
  }
};

int run_gen_corpus(const GenCorpusArgs& a) {
  const auto task = corpus::parse_task(a.task);
  if (!task) throw ValidationError("unknown task '" + a.task + "' (expected one of " + corpus::task_names() + ")");
  const auto f = parse_doubles(a.split, "--split");
  if (f.size() != 3) throw ValidationError("--split needs three comma-separated fractions");
  corpus::GeneratorSettings s;
  s.n_pairs = a.pairs;
  s.vocab_size = a.vocab;
  s.min_len = a.min_len;
  s.max_len = a.max_len;
  s.block = a.block;
  s.insert_rate = a.insert_rate;
  s.neg_rate = a.neg_rate;
  s.seed = a.seed;
  const auto bundle = corpus::make_bundle(corpus::generate(*task, s), {f[0], f[1], f[2]});
  const json extra = {{"subcommand", "gen-corpus"}, {"config", a.config()}};
  corpus::write_bundle(bundle, a.out, extra.dump());
  std::cerr << "wrote " << bundle.splits.train.size() << "/" << bundle.splits.dev.size() << "/"
            << bundle.splits.test.size() << " pairs to " << a.out << "\n";
  return kExitOk;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  std::string corpus;
  std::string arch = "rnn-attn";
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t heads = 2;
  std::size_t max_len = 64;
  double lr = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double clip = 5.0;
  double target_dev_loss = 0.0;
  std::uint64_t seed = 1;
  std::string direction = "forward";
  std::string out;

  json config() const {
    return {{"corpus", corpus},         {"arch", arch},       {"embed-dim", embed_dim},
            {"hidden-dim", hidden_dim}, {"heads", heads},     {"max-len", max_len},
            {"lr", lr},                 {"epochs", epochs},   {"batch-size", batch_size},
            {"clip", clip},             {"target-dev-loss", target_dev_loss},
            {"seed", seed},             {"direction", direction}, {"out", out}};
  }
};

std::vector<model::Example> directed(const std::vector<corpus::SentencePair>& pairs, bool reverse) {
  return harness::examples_of(reverse ? corpus::reversed_pairs(pairs) : pairs);
}

int run_train(const TrainArgs& a) {
  const auto arch = model::parse_architecture(a.arch);
  if (!arch) throw ValidationError("unknown architecture '" + a.arch + "' (expected rnn-attn or mini-transformer)");
  if (a.direction != "forward" && a.direction != "reverse") {
    throw ValidationError("--direction must be forward or reverse");
  }
  const bool reverse = a.direction == "reverse";
  const auto bundle = corpus::load_bundle(a.corpus);

  model::ModelConfig c;
  c.architecture = *arch;
  c.vocab_size_src = reverse ? bundle.tgt_vocab.size() : bundle.src_vocab.size();
  c.vocab_size_tgt = reverse ? bundle.src_vocab.size() : bundle.tgt_vocab.size();
  c.embed_dim = a.embed_dim;
  c.hidden_dim = a.hidden_dim;
  c.num_heads = a.heads;
  c.max_len = a.max_len;
  c.seed = a.seed;

  model::OptimizerSettings o;
  o.lr = a.lr;
  o.epochs = a.epochs;
  o.batch_size = a.batch_size;
  o.clip_norm = a.clip;
  o.seed = a.seed;
  if (a.target_dev_loss > 0.0) o.target_dev_loss = a.target_dev_loss;

  const auto train = directed(bundle.splits.train, reverse);
  const auto dev = directed(bundle.splits.dev, reverse);
  const auto result = model::train(c, train, o, dev, [](const model::EpochReport& r) {
    std::cerr << "epoch " << r.epoch << " train " << format_fixed(r.train_loss, 4);
    if (r.dev_loss) std::cerr << " dev " << format_fixed(*r.dev_loss, 4);
    std::cerr << "\n";
  });

  const fs::path out = a.out;
  model::save_checkpoint(out / "model.ckpt", result.model);
  std::string log = "epoch\ttrain_loss\tdev_loss\n";
  for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
    log += std::to_string(e + 1) + '\t' + format_g17(result.loss_curve[e]) + '\t' +
           (e < result.dev_curve.size() ? format_g17(result.dev_curve[e]) : std::string("NA")) + '\n';
  }
  write_file_atomic(out / "loss.tsv", log);
  write_manifest(out, "train", a.config(),
                 {{"model", json::parse(result.model.config.to_json())},
                  {"optimizer", json::parse(harness::optimizer_json(o))},
                  {"steps", result.steps}});
  return kExitOk;
}

// --------------------------------------------------------------------- align

struct AlignArgs {
  std::string checkpoint;
  std::string corpus;
  std::string split = "test";
  std::string method = "grad-input";
  double sigma = 0.15;
  std::size_t n = 30;
  std::uint64_t noise_seed = 0;
  std::string noise_scaling = "range-relative";
  std::string mode = "force";
  std::size_t limit = 0;
  bool dump_soft = false;
  std::string out;

  SaliencyConfig saliency() const {
    SaliencyConfig c;
    const auto m = parse_method(method);
    if (!m) throw ValidationError("unknown method '" + method + "' (expected one of " + method_names() + ")");
    const auto s = parse_noise_scaling(noise_scaling);
    if (!s) throw ValidationError("unknown noise scaling '" + noise_scaling + "' (expected absolute or range-relative)");
    c.method = *m;
    c.sigma = is_smoothed(*m) ? sigma : 0.0;
    c.n_samples = is_smoothed(*m) ? n : 1;
    c.seed = noise_seed;
    c.noise_scaling = *s;
    c.validate();
    return c;
  }

  json config() const {
    return {{"checkpoint", checkpoint}, {"corpus", corpus},       {"split", split},
            {"method", method},         {"sigma", sigma},         {"n", n},
            {"noise-seed", noise_seed}, {"noise-scaling", noise_scaling},
            {"mode", mode},             {"limit", limit},         {"dump-soft", dump_soft},
            {"out", out}};
  }
};

int run_align(const AlignArgs& a) {
  const SaliencyConfig cfg = a.saliency();
  const auto mode = harness::parse_mode(a.mode);
  if (!mode) throw ValidationError("unknown mode '" + a.mode + "' (expected force or free)");
  if (!fs::exists(a.checkpoint)) throw IoError("checkpoint not found: " + a.checkpoint);
  const auto m = model::load_checkpoint(a.checkpoint);
  const auto bundle = corpus::load_bundle(a.corpus);
  auto pairs = bundle.split_named(a.split);
  if (a.limit && a.limit < pairs.size()) pairs.resize(a.limit);
  const fs::path out = a.out;

  harness::MethodRun run;
  std::string extra_text;
  if (*mode == harness::Mode::Force) {
    run = harness::evaluate_force(m, nullptr, pairs, cfg).front();
  } else {
    std::vector<TokenSeq> sources;
    for (const auto& p : pairs) sources.push_back(p.src);
    run = harness::evaluate_free(m, bundle.task, bundle.lexicon, bundle.settings.block, sources, cfg);
    std::string refs;
    for (const auto& s : run.sentences) {
      extra_text += bundle.tgt_vocab.decode(s.target) + '\n';
      if (!s.error) refs += align::write_pharaoh(s.reference);
      refs += '\n';
    }
    write_file_atomic(out / "hypotheses.txt", extra_text);
    write_file_atomic(out / "reference.pharaoh", refs);
  }

  std::string pharaoh;
  for (const auto& s : run.sentences) {
    if (!s.error) pharaoh += align::write_pharaoh(s.hypothesis);
    pharaoh += '\n';
  }
  write_file_atomic(out / "alignments.pharaoh", pharaoh);
  if (a.dump_soft) {
    for (std::size_t i = 0; i < run.sentences.size(); ++i) {
      const auto& s = run.sentences[i];
      if (s.error || s.soft.raw.shape().rank() != 2) continue;
      write_file_atomic(out / "soft" / (std::to_string(i) + ".tsv"), saliency::to_tsv(s.soft.raw));
    }
  }
  harness::ResultTable table;
  table.rows.push_back(run.row);
  write_file_atomic(out / "results.tsv", table.to_tsv());
  write_manifest(out, "align", a.config(), {{"saliency", json::parse(harness::saliency_config_json(cfg))}});
  for (std::size_t i = 0; i < run.sentences.size(); ++i) {
    if (run.sentences[i].error) std::cerr << "sentence " << i << " failed: " << *run.sentences[i].error << "\n";
  }
  std::cout << "AER\t" << format_fixed(run.row.aer, 4) << "\tentropy\t" << format_fixed(run.row.entropy, 4)
            << "\tfailures\t" << run.row.failures << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
  std::string hyp;
  std::string gold;
  std::string soft_dir;
  std::string method = "grad-input";
  double sigma = 0.0;
  std::size_t n = 1;
  bool per_sentence = false;
  std::string out;

  json config() const {
    return {{"hyp", hyp},     {"gold", gold}, {"soft-dir", soft_dir}, {"method", method},
            {"sigma", sigma}, {"n", n},       {"per-sentence", per_sentence}, {"out", out}};
  }
};

align::SoftAlignment soft_from_dump(const fs::path& file, bool attention) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  for (const auto& line : read_lines(file)) {
    const auto cells = split_whitespace(line);
    if (cells.empty()) continue;
    if (rows && cells.size() != cols) throw ValidationError("ragged matrix in " + file.string());
    cols = cells.size();
    ++rows;
    for (const auto& c : cells) values.push_back(std::stod(c));
  }
  if (!rows) throw ValidationError("empty matrix in " + file.string());
  Tensor t(Shape{rows, cols}, values);
  if (!attention) return saliency::normalize_saliency(t);
  return {t, t, std::vector<bool>(rows, false), {}};
}

int run_eval(const EvalArgs& a) {
  const auto method = parse_method(a.method);
  if (!method) throw ValidationError("unknown method '" + a.method + "' (expected one of " + method_names() + ")");
  const auto gold = align::read_pharaoh_file(a.gold, align::PharaohMode::Gold);
  const auto hyp_lines = read_lines(a.hyp);
  const bool empty_file = read_file(a.hyp).empty();
  if (!empty_file && hyp_lines.size() != gold.size()) {
    throw ValidationError("hypothesis has " + std::to_string(hyp_lines.size()) + " lines but gold has " +
                          std::to_string(gold.size()));
  }
  std::vector<align::AlignmentSet> hyps;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    hyps.push_back(empty_file ? align::AlignmentSet() : align::parse_hypothesis(hyp_lines[i], i + 1));
  }

  std::vector<std::optional<align::SoftAlignment>> softs(gold.size());
  if (!a.soft_dir.empty()) {
    if (!fs::is_directory(a.soft_dir)) throw IoError("soft dump directory not found: " + a.soft_dir);
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const fs::path f = fs::path(a.soft_dir) / (std::to_string(i) + ".tsv");
      if (fs::exists(f)) softs[i] = soft_from_dump(f, is_attention(*method));
    }
  }

  align::AerCounts total;
  std::vector<align::SoftAlignment> present;
  std::string per = "sentence_id\tmethod\tsigma\tn\taer\tentropy\n";
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto c = align::aer_counts(hyps[i], gold[i]);
    total += c;
    std::string ent = "NA";
    if (softs[i]) {
      present.push_back(*softs[i]);
      ent = format_g17(align::dispersion_entropy(*softs[i]));
    }
    per += std::to_string(i) + '\t' + a.method + '\t' + format_g17(a.sigma) + '\t' + std::to_string(a.n) + '\t' +
           format_g17(c.aer()) + '\t' + ent + '\n';
  }

  std::string report = "AER\t" + format_fixed(total.aer(), 4) + "\n";
  if (!present.empty()) report += "entropy\t" + format_fixed(harness::pooled_entropy(present), 4) + "\n";
  std::cout << report;
  if (a.per_sentence) std::cout << per;
  if (!a.out.empty()) {
    const fs::path out = a.out;
    write_file_atomic(out / "report.tsv", report);
    write_file_atomic(out / "per_sentence.tsv", per);
    write_manifest(out, "eval", a.config());
  }
  return kExitOk;
}

// ------------------------------------------------------------ sweep / stability

struct SweepArgs {
  std::string spec;
  std::string sigmas = "0,0.05,0.15,0.3";
  std::string out;

  json config() const { return {{"spec", spec}, {"sigmas", sigmas}, {"out", out}}; }
};

int run_sweep(const SweepArgs& a) {
  auto spec = harness::ExperimentSpec::from_json(read_file(a.spec));
  if (!a.out.empty()) spec.output_dir = a.out;
  const auto sigmas = parse_doubles(a.sigmas, "--sigmas");
  const auto table = harness::sigma_sweep(spec, sigmas);
  write_manifest(spec.output_dir, "sweep", a.config(), {{"spec", json::parse(spec.to_json())}});
  std::cout << table.to_tsv();
  return kExitOk;
}

struct StabilityArgs {
  std::string spec;
  std::string out;

  json config() const { return {{"spec", spec}, {"out", out}}; }
};

int run_stability(const StabilityArgs& a) {
  const auto spec = harness::StabilitySpec::from_json(read_file(a.spec));
  const auto rows = harness::stability_run(spec);
  const std::string tsv = harness::stability_tsv(rows);
  write_file_atomic(fs::path(a.out) / "stability.tsv", tsv);
  write_manifest(a.out, "stability", a.config(), {{"spec", json::parse(spec.to_json())}});
  std::cout << tsv;
  return kExitOk;
}

// ------------------------------------------------------------------- heatmap

struct HeatmapArgs {
  std::string input;
  std::string out;
  bool signed_scale = false;

  json config() const { return {{"input", input}, {"out", out}, {"signed", signed_scale}}; }
};

int run_heatmap(const HeatmapArgs& a) {
  if (!fs::exists(a.input)) throw IoError("soft dump not found: " + a.input);
  std::vector<std::vector<double>> rows;
  for (const auto& line : read_lines(a.input)) {
    const auto cells = split_whitespace(line);
    if (cells.empty()) continue;
    std::vector<double> r;
    for (const auto& c : cells) {
      try {
        r.push_back(std::stod(c));
      } catch (const std::exception&) {
        throw ValidationError("invalid value '" + c + "' in " + a.input);
      }
      if (!std::isfinite(r.back())) throw ValidationError("non-finite value in " + a.input);
    }
    if (!rows.empty() && r.size() != rows.front().size()) throw ValidationError("ragged matrix in " + a.input);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ValidationError("empty matrix in " + a.input);

  double lo = rows[0][0], hi = rows[0][0], amax = 0.0;
  for (const auto& r : rows) {
    for (double v : r) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      amax = std::max(amax, std::abs(v));
    }
  }
  const bool flat = a.signed_scale ? amax == 0.0 : hi == lo;
  if (flat) std::cerr << "warning: matrix has no dynamic range; writing uniform mid-gray\n";

  const std::size_t h = rows.size(), w = rows[0].size();
  std::string pgm = "P2\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::string csv;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < w; ++c) {
      long px = 128;
      if (!flat) {
        const double scaled = a.signed_scale ? 127.5 + 127.5 * r[c] / amax : 255.0 * (r[c] - lo) / (hi - lo);
        px = std::clamp(std::lround(scaled), 0L, 255L);
      }
      pgm += (c ? " " : "") + std::to_string(px);
      csv += (c ? "," : "") + format_g17(r[c]);
    }
    pgm += '\n';
    csv += '\n';
  }
  const fs::path out = a.out;
  write_file_atomic(out / "heatmap.pgm", pgm);
  write_file_atomic(out / "heatmap.csv", csv);
  write_manifest(out, "heatmap", a.config());
  return kExitOk;
}

// ------------------------------------------------------------- config files

// Turns a config document into leading "--key=value" arguments. A manifest
// written by this tool is accepted as well; its "config" object is used.
std::vector<std::string> config_arguments(const std::string& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path);
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("malformed config file " + path + ": " + e.what());
  }
  if (j.contains("config") && j["config"].is_object()) {
    j = j["config"];
  } else if (j.contains("settings") && j["settings"].is_object() && j["settings"].contains("config")) {
    j = j["settings"]["config"];
  }
  if (!j.is_object()) throw ValidationError("config file must hold a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    if (value.is_null()) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back("--" + key);
      continue;
    }
    if (value.is_string()) {
      if (value.get<std::string>().empty()) continue;
      args.push_back("--" + key + "=" + value.get<std::string>());
    } else if (value.is_number()) {
      args.push_back("--" + key + "=" + value.dump());
    } else {
      throw ValidationError("config key '" + key + "' must be a scalar");
    }
  }
  return args;
}

// Splices config-file arguments in front of the command-line flags of the
// subcommand, so explicit flags win.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> in(argv + 1, argv + argc);
  std::vector<std::string> rest;
  std::string config;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == "--config" && i + 1 < in.size()) {
      config = in[++i];
    } else if (in[i].rfind("--config=", 0) == 0) {
      config = in[i].substr(9);
    } else {
      rest.push_back(in[i]);
    }
  }
  if (config.empty() || rest.empty()) return rest;
  const auto extra = config_arguments(config);
  std::vector<std::string> out{rest.front()};
  out.insert(out.end(), extra.begin(), extra.end());
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word alignment from saliency of toy seq2seq models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(SALIGN_VERSION));
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_option("--config", "JSON config file or manifest (flags override its values)");

  GenCorpusArgs gen;
  auto* g = app.add_subcommand("gen-corpus", "Generate a synthetic parallel corpus with gold alignments");
  g->add_option("--task", gen.task, "copy, reverse, dict-permute, dict-insert or polarity")->required();
  g->add_option("--pairs", gen.pairs, "Number of sentence pairs")->capture_default_str();
  g->add_option("--vocab", gen.vocab, "Vocabulary size per side, reserved tokens included")->capture_default_str();
  g->add_option("--min-len", gen.min_len)->capture_default_str();
  g->add_option("--max-len", gen.max_len)->capture_default_str();
  g->add_option("--block", gen.block, "Block size of the reordering")->capture_default_str();
  g->add_option("--insert-rate", gen.insert_rate)->capture_default_str();
  g->add_option("--neg-rate", gen.neg_rate)->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--split", gen.split, "train,dev,test fractions")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a corpus");
  t->add_option("--corpus", tr.corpus, "Corpus manifest or directory")->required();
  t->add_option("--arch", tr.arch, "rnn-attn or mini-transformer")->capture_default_str();
  t->add_option("--embed-dim", tr.embed_dim)->capture_default_str();
  t->add_option("--hidden-dim", tr.hidden_dim)->capture_default_str();
  t->add_option("--heads", tr.heads)->capture_default_str();
  t->add_option("--max-len", tr.max_len)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--batch-size", tr.batch_size)->capture_default_str();
  t->add_option("--clip", tr.clip, "Gradient norm cap (0 disables)")->capture_default_str();
  t->add_option("--target-dev-loss", tr.target_dev_loss, "Stop once dev loss is below this (0 disables)")
      ->capture_default_str();
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_option("--direction", tr.direction, "forward or reverse (target to source)")->capture_default_str();
  t->add_option("--out", tr.out, "Output directory")->required();

  AlignArgs al;
  auto* a = app.add_subcommand("align", "Extract alignments with one interpretation method");
  a->add_option("--checkpoint", al.checkpoint)->required();
  a->add_option("--corpus", al.corpus)->required();
  a->add_option("--split", al.split)->capture_default_str();
  a->add_option("--method", al.method, method_names())->capture_default_str();
  a->add_option("--sigma", al.sigma, "Noise level of smoothing methods")->capture_default_str();
  a->add_option("--n", al.n, "Samples of smoothing methods")->capture_default_str();
  a->add_option("--noise-seed", al.noise_seed)->capture_default_str();
  a->add_option("--noise-scaling", al.noise_scaling, "absolute or range-relative")->capture_default_str();
  a->add_option("--mode", al.mode, "force or free")->capture_default_str();
  a->add_option("--limit", al.limit, "Use only the first N sentences (0 = all)")->capture_default_str();
  a->add_flag("--dump-soft", al.dump_soft, "Write per-sentence score matrices");
  a->add_option("--out", al.out, "Output directory")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score Pharaoh hypotheses against gold");
  e->add_option("--hyp", ev.hyp)->required();
  e->add_option("--gold", ev.gold)->required();
  e->add_option("--soft-dir", ev.soft_dir, "Directory of <i>.tsv dumps for entropy");
  e->add_option("--method", ev.method, "Method of the dumps")->capture_default_str();
  e->add_option("--sigma", ev.sigma, "Label for the per-sentence table")->capture_default_str();
  e->add_option("--n", ev.n, "Label for the per-sentence table")->capture_default_str();
  e->add_flag("--per-sentence", ev.per_sentence, "Print the per-sentence table");
  e->add_option("--out", ev.out, "Optional output directory");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Evaluate an experiment spec over a sigma grid");
  s->add_option("--spec", sw.spec, "Experiment spec JSON")->required();
  s->add_option("--sigmas", sw.sigmas)->capture_default_str();
  s->add_option("--out", sw.out, "Output directory (defaults to the spec's)");

  StabilityArgs st;
  auto* sb = app.add_subcommand("stability", "Train several seeds and report AER mean and spread");
  sb->add_option("--spec", st.spec, "Stability spec JSON")->required();
  sb->add_option("--out", st.out, "Output directory")->required();

  HeatmapArgs hm;
  auto* h = app.add_subcommand("heatmap", "Render a score matrix as a graymap and CSV");
  h->add_option("--input", hm.input, "TSV matrix")->required();
  h->add_option("--out", hm.out, "Output directory")->required();
  h->add_flag("--signed", hm.signed_scale, "Map 0 to mid-gray");

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitArgs;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code(err.kind());
  }

  try {
    if (*g) return run_gen_corpus(gen);
    if (*t) return run_train(tr);
    if (*a) return run_align(al);
    if (*e) return run_eval(ev);
    if (*s) return run_sweep(sw);
    if (*sb) return run_stability(st);
    if (*h) return run_heatmap(hm);
  } catch (const TrainingDiverged& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code(err.kind());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return kExitArgs;
}
