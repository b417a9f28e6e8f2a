#include "salign/model/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "salign/error.hpp"
#include "salign/model/decode.hpp"
#include "salign/model/network.hpp"
#include "salign/util/parallel.hpp"
#include "salign/util/rng.hpp"

namespace salign::model {

namespace {

struct SentenceGrad {
  double loss_sum = 0.0;
  std::size_t tokens = 0;
  std::vector<Tensor> grads;
};

// Summed token cross-entropy of one example and its gradient w.r.t. every
// parameter, in name order.
SentenceGrad sentence_gradient(const Model& m, const Example& ex) {
  const TokenSeq ref = with_eos(ex.tgt);
  validate_target(m.config, ref);
  ad::Tape tape;
  Graph g(m, tape, true);
  g.encode(g.source_embeddings(ex.src));
  const auto steps = g.steps(teacher_inputs(ref));
  ad::Var log_lik = ad::pick(ad::log_softmax(steps[0].logits), ref[0]);
  for (std::size_t j = 1; j < steps.size(); ++j) {
    log_lik = log_lik + ad::pick(ad::log_softmax(steps[j].logits), ref[j]);
  }
  ad::Var total = ad::scale(log_lik, -1.0);

  SentenceGrad out;
  out.loss_sum = total.value().item();
  out.tokens = steps.size();
  std::vector<ad::Var> wrt;
  for (const auto& [_, v] : g.parameters()) wrt.push_back(v);
  auto store = ad::backward(tape, total, wrt);
  out.grads.reserve(wrt.size());
  for (const auto& v : wrt) out.grads.push_back(store[v]);
  return out;
}

std::size_t resolve_threads(std::size_t t) { return t == 0 ? configured_threads() : t; }

}  // namespace

void OptimizerSettings::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("eps must be positive");
  if (batch_size == 0) throw ValidationError("batch size must be positive");
  if (clip_norm < 0.0) throw ValidationError("clip norm must be >= 0");
}

double corpus_loss(const Model& m, const std::vector<Example>& data, std::size_t threads) {
  if (data.empty()) return 0.0;
  std::vector<double> sums(data.size());
  std::vector<std::size_t> counts(data.size());
  parallel_for(
      data.size(),
      [&](std::size_t i) {
        counts[i] = data[i].tgt.size() + 1;
        sums[i] = sentence_loss(m, data[i].src, data[i].tgt) * static_cast<double>(counts[i]);
      },
      resolve_threads(threads));
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    s += sums[i];
    n += counts[i];
  }
  return s / static_cast<double>(n);
}

TrainResult train(const ModelConfig& config, const std::vector<Example>& data,
                  const OptimizerSettings& settings, const std::vector<Example>& dev,
                  const EpochCallback& on_epoch) {
  return train(init_model(config), data, settings, dev, on_epoch);
}

TrainResult train(Model start, const std::vector<Example>& data, const OptimizerSettings& settings,
                  const std::vector<Example>& dev, const EpochCallback& on_epoch) {
  settings.validate();
  start.config.validate();
  if (data.empty()) throw ValidationError("training corpus is empty");
  for (const auto& ex : data) {
    validate_source(start.config, ex.src);
    validate_target(start.config, with_eos(ex.tgt));
  }
  const std::size_t threads = resolve_threads(settings.threads);

  TrainResult result{std::move(start), {}, {}, 0};
  Model& model = result.model;
  std::vector<Tensor*> params;
  for (auto& [_, t] : model.params.tensors()) params.push_back(&t);
  std::vector<Tensor> m1, m2;
  for (Tensor* p : params) {
    m1.emplace_back(p->shape());
    m2.emplace_back(p->shape());
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  double b1t = 1.0, b2t = 1.0;

  for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
    Rng rng(derive_seed(settings.seed, {epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;

    for (std::size_t start_i = 0; start_i < order.size(); start_i += settings.batch_size) {
      const std::size_t n = std::min(settings.batch_size, order.size() - start_i);
      std::vector<SentenceGrad> parts(n);
      try {
        parallel_for(
            n, [&](std::size_t k) { parts[k] = sentence_gradient(model, data[order[start_i + k]]); },
            threads);
      } catch (const NumericError& e) {
        throw TrainingDiverged(result.steps, e.what());
      }

      double batch_loss = 0.0;
      std::size_t batch_tokens = 0;
      for (const auto& p : parts) {
        batch_loss += p.loss_sum;
        batch_tokens += p.tokens;
      }
      if (!std::isfinite(batch_loss)) throw TrainingDiverged(result.steps, "non-finite loss");
      epoch_loss += batch_loss;
      epoch_tokens += batch_tokens;

      const double inv = 1.0 / static_cast<double>(batch_tokens);
      std::vector<Tensor> grad;
      grad.reserve(params.size());
      double norm2 = 0.0;
      for (std::size_t q = 0; q < params.size(); ++q) {
        Tensor g(params[q]->shape());
        for (const auto& p : parts) {
          const auto& src = p.grads[q].storage();
          for (std::size_t i = 0; i < src.size(); ++i) g[i] += src[i];
        }
        for (double& v : g.storage()) {
          v *= inv;
          norm2 += v * v;
        }
        grad.push_back(std::move(g));
      }
      if (!std::isfinite(norm2)) throw TrainingDiverged(result.steps, "non-finite gradient");
      double clip = 1.0;
      const double norm = std::sqrt(norm2);
      if (settings.clip_norm > 0.0 && norm > settings.clip_norm) clip = settings.clip_norm / norm;

      ++result.steps;
      b1t *= settings.beta1;
      b2t *= settings.beta2;
      const double c1 = 1.0 - b1t, c2 = 1.0 - b2t;
      for (std::size_t q = 0; q < params.size(); ++q) {
        auto& w = params[q]->storage();
        auto& a = m1[q].storage();
        auto& b = m2[q].storage();
        const auto& g = grad[q].storage();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = g[i] * clip;
          a[i] = settings.beta1 * a[i] + (1.0 - settings.beta1) * gi;
          b[i] = settings.beta2 * b[i] + (1.0 - settings.beta2) * gi * gi;
          w[i] -= settings.lr * (a[i] / c1) / (std::sqrt(b[i] / c2) + settings.eps);
        }
      }
    }

    EpochReport report{epoch, epoch_loss / static_cast<double>(epoch_tokens), std::nullopt};
    result.loss_curve.push_back(report.train_loss);
    if (!dev.empty()) {
      report.dev_loss = corpus_loss(model, dev, threads);
      result.dev_curve.push_back(*report.dev_loss);
    }
    if (on_epoch) on_epoch(report);
    if (settings.target_dev_loss && report.dev_loss && *report.dev_loss < *settings.target_dev_loss) {
      break;
    }
  }
  return result;
}

}  // namespace salign::model
