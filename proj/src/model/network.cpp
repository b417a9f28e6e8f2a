#include "salign/model/network.hpp"

#include <cmath>
#include <limits>

#include "salign/error.hpp"

namespace salign::model {

using ad::Var;

class Graph::Impl {
 public:
  virtual ~Impl() = default;
  virtual Var encode(Var src_embeddings) = 0;
  virtual StepNode step(TokenId prev) = 0;
  virtual std::vector<StepNode> steps(const TokenSeq& inputs) {
    std::vector<StepNode> out;
    out.reserve(inputs.size());
    for (TokenId t : inputs) out.push_back(step(t));
    return out;
  }
};

namespace {

Tensor attention_values(const std::vector<const Tensor*>& heads, std::size_t row) {
  const std::size_t s = heads.front()->shape().last();
  Tensor a(Shape{1, heads.size(), s});
  for (std::size_t h = 0; h < heads.size(); ++h) {
    for (std::size_t k = 0; k < s; ++k) a[h * s + k] = heads[h]->at(row, k);
  }
  return a;
}

// Bidirectional GRU encoder, GRU decoder with additive attention over the
// encoder states.
class RnnAttn final : public Graph::Impl {
 public:
  explicit RnnAttn(Graph& g) : g_(g) {
    for (int d = 0; d < 2; ++d) {
      const std::string p = d == 0 ? "enc.fwd" : "enc.bwd";
      enc_[d] = bind(p + ".W", p + ".U", p + ".bw", p + ".bu");
    }
    dec_ = bind("dec.W", "dec.U", "dec.bw", "dec.bu");
  }

  Var encode(Var x) override {
    const std::size_t n = x.shape()[0];
    std::vector<Var> fwd(n), bwd(n);
    for (int d = 0; d < 2; ++d) {
      const Gru& cell = enc_[d];
      Var xw = ad::add_row(ad::matmul(x, cell.W), cell.bw);
      Var h = zeros(cell.width);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = d == 0 ? k : n - 1 - k;
        h = gru(cell, ad::row(xw, i), h);
        (d == 0 ? fwd : bwd)[i] = h;
      }
    }
    std::vector<Var> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = ad::concat({fwd[i], bwd[i]});
    enc_states_ = ad::stack_rows(rows);
    keys_ = ad::matmul(enc_states_, g_.param("att.U"));
    state_ = ad::tanh(ad::add(ad::matmul(ad::mean_rows(enc_states_), g_.param("init.W")),
                              g_.param("init.b")));
    return enc_states_;
  }

  StepNode step(TokenId prev) override {
    if (!enc_states_.valid()) throw ContractError("decoder step before encode");
    const std::size_t n = enc_states_.shape()[0];
    Var query = ad::matmul(state_, g_.param("att.W"));
    Var energy = ad::tanh(ad::add_row(keys_, query));
    Var scores = ad::reshape(ad::matmul(energy, g_.param("att.v")), Shape{n});
    Var alpha = ad::softmax(scores);
    Var context = ad::matmul(alpha, enc_states_);
    Var y = ad::row_lookup(g_.param("tgt_embed"), prev);
    Var xw = ad::add(ad::matmul(ad::concat({y, context}), dec_.W), dec_.bw);
    state_ = gru(dec_, xw, state_);
    Var o = ad::tanh(ad::add(ad::matmul(ad::concat({state_, context}), g_.param("out.Wc")),
                             g_.param("out.bc")));
    Var logits = ad::add(ad::matmul(o, g_.param("out.W")), g_.param("out.b"));
    return {logits, alpha.value()};
  }

 private:
  struct Gru {
    Var W, U, bw, bu;
    std::size_t width = 0;
  };

  Gru bind(const std::string& w, const std::string& u, const std::string& bw,
           const std::string& bu) {
    Gru c{g_.param(w), g_.param(u), g_.param(bw), g_.param(bu), 0};
    c.width = c.U.shape()[0];
    return c;
  }

  Var zeros(std::size_t n) { return g_.tape().constant(Tensor(Shape{n})); }

  // z = σ(xz + hz), r = σ(xr + hr), n = tanh(xn + r ⊙ hn), h' = n + z ⊙ (h - n)
  Var gru(const Gru& c, Var xw, Var h) {
    const std::size_t w = c.width;
    Var hu = ad::add(ad::matmul(h, c.U), c.bu);
    Var z = ad::sigmoid(ad::slice_cols(xw, 0, w) + ad::slice_cols(hu, 0, w));
    Var r = ad::sigmoid(ad::slice_cols(xw, w, 2 * w) + ad::slice_cols(hu, w, 2 * w));
    Var cand = ad::tanh(ad::slice_cols(xw, 2 * w, 3 * w) + r * ad::slice_cols(hu, 2 * w, 3 * w));
    return cand + z * (h - cand);
  }

  Graph& g_;
  Gru enc_[2];
  Gru dec_;
  Var enc_states_, keys_, state_;
};

// One post-norm encoder layer and one decoder layer, sinusoidal positions.
class MiniTransformer final : public Graph::Impl {
 public:
  explicit MiniTransformer(Graph& g)
      : g_(g),
        d_(g.model().config.embed_dim),
        heads_(g.model().config.num_heads) {}

  Var encode(Var x) override {
    const std::size_t n = x.shape()[0];
    Var h = ad::add(x, positions(n));
    Var a = attention("enc.self", h, h, nullptr).out;
    h = norm("enc.ln1", h + a);
    h = norm("enc.ln2", h + feed_forward("enc.ff", h));
    memory_ = h;
    return h;
  }

  StepNode step(TokenId prev) override {
    prefix_.push_back(prev);
    auto all = run(prefix_);
    return all.back();
  }

  std::vector<StepNode> steps(const TokenSeq& inputs) override {
    prefix_ = inputs;
    return run(inputs);
  }

 private:
  struct Attended {
    Var out;
    std::vector<Var> weights;
  };

  std::vector<StepNode> run(const TokenSeq& inputs) {
    if (!memory_.valid()) throw ContractError("decoder step before encode");
    const std::size_t t = inputs.size();
    Var y = ad::add(ad::gather_rows(g_.param("tgt_embed"), inputs), positions(t));
    Tensor causal(Shape{t, t});
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = i + 1; j < t; ++j) causal.at(i, j) = -1e9;
    }
    Var mask = g_.tape().constant(std::move(causal));
    y = norm("dec.ln1", y + attention("dec.self", y, y, &mask).out);
    Attended cross = attention("dec.cross", y, memory_, nullptr);
    y = norm("dec.ln2", y + cross.out);
    y = norm("dec.ln3", y + feed_forward("dec.ff", y));
    Var logits = ad::add_row(ad::matmul(y, g_.param("out.W")), g_.param("out.b"));

    std::vector<const Tensor*> heads;
    for (const Var& w : cross.weights) heads.push_back(&w.value());
    std::vector<StepNode> out;
    out.reserve(t);
    for (std::size_t j = 0; j < t; ++j) {
      out.push_back({ad::row(logits, j), attention_values(heads, j)});
    }
    return out;
  }

  Var positions(std::size_t n) {
    Tensor pe(Shape{n, d_});
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t i = 0; i < d_; i += 2) {
        const double angle = static_cast<double>(p) /
                             std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_));
        pe.at(p, i) = std::sin(angle);
        if (i + 1 < d_) pe.at(p, i + 1) = std::cos(angle);
      }
    }
    return g_.tape().constant(std::move(pe));
  }

  Var linear(const std::string& p, const char* m, Var x) {
    return ad::add_row(ad::matmul(x, g_.param(p + ".W" + m)), g_.param(p + ".b" + m));
  }

  Attended attention(const std::string& p, Var xq, Var xkv, const Var* mask) {
    const std::size_t dk = d_ / heads_;
    Var q = linear(p, "q", xq), k = linear(p, "k", xkv), v = linear(p, "v", xkv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    Attended r;
    std::vector<Var> parts;
    for (std::size_t h = 0; h < heads_; ++h) {
      Var qh = ad::slice_cols(q, h * dk, (h + 1) * dk);
      Var kh = ad::slice_cols(k, h * dk, (h + 1) * dk);
      Var vh = ad::slice_cols(v, h * dk, (h + 1) * dk);
      Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), scale);
      if (mask) scores = ad::add(scores, *mask);
      Var w = ad::softmax(scores);
      r.weights.push_back(w);
      parts.push_back(ad::matmul(w, vh));
    }
    Var joined = heads_ == 1 ? parts.front() : ad::concat(parts);
    r.out = linear(p, "o", joined);
    return r;
  }

  Var norm(const std::string& p, Var x) {
    return ad::add_row(ad::mul_row(ad::layer_norm(x), g_.param(p + ".g")), g_.param(p + ".b"));
  }

  Var feed_forward(const std::string& p, Var x) {
    Var hidden = ad::relu(ad::add_row(ad::matmul(x, g_.param(p + ".W1")), g_.param(p + ".b1")));
    return ad::add_row(ad::matmul(hidden, g_.param(p + ".W2")), g_.param(p + ".b2"));
  }

  Graph& g_;
  std::size_t d_;
  std::size_t heads_;
  Var memory_;
  TokenSeq prefix_;
};

}  // namespace

Graph::Graph(const Model& model, ad::Tape& tape, bool trainable)
    : model_(model), tape_(tape) {
  bound_.reserve(model.params.size());
  for (const auto& [name, t] : model.params.tensors()) {
    bound_.emplace_back(name, trainable ? tape.leaf_ref(t) : tape.constant_ref(t));
  }
  if (model.config.architecture == Architecture::RnnAttn) {
    impl_ = std::make_unique<RnnAttn>(*this);
  } else {
    impl_ = std::make_unique<MiniTransformer>(*this);
  }
}

Graph::~Graph() = default;

Var Graph::param(std::string_view name) {
  for (const auto& [n, v] : bound_) {
    if (n == name) return v;
  }
  throw ValidationError("missing parameter " + std::string(name));
}

Var Graph::source_embeddings(const TokenSeq& src) {
  validate_source(model_.config, src);
  return ad::gather_rows(param("src_embed"), src);
}

Var Graph::encode(Var src_embeddings) {
  const Shape& s = src_embeddings.shape();
  if (s.rank() != 2 || s[1] != model_.config.embed_dim || s[0] == 0) {
    throw ShapeError("source embeddings must be [len x embed_dim], got " + s.str());
  }
  return impl_->encode(src_embeddings);
}

StepNode Graph::step(TokenId prev) {
  if (prev >= model_.config.vocab_size_tgt) throw ValidationError("target id out of vocabulary");
  return impl_->step(prev);
}

std::vector<StepNode> Graph::steps(const TokenSeq& inputs) {
  if (inputs.empty() || inputs.front() != kBos) {
    throw ValidationError("decoder inputs must begin with BOS");
  }
  for (TokenId t : inputs) {
    if (t >= model_.config.vocab_size_tgt) throw ValidationError("target id out of vocabulary");
  }
  return impl_->steps(inputs);
}

void validate_source(const ModelConfig& c, const TokenSeq& src) {
  if (src.empty()) throw ValidationError("empty source sentence");
  if (src.size() > c.max_len) {
    throw ValidationError("source length " + std::to_string(src.size()) + " exceeds max_len " +
                          std::to_string(c.max_len));
  }
  for (TokenId t : src) {
    if (t >= c.vocab_size_src) throw ValidationError("source id " + std::to_string(t) + " out of vocabulary");
  }
}

void validate_target(const ModelConfig& c, const TokenSeq& tgt) {
  if (tgt.empty()) throw ValidationError("empty target sentence");
  if (tgt.size() > c.max_len + 1) throw ValidationError("target exceeds max_len");
  for (TokenId t : tgt) {
    if (t >= c.vocab_size_tgt) throw ValidationError("target id " + std::to_string(t) + " out of vocabulary");
  }
}

}  // namespace salign::model
