#include "salign/model/model.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"
#include "salign/error.hpp"
#include "salign/types.hpp"
#include "salign/util/io.hpp"
#include "salign/util/rng.hpp"

namespace salign::model {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "SALIGN-CKPT";

bool is_norm_param(const std::string& name) { return name.find(".ln") != std::string::npos; }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw ValidationError("checkpoint truncated");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(int width) {
    auto s = take(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(Architecture a) noexcept {
  return a == Architecture::RnnAttn ? "rnn-attn" : "mini-transformer";
}

std::optional<Architecture> parse_architecture(std::string_view name) noexcept {
  if (name == "rnn-attn") return Architecture::RnnAttn;
  if (name == "mini-transformer") return Architecture::MiniTransformer;
  return std::nullopt;
}

void ModelConfig::validate() const {
  if (vocab_size_src <= kReservedTokens || vocab_size_tgt <= kReservedTokens) {
    throw ValidationError("vocabulary sizes must exceed the reserved tokens");
  }
  if (embed_dim == 0 || hidden_dim == 0 || num_heads == 0 || max_len == 0) {
    throw ValidationError("model dimensions must be positive");
  }
  if (architecture == Architecture::RnnAttn && hidden_dim % 2 != 0) {
    throw ValidationError("rnn-attn hidden_dim must be even");
  }
  if (architecture == Architecture::MiniTransformer && embed_dim % num_heads != 0) {
    throw ValidationError("embed_dim must be divisible by num_heads");
  }
}

std::string ModelConfig::to_json() const {
  json j = {{"architecture", std::string(to_string(architecture))},
            {"vocab_size_src", vocab_size_src},
            {"vocab_size_tgt", vocab_size_tgt},
            {"embed_dim", embed_dim},
            {"hidden_dim", hidden_dim},
            {"num_heads", num_heads},
            {"seed", seed},
            {"max_len", max_len}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig c;
  try {
    json j = json::parse(text);
    auto arch = parse_architecture(j.at("architecture").get<std::string>());
    if (!arch) throw ValidationError("unknown architecture " + j.at("architecture").dump());
    c.architecture = *arch;
    c.vocab_size_src = j.at("vocab_size_src").get<std::size_t>();
    c.vocab_size_tgt = j.at("vocab_size_tgt").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.num_heads = j.value("num_heads", std::size_t{1});
    c.seed = j.at("seed").get<std::uint64_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

void ModelParams::add(const std::string& name, Tensor t) {
  if (!tensors_.emplace(name, std::move(t)).second) {
    throw ValidationError("duplicate parameter " + name);
  }
}

const Tensor& ModelParams::get(std::string_view name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("missing parameter " + std::string(name));
  return it->second;
}

Tensor& ModelParams::get_mut(std::string_view name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("missing parameter " + std::string(name));
  return it->second;
}

std::size_t ModelParams::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
  c.validate();
  const std::size_t e = c.embed_dim, h = c.hidden_dim;
  std::map<std::string, Shape> s;
  s["src_embed"] = Shape{c.vocab_size_src, e};
  s["tgt_embed"] = Shape{c.vocab_size_tgt, e};
  if (c.architecture == Architecture::RnnAttn) {
    const std::size_t half = h / 2;
    for (const char* dir : {"enc.fwd", "enc.bwd"}) {
      const std::string p = dir;
      s[p + ".W"] = Shape{e, 3 * half};
      s[p + ".U"] = Shape{half, 3 * half};
      s[p + ".bw"] = Shape{3 * half};
      s[p + ".bu"] = Shape{3 * half};
    }
    s["init.W"] = Shape{h, h};
    s["init.b"] = Shape{h};
    s["att.W"] = Shape{h, h};
    s["att.U"] = Shape{h, h};
    s["att.v"] = Shape{h, 1};
    s["dec.W"] = Shape{e + h, 3 * h};
    s["dec.U"] = Shape{h, 3 * h};
    s["dec.bw"] = Shape{3 * h};
    s["dec.bu"] = Shape{3 * h};
    s["out.Wc"] = Shape{2 * h, h};
    s["out.bc"] = Shape{h};
    s["out.W"] = Shape{h, c.vocab_size_tgt};
  } else {
    for (const char* block : {"enc.self", "dec.self", "dec.cross"}) {
      const std::string p = block;
      for (const char* m : {"q", "k", "v", "o"}) {
        s[p + ".W" + m] = Shape{e, e};
        s[p + ".b" + m] = Shape{e};
      }
    }
    for (const char* ln : {"enc.ln1", "enc.ln2", "dec.ln1", "dec.ln2", "dec.ln3"}) {
      s[std::string(ln) + ".g"] = Shape{e};
      s[std::string(ln) + ".b"] = Shape{e};
    }
    for (const char* ff : {"enc.ff", "dec.ff"}) {
      const std::string p = ff;
      s[p + ".W1"] = Shape{e, h};
      s[p + ".b1"] = Shape{h};
      s[p + ".W2"] = Shape{h, e};
      s[p + ".b2"] = Shape{e};
    }
    s["out.W"] = Shape{e, c.vocab_size_tgt};
  }
  s["out.b"] = Shape{c.vocab_size_tgt};
  return s;
}

Model init_model(const ModelConfig& config) {
  Model m{config, {}};
  Rng rng(derive_seed(config.seed, {0x1417}));
  std::uniform_real_distribution<double> uni(-0.08, 0.08);
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Tensor t(shape);
    if (is_norm_param(name)) {
      if (name.back() == 'g') std::fill(t.storage().begin(), t.storage().end(), 1.0);
    } else {
      for (double& v : t.storage()) v = uni(rng);
    }
    m.params.add(name, std::move(t));
  }
  return m;
}

std::string serialize_checkpoint(const Model& m) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  const std::string cfg = m.config.to_json();
  put_u64(out, cfg.size());
  out += cfg;
  put_u64(out, m.params.size());
  for (const auto& [name, t] : m.params.tensors()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.shape().rank()));
    for (std::size_t d : t.shape().dims()) put_u64(out, d);
    const std::size_t bytes = t.size() * sizeof(double);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, t.storage().data(), bytes);
  }
  return out;
}

Model deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw ValidationError("not a checkpoint (bad magic)");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  Model m;
  m.config = ModelConfig::from_json(r.take(r.uint(8)));
  const auto expected = parameter_shapes(m.config);
  const auto count = r.uint(8);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name(r.take(r.uint(4)));
    const auto rank = r.uint(4);
    if (rank > Shape::kMaxRank) throw ValidationError("bad tensor rank in checkpoint");
    std::vector<std::size_t> dims;
    for (std::uint64_t d = 0; d < rank; ++d) dims.push_back(r.uint(8));
    Shape shape(dims);
    auto it = expected.find(name);
    if (it == expected.end()) throw ValidationError("unexpected parameter " + name);
    if (!(it->second == shape)) {
      throw ValidationError("parameter " + name + " has shape " + shape.str() + ", expected " +
                            it->second.str());
    }
    Tensor t(shape);
    auto raw = r.take(t.size() * sizeof(double));
    std::memcpy(t.storage().data(), raw.data(), raw.size());
    m.params.add(name, std::move(t));
  }
  if (!r.done()) throw ValidationError("trailing bytes in checkpoint");
  if (m.params.size() != expected.size()) throw ValidationError("checkpoint is missing parameters");
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const Model& m) {
  write_file_atomic(path, serialize_checkpoint(m));
}

Model load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace salign::model
