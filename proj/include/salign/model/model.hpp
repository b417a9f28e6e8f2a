#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "salign/tensor.hpp"

namespace salign::model {

enum class Architecture { RnnAttn, MiniTransformer };

std::string_view to_string(Architecture a) noexcept;
std::optional<Architecture> parse_architecture(std::string_view name) noexcept;

struct ModelConfig {
  Architecture architecture = Architecture::RnnAttn;
  std::size_t vocab_size_src = 0;
  std::size_t vocab_size_tgt = 0;
  std::size_t embed_dim = 32;
  /// GRU state width for rnn-attn (split evenly between the two encoder
  /// directions); feed-forward width for mini-transformer.
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 2;
  std::uint64_t seed = 1;
  std::size_t max_len = 64;

  /// Throws ValidationError for zero sizes, an odd rnn hidden width, or an
  /// embedding width not divisible by the head count.
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter tensors, iterated in name order.
class ModelParams {
 public:
  void add(const std::string& name, Tensor t);
  const Tensor& get(std::string_view name) const;
  Tensor& get_mut(std::string_view name);
  bool contains(std::string_view name) const { return tensors_.count(std::string(name)) != 0; }
  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t scalar_count() const noexcept;
  const std::map<std::string, Tensor, std::less<>>& tensors() const noexcept { return tensors_; }
  std::map<std::string, Tensor, std::less<>>& tensors() noexcept { return tensors_; }
  bool operator==(const ModelParams& o) const { return tensors_ == o.tensors_; }

 private:
  std::map<std::string, Tensor, std::less<>> tensors_;
};

struct Model {
  ModelConfig config;
  ModelParams params;
};

/// Fresh parameters: uniform in [-0.08, 0.08] from config.seed, except layer
/// norm gains (1) and biases (0).
Model init_model(const ModelConfig& config);

/// Shapes every parameter must have for `config`.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

/// Checkpoint container: "SALIGN-CKPT", u32 format version, u64 length +
/// config JSON, u64 tensor count, then per tensor u32 name length + name,
/// u32 rank, u64 dims, little-endian f64 data.
std::string serialize_checkpoint(const Model& m);
Model deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Model& m);
Model load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace salign::model
