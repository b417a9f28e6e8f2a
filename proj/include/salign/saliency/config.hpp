#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace salign {

enum class Method {
  Attention,
  SmoothedAttention,
  LiGrad,
  LiSmoothGrad,
  GradInput,
  SmoothGrad,
};

enum class NoiseScaling {
  Absolute,
  /// Standard deviation is sigma * (max - min) over the sentence's queried
  /// embedding entries.
  RangeRelative,
};

struct SaliencyConfig {
  Method method = Method::GradInput;
  double sigma = 0.15;
  std::size_t n_samples = 30;
  std::uint64_t seed = 0;
  NoiseScaling noise_scaling = NoiseScaling::RangeRelative;

  /// Throws ValidationError on negative sigma or zero samples.
  void validate() const;
  bool operator==(const SaliencyConfig&) const = default;
};

std::string_view to_string(Method m) noexcept;
std::string_view to_string(NoiseScaling s) noexcept;
std::optional<Method> parse_method(std::string_view name) noexcept;
std::optional<NoiseScaling> parse_noise_scaling(std::string_view name) noexcept;

bool is_smoothed(Method m) noexcept;
bool is_attention(Method m) noexcept;
/// The unsmoothed method a smoothed one wraps (identity otherwise).
Method base_method(Method m) noexcept;

/// Comma-separated names of all six methods, for error messages.
std::string method_names();

}  // namespace salign
