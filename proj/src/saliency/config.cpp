#include "salign/saliency/config.hpp"

#include <array>
#include <utility>

#include "salign/error.hpp"

namespace salign {

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 6> kMethods{{
    {Method::Attention, "attention"},
    {Method::SmoothedAttention, "smoothed-attention"},
    {Method::LiGrad, "li-grad"},
    {Method::LiSmoothGrad, "li-smoothgrad"},
    {Method::GradInput, "grad-input"},
    {Method::SmoothGrad, "smoothgrad"},
}};

}  // namespace

void SaliencyConfig::validate() const {
  if (!(sigma >= 0.0)) throw ValidationError("sigma must be non-negative");
  if (n_samples < 1) throw ValidationError("n_samples must be at least 1");
}

std::string_view to_string(Method m) noexcept {
  for (const auto& [k, name] : kMethods)
    if (k == m) return name;
  return "unknown";
}

std::string_view to_string(NoiseScaling s) noexcept {
  return s == NoiseScaling::Absolute ? "absolute" : "range-relative";
}

std::optional<Method> parse_method(std::string_view name) noexcept {
  for (const auto& [k, n] : kMethods)
    if (n == name) return k;
  return std::nullopt;
}

std::optional<NoiseScaling> parse_noise_scaling(std::string_view name) noexcept {
  if (name == "absolute") return NoiseScaling::Absolute;
  if (name == "range-relative") return NoiseScaling::RangeRelative;
  return std::nullopt;
}

bool is_smoothed(Method m) noexcept {
  return m == Method::SmoothedAttention || m == Method::LiSmoothGrad || m == Method::SmoothGrad;
}

bool is_attention(Method m) noexcept {
  return m == Method::Attention || m == Method::SmoothedAttention;
}

Method base_method(Method m) noexcept {
  switch (m) {
    case Method::SmoothedAttention: return Method::Attention;
    case Method::LiSmoothGrad: return Method::LiGrad;
    case Method::SmoothGrad: return Method::GradInput;
    default: return m;
  }
}

std::string method_names() {
  std::string out;
  for (const auto& [k, name] : kMethods) {
    if (!out.empty()) out += ", ";
    out += name;
  }
  return out;
}

}  // namespace salign
