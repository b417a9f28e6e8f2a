#pragma once

#include <cstddef>
#include <vector>

namespace salign {

using TokenId = std::size_t;
using TokenSeq = std::vector<TokenId>;

// Reserved ids, identical in source and target vocabularies.
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kPad = 2;
inline constexpr std::size_t kReservedTokens = 3;

}  // namespace salign
