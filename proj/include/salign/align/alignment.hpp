#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "salign/saliency/config.hpp"
#include "salign/tensor.hpp"

namespace salign::align {

/// A (source position, target position) link, both 0-based.
struct Link {
  std::size_t src = 0;
  std::size_t tgt = 0;
  auto operator<=>(const Link&) const = default;
};

/// Set of links over a src_len x tgt_len grid.
class AlignmentSet {
 public:
  AlignmentSet() = default;
  AlignmentSet(std::size_t src_len, std::size_t tgt_len) : src_len_(src_len), tgt_len_(tgt_len) {}

  /// Throws ValidationError when the link falls outside the grid.
  void insert(std::size_t src, std::size_t tgt);
  void insert(Link l) { insert(l.src, l.tgt); }
  void erase(Link l) { links_.erase(l); }
  bool contains(std::size_t src, std::size_t tgt) const { return links_.count({src, tgt}) != 0; }
  bool contains(Link l) const { return links_.count(l) != 0; }

  std::size_t size() const noexcept { return links_.size(); }
  bool empty() const noexcept { return links_.empty(); }
  std::size_t src_len() const noexcept { return src_len_; }
  std::size_t tgt_len() const noexcept { return tgt_len_; }
  const std::set<Link>& links() const noexcept { return links_; }

  /// Swaps the roles of source and target.
  AlignmentSet transposed() const;
  bool subset_of(const AlignmentSet& other) const;

  bool operator==(const AlignmentSet&) const = default;

 private:
  std::size_t src_len_ = 0;
  std::size_t tgt_len_ = 0;
  std::set<Link> links_;
};

AlignmentSet set_intersection(const AlignmentSet& a, const AlignmentSet& b);
AlignmentSet set_union(const AlignmentSet& a, const AlignmentSet& b);

/// Gold reference. Invariant: sure is a subset of possible.
struct GoldAlignment {
  AlignmentSet sure;
  AlignmentSet possible;

  /// Gold whose sure and possible sets are both `links`.
  static GoldAlignment from_sure(const AlignmentSet& links) { return {links, links}; }
  /// Throws ValidationError if sure is not contained in possible or the grids differ.
  void validate() const;
  GoldAlignment transposed() const { return {sure.transposed(), possible.transposed()}; }
  bool operator==(const GoldAlignment&) const = default;
};

/// Row-normalized scores, one row per target position over the source.
/// Rows whose clamped scores were all zero are flagged degenerate: they are
/// all-zero in `probs` and hard alignment uses `raw` for them instead.
struct SoftAlignment {
  Tensor probs;
  Tensor raw;
  std::vector<bool> degenerate;
  SaliencyConfig provenance;

  std::size_t tgt_len() const { return probs.shape()[0]; }
  std::size_t src_len() const { return probs.shape()[1]; }
};

/// One link per target row at the row argmax (leftmost on ties).
AlignmentSet soft_to_hard(const SoftAlignment& soft);
AlignmentSet soft_to_hard(const Tensor& scores);

/// grow-diag-final over two directional alignments in the same (src, tgt)
/// index space.
AlignmentSet grow_diag_final(const AlignmentSet& forward, const AlignmentSet& backward);

/// Counts that enter the AER formula; summing them over sentences gives the
/// pooled corpus score.
struct AerCounts {
  std::size_t hyp_and_sure = 0;
  std::size_t hyp_and_possible = 0;
  std::size_t hyp = 0;
  std::size_t sure = 0;

  AerCounts& operator+=(const AerCounts& o) {
    hyp_and_sure += o.hyp_and_sure;
    hyp_and_possible += o.hyp_and_possible;
    hyp += o.hyp;
    sure += o.sure;
    return *this;
  }
  /// 1 - (|A&S| + |A&P|) / (|A| + |S|); 0 when both sets are empty.
  double aer() const;
};

AerCounts aer_counts(const AlignmentSet& hyp, const GoldAlignment& gold);
double aer(const AlignmentSet& hyp, const GoldAlignment& gold);

/// Mean over target rows of the natural-log entropy; degenerate rows count as
/// uniform over the source.
double dispersion_entropy(const SoftAlignment& soft);

enum class PharaohMode { Hyp, Gold };

struct GridSize {
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
};

/// Parses one line of "i-j" (sure) and, in gold mode, "i?j" (possible-only)
/// tokens. Without `grid` the lengths are the bounding box of the links.
/// In hyp mode the result has sure == possible.
GoldAlignment parse_pharaoh(std::string_view line, PharaohMode mode, std::size_t line_no = 1,
                            std::optional<GridSize> grid = std::nullopt);
AlignmentSet parse_hypothesis(std::string_view line, std::size_t line_no = 1,
                              std::optional<GridSize> grid = std::nullopt);

/// Links sorted by (tgt, src), space separated, no trailing newline.
std::string write_pharaoh(const AlignmentSet& links);
std::string write_pharaoh(const GoldAlignment& gold);

std::vector<GoldAlignment> read_pharaoh_file(const std::string& path, PharaohMode mode);

}  // namespace salign::align
