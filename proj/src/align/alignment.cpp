#include "salign/align/alignment.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

#include "salign/error.hpp"
#include "salign/util/io.hpp"

namespace salign::align {

void AlignmentSet::insert(std::size_t src, std::size_t tgt) {
  if (src >= src_len_ || tgt >= tgt_len_) {
    throw ValidationError("alignment link " + std::to_string(src) + "-" + std::to_string(tgt) +
                          " outside a " + std::to_string(src_len_) + "x" +
                          std::to_string(tgt_len_) + " grid");
  }
  links_.insert({src, tgt});
}

AlignmentSet AlignmentSet::transposed() const {
  AlignmentSet out(tgt_len_, src_len_);
  for (const Link& l : links_) out.links_.insert({l.tgt, l.src});
  return out;
}

bool AlignmentSet::subset_of(const AlignmentSet& other) const {
  return std::includes(other.links_.begin(), other.links_.end(), links_.begin(), links_.end());
}

namespace {

void require_same_grid(const AlignmentSet& a, const AlignmentSet& b, const char* what) {
  if (a.src_len() != b.src_len() || a.tgt_len() != b.tgt_len()) {
    throw ValidationError(std::string(what) + ": grids differ (" + std::to_string(a.src_len()) +
                          "x" + std::to_string(a.tgt_len()) + " vs " +
                          std::to_string(b.src_len()) + "x" + std::to_string(b.tgt_len()) + ")");
  }
}

}  // namespace

AlignmentSet set_intersection(const AlignmentSet& a, const AlignmentSet& b) {
  require_same_grid(a, b, "intersection");
  AlignmentSet out(a.src_len(), a.tgt_len());
  for (const Link& l : a.links())
    if (b.contains(l)) out.insert(l);
  return out;
}

AlignmentSet set_union(const AlignmentSet& a, const AlignmentSet& b) {
  require_same_grid(a, b, "union");
  AlignmentSet out = a;
  for (const Link& l : b.links()) out.insert(l);
  return out;
}

void GoldAlignment::validate() const {
  require_same_grid(sure, possible, "gold alignment");
  if (!sure.subset_of(possible)) {
    throw ValidationError("gold alignment: sure links must also be possible");
  }
}

namespace {

std::size_t argmax_row(const Tensor& m, std::size_t r) {
  const std::size_t cols = m.shape()[1];
  std::size_t best = 0;
  for (std::size_t j = 1; j < cols; ++j) {
    if (m.at(r, j) > m.at(r, best)) best = j;
  }
  return best;
}

void require_nonempty_matrix(const Tensor& m) {
  if (m.shape().rank() != 2 || m.shape()[0] == 0 || m.shape()[1] == 0) {
    throw ValidationError("soft_to_hard: expected a non-empty matrix, got " + m.shape().str());
  }
}

}  // namespace

AlignmentSet soft_to_hard(const Tensor& scores) {
  require_nonempty_matrix(scores);
  const std::size_t rows = scores.shape()[0];
  AlignmentSet out(scores.shape()[1], rows);
  for (std::size_t j = 0; j < rows; ++j) out.insert(argmax_row(scores, j), j);
  return out;
}

AlignmentSet soft_to_hard(const SoftAlignment& soft) {
  require_nonempty_matrix(soft.probs);
  const std::size_t rows = soft.probs.shape()[0];
  AlignmentSet out(soft.probs.shape()[1], rows);
  for (std::size_t j = 0; j < rows; ++j) {
    const bool fallback = j < soft.degenerate.size() && soft.degenerate[j];
    if (fallback && !(soft.raw.shape() == soft.probs.shape())) {
      throw ValidationError("soft_to_hard: degenerate row without raw scores");
    }
    out.insert(argmax_row(fallback ? soft.raw : soft.probs, j), j);
  }
  return out;
}

AlignmentSet grow_diag_final(const AlignmentSet& forward, const AlignmentSet& backward) {
  require_same_grid(forward, backward, "grow_diag_final");
  const std::size_t src_len = forward.src_len();
  const std::size_t tgt_len = forward.tgt_len();
  const AlignmentSet uni = set_union(forward, backward);
  AlignmentSet out = set_intersection(forward, backward);

  std::vector<bool> src_aligned(src_len, false), tgt_aligned(tgt_len, false);
  for (const Link& l : out.links()) {
    src_aligned[l.src] = true;
    tgt_aligned[l.tgt] = true;
  }
  auto add = [&](Link l) {
    out.insert(l);
    src_aligned[l.src] = true;
    tgt_aligned[l.tgt] = true;
  };

  static constexpr std::array<std::array<int, 2>, 8> kNeighbors{{
      {-1, 0}, {0, -1}, {1, 0}, {0, 1}, {-1, -1}, {-1, 1}, {1, -1}, {1, 1}}};

  bool added = true;
  while (added) {
    added = false;
    for (std::size_t s = 0; s < src_len; ++s) {
      for (std::size_t t = 0; t < tgt_len; ++t) {
        if (!out.contains(s, t)) continue;
        for (const auto& d : kNeighbors) {
          const long ns = static_cast<long>(s) + d[0];
          const long nt = static_cast<long>(t) + d[1];
          if (ns < 0 || nt < 0 || ns >= static_cast<long>(src_len) ||
              nt >= static_cast<long>(tgt_len)) {
            continue;
          }
          const Link cand{static_cast<std::size_t>(ns), static_cast<std::size_t>(nt)};
          if ((!src_aligned[cand.src] || !tgt_aligned[cand.tgt]) && uni.contains(cand) &&
              !out.contains(cand)) {
            add(cand);
            added = true;
          }
        }
      }
    }
  }

  for (const AlignmentSet* dir : {&forward, &backward}) {
    for (std::size_t s = 0; s < src_len; ++s) {
      for (std::size_t t = 0; t < tgt_len; ++t) {
        if ((!src_aligned[s] || !tgt_aligned[t]) && dir->contains(s, t)) add({s, t});
      }
    }
  }
  return out;
}

double AerCounts::aer() const {
  const std::size_t denom = hyp + sure;
  if (denom == 0) return 0.0;
  return 1.0 - static_cast<double>(hyp_and_sure + hyp_and_possible) / static_cast<double>(denom);
}

AerCounts aer_counts(const AlignmentSet& hyp, const GoldAlignment& gold) {
  AerCounts c;
  c.hyp = hyp.size();
  c.sure = gold.sure.size();
  for (const Link& l : hyp.links()) {
    if (gold.sure.contains(l)) ++c.hyp_and_sure;
    if (gold.possible.contains(l)) ++c.hyp_and_possible;
  }
  return c;
}

double aer(const AlignmentSet& hyp, const GoldAlignment& gold) { return aer_counts(hyp, gold).aer(); }

double dispersion_entropy(const SoftAlignment& soft) {
  const Tensor& p = soft.probs;
  if (p.shape().rank() != 2 || p.shape()[0] == 0) return 0.0;
  const std::size_t rows = p.shape()[0];
  const std::size_t cols = p.shape()[1];
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (r < soft.degenerate.size() && soft.degenerate[r]) {
      total += std::log(static_cast<double>(cols));
      continue;
    }
    double h = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = p.at(r, j);
      if (v > 0.0) h -= v * std::log(v);
    }
    total += h;
  }
  return total / static_cast<double>(rows);
}

namespace {

struct RawLink {
  std::size_t src;
  std::size_t tgt;
  bool sure;
};

std::size_t parse_index(std::string_view text, std::size_t line_no, std::size_t column) {
  std::size_t v = 0;
  if (text.empty()) throw ParseError("missing alignment index", line_no, column);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("malformed alignment index '" + std::string(text) + "'", line_no, column);
  }
  return v;
}

}  // namespace

GoldAlignment parse_pharaoh(std::string_view line, PharaohMode mode, std::size_t line_no,
                            std::optional<GridSize> grid) {
  std::vector<RawLink> raw;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i >= line.size()) break;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    const std::string_view tok = line.substr(start, i - start);
    const std::size_t column = start + 1;
    const std::size_t sep = tok.find_first_of("-?");
    if (sep == std::string_view::npos) {
      throw ParseError("malformed alignment token '" + std::string(tok) + "'", line_no, column);
    }
    const bool sure = tok[sep] == '-';
    if (!sure && mode == PharaohMode::Hyp) {
      throw ParseError("possible-only token '" + std::string(tok) + "' in a hypothesis", line_no,
                       column);
    }
    raw.push_back({parse_index(tok.substr(0, sep), line_no, column),
                   parse_index(tok.substr(sep + 1), line_no, column + sep + 1), sure});
  }

  GridSize g{};
  if (grid) {
    g = *grid;
    for (const RawLink& l : raw) {
      if (l.src >= g.src_len || l.tgt >= g.tgt_len) {
        throw ValidationError("line " + std::to_string(line_no) + ": link " +
                              std::to_string(l.src) + "-" + std::to_string(l.tgt) +
                              " outside a " + std::to_string(g.src_len) + "x" +
                              std::to_string(g.tgt_len) + " sentence pair");
      }
    }
  } else {
    for (const RawLink& l : raw) {
      g.src_len = std::max(g.src_len, l.src + 1);
      g.tgt_len = std::max(g.tgt_len, l.tgt + 1);
    }
  }

  GoldAlignment gold{AlignmentSet(g.src_len, g.tgt_len), AlignmentSet(g.src_len, g.tgt_len)};
  for (const RawLink& l : raw) {
    if (l.sure) gold.sure.insert(l.src, l.tgt);
    gold.possible.insert(l.src, l.tgt);
  }
  return gold;
}

AlignmentSet parse_hypothesis(std::string_view line, std::size_t line_no,
                              std::optional<GridSize> grid) {
  return parse_pharaoh(line, PharaohMode::Hyp, line_no, grid).sure;
}

namespace {

std::vector<Link> by_target(const std::set<Link>& links) {
  std::vector<Link> v(links.begin(), links.end());
  std::sort(v.begin(), v.end(), [](const Link& a, const Link& b) {
    return a.tgt != b.tgt ? a.tgt < b.tgt : a.src < b.src;
  });
  return v;
}

}  // namespace

std::string write_pharaoh(const AlignmentSet& links) {
  std::string out;
  for (const Link& l : by_target(links.links())) {
    if (!out.empty()) out += ' ';
    out += std::to_string(l.src) + "-" + std::to_string(l.tgt);
  }
  return out;
}

std::string write_pharaoh(const GoldAlignment& gold) {
  std::string out;
  for (const Link& l : by_target(gold.possible.links())) {
    if (!out.empty()) out += ' ';
    out += std::to_string(l.src) + (gold.sure.contains(l) ? "-" : "?") + std::to_string(l.tgt);
  }
  // Sure links are a subset of possible ones after validate(); anything else
  // would be dropped silently here, so refuse it.
  if (!gold.sure.subset_of(gold.possible)) {
    throw ValidationError("write_pharaoh: sure links missing from the possible set");
  }
  return out;
}

std::vector<GoldAlignment> read_pharaoh_file(const std::string& path, PharaohMode mode) {
  const auto lines = read_lines(path);
  std::vector<GoldAlignment> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) out.push_back(parse_pharaoh(lines[i], mode, i + 1));
  return out;
}

}  // namespace salign::align
