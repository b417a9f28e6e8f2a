#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "salign/ad/tape.hpp"

// Differentiable primitives. Each records one node on the tape of its first
// argument and throws ShapeError on non-conforming inputs, NumericError when the
// forward value is not finite.
namespace salign::ad {

/// [m x k] * [k x n] -> [m x n]; a rank-1 left operand is a row vector and the
/// result is rank-1.
Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Broadcasts a rank-1 `row` over every row of `a`.
Var add_row(Var a, Var row);
Var mul_row(Var a, Var row);
Var scale(Var a, double factor);

Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var relu(Var a);

/// Along the last axis, max-shifted.
Var softmax(Var a);
Var log_softmax(Var a);
/// Row-wise standardization (no affine part), epsilon 1e-5.
Var layer_norm(Var a);

/// Single embedding row as a rank-1 tensor; the backward pass writes only that row.
Var row_lookup(Var table, std::size_t row);
/// Several rows stacked into [ids.size() x d].
Var gather_rows(Var table, std::span<const std::size_t> ids);

/// Concatenate along the first axis; rank-1 inputs count as single rows.
Var stack_rows(std::span<const Var> parts);
/// Concatenate along the last axis; all parts need the same row count.
Var concat(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
/// Row `i` of a matrix as a rank-1 tensor.
Var row(Var a, std::size_t i);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);

Var sum(Var a);
Var mean(Var a);
/// [m x n] -> [n], column means.
Var mean_rows(Var a);
/// Element at a flat row-major index, as a scalar.
Var pick(Var a, std::size_t flat_index);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}
inline Var stack_rows(std::initializer_list<Var> parts) {
  return stack_rows(std::span<const Var>(parts.begin(), parts.size()));
}

}  // namespace salign::ad
