#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "futr/tensor.hpp"

namespace futr {

enum class MaskKind { causal, local, cross_recent };

namespace detail {

inline void check_no_empty_row(const AttentionMask& m, const char* what) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < m.cols && !any; ++j) any = m.allowed(i, j);
    if (!any)
      throw DegenerateMaskError(std::string(what) + ": query row " +
                                std::to_string(i) + " admits no keys");
  }
}

}  // namespace detail

// query i may attend keys j <= i
inline AttentionMask make_causal_mask(std::size_t n) {
  AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.allow[i * n + j] = 1;
  return m;
}

// |i - j| <= (window - 1) / 2, window odd
inline AttentionMask make_local_mask(std::size_t n, int window) {
  if (window < 1 || window % 2 == 0)
    throw ConfigError("local attention window must be odd and >= 1, got " +
                      std::to_string(window));
  const std::size_t radius = static_cast<std::size_t>((window - 1) / 2);
  AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i > radius ? i - radius : 0;
    const std::size_t hi = std::min(n - 1, i + radius);
    for (std::size_t j = lo; j <= hi; ++j) m.allow[i * n + j] = 1;
  }
  return m;
}

// every query sees only the most recent ceil(gamma * tk) keys
inline AttentionMask make_cross_recent_mask(std::size_t tq, std::size_t tk,
                                            double gamma) {
  if (!(gamma > 0.0) || gamma > 1.0)
    throw ConfigError("cross-attention ratio must lie in (0,1], got " +
                      std::to_string(gamma));
  const auto keep = static_cast<std::size_t>(
      std::ceil(gamma * static_cast<double>(tk)));
  if (keep < 1)
    throw DegenerateMaskError("cross_recent: no keys survive gamma=" +
                              std::to_string(gamma));
  AttentionMask m{1, tk, std::vector<std::uint8_t>(tk, 0)};
  for (std::size_t j = tk - std::min(keep, tk); j < tk; ++j) m.allow[j] = 1;
  (void)tq;
  return m;
}

inline AttentionMask mask_and(const AttentionMask& a, const AttentionMask& b) {
  const std::size_t rows = std::max(a.rows, b.rows);
  if (a.cols != b.cols || (a.rows != rows && a.rows != 1) ||
      (b.rows != rows && b.rows != 1))
    throw ShapeError("mask_and: incompatible masks");
  AttentionMask m{rows, a.cols, std::vector<std::uint8_t>(rows * a.cols, 0)};
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j)
      m.allow[i * a.cols + j] = a.allowed(i, j) && b.allowed(i, j);
  detail::check_no_empty_row(m, "mask_and");
  return m;
}

inline AttentionMask build_attention_mask(MaskKind kind, std::size_t tq,
                                          std::size_t tk, int window = 0,
                                          double gamma = 1.0) {
  AttentionMask m;
  switch (kind) {
    case MaskKind::causal:
      if (tq != tk) throw ShapeError("causal mask requires tq == tk");
      m = make_causal_mask(tq);
      break;
    case MaskKind::local:
      if (tq != tk) throw ShapeError("local mask requires tq == tk");
      m = make_local_mask(tq, window);
      break;
    case MaskKind::cross_recent:
      m = make_cross_recent_mask(tq, tk, gamma);
      break;
  }
  detail::check_no_empty_row(m, "build_attention_mask");
  return m;
}

}  // namespace futr
