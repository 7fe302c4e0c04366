#pragma once

// Iterative feature selection over induced coordinates.
//
// The mask starts at all ones. Mask gradients are summed over every iteration;
// at each schedule event the b = round(r_τ·D) dimensions with the largest summed
// gradient are set to 1 − r_τ/r, and the rest keep their current value. The last
// event has r_τ = r, which zeroes exactly round(r·D) dimensions.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "tcs/errors.hpp"
#include "tcs/matrix.hpp"

namespace tcs {

struct ScheduleEvent {
  std::size_t iteration = 0;
  double ratio = 0.0;
  bool operator==(const ScheduleEvent&) const = default;
};

enum class TopDimsMode { signed_value, absolute_value };

/// Indices of the b largest entries (ties to the lower index), returned ascending.
inline std::vector<std::size_t> top_dims(std::span<const double> a, std::size_t b) {
  if (b > a.size()) throw PreconditionError("top_dims: b exceeds dimension");
  std::vector<std::size_t> idx(a.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(b), idx.end(), [&](std::size_t l, std::size_t r) {
    return a[l] > a[r] || (a[l] == a[r] && l < r);
  });
  idx.resize(b);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Events evenly spaced over the first 80% of training with a linear ramp r/events .. r.
inline std::vector<ScheduleEvent> selection_schedule(std::size_t total_iters, std::size_t events, double r_final = 0.5) {
  std::vector<ScheduleEvent> out;
  const double span = 0.8 * static_cast<double>(total_iters);
  for (std::size_t i = 1; i <= events; ++i) {
    const double at = span * static_cast<double>(i) / static_cast<double>(events);
    out.push_back({std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(at))),
                   r_final * static_cast<double>(i) / static_cast<double>(events)});
  }
  return out;
}

struct SelectionMask {
  Vector m;
  Vector grad_accum;
  double r_final = 0.5;
  std::vector<ScheduleEvent> schedule;
  std::size_t cursor = 0;
  TopDimsMode mode = TopDimsMode::signed_value;
  bool reset_per_event = false;

  SelectionMask() = default;
  SelectionMask(std::size_t dim, double r, std::vector<ScheduleEvent> events)
      : m(dim, 1.0), grad_accum(dim, 0.0), r_final(r), schedule(std::move(events)) {}

  std::size_t dim() const { return m.size(); }
  bool frozen() const { return cursor >= schedule.size(); }
  std::size_t zero_count() const { return static_cast<std::size_t>(std::count(m.begin(), m.end(), 0.0)); }
};

/// f ⊙ m
inline Vector apply_mask(std::span<const double> f, std::span<const double> m) {
  if (f.size() != m.size()) throw ShapeError("apply_mask: dimension mismatch");
  Vector out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] * m[i];
  return out;
}

inline Vector apply_mask(std::span<const double> f, const SelectionMask& mask) { return apply_mask(f, mask.m); }

/// Adds one batch-mean gradient ∂L/∂m to the running sum.
inline void accumulate_mask_gradient(SelectionMask& mask, std::span<const double> batch_grad) {
  if (batch_grad.size() != mask.dim()) throw ShapeError("accumulate_mask_gradient: dimension mismatch");
  for (double g : batch_grad)
    if (!std::isfinite(g)) throw DivergenceError("non-finite mask gradient", 0, 0);
  for (std::size_t i = 0; i < batch_grad.size(); ++i) mask.grad_accum[i] += batch_grad[i];
}

/// Applies the next schedule event, which must be scheduled at iteration `tau`.
inline void update_mask(SelectionMask& mask, std::size_t tau) {
  if (mask.frozen()) throw ScheduleError("update_mask: no schedule events remain");
  const ScheduleEvent& ev = mask.schedule[mask.cursor];
  if (ev.iteration != tau) {
    throw ScheduleError("update_mask: next event is at iteration " + std::to_string(ev.iteration) + ", not " +
                        std::to_string(tau));
  }
  if (ev.ratio > mask.r_final + 1e-12) throw ScheduleError("update_mask: ratio exceeds the final selection ratio");
  if (ev.ratio < 0.0) throw ScheduleError("update_mask: negative ratio");
  const auto b = static_cast<std::size_t>(std::llround(ev.ratio * static_cast<double>(mask.dim())));
  Vector score = mask.grad_accum;
  if (mask.mode == TopDimsMode::absolute_value)
    for (double& s : score) s = std::abs(s);
  const double value = ev.ratio >= mask.r_final ? 0.0 : 1.0 - ev.ratio / mask.r_final;
  for (std::size_t i : top_dims(score, b)) mask.m[i] = value;
  ++mask.cursor;
  if (mask.reset_per_event) std::fill(mask.grad_accum.begin(), mask.grad_accum.end(), 0.0);
}

/// Applies every pending event scheduled at or before `iteration`. Returns the number applied.
inline std::size_t advance_schedule(SelectionMask& mask, std::size_t iteration) {
  std::size_t applied = 0;
  while (!mask.frozen() && mask.schedule[mask.cursor].iteration <= iteration) {
    update_mask(mask, mask.schedule[mask.cursor].iteration);
    ++applied;
  }
  return applied;
}

}  // namespace tcs
