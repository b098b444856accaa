// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

namespace ivt::kernels {

namespace {

std::atomic<std::uint64_t> g_macs{0};

// Below this many MACs the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = std::size_t{1} << 15;

// ---- GEMM row bodies, shared by both variants -----------------------------

inline void gemm_row(const GemmArgs& g, std::size_t i) {
  double* c = g.c + i * g.n;
  if (!g.accumulate) std::fill(c, c + g.n, 0.0);
  if (!g.trans_b) {
    for (std::size_t p = 0; p < g.k; ++p) {
      const double a = g.trans_a ? g.a[p * g.m + i] : g.a[i * g.k + p];
      if (a == 0.0) continue;
      const double* b = g.b + p * g.n;
      for (std::size_t j = 0; j < g.n; ++j) c[j] += a * b[j];
    }
  } else {
    for (std::size_t j = 0; j < g.n; ++j) {
      const double* b = g.b + j * g.k;
      double s = 0.0;
      if (!g.trans_a) {
        const double* a = g.a + i * g.k;
        for (std::size_t p = 0; p < g.k; ++p) s += a[p] * b[p];
      } else {
        for (std::size_t p = 0; p < g.k; ++p) s += g.a[p * g.m + i] * b[p];
      }
      c[j] += s;
    }
  }
}

// ---- attention ------------------------------------------------------------

struct QuerySlot {
  std::size_t group;
  std::size_t local;
};

std::vector<QuerySlot> query_slots(const AttentionLayout& layout) {
  std::vector<QuerySlot> slots;
  for (std::size_t g = 0; g < layout.groups.size(); ++g)
    for (std::size_t j = 0; j < layout.groups[g].q_count; ++j) slots.push_back({g, j});
  return slots;
}

inline std::size_t visible_keys(const AttentionLayout& layout, const AttentionGroup& grp,
                                std::size_t local) {
  return layout.causal ? std::min(local + 1, grp.k_count) : grp.k_count;
}

void attend_query(const AttentionLayout& layout, const std::vector<std::size_t>& offsets,
                  const AttentionShapes& s, const QuerySlot& slot, const double* q,
                  const double* k, const double* v, double* o, double* p) {
  const auto& grp = layout.groups[slot.group];
  const std::size_t dh = s.d / layout.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t qi = grp.q_begin + slot.local;
  const std::size_t nvis = visible_keys(layout, grp, slot.local);
  thread_local std::vector<std::size_t> order;
  for (std::size_t h = 0; h < layout.heads; ++h) {
    double* prow = p + offsets[slot.group * layout.heads + h] + slot.local * grp.k_count;
    const double* qrow = q + qi * s.d + h * dh;
    double mx = -INFINITY;
    for (std::size_t kk = 0; kk < nvis; ++kk) {
      const double* krow = k + (grp.k_begin + kk) * s.d + h * dh;
      double dot = 0.0;
      for (std::size_t c = 0; c < dh; ++c) dot += qrow[c] * krow[c];
      prow[kk] = dot * scale;
      mx = std::max(mx, prow[kk]);
    }
    // Sum over keys in an order fixed by their values (logit, then the V
    // slice), so permuting the key rows permutes nothing in the result.
    const auto vrow_of = [&](std::size_t kk) { return v + (grp.k_begin + kk) * s.d + h * dh; };
    order.resize(nvis);
    for (std::size_t kk = 0; kk < nvis; ++kk) order[kk] = kk;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (prow[a] != prow[b]) return prow[a] < prow[b];
      return std::lexicographical_compare(vrow_of(a), vrow_of(a) + dh, vrow_of(b), vrow_of(b) + dh);
    });
    double denom = 0.0;
    for (std::size_t kk = 0; kk < nvis; ++kk) prow[kk] = std::exp(prow[kk] - mx);
    for (std::size_t kk : order) denom += prow[kk];
    for (std::size_t kk = 0; kk < nvis; ++kk) prow[kk] /= denom;
    for (std::size_t kk = nvis; kk < grp.k_count; ++kk) prow[kk] = 0.0;

    double* orow = o + qi * s.d + h * dh;
    std::fill(orow, orow + dh, 0.0);
    for (std::size_t kk : order) {
      const double w = prow[kk];
      const double* vrow = v + (grp.k_begin + kk) * s.d + h * dh;
      for (std::size_t c = 0; c < dh; ++c) orow[c] += w * vrow[c];
    }
  }
}

void attention_group_head_backward(const AttentionLayout& layout,
                                   const std::vector<std::size_t>& offsets,
                                   const AttentionShapes& s, std::size_t g, std::size_t h,
                                   const double* q, const double* k, const double* v,
                                   const double* p, const double* dout, double* dq, double* dk,
                                   double* dv, std::vector<double>& scratch) {
  const auto& grp = layout.groups[g];
  const std::size_t dh = s.d / layout.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  scratch.resize(grp.k_count);
  for (std::size_t j = 0; j < grp.q_count; ++j) {
    const std::size_t qi = grp.q_begin + j;
    const std::size_t nvis = visible_keys(layout, grp, j);
    const double* prow = p + offsets[g * layout.heads + h] + j * grp.k_count;
    const double* dorow = dout + qi * s.d + h * dh;
    double rowdot = 0.0;
    for (std::size_t kk = 0; kk < nvis; ++kk) {
      const double* vrow = v + (grp.k_begin + kk) * s.d + h * dh;
      double dp = 0.0;
      for (std::size_t c = 0; c < dh; ++c) dp += dorow[c] * vrow[c];
      scratch[kk] = dp;
      rowdot += dp * prow[kk];
    }
    const double* qrow = q + qi * s.d + h * dh;
    for (std::size_t kk = 0; kk < nvis; ++kk) {
      const std::size_t ki = grp.k_begin + kk;
      const double ds = prow[kk] * (scratch[kk] - rowdot) * scale;
      if (dq) {
        const double* krow = k + ki * s.d + h * dh;
        double* dqrow = dq + qi * s.d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) dqrow[c] += ds * krow[c];
      }
      if (dk) {
        double* dkrow = dk + ki * s.d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) dkrow[c] += ds * qrow[c];
      }
      if (dv) {
        double* dvrow = dv + ki * s.d + h * dh;
        const double w = prow[kk];
        for (std::size_t c = 0; c < dh; ++c) dvrow[c] += w * dorow[c];
      }
    }
  }
}

std::uint64_t attention_macs(const AttentionLayout& layout, const AttentionShapes& s) {
  std::uint64_t total = 0;
  for (const auto& g : layout.groups) total += 2ull * g.q_count * g.k_count * s.d;
  return total;
}

// ---- convolution plane bodies --------------------------------------------

inline void conv_forward_plane(const ConvShapes& s, const double* x, const double* w,
                               const double* b, double* y, std::size_t bo) {
  const std::size_t bi = bo / s.out_ch, o = bo % s.out_ch;
  const std::size_t hw = s.height * s.width;
  const long pad = static_cast<long>(s.ksize / 2);
  const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
  double* yp = y + bo * hw;
  std::fill(yp, yp + hw, b ? b[o] : 0.0);
  for (std::size_t c = 0; c < s.in_ch; ++c) {
    const double* xp = x + (bi * s.in_ch + c) * hw;
    for (std::size_t ky = 0; ky < s.ksize; ++ky) {
      for (std::size_t kx = 0; kx < s.ksize; ++kx) {
        const double wv = w[((o * s.in_ch + c) * s.ksize + ky) * s.ksize + kx];
        if (wv == 0.0) continue;
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
        const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
        for (long yy = y0; yy < y1; ++yy) {
          double* yr = yp + yy * W;
          const double* xr = xp + (yy + dy) * W + dx;
          for (long xx = x0; xx < x1; ++xx) yr[xx] += wv * xr[xx];
        }
      }
    }
  }
}

inline void conv_backward_input_plane(const ConvShapes& s, const double* w, const double* dy,
                                      double* dx, std::size_t bc) {
  const std::size_t bi = bc / s.in_ch, c = bc % s.in_ch;
  const std::size_t hw = s.height * s.width;
  const long pad = static_cast<long>(s.ksize / 2);
  const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
  double* dxp = dx + bc * hw;
  for (std::size_t o = 0; o < s.out_ch; ++o) {
    const double* dyp = dy + (bi * s.out_ch + o) * hw;
    for (std::size_t ky = 0; ky < s.ksize; ++ky) {
      for (std::size_t kx = 0; kx < s.ksize; ++kx) {
        const double wv = w[((o * s.in_ch + c) * s.ksize + ky) * s.ksize + kx];
        if (wv == 0.0) continue;
        const long ddy = static_cast<long>(ky) - pad, ddx = static_cast<long>(kx) - pad;
        const long y0 = std::max(0L, -ddy), y1 = std::min(H, H - ddy);
        const long x0 = std::max(0L, -ddx), x1 = std::min(W, W - ddx);
        for (long yy = y0; yy < y1; ++yy) {
          const double* dyr = dyp + yy * W;
          double* dxr = dxp + (yy + ddy) * W + ddx;
          for (long xx = x0; xx < x1; ++xx) dxr[xx] += wv * dyr[xx];
        }
      }
    }
  }
}

inline void conv_backward_weight_plane(const ConvShapes& s, const double* x, const double* dy,
                                       double* dw, double* db, std::size_t o) {
  const std::size_t hw = s.height * s.width;
  const long pad = static_cast<long>(s.ksize / 2);
  const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
  for (std::size_t bi = 0; bi < s.batch; ++bi) {
    const double* dyp = dy + (bi * s.out_ch + o) * hw;
    if (db) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += dyp[i];
      db[o] += acc;
    }
    if (!dw) continue;
    for (std::size_t c = 0; c < s.in_ch; ++c) {
      const double* xp = x + (bi * s.in_ch + c) * hw;
      for (std::size_t ky = 0; ky < s.ksize; ++ky) {
        for (std::size_t kx = 0; kx < s.ksize; ++kx) {
          const long ddy = static_cast<long>(ky) - pad, ddx = static_cast<long>(kx) - pad;
          const long y0 = std::max(0L, -ddy), y1 = std::min(H, H - ddy);
          const long x0 = std::max(0L, -ddx), x1 = std::min(W, W - ddx);
          double acc = 0.0;
          for (long yy = y0; yy < y1; ++yy) {
            const double* dyr = dyp + yy * W;
            const double* xr = xp + (yy + ddy) * W + ddx;
            for (long xx = x0; xx < x1; ++xx) acc += dyr[xx] * xr[xx];
          }
          dw[((o * s.in_ch + c) * s.ksize + ky) * s.ksize + kx] += acc;
        }
      }
    }
  }
}

std::uint64_t conv_macs(const ConvShapes& s) {
  return std::uint64_t{s.batch} * s.out_ch * s.in_ch * s.ksize * s.ksize * s.height * s.width;
}

}  // namespace

// ---------------------------------------------------------------------------

void set_num_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int num_threads() { return omp_get_max_threads(); }

int configure_threads_from_env() {
  if (const char* env = std::getenv("IVT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) set_num_threads(n);
    } catch (const std::exception&) {
      // ignored: unparsable value leaves the default
    }
  }
  return num_threads();
}

std::uint64_t mac_count() { return g_macs.load(std::memory_order_relaxed); }
void reset_mac_count() { g_macs.store(0, std::memory_order_relaxed); }
void add_macs(std::uint64_t n) { g_macs.fetch_add(n, std::memory_order_relaxed); }

// ---- GEMM -----------------------------------------------------------------

void gemm_serial(const GemmArgs& g) {
  add_macs(std::uint64_t{g.m} * g.n * g.k);
  for (std::size_t i = 0; i < g.m; ++i) gemm_row(g, i);
}

void gemm(const GemmArgs& g) {
  add_macs(std::uint64_t{g.m} * g.n * g.k);
  const long m = static_cast<long>(g.m);
  const bool par = g.m > 1 && g.m * g.n * g.k >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < m; ++i) gemm_row(g, static_cast<std::size_t>(i));
}

// ---- attention layout -----------------------------------------------------

AttentionLayout AttentionLayout::single(std::size_t nq, std::size_t nk, std::size_t heads) {
  AttentionLayout l;
  l.groups.push_back({0, nq, 0, nk});
  l.heads = heads;
  return l;
}

AttentionLayout AttentionLayout::blocks(std::size_t count, std::size_t rows, std::size_t heads) {
  AttentionLayout l;
  l.heads = heads;
  l.groups.reserve(count);
  for (std::size_t g = 0; g < count; ++g) l.groups.push_back({g * rows, rows, g * rows, rows});
  return l;
}

std::vector<std::size_t> AttentionLayout::prob_offsets() const {
  std::vector<std::size_t> off(groups.size() * heads);
  std::size_t acc = 0;
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t h = 0; h < heads; ++h) {
      off[g * heads + h] = acc;
      acc += groups[g].q_count * groups[g].k_count;
    }
  return off;
}

std::size_t AttentionLayout::prob_size() const {
  std::size_t acc = 0;
  for (const auto& g : groups) acc += g.q_count * g.k_count * heads;
  return acc;
}

bool AttentionLayout::disjoint() const {
  auto check = [&](auto begin_of, auto count_of) {
    std::vector<std::pair<std::size_t, std::size_t>> r;
    for (const auto& g : groups) r.emplace_back(begin_of(g), begin_of(g) + count_of(g));
    std::sort(r.begin(), r.end());
    for (std::size_t i = 1; i < r.size(); ++i)
      if (r[i].first < r[i - 1].second) return false;
    return true;
  };
  return check([](const AttentionGroup& g) { return g.q_begin; },
               [](const AttentionGroup& g) { return g.q_count; }) &&
         check([](const AttentionGroup& g) { return g.k_begin; },
               [](const AttentionGroup& g) { return g.k_count; });
}

// ---- attention ------------------------------------------------------------

void attention_forward_serial(const AttentionLayout& layout, const AttentionShapes& s,
                              const double* q, const double* k, const double* v, double* o,
                              double* p) {
  add_macs(attention_macs(layout, s));
  const auto offsets = layout.prob_offsets();
  for (const auto& slot : query_slots(layout)) attend_query(layout, offsets, s, slot, q, k, v, o, p);
}

void attention_forward(const AttentionLayout& layout, const AttentionShapes& s, const double* q,
                       const double* k, const double* v, double* o, double* p) {
  const std::uint64_t macs = attention_macs(layout, s);
  add_macs(macs);
  const auto offsets = layout.prob_offsets();
  const auto slots = query_slots(layout);
  const long n = static_cast<long>(slots.size());
#pragma omp parallel for schedule(static) if (macs >= kParallelThreshold)
  for (long i = 0; i < n; ++i) attend_query(layout, offsets, s, slots[i], q, k, v, o, p);
}

void attention_backward_serial(const AttentionLayout& layout, const AttentionShapes& s,
                               const double* q, const double* k, const double* v,
                               const double* p, const double* dout, double* dq, double* dk,
                               double* dv) {
  add_macs(2 * attention_macs(layout, s));
  const auto offsets = layout.prob_offsets();
  std::vector<double> scratch;
  for (std::size_t g = 0; g < layout.groups.size(); ++g)
    for (std::size_t h = 0; h < layout.heads; ++h)
      attention_group_head_backward(layout, offsets, s, g, h, q, k, v, p, dout, dq, dk, dv,
                                    scratch);
}

void attention_backward(const AttentionLayout& layout, const AttentionShapes& s, const double* q,
                        const double* k, const double* v, const double* p, const double* dout,
                        double* dq, double* dk, double* dv) {
  if (!layout.disjoint()) {
    attention_backward_serial(layout, s, q, k, v, p, dout, dq, dk, dv);
    return;
  }
  const std::uint64_t macs = 2 * attention_macs(layout, s);
  add_macs(macs);
  const auto offsets = layout.prob_offsets();
  const long n = static_cast<long>(layout.groups.size() * layout.heads);
  // (group, head) pairs write disjoint row ranges and column slices.
#pragma omp parallel if (macs >= kParallelThreshold)
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (long i = 0; i < n; ++i) {
      const auto g = static_cast<std::size_t>(i) / layout.heads;
      const auto h = static_cast<std::size_t>(i) % layout.heads;
      attention_group_head_backward(layout, offsets, s, g, h, q, k, v, p, dout, dq, dk, dv,
                                    scratch);
    }
  }
}

// ---- convolution ----------------------------------------------------------

void conv2d_forward_serial(const ConvShapes& s, const double* x, const double* w, const double* b,
                           double* y) {
  add_macs(conv_macs(s));
  for (std::size_t bo = 0; bo < s.batch * s.out_ch; ++bo) conv_forward_plane(s, x, w, b, y, bo);
}

void conv2d_forward(const ConvShapes& s, const double* x, const double* w, const double* b,
                    double* y) {
  const std::uint64_t macs = conv_macs(s);
  add_macs(macs);
  const long n = static_cast<long>(s.batch * s.out_ch);
#pragma omp parallel for schedule(static) if (macs >= kParallelThreshold)
  for (long bo = 0; bo < n; ++bo) conv_forward_plane(s, x, w, b, y, static_cast<std::size_t>(bo));
}

void conv2d_backward_serial(const ConvShapes& s, const double* x, const double* w,
                            const double* dy, double* dx, double* dw, double* db) {
  add_macs(2 * conv_macs(s));
  if (dx)
    for (std::size_t bc = 0; bc < s.batch * s.in_ch; ++bc)
      conv_backward_input_plane(s, w, dy, dx, bc);
  if (dw || db)
    for (std::size_t o = 0; o < s.out_ch; ++o) conv_backward_weight_plane(s, x, dy, dw, db, o);
}

void conv2d_backward(const ConvShapes& s, const double* x, const double* w, const double* dy,
                     double* dx, double* dw, double* db) {
  const std::uint64_t macs = 2 * conv_macs(s);
  add_macs(macs);
  const bool par = macs >= kParallelThreshold;
  if (dx) {
    const long n = static_cast<long>(s.batch * s.in_ch);
#pragma omp parallel for schedule(static) if (par)
    for (long bc = 0; bc < n; ++bc)
      conv_backward_input_plane(s, w, dy, dx, static_cast<std::size_t>(bc));
  }
  if (dw || db) {
    const long n = static_cast<long>(s.out_ch);
#pragma omp parallel for schedule(static) if (par)
    for (long o = 0; o < n; ++o)
      conv_backward_weight_plane(s, x, dy, dw, db, static_cast<std::size_t>(o));
  }
}

}  // namespace ivt::kernels
